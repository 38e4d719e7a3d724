# Machine-readable analysis report: per-trace fit records, derived curves, fitted
# model parameters and provenance. Serialized as canonical JSON so identical inputs
# give identical bytes.

import csv
import io
import json
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any

import numpy as np

from resokit.lib.config import EXECUTABLE_NAME, REPORT_SCHEMA_VERSION, VERSION
from resokit.lib.errors import ParseError, ResokitError
from resokit.lib.resonator import NOTCH_FIELDS, NotchParams
from resokit.lib.spectrum_fit import FitFlag, FitReport


class SweepKind(str, Enum):
  power = 'power'
  temperature = 'temperature'
  field = 'field'


class CurveName(str, Enum):
  qi_vs_nph = 'qi-vs-nph'
  qi_vs_temperature = 'qi-vs-temperature'
  dfr_vs_temperature = 'dfr-vs-temperature'
  dfr_vs_field = 'dfr-vs-field'
  qi_vs_field = 'qi-vs-field'


# Column names of each curve when emitted as CSV
CURVE_COLUMNS = {
  CurveName.qi_vs_nph: ('n_ph', 'q_internal'),
  CurveName.qi_vs_temperature: ('temperature_k', 'q_internal'),
  CurveName.dfr_vs_temperature: ('temperature_k', 'delta_f_hz'),
  CurveName.dfr_vs_field: ('field_mt', 'delta_f_hz'),
  CurveName.qi_vs_field: ('field_mt', 'q_internal'),
}


@dataclass(frozen=True)
class TraceRecord:
  index: int
  label: str
  path: str
  sweep: SweepKind | None = None
  vna_power_dbm: float = math.nan
  temperature_k: float = math.nan
  field_mt: float = math.nan
  p_in_w: float = math.nan
  photon_number: float = math.nan
  fit: FitReport | None = None
  error: dict | None = None

  @property
  def ok(self) -> bool:
    return self.fit is not None


@dataclass(frozen=True)
class CurvePoint:
  label: str
  x: float
  y: float
  y_err: float = math.nan


@dataclass(frozen=True)
class Provenance:
  tool: str = EXECUTABLE_NAME
  version: str = VERSION
  inputs: dict[str, str] = field(default_factory=dict)
  timestamp: str | None = None


@dataclass(frozen=True)
class Report:
  records: tuple[TraceRecord, ...] = ()
  curves: dict[str, tuple[CurvePoint, ...]] = field(default_factory=dict)
  models: dict[str, dict] = field(default_factory=dict)
  provenance: Provenance = field(default_factory=Provenance)

  def with_model(self, name: str, values: dict) -> 'Report':
    models = dict(self.models)
    models[name] = values
    return Report(self.records, self.curves, models, self.provenance)


def _plain(value: Any) -> Any:
  """
  JSON-ready copy of value: enums to their values, numpy scalars to Python, non-finite floats to null.
  """
  if isinstance(value, Enum):
    return value.value
  if isinstance(value, dict):
    return {str(_plain(k)): _plain(v) for k, v in value.items()}
  if isinstance(value, (list, tuple, set, frozenset)):
    items = [_plain(v) for v in value]
    return sorted(items) if isinstance(value, (set, frozenset)) else items
  if isinstance(value, (bool, np.bool_)):
    return bool(value)
  if isinstance(value, (int, np.integer)):
    return int(value)
  if isinstance(value, (float, np.floating)):
    value = float(value)
    return value if math.isfinite(value) else None
  return value


def canonical_json(value: Any) -> bytes:
  """
  Sorted keys, no insignificant whitespace and shortest round-trip floats, newline terminated.
  """
  text = json.dumps(_plain(value), sort_keys=True, separators=(',', ':'), allow_nan=False, ensure_ascii=False)
  return (text + '\n').encode('utf-8')


def _float(value: Any) -> float:
  return math.nan if value is None else float(value)


def fit_report_to_dict(report: FitReport) -> dict:
  params = {name: getattr(report.params, name) for name in NOTCH_FIELDS}
  return {
    'params': params,
    'q_internal': report.q_internal,
    'coupling_q_effective': report.coupling_q_effective,
    'uncertainties': dict(report.uncertainties),
    'rms_residual': report.rms_residual,
    'n_points': report.n_points,
    'flags': sorted(flag.value for flag in report.flags),
    'iterations': report.iterations,
  }


def fit_report_from_dict(data: dict) -> FitReport:
  params = NotchParams(**{name: float(data['params'][name]) for name in NOTCH_FIELDS})
  return FitReport(
    params=params,
    q_internal=_float(data['q_internal']),
    uncertainties={str(k): _float(v) for k, v in data.get('uncertainties', {}).items()},
    rms_residual=_float(data['rms_residual']),
    n_points=int(data['n_points']),
    flags=frozenset(FitFlag(flag) for flag in data.get('flags', [])),
    iterations=int(data.get('iterations', 0)),
  )


def error_to_dict(err: ResokitError) -> dict:
  return {'kind': err.kind, 'exit_code': err.exit_code, 'message': err.message, 'line': err.line}


def record_to_dict(record: TraceRecord) -> dict:
  return {
    'index': record.index,
    'label': record.label,
    'path': record.path,
    'sweep': record.sweep,
    'vna_power_dbm': record.vna_power_dbm,
    'temperature_k': record.temperature_k,
    'field_mt': record.field_mt,
    'p_in_w': record.p_in_w,
    'photon_number': record.photon_number,
    'fit': fit_report_to_dict(record.fit) if record.fit is not None else None,
    'error': record.error,
  }


def record_from_dict(data: dict) -> TraceRecord:
  sweep = data.get('sweep')
  return TraceRecord(
    index=int(data['index']),
    label=str(data['label']),
    path=str(data.get('path', '')),
    sweep=SweepKind(sweep) if sweep else None,
    vna_power_dbm=_float(data.get('vna_power_dbm')),
    temperature_k=_float(data.get('temperature_k')),
    field_mt=_float(data.get('field_mt')),
    p_in_w=_float(data.get('p_in_w')),
    photon_number=_float(data.get('photon_number')),
    fit=fit_report_from_dict(data['fit']) if data.get('fit') else None,
    error=data.get('error'),
  )


def report_to_dict(report: Report) -> dict:
  return {
    'schema_version': REPORT_SCHEMA_VERSION,
    'records': [record_to_dict(r) for r in report.records],
    'curves': {name: [vars(p) for p in points] for name, points in report.curves.items()},
    'models': report.models,
    'provenance': vars(report.provenance),
  }


def write_report(report: Report) -> bytes:
  return canonical_json(report_to_dict(report))


def _curve_point(data: dict) -> CurvePoint:
  return CurvePoint(str(data['label']), _float(data['x']), _float(data['y']), _float(data.get('y_err')))


def read_report(data: bytes) -> Report:
  try:
    raw = json.loads(data.decode('utf-8') if isinstance(data, bytes) else data)
  except UnicodeDecodeError as err:
    raise ParseError(f'Report is not UTF-8 text: {err.reason}') from None
  except json.JSONDecodeError as err:
    raise ParseError(f'Report is not valid JSON: {err.msg}', err.lineno) from None
  if not isinstance(raw, dict):
    raise ParseError('Report must be a JSON object')
  version = raw.get('schema_version')
  if version != REPORT_SCHEMA_VERSION:
    raise ParseError(f'Unsupported report schema_version {version!r}, expected {REPORT_SCHEMA_VERSION!r}')
  try:
    records = tuple(record_from_dict(r) for r in raw.get('records', []))
    curves = {str(name): tuple(_curve_point(p) for p in points) for name, points in raw.get('curves', {}).items()}
    provenance = raw.get('provenance', {})
    return Report(
      records=records,
      curves=curves,
      models=dict(raw.get('models', {})),
      provenance=Provenance(
        tool=str(provenance.get('tool', EXECUTABLE_NAME)),
        version=str(provenance.get('version', VERSION)),
        inputs={str(k): str(v) for k, v in provenance.get('inputs', {}).items()},
        timestamp=provenance.get('timestamp'),
      ),
    )
  except (KeyError, TypeError, ValueError, AttributeError) as err:
    raise ParseError(f'Malformed report: {err}') from None


def select_records(records, sweep: SweepKind) -> list[TraceRecord]:
  """
  Successful records belonging to a sweep. Untagged records count for every sweep.
  """
  return [r for r in records if r.ok and (r.sweep is None or r.sweep is sweep)]


def _is_zero_field(record: TraceRecord) -> bool:
  return math.isnan(record.field_mt) or record.field_mt == 0.0


def _shift_curve(records: list[TraceRecord], key) -> tuple[CurvePoint, ...]:
  if not records:
    return ()
  ordered = sorted(records, key=lambda r: (key(r), r.index))
  reference = ordered[0].fit.params.f_r
  return tuple(
    CurvePoint(r.label, key(r), r.fit.params.f_r - reference, r.fit.uncertainties.get('f_r', math.nan)) for r in ordered
  )


def _qi_curve(records: list[TraceRecord], key) -> tuple[CurvePoint, ...]:
  ordered = sorted(records, key=lambda r: (key(r), r.index))
  return tuple(
    CurvePoint(r.label, key(r), r.fit.q_internal, r.fit.uncertainties.get('q_internal', math.nan)) for r in ordered
  )


def build_curves(records) -> dict[str, tuple[CurvePoint, ...]]:
  """
  Derived curves, each point naming its source trace. Frequency shifts are taken
  against the point with the lowest temperature or field.
  """
  power = [r for r in select_records(records, SweepKind.power) if math.isfinite(r.photon_number)]
  temperature = [
    r for r in select_records(records, SweepKind.temperature) if math.isfinite(r.temperature_k) and _is_zero_field(r)
  ]
  fields = [r for r in select_records(records, SweepKind.field) if math.isfinite(r.field_mt)]
  return {
    CurveName.qi_vs_nph.value: _qi_curve(power, lambda r: r.photon_number),
    CurveName.qi_vs_temperature.value: _qi_curve(temperature, lambda r: r.temperature_k),
    CurveName.dfr_vs_temperature.value: _shift_curve(temperature, lambda r: r.temperature_k),
    CurveName.dfr_vs_field.value: _shift_curve(fields, lambda r: abs(r.field_mt)),
    CurveName.qi_vs_field.value: _qi_curve(fields, lambda r: abs(r.field_mt)),
  }


def curve_to_csv(report: Report, name: CurveName) -> bytes:
  name = CurveName(name)
  points = report.curves.get(name.value, ())
  x_name, y_name = CURVE_COLUMNS[name]
  out = io.StringIO()
  writer = csv.writer(out, lineterminator='\n')
  writer.writerow(['label', x_name, y_name, f'{y_name}_err'])
  for p in points:
    writer.writerow([p.label, repr(float(p.x)), repr(float(p.y)), repr(float(p.y_err))])
  return out.getvalue().encode('utf-8')
