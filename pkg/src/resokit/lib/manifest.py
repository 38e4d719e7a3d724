# Sweep manifests: the JSON file that lists trace files with their measurement
# conditions, the input attenuation chain and the film parameters of a batch.

import json
import math
import os
from dataclasses import dataclass

from resokit.lib.cpw import CpwGeometry
from resokit.lib.errors import ParseError, ResokitError
from resokit.lib.loss import QpParams
from resokit.lib.report import SweepKind, canonical_json
from resokit.lib.resonator import AttenuationChain, TraceMeta

GEOMETRY_FIELDS = (
  'width',
  'gap',
  'film_thickness',
  'substrate_epsilon_r',
  'substrate_thickness',
  'resonator_length',
  'mode',
)


@dataclass(frozen=True)
class ManifestEntry:
  path: str
  vna_power_dbm: float
  temperature_k: float
  field_mt: float = 0.0
  label: str = ''
  sweep: SweepKind | None = None

  @property
  def meta(self) -> TraceMeta:
    return TraceMeta(
      vna_power_dbm=self.vna_power_dbm,
      temperature_k=self.temperature_k,
      field_mt=self.field_mt,
      label=self.label or os.path.basename(self.path),
    )


@dataclass(frozen=True)
class SweepManifest:
  entries: tuple[ManifestEntry, ...]
  chain: AttenuationChain
  material: QpParams
  geometry: CpwGeometry | None = None
  film_thickness: float | None = None
  base_dir: str = '.'

  def resolve(self, entry: ManifestEntry) -> str:
    return entry.path if os.path.isabs(entry.path) else os.path.join(self.base_dir, entry.path)

  @property
  def thickness(self) -> float | None:
    """
    Film thickness for the field analysis, from the explicit value or the geometry.
    """
    if self.film_thickness is not None:
      return self.film_thickness
    return self.geometry.film_thickness if self.geometry is not None else None


def _real(value, name: str, where: str) -> float:
  if isinstance(value, bool) or not isinstance(value, (int, float)):
    raise ParseError(f'{where}: {name} must be a number, got {value!r}')
  value = float(value)
  if not math.isfinite(value):
    raise ParseError(f'{where}: {name} must be finite')
  return value


def _entry(raw, index: int) -> ManifestEntry:
  where = f'entry {index}'
  if not isinstance(raw, dict):
    raise ParseError(f'{where}: must be an object')
  path = raw.get('path')
  if not isinstance(path, str) or not path:
    raise ParseError(f'{where}: path must be a non-empty string')
  sweep = raw.get('sweep')
  try:
    sweep = SweepKind(sweep) if sweep is not None else None
  except ValueError:
    raise ParseError(f'{where}: unknown sweep {sweep!r}, expected one of {[s.value for s in SweepKind]}') from None
  return ManifestEntry(
    path=path,
    vna_power_dbm=_real(raw.get('vna_power_dbm'), 'vna_power_dbm', where),
    temperature_k=_real(raw.get('temperature_k'), 'temperature_k', where),
    field_mt=_real(raw.get('field_mt', 0.0), 'field_mt', where),
    label=str(raw.get('label') or os.path.basename(path)),
    sweep=sweep,
  )


def parse_manifest(data: bytes, base_dir: str = '.') -> SweepManifest:
  """
  Manifest from JSON. Relative trace paths are taken relative to base_dir.

  Returns:
    SweepManifest with unique entry paths. Trace files are not opened here.
  """
  try:
    raw = json.loads(data.decode('utf-8-sig') if isinstance(data, bytes) else data)
  except UnicodeDecodeError as err:
    raise ParseError(f'Manifest is not UTF-8 text: {err.reason}') from None
  except json.JSONDecodeError as err:
    raise ParseError(f'Manifest is not valid JSON: {err.msg}', err.lineno) from None
  if not isinstance(raw, dict):
    raise ParseError('Manifest must be a JSON object')
  entries_raw = raw.get('entries')
  if not isinstance(entries_raw, list) or not entries_raw:
    raise ParseError('Manifest needs a non-empty entries list')
  entries = tuple(_entry(item, i) for i, item in enumerate(entries_raw))
  seen: set[str] = set()
  for i, entry in enumerate(entries):
    key = os.path.normpath(entry.path if os.path.isabs(entry.path) else os.path.join(base_dir, entry.path))
    if key in seen:
      raise ParseError(f'entry {i}: duplicate path {entry.path}')
    seen.add(key)

  try:
    chain = AttenuationChain.from_dict(raw.get('chain') or {})
    material_raw = raw.get('material') or {}
    material = QpParams(
      t_c=float(material_raw['t_c']),
      alpha_kinetic=float(material_raw.get('alpha_kinetic', 0.0)),
      gap_joules=material_raw.get('gap_joules'),
    )
    geometry_raw = raw.get('geometry')
    geometry = None
    if geometry_raw is not None:
      values = {name: geometry_raw[name] for name in GEOMETRY_FIELDS if name in geometry_raw}
      if values.get('substrate_thickness') is None:
        values['substrate_thickness'] = math.inf
      geometry = CpwGeometry(**values)
    thickness = raw.get('film_thickness')
    thickness = float(thickness) if thickness is not None else None
  except KeyError as err:
    raise ParseError(f'Manifest is missing field {err}') from None
  except (TypeError, AttributeError) as err:
    raise ParseError(f'Malformed manifest: {err}') from None
  except ResokitError as err:
    raise ParseError(f'Invalid manifest value: {err.message}') from None
  except ValueError as err:
    # float('forty'), unknown resonator modes
    raise ParseError(f'Invalid manifest value: {err}') from None
  if thickness is not None and not thickness > 0:
    raise ParseError(f'film_thickness must be positive, got {thickness}')
  return SweepManifest(entries, chain, material, geometry, thickness, base_dir)


def manifest_to_dict(manifest: SweepManifest) -> dict:
  geometry = None
  if manifest.geometry is not None:
    geometry = {name: getattr(manifest.geometry, name) for name in GEOMETRY_FIELDS}
  return {
    'entries': [
      {
        'path': e.path,
        'vna_power_dbm': e.vna_power_dbm,
        'temperature_k': e.temperature_k,
        'field_mt': e.field_mt,
        'label': e.label,
        'sweep': e.sweep,
      }
      for e in manifest.entries
    ],
    'chain': manifest.chain.to_dict(),
    'material': {
      't_c': manifest.material.t_c,
      'alpha_kinetic': manifest.material.alpha_kinetic,
      'gap_joules': manifest.material.gap_joules,
    },
    'geometry': geometry,
    'film_thickness': manifest.film_thickness,
  }


def write_manifest(manifest: SweepManifest) -> bytes:
  return canonical_json(manifest_to_dict(manifest))
