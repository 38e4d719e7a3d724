# Command-line surface of resokit: CPW design, notch fits of single traces and
# manifest sweeps, loss-model fits over a report, synthetic datasets and curve export.
#
# Results go to standard output or --out, logs and the one-line JSON error record
# go to standard error.

import argparse
import math
import os
import statistics
import sys
from dataclasses import asdict

from resokit.cli.config.defaults import (
  DEFAULT_ALPHA_KINETIC,
  DEFAULT_CHAIN,
  DEFAULT_CURVE_FORMAT,
  DEFAULT_EPSILON_R,
  DEFAULT_FILM_THICKNESS,
  DEFAULT_GAP,
  DEFAULT_KINETIC_INDUCTANCE,
  DEFAULT_RESONATOR_LENGTH,
  DEFAULT_SEED,
  DEFAULT_SUBSTRATE_THICKNESS,
  DEFAULT_T_C,
  DEFAULT_WIDTH,
)
from resokit.cli.config.utils import write_output_file
from resokit.cli.formats import CurveFormat
from resokit.cli.presets import Preset, synthesize_dataset
from resokit.cli.process import process_file, process_manifest, read_input
from resokit.lib.config import EXECUTABLE_NAME, VERSION
from resokit.lib.cpw import (
  CpwGeometry,
  ResonatorMode,
  invert_kinetic_inductance,
  line_params_from_geometry,
  resonance_frequency,
)
from resokit.lib.date import now_iso
from resokit.lib.errors import NonConvergenceError, PreconditionError, ResokitError, UsageError
from resokit.lib.logger import error, log, set_level, warn
from resokit.lib.loss import (
  QpParams,
  detect_jumps,
  diffusion_from_k,
  fit_field_loss,
  fit_field_shift,
  fit_freq_shift,
  fit_tls,
  vortex_regime,
  vortex_thresholds,
)
from resokit.lib.manifest import parse_manifest
from resokit.lib.report import (
  CurveName,
  Provenance,
  Report,
  SweepKind,
  build_curves,
  canonical_json,
  curve_to_csv,
  read_report,
  select_records,
  write_report,
)
from resokit.lib.resonator import TraceMeta


class _Parser(argparse.ArgumentParser):
  def error(self, message):
    raise UsageError(message)


def parse_args(argv=None):
  def positive(value: str):
    num = float(value)
    if not num > 0:
      raise argparse.ArgumentTypeError(f'value {value} should be a positive number')
    return num

  common = _Parser(add_help=False)
  # fmt: off
  common.add_argument('-d', '--debug', action='store_true', help='Log fitting details to standard error')
  common.add_argument('--timestamp', action='store_true', help='Record the current time in report provenance (reports are then no longer byte-stable)')
  # fmt: on

  parser = _Parser(EXECUTABLE_NAME, add_help=True)
  parser.add_argument('--version', action='version', version=f'{EXECUTABLE_NAME} {VERSION}')
  commands = parser.add_subparsers(dest='command', required=True, metavar='command')

  # fmt: off
  design = commands.add_parser('design', parents=[common], help='Line parameters and resonance frequency of a CPW resonator')
  design.add_argument('--width-um', type=positive, default=DEFAULT_WIDTH * 1e6, help='Centre conductor width in micrometres')
  design.add_argument('--gap-um', type=positive, default=DEFAULT_GAP * 1e6, help='Gap to ground in micrometres')
  design.add_argument('--thickness-nm', type=positive, default=DEFAULT_FILM_THICKNESS * 1e9, help='Film thickness in nanometres')
  design.add_argument('--eps-r', type=float, default=DEFAULT_EPSILON_R, help='Substrate relative permittivity')
  design.add_argument('--sub-um', type=positive, default=DEFAULT_SUBSTRATE_THICKNESS * 1e6, help='Substrate thickness in micrometres, inf for a semi-infinite substrate')
  design.add_argument('--length-mm', type=positive, default=DEFAULT_RESONATOR_LENGTH * 1e3, help='Resonator length in millimetres')
  design.add_argument('--lk-per-m', type=float, default=None, help=f'Kinetic inductance per length in H/m (default {DEFAULT_KINETIC_INDUCTANCE:g})')
  design.add_argument('--mode', choices=[m.value for m in ResonatorMode], default=ResonatorMode.QUARTER_WAVE.value, help='Resonator termination')
  design.add_argument('-n', '--harmonic', type=int, default=1, help='Mode number')
  design.add_argument('--f-measured-hz', type=positive, default=None, help='Measured fundamental: infer the kinetic inductance instead of taking --lk-per-m')
  # fmt: on

  # fmt: off
  fit = commands.add_parser('fit', parents=[common], help='Fit the notch model to a single trace file')
  fit.add_argument('input', help='Touchstone (.s2p) or CSV trace file')
  fit.add_argument('-o', '--out', type=str, default=None, help='Write the report here instead of standard output')
  fit.add_argument('--power-dbm', type=float, default=math.nan, help='VNA output power, enables photon-number calibration through the default chain')
  fit.add_argument('--temperature-k', type=float, default=math.nan, help='Sample temperature recorded with the trace')
  fit.add_argument('--field-mt', type=float, default=math.nan, help='In-plane field recorded with the trace')
  # fmt: on

  # fmt: off
  sweep = commands.add_parser('sweep-fit', parents=[common], help='Fit every trace listed in a sweep manifest')
  sweep.add_argument('manifest', help='Sweep manifest (JSON)')
  sweep.add_argument('-o', '--out', type=str, default=None, help='Write the report here instead of standard output')
  sweep.add_argument('-j', '--threads', type=int, default=None, help='Worker threads (also capped by RESOKIT_THREADS)')
  # fmt: on

  # fmt: off
  tls = commands.add_parser('tls-fit', parents=[common], help='Fit the TLS loss model to the Q_i vs photon number curve of a report')
  tls.add_argument('report', help='Report written by sweep-fit')
  tls.add_argument('--temperature-k', type=positive, default=None, help='Sweep temperature (default: median recorded temperature)')
  tls.add_argument('-o', '--out', type=str, default=None, help='Write the report with the fitted model added here')
  # fmt: on

  # fmt: off
  shift = commands.add_parser('shift-fit', parents=[common], help='Fit TLS and quasiparticle frequency shifts to a temperature sweep')
  shift.add_argument('report', help='Report written by sweep-fit')
  shift.add_argument('--t-c', type=positive, default=DEFAULT_T_C, help='Critical temperature in K (starting value with --fit-t-c)')
  shift.add_argument('--alpha', type=float, default=DEFAULT_ALPHA_KINETIC, help='Starting kinetic inductance fraction')
  shift.add_argument('--q-tls0', type=positive, default=1e5, help='Starting TLS quality factor')
  shift.add_argument('--fit-t-c', action='store_true', help='Fit the critical temperature as well')
  shift.add_argument('-o', '--out', type=str, default=None, help='Write the report with the fitted model added here')
  # fmt: on

  # fmt: off
  field = commands.add_parser('field-fit', parents=[common], help='Fit the parabolic field shift and field loss, classify vortex regimes and find jumps')
  field.add_argument('report', help='Report written by sweep-fit')
  field.add_argument('--thickness-nm', type=positive, default=DEFAULT_FILM_THICKNESS * 1e9, help='Film thickness in nanometres')
  field.add_argument('--t-c', type=positive, default=DEFAULT_T_C, help='Critical temperature in K, for the diffusion constant')
  field.add_argument('-o', '--out', type=str, default=None, help='Write the report with the fitted model added here')
  # fmt: on

  # fmt: off
  synth = commands.add_parser('synth', parents=[common], help='Generate a synthetic sweep dataset with a manifest')
  synth.add_argument('--preset', choices=[p.value for p in Preset], default=Preset.paper_sample2.value, help='Dataset preset')
  synth.add_argument('--seed', type=int, default=DEFAULT_SEED, help='Noise seed')
  synth.add_argument('-o', '--out', type=str, required=True, help='Directory to write traces and manifest.json to')
  # fmt: on

  # fmt: off
  plot = commands.add_parser('plot-data', parents=[common], help='Emit a derived curve of a report as CSV')
  plot.add_argument('report', help='Report written by sweep-fit or fit')
  plot.add_argument('--curve', choices=[c.value for c in CurveName], required=True, help='Curve to emit')
  plot.add_argument('--format', choices=[f.value for f in CurveFormat], default=DEFAULT_CURVE_FORMAT, help='Output format')
  plot.add_argument('-o', '--out', type=str, default=None, help='Write here instead of standard output')
  # fmt: on
  return parser.parse_args(argv)


def emit(data: bytes, out: str | None):
  if out:
    path = write_output_file(out, data)
    log(f'Wrote {path}')
  else:
    sys.stdout.write(data.decode('utf-8'))
    sys.stdout.flush()


def load_report(path: str) -> Report:
  data, _ = read_input(path)
  return read_report(data)


def _provenance(inputs: dict[str, str], timestamp: bool) -> Provenance:
  return Provenance(inputs=dict(sorted(inputs.items())), timestamp=now_iso() if timestamp else None)


def _model_output(report: Report, name: str, values: dict, out: str | None, converged: bool):
  """
  Print the fitted model, or write the report carrying it to --out.
  """
  if out:
    emit(write_report(report.with_model(name, values)), out)
  else:
    emit(canonical_json({name: values}), None)
  if not converged:
    raise NonConvergenceError(f'{name} fit did not converge')


def run_design(args) -> None:
  geometry = CpwGeometry(
    width=args.width_um * 1e-6,
    gap=args.gap_um * 1e-6,
    film_thickness=args.thickness_nm * 1e-9,
    substrate_epsilon_r=args.eps_r,
    substrate_thickness=args.sub_um * 1e-6,
    resonator_length=args.length_mm * 1e-3,
    mode=ResonatorMode(args.mode),
  )
  if args.f_measured_hz is not None:
    if args.lk_per_m is not None:
      raise UsageError('Give either --lk-per-m or --f-measured-hz, not both')
    l_kin = invert_kinetic_inductance(args.f_measured_hz, geometry, args.harmonic, geometry.mode)
  else:
    l_kin = DEFAULT_KINETIC_INDUCTANCE if args.lk_per_m is None else args.lk_per_m
  params = line_params_from_geometry(geometry, l_kin)
  f_n = resonance_frequency(params, geometry.resonator_length, args.harmonic, geometry.mode)
  thresholds = vortex_thresholds(geometry.film_thickness)
  emit(
    canonical_json(
      {
        'geometry': asdict(geometry),
        'line_params': asdict(params),
        'harmonic': args.harmonic,
        'resonance_frequency_hz': f_n,
        'vortex_thresholds_t': thresholds._asdict(),
      }
    ),
    None,
  )


def run_fit(args) -> None:
  meta = TraceMeta(
    vna_power_dbm=args.power_dbm,
    temperature_k=args.temperature_k,
    field_mt=args.field_mt,
    label=os.path.basename(args.input),
  )
  result = process_file(0, args.input, os.path.basename(args.input), meta, DEFAULT_CHAIN)
  if result.record.fit is None:
    raise result.failure
  records = (result.record,)
  report = Report(
    records=records,
    curves=build_curves(records),
    provenance=_provenance({os.path.basename(args.input): result.digest}, args.timestamp),
  )
  emit(write_report(report), args.out)
  if result.failure is not None:
    raise result.failure


def run_sweep_fit(args) -> None:
  data, digest = read_input(args.manifest)
  manifest = parse_manifest(data, os.path.dirname(os.path.abspath(args.manifest)))
  batch = process_manifest(manifest, args.threads)
  inputs = dict(batch.digests)
  inputs[os.path.basename(args.manifest)] = digest
  report = Report(
    records=batch.records,
    curves=build_curves(batch.records),
    provenance=_provenance(inputs, args.timestamp),
  )
  emit(write_report(report), args.out)
  if batch.had_error:
    warn('At least one trace could not be fitted. Check for errors!')
    raise batch.first_failure


def run_tls_fit(args) -> None:
  report = load_report(args.report)
  records = [r for r in select_records(report.records, SweepKind.power) if math.isfinite(r.photon_number)]
  if not records:
    raise PreconditionError('Report has no fitted traces with a photon number')
  temperature = args.temperature_k
  if temperature is None:
    recorded = [r.temperature_k for r in records if math.isfinite(r.temperature_k)]
    if not recorded:
      raise UsageError('No temperature recorded in the report, pass --temperature-k')
    temperature = statistics.median(recorded)
  f_r = statistics.median(r.fit.params.f_r for r in records)
  fit = fit_tls([r.photon_number for r in records], [r.fit.q_internal for r in records], temperature, f_r)
  values = asdict(fit)
  values.update({'temperature_k': temperature, 'f_r': f_r, 'labels': [r.label for r in records]})
  log(f'TLS fit: Q0_TLS={fit.params.q_tls0:.6g} n_c={fit.params.n_c:.4g} beta={fit.params.beta:.4g}')
  _model_output(report, 'tls', values, args.out, fit.converged)


def run_shift_fit(args) -> None:
  report = load_report(args.report)
  records = [r for r in select_records(report.records, SweepKind.temperature) if math.isfinite(r.temperature_k)]
  records = [r for r in records if math.isnan(r.field_mt) or r.field_mt == 0.0]
  records.sort(key=lambda r: (r.temperature_k, r.index))
  qp_guess = QpParams(t_c=args.t_c, alpha_kinetic=args.alpha)
  fit = fit_freq_shift(
    [r.temperature_k for r in records],
    [r.fit.params.f_r for r in records],
    qp_guess,
    q_tls0_guess=args.q_tls0,
    fit_t_c=args.fit_t_c,
  )
  values = asdict(fit)
  values['labels'] = [r.label for r in records]
  log(f'Shift fit: f_r0={fit.f_r0:.9g} Hz Q0_TLS={fit.q_tls0:.6g} alpha={fit.alpha_kinetic:.4g} T_c={fit.t_c:.4g} K')
  _model_output(report, 'freq_shift', values, args.out, fit.converged)


def run_field_fit(args) -> None:
  report = load_report(args.report)
  records = [r for r in select_records(report.records, SweepKind.field) if math.isfinite(r.field_mt)]
  records.sort(key=lambda r: (abs(r.field_mt), r.index))
  fields = [abs(r.field_mt) * 1e-3 for r in records]
  freqs = [r.fit.params.f_r for r in records]
  shift = fit_field_shift(fields, freqs)
  loss = fit_field_loss(fields, [r.fit.q_internal for r in records])
  thickness = args.thickness_nm * 1e-9
  try:
    jumps = detect_jumps(fields, freqs)
  except PreconditionError as err:
    warn(f'Skipping jump detection: {err.message}')
    jumps = []
  values = {
    'shift': asdict(shift),
    'loss': asdict(loss),
    'diffusion_m2_s': diffusion_from_k(shift.k_quad, thickness, args.t_c) if shift.k_quad > 0 else None,
    'film_thickness': thickness,
    'vortex_thresholds_t': vortex_thresholds(thickness)._asdict(),
    'regimes': [
      {'label': r.label, 'field_mt': r.field_mt, 'regime': vortex_regime(b, thickness)} for r, b in zip(records, fields)
    ],
    'jumps': [{**j._asdict(), 'label': records[j.index].label} for j in jumps],
  }
  log(f'Field fit: k={shift.k_quad:.6g} 1/T^2 c2={loss.c2:.4g} 1/T^2, {len(jumps)} jump(s)')
  _model_output(report, 'field', values, args.out, shift.converged and loss.converged)


def run_synth(args) -> None:
  synthesize_dataset(args.preset, args.seed, args.out)


def run_plot_data(args) -> None:
  report = load_report(args.report)
  name = CurveName(args.curve)
  if CurveFormat(args.format) is CurveFormat.csv:
    emit(curve_to_csv(report, name), args.out)
  else:
    points = report.curves.get(name.value, ())
    emit(canonical_json({name.value: [vars(p) for p in points]}), args.out)


COMMANDS = {
  'design': run_design,
  'fit': run_fit,
  'sweep-fit': run_sweep_fit,
  'tls-fit': run_tls_fit,
  'shift-fit': run_shift_fit,
  'field-fit': run_field_fit,
  'synth': run_synth,
  'plot-data': run_plot_data,
}


def main(argv=None) -> int:
  try:
    args = parse_args(argv)
    if args.debug:
      set_level('debug')
    COMMANDS[args.command](args)
  except ResokitError as err:
    error(err.message)
    print(err.to_json_line(), file=sys.stderr)
    return err.exit_code
  except (OSError, ValueError) as err:
    wrapped = ResokitError(str(err))
    error(wrapped.message)
    print(wrapped.to_json_line(), file=sys.stderr)
    return wrapped.exit_code
  return 0


if __name__ == '__main__':
  sys.exit(main(sys.argv[1:]))
