# Named synthetic datasets. Each preset fixes the resonator and film parameters and the
# three measurement sweeps; synth turns it into trace files plus a manifest.

import math
import os
from dataclasses import dataclass
from enum import Enum

import numpy as np

from resokit.cli.config.defaults import (
  DEFAULT_ALPHA_KINETIC,
  DEFAULT_CHAIN,
  DEFAULT_FILM_THICKNESS,
  DEFAULT_MANIFEST_NAME,
  DEFAULT_SYNTH_NOISE,
  DEFAULT_SYNTH_POINTS,
  DEFAULT_SYNTH_SPAN_LINEWIDTHS,
  DEFAULT_T_C,
)
from resokit.cli.config.utils import ensure_output_dir, write_output_file
from resokit.cli.formats import get_extension_from_trace_format
from resokit.lib.file import TraceFormat
from resokit.lib.logger import debug, log
from resokit.lib.loss import (
  QpParams,
  TlsParams,
  field_freq_shift,
  field_loss,
  qp_freq_shift,
  qp_loss,
  self_consistent_photon_number,
  tls_freq_shift,
  tls_loss,
)
from resokit.lib.manifest import ManifestEntry, SweepManifest, write_manifest
from resokit.lib.report import SweepKind
from resokit.lib.resonator import (
  AttenuationChain,
  NotchParams,
  TraceMeta,
  chip_input_power,
  loaded_quality,
  synthesize_trace,
)
from resokit.lib.traceio import write_csv_trace, write_touchstone


class Preset(str, Enum):
  paper_sample2 = 'paper-sample2'


@dataclass(frozen=True)
class SweepPlan:
  kind: SweepKind
  trace_format: TraceFormat
  vna_power_dbm: tuple[float, ...]
  temperature_k: tuple[float, ...]
  field_mt: tuple[float, ...]

  def conditions(self) -> list[tuple[float, float, float]]:
    """
    (power dBm, temperature K, field mT) for every trace, the swept axis varying fastest.
    """
    return [(p, t, b) for b in self.field_mt for t in self.temperature_k for p in self.vna_power_dbm]


@dataclass(frozen=True)
class SynthPreset:
  f_r0: float
  tls: TlsParams
  delta_const: float
  q_coupling_mag: float
  phi: float
  amp: float
  phase_offset: float
  delay: float
  qp: QpParams
  k_quad: float
  c2: float
  chain: AttenuationChain
  film_thickness: float
  span_linewidths: float
  n_points: int
  noise_sigma: float
  sweeps: tuple[SweepPlan, ...]


def _steps(start: float, stop: float, step: float) -> tuple[float, ...]:
  count = int(round((stop - start) / step)) + 1
  return tuple(float(v) for v in np.round(np.linspace(start, stop, count), 9))


PRESETS = {
  Preset.paper_sample2: SynthPreset(
    f_r0=5.9643e9,
    tls=TlsParams(q_tls0=9.5102e4, n_c=13.0, beta=0.35),
    delta_const=8e-7,
    q_coupling_mag=2308.0,
    phi=0.0,
    amp=1.0,
    phase_offset=0.3,
    delay=42e-9,
    qp=QpParams(t_c=DEFAULT_T_C, alpha_kinetic=DEFAULT_ALPHA_KINETIC),
    k_quad=0.261,
    c2=1e-3,
    chain=DEFAULT_CHAIN,
    film_thickness=DEFAULT_FILM_THICKNESS,
    span_linewidths=DEFAULT_SYNTH_SPAN_LINEWIDTHS,
    n_points=DEFAULT_SYNTH_POINTS,
    noise_sigma=DEFAULT_SYNTH_NOISE,
    sweeps=(
      SweepPlan(SweepKind.power, TraceFormat.touchstone, _steps(-40.0, 10.0, 5.0), (0.026,), (0.0,)),
      SweepPlan(SweepKind.temperature, TraceFormat.csv, (-30.0,), _steps(0.1, 3.0, 0.1), (0.0,)),
      SweepPlan(SweepKind.field, TraceFormat.touchstone, (-30.0,), (0.1,), _steps(0.0, 240.0, 16.0)),
    ),
  ),
}

PRESET_DESCRIPTION = {
  Preset.paper_sample2: 'NbN quarter-wave resonator near 5.96 GHz: power, temperature and in-plane field sweeps',
}


def get_preset(name: str) -> SynthPreset:
  preset = PRESETS.get(Preset(name))
  if preset is None:
    raise ValueError(f'Invalid preset: {name}')
  return preset


def resonator_state(preset: SynthPreset, vna_power_dbm: float, temperature: float, field_mt: float) -> tuple:
  """
  Resonance frequency, photon number and internal Q of the preset resonator under the given conditions.
  Q_i and the photon number are solved together since the TLS loss saturates with power.

  Returns:
    tuple: (f_r in Hz, photon number, Q_i)
  """
  b = field_mt * 1e-3
  f_r = (
    preset.f_r0
    + float(tls_freq_shift(temperature, preset.f_r0, preset.tls.q_tls0))
    + float(qp_freq_shift(temperature, preset.f_r0, preset.qp))
    + float(field_freq_shift(b, preset.f_r0, preset.k_quad))
  )
  fixed_loss = float(qp_loss(temperature, f_r, preset.qp)) + float(field_loss(b, preset.c2)) + preset.delta_const

  def loss_at(n: float) -> float:
    return float(tls_loss(temperature, n, f_r, preset.tls)) + fixed_loss

  q_c_eff = preset.q_coupling_mag / math.cos(preset.phi)
  n_ph = self_consistent_photon_number(chip_input_power(vna_power_dbm, preset.chain), f_r, q_c_eff, loss_at)
  return f_r, n_ph, 1.0 / loss_at(n_ph)


def synthesize_dataset(preset_name: str, seed: int, output_dir: str) -> SweepManifest:
  """
  Write every trace of a preset plus manifest.json into output_dir.
  Trace i uses the noise seed seed * 1000 + i, so datasets depend only on the preset and seed.

  Returns:
    SweepManifest: The manifest that was written, with paths relative to output_dir.
  """
  preset = get_preset(preset_name)
  outdir = ensure_output_dir(output_dir)
  entries = []
  index = 0
  for plan in preset.sweeps:
    ext = get_extension_from_trace_format(plan.trace_format)
    for power, temperature, field_mt in plan.conditions():
      f_r, n_ph, q_i = resonator_state(preset, power, temperature, field_mt)
      q_l = loaded_quality(q_i, preset.q_coupling_mag / math.cos(preset.phi))
      params = NotchParams(
        f_r=f_r,
        q_loaded=q_l,
        q_coupling_mag=preset.q_coupling_mag,
        phi=preset.phi,
        amp=preset.amp,
        phase_offset=preset.phase_offset,
        delay=preset.delay,
      )
      label = f'{plan.kind.value}-{index:03d}'
      relpath = f'{plan.kind.value}/{label}.{ext}'
      meta = TraceMeta(vna_power_dbm=power, temperature_k=temperature, field_mt=field_mt, label=label)
      half_span = 0.5 * preset.span_linewidths * f_r / q_l
      trace = synthesize_trace(
        params,
        f_r - half_span,
        f_r + half_span,
        preset.n_points,
        noise_sigma=preset.noise_sigma,
        seed=seed * 1000 + index,
        meta=meta,
      )
      data = write_touchstone(trace) if plan.trace_format is TraceFormat.touchstone else write_csv_trace(trace)
      write_output_file(os.path.join(outdir, relpath), data)
      debug(f'synth {label}: f_r={f_r:.9g} Hz n_ph={n_ph:.4g} Q_i={q_i:.6g} Q_l={q_l:.6g}')
      entries.append(ManifestEntry(relpath, power, temperature, field_mt, label, plan.kind))
      index += 1
  manifest = SweepManifest(
    entries=tuple(entries),
    chain=preset.chain,
    material=preset.qp,
    film_thickness=preset.film_thickness,
    base_dir=outdir,
  )
  write_output_file(os.path.join(outdir, DEFAULT_MANIFEST_NAME), write_manifest(manifest))
  log(f'Wrote {len(entries)} traces and {DEFAULT_MANIFEST_NAME} to {outdir}')
  return manifest
