# Loss and frequency-shift models of a superconducting resonator:
#  two-level systems, thermal quasiparticles, in-plane magnetic field and a constant
#  residual loss, with the fits used on power, temperature and field sweeps.

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, NamedTuple

import numpy as np
from scipy.constants import e, h, hbar, k as k_B
from scipy.optimize import brentq, minimize_scalar

from resokit.lib.errors import DomainError, PreconditionError
from resokit.lib.logger import debug, warn
from resokit.lib.numerics import FitOptions, digamma_half_line, least_squares_fit

BCS_GAP_RATIO = 1.76
FLUX_QUANTUM = h / (2.0 * e)
# First vortex entry field of a thin strip in units of phi0 / t^2
VORTEX_ENTRY_FACTOR = 1.65
JUMP_MEDIAN_FACTOR = 5.0
JUMP_FLOOR_HZ = 10e3
MIN_TLS_POINTS = 6
MIN_TLS_DECADES = 2.0
# Fitted beta closer than this to its upper bound is reported as pinned
BETA_BOUND_MARGIN = 1e-3


def _scalar_or_array(value):
  return float(value) if np.ndim(value) == 0 else value


def _check_positive_temperature(temperature):
  if np.any(~(np.asarray(temperature, dtype=float) > 0)):
    raise DomainError(f'Temperature must be positive, got {temperature}')


@dataclass(frozen=True)
class TlsParams:
  q_tls0: float
  n_c: float
  beta: float

  def __post_init__(self):
    for name in ('q_tls0', 'n_c', 'beta'):
      value = getattr(self, name)
      if not value > 0:
        raise DomainError(f'TLS parameter {name} must be positive, got {value}')

  @property
  def beta_in_range(self) -> bool:
    return 0.0 < self.beta <= 1.0


@dataclass(frozen=True)
class QpParams:
  t_c: float
  alpha_kinetic: float
  gap_joules: float | None = None

  def __post_init__(self):
    if not self.t_c > 0:
      raise DomainError(f'Critical temperature must be positive, got {self.t_c}')
    if not 0.0 <= self.alpha_kinetic < 1.0:
      raise DomainError(f'Kinetic inductance fraction must be in [0, 1), got {self.alpha_kinetic}')
    if self.gap_joules is None:
      object.__setattr__(self, 'gap_joules', BCS_GAP_RATIO * k_B * self.t_c)
    if not self.gap_joules > 0:
      raise DomainError(f'Superconducting gap must be positive, got {self.gap_joules}')


@dataclass(frozen=True)
class FieldParams:
  k_quad: float
  thickness: float
  diffusion: float
  t_c: float

  def __post_init__(self):
    for name in ('k_quad', 'thickness', 'diffusion', 't_c'):
      value = getattr(self, name)
      if not value > 0:
        raise DomainError(f'Field parameter {name} must be positive, got {value}')

  @classmethod
  def from_k(cls, k_quad: float, thickness: float, t_c: float) -> 'FieldParams':
    return cls(k_quad, thickness, diffusion_from_k(k_quad, thickness, t_c), t_c)


@dataclass(frozen=True)
class LossBudget:
  delta_tls: float
  delta_qp: float
  delta_field: float
  delta_const: float
  total: float

  @property
  def q_internal(self) -> float:
    return 1.0 / self.total if self.total > 0 else math.inf


def tls_loss(temperature, n_ph, f_r: float, p: TlsParams):
  """
  delta_TLS = (1/Q0_TLS) tanh(h f_r / 2 k_B T) / (1 + n/n_c)^beta
  """
  _check_positive_temperature(temperature)
  t = np.asarray(temperature, dtype=float)
  n = np.asarray(n_ph, dtype=float)
  if np.any(n < 0):
    raise DomainError(f'Photon number must be >= 0, got {n_ph}')
  thermal = np.tanh(h * f_r / (2.0 * k_B * t))
  return _scalar_or_array(thermal / p.q_tls0 / (1.0 + n / p.n_c) ** p.beta)


def reduced_qp_density(temperature, gap_joules: float):
  """
  Thermal quasiparticle density divided by the single-spin density of states at the Fermi level,
  2 sqrt(2 pi k_B T Delta) exp(-Delta / k_B T).
  """
  _check_positive_temperature(temperature)
  kt = k_B * np.asarray(temperature, dtype=float)
  return _scalar_or_array(2.0 * np.sqrt(2.0 * math.pi * kt * gap_joules) * np.exp(-gap_joules / kt))


def qp_loss(temperature, f_r: float, p: QpParams):
  """
  Quasiparticle loss (alpha / pi) sqrt(2 Delta / hbar w) n_qp / (D(E_F) Delta).
  The density of states cancels between n_qp and the denominator.
  """
  omega = 2.0 * math.pi * f_r
  density = np.asarray(reduced_qp_density(temperature, p.gap_joules))
  loss = p.alpha_kinetic / math.pi * math.sqrt(2.0 * p.gap_joules / (hbar * omega)) * density / p.gap_joules
  return _scalar_or_array(loss)


def field_loss(b_parallel, c2: float):
  """
  Phenomenological field loss c2 * B^2.
  """
  b = np.asarray(b_parallel, dtype=float)
  return _scalar_or_array(c2 * b * b)


def total_loss(delta_tls: float = 0.0, delta_qp: float = 0.0, delta_field: float = 0.0, delta_const: float = 0.0):
  components = {'delta_tls': delta_tls, 'delta_qp': delta_qp, 'delta_field': delta_field, 'delta_const': delta_const}
  for name, value in components.items():
    if not (math.isfinite(value) and value >= 0):
      raise DomainError(f'Loss component {name} must be finite and >= 0, got {value}')
  # fsum makes the total independent of summation order
  return LossBudget(**components, total=math.fsum(components.values()))


def _x_over_sinh(x):
  """
  x / sinh(x) for x >= 0 without overflow.
  """
  x = np.asarray(x, dtype=float)
  safe = np.where(x > 0, x, 1.0)
  value = 2.0 * safe * np.exp(-safe) / -np.expm1(-2.0 * safe)
  return np.where(x > 0, value, 1.0)


def tls_freq_shift(temperature, f_r: float, q_tls0: float):
  """
  TLS frequency shift in Hz, (f_r / pi Q0_TLS) [Re psi(1/2 + i y) - ln y] with y = h f_r / 2 pi k_B T.

  The bracket is dimensionless, so the result is scaled by f_r to give a frequency.
  """
  _check_positive_temperature(temperature)
  y = h * f_r / (2.0 * math.pi * k_B * np.asarray(temperature, dtype=float))
  bracket = np.asarray(digamma_half_line(y)) - np.log(y)
  return _scalar_or_array(f_r / (math.pi * q_tls0) * bracket)


def qp_freq_shift(temperature, f_r: float, p: QpParams):
  """
  Quasiparticle shift in Hz, -(1/2) alpha f_r (Delta/k_B T) / sinh(Delta/k_B T). Never positive.
  """
  _check_positive_temperature(temperature)
  x = p.gap_joules / (k_B * np.asarray(temperature, dtype=float))
  return _scalar_or_array(-0.5 * p.alpha_kinetic * f_r * _x_over_sinh(x))


def total_freq_shift(temperature, f_r: float, tls: TlsParams, qp: QpParams):
  return _scalar_or_array(
    np.asarray(tls_freq_shift(temperature, f_r, tls.q_tls0)) + np.asarray(qp_freq_shift(temperature, f_r, qp))
  )


def field_freq_shift(b_parallel, f_r0: float, k_quad: float):
  """
  Parabolic field shift -k B^2 f_r0, in Hz.
  """
  b = np.asarray(b_parallel, dtype=float)
  return _scalar_or_array(-k_quad * b * b * f_r0)


def diffusion_from_k(k_quad: float, thickness: float, t_c: float) -> float:
  """
  Electron diffusion constant D = 48 k hbar k_B T_c / (pi t^2 e^2), in m^2/s.
  """
  for name, value in (('k_quad', k_quad), ('thickness', thickness), ('t_c', t_c)):
    if not value > 0:
      raise DomainError(f'{name} must be positive, got {value}')
  return 48.0 * k_quad * hbar * k_B * t_c / (math.pi * thickness**2 * e**2)


def k_from_diffusion(diffusion: float, thickness: float, t_c: float) -> float:
  """
  Parabolic field coefficient k = (pi / 48) t^2 e^2 D / (hbar k_B T_c), in 1/T^2.
  """
  for name, value in (('diffusion', diffusion), ('thickness', thickness), ('t_c', t_c)):
    if not value > 0:
      raise DomainError(f'{name} must be positive, got {value}')
  return math.pi / 48.0 * thickness**2 * e**2 * diffusion / (hbar * k_B * t_c)


class VortexThresholds(NamedTuple):
  b_a: float
  b_c1: float


class VortexRegime(str, Enum):
  EXPULSION = 'expulsion'
  ALIGNED = 'aligned'
  DENSE = 'dense'


def vortex_thresholds(thickness: float) -> VortexThresholds:
  """
  Thin-film field scales in tesla: B_a = pi phi0 / 4 t^2 below which vortices are expelled,
  and B_c1 = 1.65 phi0 / t^2 above which they enter densely.
  """
  if not thickness > 0:
    raise DomainError(f'Film thickness must be positive, got {thickness}')
  t2 = thickness * thickness
  return VortexThresholds(b_a=math.pi * FLUX_QUANTUM / (4.0 * t2), b_c1=VORTEX_ENTRY_FACTOR * FLUX_QUANTUM / t2)


def vortex_regime(b_parallel: float, thickness: float) -> VortexRegime:
  thresholds = vortex_thresholds(thickness)
  b = abs(b_parallel)
  if b < thresholds.b_a:
    return VortexRegime.EXPULSION
  if b < thresholds.b_c1:
    return VortexRegime.ALIGNED
  return VortexRegime.DENSE


class JumpEvent(NamedTuple):
  # Index of the first point after the jump
  index: int
  b_field: float
  delta_f: float


def detect_jumps(fields, freqs, floor_hz: float = JUMP_FLOOR_HZ) -> list[JumpEvent]:
  """
  Steps in a field sweep of resonance frequencies that exceed
  max(5 x median |successive difference|, floor_hz).
  """
  b = np.asarray(fields, dtype=float)
  f = np.asarray(freqs, dtype=float)
  if b.size != f.size:
    raise PreconditionError(f'Got {b.size} fields but {f.size} frequencies')
  if b.size < 4:
    raise PreconditionError(f'Need at least 4 points to look for jumps, got {b.size}')
  db = np.diff(b)
  if not (np.all(db > 0) or np.all(db < 0)):
    raise PreconditionError('Fields must be strictly monotone')
  steps = np.diff(f)
  threshold = max(JUMP_MEDIAN_FACTOR * float(np.median(np.abs(steps))), floor_hz)
  events = []
  for i in np.flatnonzero(np.abs(steps) > threshold):
    events.append(JumpEvent(index=int(i) + 1, b_field=float(0.5 * (b[i] + b[i + 1])), delta_f=float(steps[i])))
  return events


def internal_quality_vs_temperature(
  temperatures,
  f_r: float,
  n_ph: float,
  tls: TlsParams,
  qp: QpParams,
  delta_const: float = 0.0,
):
  """
  Q_i(T) = 1 / (delta_TLS + delta_qp + delta_0) at a fixed photon number.
  """
  loss = np.asarray(tls_loss(temperatures, n_ph, f_r, tls)) + np.asarray(qp_loss(temperatures, f_r, qp)) + delta_const
  return _scalar_or_array(1.0 / loss)


class QiPeak(NamedTuple):
  temperature: float
  q_internal: float


def find_qi_peak(
  t_low: float,
  t_high: float,
  f_r: float,
  n_ph: float,
  tls: TlsParams,
  qp: QpParams,
  delta_const: float = 0.0,
  n_grid: int = 200,
) -> QiPeak | None:
  """
  Temperature of the interior maximum of Q_i on [t_low, t_high], or None when the
  largest Q_i sits at an end of the range.
  """
  if not 0 < t_low < t_high:
    raise PreconditionError(f'Need 0 < t_low < t_high, got {t_low}, {t_high}')
  grid = np.geomspace(t_low, t_high, n_grid)
  values = internal_quality_vs_temperature(grid, f_r, n_ph, tls, qp, delta_const)
  best = int(np.argmax(values))
  if best in (0, n_grid - 1):
    return None
  refined = minimize_scalar(
    lambda log_t: -internal_quality_vs_temperature(math.exp(log_t), f_r, n_ph, tls, qp, delta_const),
    bounds=(math.log(grid[best - 1]), math.log(grid[best + 1])),
    method='bounded',
    options={'xatol': 1e-10},
  )
  temperature = math.exp(float(refined.x))
  return QiPeak(temperature, float(internal_quality_vs_temperature(temperature, f_r, n_ph, tls, qp, delta_const)))


def self_consistent_photon_number(
  p_in: float,
  f_r: float,
  q_c: float,
  loss_at: Callable[[float], float],
) -> float:
  """
  Photon number n solving n = <n_ph>(P_in, Q_i(n)) when the internal loss depends on n.
  """
  if p_in == 0:
    return 0.0
  if not p_in > 0:
    raise DomainError(f'Input power must be >= 0, got {p_in}')
  omega = 2.0 * math.pi * f_r

  def photons(n: float) -> float:
    q_i = 1.0 / loss_at(n)
    q_l = 1.0 / (1.0 / q_i + 1.0 / q_c)
    return q_i * p_in / (hbar * omega * omega) * 2.0 * q_l * (q_c - q_l) / (q_c * q_c)

  # <n_ph> never exceeds 2 Q_c P_in / hbar w^2, whatever Q_i is
  upper = 2.0 * q_c * p_in / (hbar * omega * omega) * 1.01 + 1.0
  return float(brentq(lambda n: n - photons(n), 0.0, upper, xtol=1e-14, rtol=1e-13, maxiter=200))


@dataclass(frozen=True)
class TlsFit:
  params: TlsParams
  delta_const: float
  uncertainties: dict[str, float]
  rms_log_residual: float
  converged: bool
  beta_at_bound: bool = False


class _TlsInputs(NamedTuple):
  n_ph: np.ndarray
  q_i: np.ndarray
  temperature: float
  f_r: float


def _tls_residuals(x: np.ndarray, inputs: _TlsInputs) -> np.ndarray:
  thermal = math.tanh(h * inputs.f_r / (2.0 * k_B * inputs.temperature))
  saturation = (1.0 + inputs.n_ph / math.exp(x[1])) ** x[2]
  loss = math.exp(x[0]) * thermal / saturation + math.exp(x[3])
  return np.log(loss * inputs.q_i)


def fit_tls(n_ph, q_i, temperature: float, f_r: float, options: FitOptions | None = None) -> TlsFit:
  """
  Fit 1/Q_i = delta_TLS(T, n) + delta_0 to a power sweep at fixed temperature.

  Residuals are log ratios of model loss to measured loss, so every point weighs the same
  whatever its Q. beta is kept inside (0, 1).
  """
  n = np.asarray(n_ph, dtype=float)
  q = np.asarray(q_i, dtype=float)
  if n.size != q.size:
    raise PreconditionError(f'Got {n.size} photon numbers but {q.size} quality factors')
  if n.size < MIN_TLS_POINTS:
    raise PreconditionError(f'Need at least {MIN_TLS_POINTS} points for a TLS fit, got {n.size}')
  if np.any(~(n > 0)) or np.any(~(q > 0)) or not np.all(np.isfinite(q)):
    raise PreconditionError('Photon numbers and quality factors must be finite and positive')
  decades = math.log10(float(np.max(n)) / float(np.min(n)))
  if decades < MIN_TLS_DECADES:
    raise PreconditionError(f'Photon numbers must span {MIN_TLS_DECADES:g} decades, got {decades:.3g}')
  _check_positive_temperature(temperature)

  delta_0 = 1.0 / float(np.max(q))
  delta_tls0 = max(1.0 / float(np.min(q)) - delta_0, 0.1 * delta_0)
  start = [math.log(delta_tls0), float(np.median(np.log(n))), 0.3, math.log(delta_0)]
  inputs = _TlsInputs(n, q, float(temperature), float(f_r))
  bounds = [None, None, (0.0, 1.0), None]
  result = least_squares_fit(_tls_residuals, start, inputs=inputs, bounds=bounds, options=options)

  x = result.params
  params = TlsParams(q_tls0=math.exp(-x[0]), n_c=math.exp(x[1]), beta=float(x[2]))
  stderr = result.stderr
  uncertainties = {
    'q_tls0': params.q_tls0 * float(stderr[0]),
    'n_c': params.n_c * float(stderr[1]),
    'beta': float(stderr[2]),
    'delta_const': math.exp(x[3]) * float(stderr[3]),
  }
  at_bound = params.beta >= 1.0 - BETA_BOUND_MARGIN
  if at_bound:
    warn(f'TLS exponent beta = {params.beta:.6g} is pinned at its upper bound of 1')
  rms = float(np.sqrt(np.mean(_tls_residuals(x, inputs) ** 2)))
  debug(f'fit_tls: Q0_TLS={params.q_tls0:.6g} n_c={params.n_c:.6g} beta={params.beta:.6g}')
  return TlsFit(
    params=params,
    delta_const=math.exp(x[3]),
    uncertainties=uncertainties,
    rms_log_residual=rms,
    converged=result.converged,
    beta_at_bound=at_bound,
  )


@dataclass(frozen=True)
class FieldShiftFit:
  k_quad: float
  f_r0: float
  uncertainties: dict[str, float]
  converged: bool


def _field_shift_residuals(x: np.ndarray, inputs: tuple[np.ndarray, np.ndarray, float]) -> np.ndarray:
  b, f, f_ref = inputs
  return x[0] * (1.0 - x[1] * b * b) - f / f_ref


def fit_field_shift(fields, freqs, options: FitOptions | None = None) -> FieldShiftFit:
  """
  Fit f_r(B) = f_r0 (1 - k B^2). Fields in tesla, frequencies in Hz.
  """
  b = np.asarray(fields, dtype=float)
  f = np.asarray(freqs, dtype=float)
  if b.size != f.size or b.size < 3:
    raise PreconditionError(f'Need at least 3 matching (field, frequency) pairs, got {b.size} and {f.size}')
  if np.ptp(b * b) <= 0:
    raise PreconditionError('Fields must not all have the same magnitude')
  f_ref = float(np.max(f))
  result = least_squares_fit(_field_shift_residuals, [1.0, 0.0], inputs=(b, f, f_ref), options=options)
  stderr = result.stderr
  return FieldShiftFit(
    k_quad=float(result.params[1]),
    f_r0=f_ref * float(result.params[0]),
    uncertainties={'k_quad': float(stderr[1]), 'f_r0': f_ref * float(stderr[0])},
    converged=result.converged,
  )


@dataclass(frozen=True)
class FieldLossFit:
  c2: float
  delta_const: float
  uncertainties: dict[str, float]
  converged: bool


def _field_loss_residuals(x: np.ndarray, inputs: tuple[np.ndarray, np.ndarray, float]) -> np.ndarray:
  b, q, scale = inputs
  return (x[0] + x[1] * b * b) / scale * q - 1.0


def fit_field_loss(fields, q_i, options: FitOptions | None = None) -> FieldLossFit:
  """
  Fit 1/Q_i(B) = delta_0 + c2 B^2 with relative residuals.
  """
  b = np.asarray(fields, dtype=float)
  q = np.asarray(q_i, dtype=float)
  if b.size != q.size or b.size < 3:
    raise PreconditionError(f'Need at least 3 matching (field, Q_i) pairs, got {b.size} and {q.size}')
  if np.any(~(q > 0)):
    raise PreconditionError('Quality factors must be positive')
  if np.ptp(b * b) <= 0:
    raise PreconditionError('Fields must not all have the same magnitude')
  scale = float(np.max(q))
  result = least_squares_fit(_field_loss_residuals, [1.0, 0.0], inputs=(b, q, scale), options=options)
  stderr = result.stderr
  return FieldLossFit(
    c2=float(result.params[1]) / scale,
    delta_const=float(result.params[0]) / scale,
    uncertainties={'c2': float(stderr[1]) / scale, 'delta_const': float(stderr[0]) / scale},
    converged=result.converged,
  )


@dataclass(frozen=True)
class FreqShiftFit:
  q_tls0: float
  alpha_kinetic: float
  t_c: float
  f_r0: float
  uncertainties: dict[str, float] = field(default_factory=dict)
  converged: bool = True


class _ShiftInputs(NamedTuple):
  temperatures: np.ndarray
  freqs: np.ndarray
  f_ref: float
  f_scale: float
  t_c: float
  gap_ratio: float
  fit_t_c: bool


def _shift_model(x: np.ndarray, inputs: _ShiftInputs) -> np.ndarray:
  f_r0 = inputs.f_ref + inputs.f_scale * x[0]
  t_c = math.exp(x[3]) if inputs.fit_t_c else inputs.t_c
  gap_over_kt = inputs.gap_ratio * t_c / inputs.temperatures
  qp_shift = -0.5 * x[2] * f_r0 * _x_over_sinh(gap_over_kt)
  return f_r0 + np.asarray(tls_freq_shift(inputs.temperatures, f_r0, math.exp(x[1]))) + qp_shift


def _shift_residuals(x: np.ndarray, inputs: _ShiftInputs) -> np.ndarray:
  return (_shift_model(x, inputs) - inputs.freqs) / inputs.f_scale


def fit_freq_shift(
  temperatures,
  freqs,
  qp_guess: QpParams,
  q_tls0_guess: float = 1e5,
  fit_t_c: bool = False,
  options: FitOptions | None = None,
) -> FreqShiftFit:
  """
  Fit f_r(T) = f_r0 + df_TLS(T) + df_qp(T) to a temperature sweep of resonance frequencies.

  Free parameters are f_r0, Q0_TLS and alpha, plus T_c when fit_t_c is set.
  Otherwise T_c and the gap come from qp_guess.
  """
  t = np.asarray(temperatures, dtype=float)
  f = np.asarray(freqs, dtype=float)
  n_free = 4 if fit_t_c else 3
  if t.size != f.size or t.size <= n_free:
    raise PreconditionError(f'Need more than {n_free} matching (temperature, frequency) pairs, got {t.size}')
  _check_positive_temperature(t)
  order = np.argsort(t)
  t, f = t[order], f[order]
  f_ref = float(f[0])
  f_scale = max(float(np.ptp(f)), 1.0)
  gap_ratio = qp_guess.gap_joules / (k_B * qp_guess.t_c)
  inputs = _ShiftInputs(t, f, f_ref, f_scale, qp_guess.t_c, gap_ratio, fit_t_c)
  start = [0.0, math.log(q_tls0_guess), min(max(qp_guess.alpha_kinetic, 1e-6), 1.0 - 1e-6)]
  bounds = [None, None, (0.0, 1.0)]
  if fit_t_c:
    start.append(math.log(qp_guess.t_c))
    bounds.append(None)
  result = least_squares_fit(_shift_residuals, start, inputs=inputs, bounds=bounds, options=options)
  x = result.params
  stderr = result.stderr
  t_c = math.exp(x[3]) if fit_t_c else qp_guess.t_c
  uncertainties = {
    'f_r0': f_scale * float(stderr[0]),
    'q_tls0': math.exp(x[1]) * float(stderr[1]),
    'alpha_kinetic': float(stderr[2]),
    't_c': t_c * float(stderr[3]) if fit_t_c else 0.0,
  }
  return FreqShiftFit(
    q_tls0=math.exp(x[1]),
    alpha_kinetic=float(x[2]),
    t_c=t_c,
    f_r0=f_ref + f_scale * float(x[0]),
    uncertainties=uncertainties,
    converged=result.converged,
  )
