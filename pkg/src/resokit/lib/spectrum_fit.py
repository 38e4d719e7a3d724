# Extraction of notch resonator parameters from a measured transmission trace.
#
# Pipeline: cable delay removal, circle fit, phase fit about the circle center,
# off-resonant point geometry, then one refinement of all seven parameters on the
# raw complex data. The refinement is what defines the reported values.

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import NamedTuple

import numpy as np
from scipy.optimize import minimize_scalar

from resokit.lib.errors import (
  DegenerateError,
  NoResonanceError,
  PreconditionError,
  SingularJacobianError,
  UnphysicalError,
)
from resokit.lib.logger import debug
from resokit.lib.numerics import (
  FitOptions,
  FitResult,
  circle_fit,
  least_squares_fit,
  numerical_jacobian,
  taubin_circle,
)
from resokit.lib.resonator import NOTCH_FIELDS, NotchParams, S21Trace, s21_full

# Fraction of the grid used at each edge for the delay line fit
EDGE_FRACTION = 0.2
DELAY_SCAN_POINTS = 41
SHALLOW_DIP_DB = 3.0
# Dip must stand this many noise sigmas below the median magnitude
DIP_SIGNIFICANCE = 6.0
LOW_SNR_FRACTION = 0.05
MIN_POINTS = 16
MIN_DELAY_POINTS = 64
MIN_DELAY_LINEWIDTHS = 5.0
# Phase fit keeps Q_l within this factor of its start value
PHASE_Q_REACH = 50.0


class FitFlag(str, Enum):
  LOW_SNR = 'low_snr'
  DELAY_UNCERTAIN = 'delay_uncertain'
  SHALLOW_DIP = 'shallow_dip'
  NOT_CONVERGED = 'not_converged'


class DelayEstimate(NamedTuple):
  delay: float
  uncertain: bool


@dataclass(frozen=True)
class FitReport:
  params: NotchParams
  q_internal: float
  uncertainties: dict[str, float]
  rms_residual: float
  n_points: int
  flags: frozenset[FitFlag] = field(default_factory=frozenset)
  iterations: int = 0

  @property
  def coupling_q_effective(self) -> float:
    """
    Diameter-corrected coupling quality factor |Q_c| / cos(phi), the Q_c that enters photon-number calibration.
    """
    return self.params.q_coupling_mag / math.cos(self.params.phi)

  @property
  def converged(self) -> bool:
    return FitFlag.NOT_CONVERGED not in self.flags


def extract_qi(q_loaded: float, q_coupling_mag: float, phi: float) -> float:
  """
  Internal quality factor with the diameter correction, 1/Q_i = 1/Q_l - cos(phi)/|Q_c|.
  """
  inverse = 1.0 / q_loaded - math.cos(phi) / q_coupling_mag
  if not inverse > 0:
    raise UnphysicalError(
      f'Loaded Q {q_loaded:.6g} is not below the coupling limit |Q_c|/cos(phi) '
      f'with |Q_c| = {q_coupling_mag:.6g}, phi = {phi:.4g}; the resonance looks over-coupled'
    )
  return 1.0 / inverse


def _qi_gradient(q_loaded: float, q_coupling_mag: float, phi: float, q_internal: float) -> np.ndarray:
  """
  Derivatives of Q_i with respect to (Q_l, |Q_c|, phi).
  """
  qi2 = q_internal * q_internal
  return np.array(
    [
      qi2 / (q_loaded * q_loaded),
      -qi2 * math.cos(phi) / (q_coupling_mag * q_coupling_mag),
      -qi2 * math.sin(phi) / q_coupling_mag,
    ]
  )


def notch_jacobian(f, p: NotchParams) -> np.ndarray:
  """
  Complex Jacobian d s21_full / d(field) for the seven NotchParams fields, by central differences.

  Returns:
    Array of shape (len(f), 7), columns ordered as NOTCH_FIELDS.
  """
  f = np.atleast_1d(np.asarray(f, dtype=float))
  # Difference in variables of order one so every step is a small relative change
  scale = np.array([p.f_r, p.q_loaded, p.q_coupling_mag, 1.0, p.amp, 1.0, 1.0 / (2.0 * math.pi * np.max(np.abs(f)))])
  base = p.as_array() / scale

  def stacked(x: np.ndarray) -> np.ndarray:
    s = s21_full(f, NotchParams.from_array(x * scale))
    return np.concatenate([np.real(s), np.imag(s)])

  jac = numerical_jacobian(stacked, base) / scale
  n = f.size
  return jac[:n] + 1j * jac[n:]


def _wrap(angle):
  return np.angle(np.exp(1j * np.asarray(angle)))


def _noise_level(magnitude: np.ndarray) -> float:
  """
  Robust per-point noise estimate from the median absolute successive difference.
  """
  diffs = np.diff(magnitude)
  mad = np.median(np.abs(diffs - np.median(diffs)))
  return float(1.4826 * mad / math.sqrt(2.0))


def dip_depth_db(trace: S21Trace) -> float:
  """
  Depth of the deepest |S21| point below the median, in dB.

  Raises NoResonanceError when the dip does not stand out of the noise.
  """
  magnitude = np.abs(trace.values)
  median = float(np.median(magnitude))
  minimum = float(np.min(magnitude))
  if median <= 0:
    raise NoResonanceError('Trace magnitude is zero')
  depth = median - minimum
  noise = _noise_level(magnitude)
  if depth <= 1e-6 * median or depth <= DIP_SIGNIFICANCE * noise:
    raise NoResonanceError(
      f'No resonance dip: deepest point is {depth / median:.3g} of the median below it, noise {noise / median:.3g}'
    )
  if minimum <= 0:
    return math.inf
  return 20.0 * math.log10(median / minimum)


def _edge_windows(n: int) -> tuple[slice, slice]:
  width = max(2, int(round(EDGE_FRACTION * n)))
  return slice(0, width), slice(n - width, n)


def estimate_linewidth(trace: S21Trace) -> float:
  """
  Full width of the |S21|^2 dip at half depth, in Hz. Falls back to the grid step.
  """
  freqs = trace.freqs
  power = np.abs(trace.values) ** 2
  low, high = _edge_windows(freqs.size)
  baseline = float(np.median(np.concatenate([power[low], power[high]])))
  centre = int(np.argmin(power))
  half = 0.5 * (baseline + power[centre])
  left = centre
  while left > 0 and power[left - 1] < half:
    left -= 1
  right = centre
  while right < freqs.size - 1 and power[right + 1] < half:
    right += 1
  step = float(np.min(np.diff(freqs)))
  return max(float(freqs[right] - freqs[left]), step)


def _circle_misfit(freqs: np.ndarray, values: np.ndarray, delay: float) -> float:
  z = values * np.exp(2j * np.pi * freqs * delay)
  try:
    xc, yc, r = taubin_circle(z.real, z.imag)
  except (DegenerateError, np.linalg.LinAlgError):
    return math.inf
  if not (math.isfinite(r) and r > 0):
    return math.inf
  return float(np.mean((np.abs(z - complex(xc, yc)) - r) ** 2) / (r * r))


def estimate_delay(trace: S21Trace) -> DelayEstimate:
  """
  Cable delay tau of a trace, in seconds.

  A line with one slope and one intercept per edge is fitted to the unwrapped phase
  over the outer points of the grid, tau = -slope / 2 pi. The value is then refined by
  minimising the circle misfit of the delay-corrected data within +-1/span of it.

  Returns:
    DelayEstimate, with uncertain set when an edge window reaches within one dip
    linewidth of the resonance.
  """
  freqs, values = trace.freqs, trace.values
  n = freqs.size
  if n < MIN_POINTS:
    raise PreconditionError(f'Need at least {MIN_POINTS} points to estimate the delay, got {n}')
  span = float(freqs[-1] - freqs[0])
  linewidth = estimate_linewidth(trace)
  if n < MIN_DELAY_POINTS and span < MIN_DELAY_LINEWIDTHS * linewidth:
    raise PreconditionError(
      f'Delay needs {MIN_DELAY_POINTS} points or a span of {MIN_DELAY_LINEWIDTHS:g} linewidths, '
      f'got {n} points over {span / linewidth:.3g} linewidths'
    )

  phase = np.unwrap(np.angle(values))
  low, high = _edge_windows(n)
  f_c = 0.5 * (freqs[0] + freqs[-1])
  x = np.concatenate([freqs[low], freqs[high]]) - f_c
  on_low = np.concatenate([np.ones(low.stop), np.zeros(n - high.start)])
  design = np.column_stack([x, on_low, 1.0 - on_low])
  coefficients = np.linalg.lstsq(design, np.concatenate([phase[low], phase[high]]), rcond=None)[0]
  line_delay = -float(coefficients[0]) / (2.0 * math.pi)

  bracket = 1.0 / span
  grid = line_delay + np.linspace(-bracket, bracket, DELAY_SCAN_POINTS)
  misfits = np.array([_circle_misfit(freqs, values, tau) for tau in grid])
  best = int(np.argmin(misfits))
  lo = grid[max(best - 1, 0)]
  hi = grid[min(best + 1, grid.size - 1)]
  refined = minimize_scalar(
    lambda tau: _circle_misfit(freqs, values, tau),
    bounds=(lo, hi),
    method='bounded',
    options={'xatol': 1e-9 * bracket},
  )
  delay = float(refined.x) if refined.fun <= misfits[best] else float(grid[best])

  dip = float(freqs[int(np.argmin(np.abs(values)))])
  inner_low = float(freqs[low.stop - 1])
  inner_high = float(freqs[high.start])
  uncertain = (dip - inner_low) < linewidth or (inner_high - dip) < linewidth
  debug(f'estimate_delay: line {line_delay:.6g} s, refined {delay:.6g} s, linewidth {linewidth:.6g} Hz')
  return DelayEstimate(delay=delay, uncertain=bool(uncertain))


def _first_crossing(freqs: np.ndarray, theta: np.ndarray, start: int, target: float, direction: int) -> float | None:
  i = start
  while 0 <= i + direction < freqs.size:
    a, b = theta[i] - target, theta[i + direction] - target
    if a == 0:
      return float(freqs[i])
    if a * b < 0:
      return float(freqs[i] + (freqs[i + direction] - freqs[i]) * a / (a - b))
    i += direction
  return None


def _phase_guess(freqs: np.ndarray, theta: np.ndarray, linewidth: float) -> tuple[float, float, float]:
  """
  Start values (theta0, Q_l, f_r) from the unwrapped phase about the circle center.
  The phase moves fastest at f_r and sits +-pi/2 from theta0 half a linewidth either side.
  """
  step = float(np.min(np.diff(freqs)))
  window = min(max(5, int(0.5 * linewidth / step)), max(freqs.size // 4, 1))
  speed = np.abs(np.gradient(theta, freqs))
  smooth = np.convolve(speed, np.ones(window) / window, mode='same')
  centre = int(np.argmax(smooth))
  f_r = float(freqs[centre])
  theta0 = float(theta[centre])
  below = _first_crossing(freqs, theta, centre, theta0 + 0.5 * math.pi, -1)
  above = _first_crossing(freqs, theta, centre, theta0 - 0.5 * math.pi, +1)
  if below is not None and above is not None and above > below:
    f_r = 0.5 * (below + above)
    width = above - below
    theta0 = float(np.interp(f_r, freqs, theta))
  elif below is not None:
    width = 2.0 * (f_r - below)
  elif above is not None:
    width = 2.0 * (above - f_r)
  else:
    width = linewidth
  width = max(width, step)
  return theta0, f_r / width, f_r


class _PhaseInputs(NamedTuple):
  freqs: np.ndarray
  theta: np.ndarray
  f_guess: float
  linewidth: float


def _phase_residuals(x: np.ndarray, inputs: _PhaseInputs) -> np.ndarray:
  f_r = inputs.f_guess + inputs.linewidth * x[0]
  q_l = math.exp(x[1])
  model = x[2] + 2.0 * np.arctan(2.0 * q_l * (1.0 - inputs.freqs / f_r))
  return _wrap(inputs.theta - model)


def fit_phase(freqs: np.ndarray, centred: np.ndarray, linewidth: float) -> tuple[float, float, float]:
  """
  Fit theta(f) = theta0 + 2 arctan(2 Q_l (1 - f/f_r)) to the phase of circle-centered data.

  Returns:
    (theta0, Q_l, f_r)
  """
  theta = np.unwrap(np.angle(centred))
  theta0, q_l, f_r = _phase_guess(freqs, theta, linewidth)
  inputs = _PhaseInputs(freqs, np.angle(centred), f_r, f_r / q_l)
  # f_r stays on the grid and Q_l near its guess, where the arctan is not saturated
  reach = float(freqs[-1] - freqs[0]) / inputs.linewidth
  log_q = math.log(q_l)
  bounds = [(-reach, reach), (log_q - math.log(PHASE_Q_REACH), log_q + math.log(PHASE_Q_REACH)), None]
  result = least_squares_fit(_phase_residuals, [0.0, log_q, theta0], inputs=inputs, bounds=bounds)
  x = result.params
  return float(_wrap(x[2])), math.exp(x[1]), f_r + (f_r / q_l) * float(x[0])


class _RefineInputs(NamedTuple):
  freqs: np.ndarray
  values: np.ndarray
  f_guess: float
  linewidth: float
  f_centre: float
  span: float


def _refine_model(x: np.ndarray, inputs: _RefineInputs) -> np.ndarray:
  f = inputs.freqs
  f_r = inputs.f_guess + inputs.linewidth * x[0]
  q_l = math.exp(x[1])
  q_c = math.exp(x[2])
  # Environment phase referenced to the band center, delay scaled to radians across the span
  env_phase = x[5] - (f - inputs.f_centre) * x[6] / inputs.span
  ideal = 1.0 - (q_l / q_c) * np.exp(1j * x[3]) / (1.0 + 2j * q_l * (f / f_r - 1.0))
  return math.exp(x[4]) * np.exp(1j * env_phase) * ideal


def _refine_residuals(x: np.ndarray, inputs: _RefineInputs) -> np.ndarray:
  diff = _refine_model(x, inputs) - inputs.values
  return np.concatenate([diff.real, diff.imag])


def _internal_start(p: NotchParams, inputs: _RefineInputs) -> np.ndarray:
  scaled_delay = 2.0 * math.pi * inputs.span * p.delay
  return np.array(
    [
      (p.f_r - inputs.f_guess) / inputs.linewidth,
      math.log(p.q_loaded),
      math.log(p.q_coupling_mag),
      p.phi,
      math.log(p.amp),
      float(_wrap(p.phase_offset - 2.0 * math.pi * inputs.f_centre * p.delay)),
      scaled_delay,
    ]
  )


def _physical(x: np.ndarray, inputs: _RefineInputs) -> tuple[NotchParams, np.ndarray]:
  """
  Physical parameters for internal vector x, with d(physical)/d(internal).
  """
  delay = x[6] / (2.0 * math.pi * inputs.span)
  params = NotchParams(
    f_r=inputs.f_guess + inputs.linewidth * x[0],
    q_loaded=math.exp(x[1]),
    q_coupling_mag=math.exp(x[2]),
    phi=float(_wrap(x[3])),
    amp=math.exp(x[4]),
    phase_offset=float(_wrap(x[5] + 2.0 * math.pi * inputs.f_centre * delay)),
    delay=delay,
  )
  transform = np.zeros((7, 7))
  transform[0, 0] = inputs.linewidth
  transform[1, 1] = params.q_loaded
  transform[2, 2] = params.q_coupling_mag
  transform[3, 3] = 1.0
  transform[4, 4] = params.amp
  transform[5, 5] = 1.0
  transform[5, 6] = inputs.f_centre / inputs.span
  transform[6, 6] = 1.0 / (2.0 * math.pi * inputs.span)
  return params, transform


def fit_notch(trace: S21Trace, options: FitOptions | None = None) -> FitReport:
  """
  Fit the seven notch parameters and Q_i of a single-resonance trace.

  Returns:
    FitReport with one-sigma uncertainties from the final refinement covariance.
    Non-convergence is reported through the flags, with the best parameters found.
  """
  freqs, values = trace.freqs, trace.values
  n = freqs.size
  if n < MIN_POINTS:
    raise PreconditionError(f'Need at least {MIN_POINTS} points to fit a resonance, got {n}')
  if not np.all(np.isfinite(values)):
    raise PreconditionError('Trace contains non-finite transmission values')

  flags = set()
  depth = dip_depth_db(trace)
  if depth < SHALLOW_DIP_DB:
    flags.add(FitFlag.SHALLOW_DIP)

  estimate = estimate_delay(trace)
  if estimate.uncertain:
    flags.add(FitFlag.DELAY_UNCERTAIN)
  corrected = values * np.exp(2j * np.pi * freqs * estimate.delay)

  circle = circle_fit(corrected)
  z_c = circle.center
  linewidth = estimate_linewidth(trace)
  try:
    theta0, q_l, f_r = fit_phase(freqs, corrected - z_c, linewidth)
  except SingularJacobianError as err:
    # Saturated arctan; the refinement starts from the phase guess instead
    debug(f'fit_notch: phase fit failed, starting from the phase guess: {err.message}')
    theta0, q_l, f_r = _phase_guess(freqs, np.unwrap(np.angle(corrected - z_c)), linewidth)

  off_resonant = z_c + circle.radius * np.exp(1j * (theta0 + math.pi))
  amp = abs(off_resonant)
  diameter = 2.0 * circle.radius / amp
  start = NotchParams(
    f_r=f_r,
    q_loaded=q_l,
    q_coupling_mag=q_l / diameter,
    phi=float(np.angle(1.0 - z_c / off_resonant)),
    amp=amp,
    phase_offset=float(np.angle(off_resonant)),
    delay=estimate.delay,
  )
  debug(f'fit_notch: start f_r={start.f_r:.9g} Q_l={start.q_loaded:.6g} |Q_c|={start.q_coupling_mag:.6g}')

  span = float(freqs[-1] - freqs[0])
  inputs = _RefineInputs(freqs, values, f_r, f_r / q_l, 0.5 * (freqs[0] + freqs[-1]), span)
  x0 = _internal_start(start, inputs)
  try:
    result = least_squares_fit(_refine_residuals, x0, inputs=inputs, options=options)
  except SingularJacobianError as err:
    debug(f'fit_notch: refinement failed at its start point: {err.message}')
    result = FitResult(
      params=x0,
      covariance=np.full((x0.size, x0.size), math.nan),
      residual_norm=float(np.linalg.norm(_refine_residuals(x0, inputs))),
      iterations=0,
      converged=False,
      message=err.message,
    )
  if not result.converged:
    flags.add(FitFlag.NOT_CONVERGED)
  params, transform = _physical(result.params, inputs)
  covariance = transform @ result.covariance @ transform.T

  q_internal = extract_qi(params.q_loaded, params.q_coupling_mag, params.phi)
  uncertainties = {name: float(math.sqrt(max(covariance[i, i], 0.0))) for i, name in enumerate(NOTCH_FIELDS)}
  block = covariance[np.ix_([1, 2, 3], [1, 2, 3])]
  gradient = _qi_gradient(params.q_loaded, params.q_coupling_mag, params.phi, q_internal)
  uncertainties['q_internal'] = float(math.sqrt(max(gradient @ block @ gradient, 0.0)))

  misfit = _refine_model(result.params, inputs) - values
  rms_residual = float(np.sqrt(np.mean(np.abs(misfit) ** 2)))
  if rms_residual > LOW_SNR_FRACTION * 2.0 * circle.radius:
    flags.add(FitFlag.LOW_SNR)

  return FitReport(
    params=params,
    q_internal=q_internal,
    uncertainties=uncertainties,
    rms_residual=rms_residual,
    n_points=n,
    flags=frozenset(flags),
    iterations=result.iterations,
  )
