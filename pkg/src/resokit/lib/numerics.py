# Mathematical kernels used by every other module:
#  complete elliptic integral of the first kind, digamma on the critical line,
#  damped nonlinear least squares and an algebraic circle fit.
#
# All functions are pure, so they are safe to call from several threads at once.

from dataclasses import dataclass
from typing import Any, Callable, Sequence

import numpy as np

from resokit.lib.errors import DegenerateError, DomainError, PreconditionError, SingularJacobianError
from resokit.lib.logger import debug

# Asymptotic expansion coefficients B_2n / (2n) of digamma, n = 1..7
_DIGAMMA_ASYMPTOTIC = (1 / 12, -1 / 120, 1 / 252, -1 / 240, 1 / 132, -691 / 32760, 1 / 12)
# Shifting Re(z) from 1/2 by 8 puts |z| > 8 for every y, where the series above is good to ~1e-15
_DIGAMMA_SHIFT = 8
_AGM_MAX_STEPS = 64


@dataclass(frozen=True)
class FitOptions:
  max_iterations: int = 200
  ftol: float = 1e-12
  xtol: float = 1e-12
  lambda0: float = 1e-3
  lambda_factor: float = 3.0
  lambda_max: float = 1e16
  # Stop once the cost falls this far below the starting cost, the rounding floor of exact data
  cost_floor: float = 1e-28


@dataclass(frozen=True)
class FitResult:
  params: np.ndarray
  covariance: np.ndarray
  residual_norm: float
  iterations: int
  converged: bool
  message: str = ''

  @property
  def stderr(self) -> np.ndarray:
    return np.sqrt(np.clip(np.diag(self.covariance), 0.0, None))


@dataclass(frozen=True)
class Circle2D:
  center_re: float
  center_im: float
  radius: float

  def __post_init__(self):
    if not np.isfinite(self.radius) or self.radius <= 0:
      raise DegenerateError(f'Circle radius must be finite and positive, got {self.radius}')

  @property
  def center(self) -> complex:
    return complex(self.center_re, self.center_im)


def elliptic_k(k):
  """
  Complete elliptic integral of the first kind K(k).

  Takes the modulus k, not the parameter m = k**2. Evaluated through the
  arithmetic-geometric mean, K(k) = pi / (2 * AGM(1, sqrt(1 - k**2))).
  Accepts a scalar or an array of moduli in [0, 1).
  """
  k_arr = np.asarray(k, dtype=float)
  if np.any(~np.isfinite(k_arr)) or np.any(k_arr < 0.0) or np.any(k_arr >= 1.0):
    raise DomainError(f'elliptic_k needs a modulus in [0, 1), got {k}')
  a = np.ones_like(k_arr)
  b = np.sqrt((1.0 - k_arr) * (1.0 + k_arr))
  for _ in range(_AGM_MAX_STEPS):
    if np.all(np.abs(a - b) <= 1e-15 * a):
      break
    a, b = 0.5 * (a + b), np.sqrt(a * b)
  result = np.pi / (a + b)
  return float(result) if np.ndim(k) == 0 else result


def digamma_half_line(y):
  """
  Re{psi(1/2 + i*y)} for real y (scalar or array). Even in y.
  """
  y_abs = np.abs(np.asarray(y, dtype=float))
  z = 0.5 + 1j * y_abs
  # psi(z) = psi(z + n) - sum_{j<n} 1/(z + j)
  shift = np.zeros_like(z)
  for j in range(_DIGAMMA_SHIFT):
    shift = shift + 1.0 / (z + j)
  w = z + _DIGAMMA_SHIFT
  inv_w2 = 1.0 / (w * w)
  power = inv_w2
  series = np.zeros_like(z)
  for coefficient in _DIGAMMA_ASYMPTOTIC:
    series = series + coefficient * power
    power = power * inv_w2
  psi = np.log(w) - 0.5 / w - series - shift
  result = psi.real
  return float(result) if np.ndim(y) == 0 else result


def numerical_jacobian(func: Callable[[np.ndarray], np.ndarray], params) -> np.ndarray:
  """
  Central-difference Jacobian of a vector function, step max(1e-8, 1e-8 * |p|).
  """
  p = np.asarray(params, dtype=float)
  columns = []
  for i in range(p.size):
    h = max(1e-8, 1e-8 * abs(p[i]))
    p_plus = p.copy()
    p_minus = p.copy()
    p_plus[i] += h
    p_minus[i] -= h
    width = p_plus[i] - p_minus[i]
    columns.append((np.asarray(func(p_plus), dtype=float) - np.asarray(func(p_minus), dtype=float)) / width)
  return np.column_stack(columns)


class _BoundsTransform:
  """
  Maps bounded model parameters onto unconstrained ones.
  Two-sided bounds use a logistic map, one-sided bounds an exponential.
  """

  def __init__(self, bounds: Sequence[tuple[float | None, float | None] | None] | None, size: int):
    self.lower = np.full(size, -np.inf)
    self.upper = np.full(size, np.inf)
    if bounds is not None:
      if len(bounds) != size:
        raise PreconditionError(f'Expected {size} bounds, got {len(bounds)}')
      for i, bound in enumerate(bounds):
        if bound is None:
          continue
        lo, hi = bound
        self.lower[i] = -np.inf if lo is None else float(lo)
        self.upper[i] = np.inf if hi is None else float(hi)
    if np.any(self.lower >= self.upper):
      raise PreconditionError('Every lower bound must be below its upper bound')
    self.both = np.isfinite(self.lower) & np.isfinite(self.upper)
    self.lower_only = np.isfinite(self.lower) & ~np.isfinite(self.upper)
    self.upper_only = ~np.isfinite(self.lower) & np.isfinite(self.upper)

  def check(self, p: np.ndarray):
    if np.any(p < self.lower) or np.any(p > self.upper):
      raise PreconditionError(f'Initial parameters {p} lie outside their bounds')

  def to_internal(self, p: np.ndarray) -> np.ndarray:
    u = p.astype(float).copy()
    tiny = 1e-15
    if np.any(self.both):
      s = (p[self.both] - self.lower[self.both]) / (self.upper[self.both] - self.lower[self.both])
      s = np.clip(s, tiny, 1.0 - tiny)
      u[self.both] = np.log(s / (1.0 - s))
    if np.any(self.lower_only):
      u[self.lower_only] = np.log(np.maximum(p[self.lower_only] - self.lower[self.lower_only], tiny))
    if np.any(self.upper_only):
      u[self.upper_only] = np.log(np.maximum(self.upper[self.upper_only] - p[self.upper_only], tiny))
    return u

  def to_external(self, u: np.ndarray) -> np.ndarray:
    p = u.astype(float).copy()
    if np.any(self.both):
      logistic = 0.5 * (1.0 + np.tanh(0.5 * u[self.both]))
      p[self.both] = self.lower[self.both] + (self.upper[self.both] - self.lower[self.both]) * logistic
    if np.any(self.lower_only):
      p[self.lower_only] = self.lower[self.lower_only] + np.exp(np.clip(u[self.lower_only], -700.0, 700.0))
    if np.any(self.upper_only):
      p[self.upper_only] = self.upper[self.upper_only] - np.exp(np.clip(u[self.upper_only], -700.0, 700.0))
    return p


def _column_norms(jac: np.ndarray) -> np.ndarray:
  norms = np.linalg.norm(jac, axis=0)
  return np.where(np.isfinite(norms) & (norms > 0), norms, 0.0)


def _check_rank(jac: np.ndarray):
  if not np.all(np.isfinite(jac)):
    raise SingularJacobianError('Jacobian has non-finite entries', rank=0)
  norms = _column_norms(jac)
  nonzero = norms > 0
  rank = int(np.linalg.matrix_rank(jac[:, nonzero] / norms[nonzero])) if np.any(nonzero) else 0
  if rank < jac.shape[1]:
    raise SingularJacobianError('Jacobian is rank deficient', rank=rank)


def _solve(matrix: np.ndarray, rhs: np.ndarray) -> np.ndarray:
  try:
    return np.linalg.solve(matrix, rhs)
  except np.linalg.LinAlgError:
    return np.linalg.lstsq(matrix, rhs, rcond=None)[0]


def _gauss_newton_step(jac: np.ndarray, residuals: np.ndarray) -> np.ndarray:
  norms = _column_norms(jac)
  safe = np.where(norms > 0, norms, 1.0)
  scaled_step = np.linalg.lstsq(jac / safe, -residuals, rcond=None)[0]
  return scaled_step / safe


def _covariance(jac: np.ndarray, residual_norm: float) -> np.ndarray:
  n_res, n_par = jac.shape
  dof = n_res - n_par
  if dof <= 0 or not np.all(np.isfinite(jac)):
    return np.full((n_par, n_par), np.nan)
  norms = _column_norms(jac)
  if np.any(norms == 0):
    return np.full((n_par, n_par), np.nan)
  scaled = jac / norms
  try:
    inverse = np.linalg.inv(scaled.T @ scaled) / np.outer(norms, norms)
  except np.linalg.LinAlgError:
    return np.full((n_par, n_par), np.nan)
  sigma2 = residual_norm**2 / dof
  covariance = sigma2 * inverse
  return 0.5 * (covariance + covariance.T)


def least_squares_fit(
  model: Callable[[np.ndarray, Any], np.ndarray],
  initial,
  inputs: Any = None,
  bounds: Sequence[tuple[float | None, float | None] | None] | None = None,
  options: FitOptions | None = None,
) -> FitResult:
  """
  Levenberg-Marquardt damped Gauss-Newton minimisation of sum(model(params, inputs)**2).

  Jacobians are central differences. Bounds are handled by reparametrisation, so the
  core iteration is unconstrained. Each accepted damped step is compared against the
  undamped Gauss-Newton step from the same point and the lower cost wins.

  Returns a FitResult whose covariance is sigma^2 (J^T J)^-1 in model units, with
  sigma^2 = residual_norm^2 / (N - M). Non-convergence is reported, not raised. A rank deficient
  Jacobian raises SingularJacobianError only at the initial parameters.
  """
  opts = options or FitOptions()
  p0 = np.asarray(initial, dtype=float).ravel()
  transform = _BoundsTransform(bounds, p0.size)
  transform.check(p0)

  def external_residuals(p: np.ndarray) -> np.ndarray:
    return np.asarray(model(p, inputs), dtype=float).ravel()

  def internal_residuals(u: np.ndarray) -> np.ndarray:
    return external_residuals(transform.to_external(u))

  u = transform.to_internal(p0)
  r = internal_residuals(u)
  if r.size < p0.size:
    raise PreconditionError(f'Need at least as many residuals ({r.size}) as parameters ({p0.size})')
  if not np.all(np.isfinite(r)):
    raise DomainError('Model returned non-finite residuals at the initial parameters')
  cost = float(r @ r)
  floor = opts.cost_floor * cost
  lam = opts.lambda0
  iterations = 0
  converged = False
  message = 'maximum iterations reached'

  while iterations < opts.max_iterations:
    if cost == 0.0:
      converged, message = True, 'zero residual'
      break
    jac = numerical_jacobian(internal_residuals, u)
    try:
      _check_rank(jac)
    except SingularJacobianError as err:
      # Singular at the start is the caller's problem; later it ends the search at the best point so far
      if iterations == 0:
        raise
      message = f'stopped early: {err.message}'
      break
    gradient = jac.T @ r
    normal = jac.T @ jac
    damping = np.diag(np.diag(normal))
    iterations += 1

    accepted = False
    while lam <= opts.lambda_max:
      step = _solve(normal + lam * damping, -gradient)
      r_try = internal_residuals(u + step)
      cost_try = float(r_try @ r_try) if np.all(np.isfinite(r_try)) else np.inf
      if cost_try < cost:
        accepted = True
        break
      lam *= opts.lambda_factor
    if not accepted:
      converged, message = True, 'no further decrease possible'
      break

    gn_step = _gauss_newton_step(jac, r)
    r_gn = internal_residuals(u + gn_step)
    cost_gn = float(r_gn @ r_gn) if np.all(np.isfinite(r_gn)) else np.inf
    if cost_gn < cost_try:
      step, r_try, cost_try = gn_step, r_gn, cost_gn

    decrease = cost - cost_try
    previous_cost = cost
    u = u + step
    r, cost = r_try, cost_try
    lam = lam / opts.lambda_factor
    if cost <= floor:
      converged, message = True, 'residual at rounding level'
      break
    if decrease <= opts.ftol * previous_cost:
      converged, message = True, 'relative decrease below tolerance'
      break
    if np.linalg.norm(step) <= opts.xtol * (opts.xtol + np.linalg.norm(u)):
      converged, message = True, 'step below tolerance'
      break

  params = transform.to_external(u)
  residual_norm = float(np.sqrt(cost))
  jac_external = numerical_jacobian(external_residuals, params)
  covariance = _covariance(jac_external, residual_norm)
  debug(f'least_squares_fit: {message} after {iterations} iterations, residual norm {residual_norm:.6g}')
  return FitResult(
    params=params,
    covariance=covariance,
    residual_norm=residual_norm,
    iterations=iterations,
    converged=converged,
    message=message,
  )


def _as_xy(points) -> tuple[np.ndarray, np.ndarray]:
  arr = np.asarray(points)
  if np.iscomplexobj(arr):
    arr = arr.ravel()
    return arr.real.astype(float), arr.imag.astype(float)
  arr = arr.astype(float)
  if arr.ndim != 2 or arr.shape[1] != 2:
    raise DegenerateError(f'Expected (re, im) pairs, got array of shape {arr.shape}')
  return arr[:, 0], arr[:, 1]


def taubin_circle(x: np.ndarray, y: np.ndarray) -> tuple[float, float, float]:
  """
  Algebraic circle fit with Taubin normalisation. Returns (xc, yc, r).
  """
  mx, my = float(np.mean(x)), float(np.mean(y))
  u = x - mx
  v = y - my
  z = u * u + v * v
  z_mean = float(np.mean(z))
  if z_mean <= 0:
    raise DegenerateError('All points coincide')
  z0 = (z - z_mean) / (2.0 * np.sqrt(z_mean))
  _, _, vt = np.linalg.svd(np.column_stack([z0, u, v]), full_matrices=False)
  a = vt[-1].copy()
  a0 = a[0] / (2.0 * np.sqrt(z_mean))
  if abs(a0) <= 1e-14 * np.hypot(a[1], a[2]):
    raise DegenerateError('Points are collinear')
  a3 = -z_mean * a0
  xc = -a[1] / a0 / 2.0 + mx
  yc = -a[2] / a0 / 2.0 + my
  r = np.sqrt(a[1] ** 2 + a[2] ** 2 - 4.0 * a0 * a3) / abs(a0) / 2.0
  return float(xc), float(yc), float(r)


def _check_circle_points(x: np.ndarray, y: np.ndarray):
  if x.size < 3:
    raise DegenerateError(f'Need at least 3 points for a circle, got {x.size}')
  if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
    raise DegenerateError('Circle points must be finite')
  if np.unique(x + 1j * y).size < 3:
    raise DegenerateError('Need at least 3 distinct points for a circle')
  singular = np.linalg.svd(np.column_stack([x - x.mean(), y - y.mean()]), compute_uv=False)
  if singular[-1] <= 1e-12 * singular[0]:
    raise DegenerateError('Points are collinear')


def _geometric_residuals(p: np.ndarray, xy: tuple[np.ndarray, np.ndarray]) -> np.ndarray:
  x, y = xy
  return np.hypot(x - p[0], y - p[1]) - p[2]


def circle_fit(points, refine: bool = True) -> Circle2D:
  """
  Fit a circle to (re, im) pairs or complex samples.

  Taubin's algebraic fit gives the start point, then one geometric least squares
  refinement minimises the orthogonal distances.
  """
  x, y = _as_xy(points)
  _check_circle_points(x, y)
  xc, yc, r = taubin_circle(x, y)
  if refine:
    # Refine in coordinates scaled to the algebraic radius so all parameters are O(1)
    mx, my = float(np.mean(x)), float(np.mean(y))
    scaled = ((x - mx) / r, (y - my) / r)
    start = np.array([(xc - mx) / r, (yc - my) / r, 1.0])
    try:
      result = least_squares_fit(_geometric_residuals, start, inputs=scaled, bounds=[None, None, (0.0, None)])
      if np.all(np.isfinite(result.params)) and result.params[2] > 0:
        xc = mx + r * float(result.params[0])
        yc = my + r * float(result.params[1])
        r = r * float(result.params[2])
    except SingularJacobianError as err:
      debug(f'circle_fit: keeping algebraic circle, refinement failed: {err}')
  return Circle2D(center_re=xc, center_im=yc, radius=r)
