import math

import mpmath
import numpy as np
import pytest
from scipy.constants import h, hbar, k as k_B
from scipy.optimize import brentq, least_squares

from resokit.lib.errors import DomainError, PreconditionError
from resokit.lib.loss import (
  FLUX_QUANTUM,
  FieldParams,
  QpParams,
  TlsParams,
  VortexRegime,
  detect_jumps,
  diffusion_from_k,
  field_freq_shift,
  field_loss,
  find_qi_peak,
  fit_field_loss,
  fit_field_shift,
  fit_freq_shift,
  fit_tls,
  internal_quality_vs_temperature,
  k_from_diffusion,
  qp_freq_shift,
  qp_loss,
  self_consistent_photon_number,
  tls_freq_shift,
  tls_loss,
  total_freq_shift,
  total_loss,
  vortex_regime,
  vortex_thresholds,
)
from resokit.lib.resonator import loaded_quality, photon_number

REF_TLS = TlsParams(q_tls0=9.5102e4, n_c=13.0, beta=0.35)
REF_QP = QpParams(t_c=12.0, alpha_kinetic=0.0974)
DELTA_CONST = 8e-7


def test_tls_loss_single_photon_regression():
  delta = tls_loss(0.026, 1.0, 5.96e9, REF_TLS)
  assert delta == pytest.approx(1.0245454361508401e-5, rel=1e-12)
  assert 1.0 / delta == pytest.approx(9.57e4, rel=0.15)


def test_tls_loss_high_power_regression():
  # Table value 9.76e5 at 2000 photons is below what TLS loss alone allows, so no delta_0 >= 0 reproduces it
  delta = tls_loss(0.026, 2000.0, 5.952e9, REF_TLS)
  assert delta == pytest.approx(1.8002403799930563e-6, rel=1e-12)
  assert 1.0 / 9.76e5 - delta < 0
  with pytest.raises(DomainError):
    total_loss(delta_tls=delta, delta_const=1.0 / 9.76e5 - delta)


def test_tls_loss_limits_and_saturation():
  assert tls_loss(1e-4, 0.0, 5.96e9, REF_TLS) == pytest.approx(1.0 / REF_TLS.q_tls0, rel=1e-15)
  at_n_c = tls_loss(0.026, REF_TLS.n_c, 5.96e9, REF_TLS)
  at_zero = tls_loss(0.026, 0.0, 5.96e9, REF_TLS)
  assert at_n_c / at_zero == pytest.approx(2.0**-REF_TLS.beta, rel=1e-14)
  n = np.geomspace(0.1, 1e5, 30)
  np.testing.assert_allclose(tls_loss(0.026, n, 5.96e9, REF_TLS) / at_zero, (1 + n / 13.0) ** -0.35, rtol=1e-14)


def test_tls_loss_non_increasing():
  n = np.geomspace(0.1, 1e5, 50)
  t = np.linspace(0.01, 3.0, 50)
  assert np.all(np.diff(tls_loss(0.026, n, 5.96e9, REF_TLS)) <= 0)
  assert np.all(np.diff(tls_loss(t, 1.0, 5.96e9, REF_TLS)) <= 0)


@pytest.mark.parametrize('temperature, n_ph', [(0.0, 1.0), (-0.1, 1.0), (0.026, -1.0)])
def test_tls_loss_domain(temperature, n_ph):
  with pytest.raises(DomainError):
    tls_loss(temperature, n_ph, 5.96e9, REF_TLS)


def test_qp_loss_regression():
  assert qp_loss(3.0, 5.96e9, REF_QP) == pytest.approx(6.2368023829629225e-4, rel=1e-12)


@pytest.mark.parametrize('t_c, q_qp', [(10.0, 617.6), (12.0, 2078.9), (14.0, 6998.0), (16.0, 23557.0)])
def test_qp_quality_at_table_temperature(t_c, q_qp):
  value = 1.0 / qp_loss(2.9, 5.96e9, QpParams(t_c=t_c, alpha_kinetic=0.0974))
  assert value == pytest.approx(q_qp, rel=1e-3)


def test_qp_quality_consistent_with_table_within_factor_three():
  value = 1.0 / qp_loss(2.9, 5.96e9, QpParams(t_c=14.0, alpha_kinetic=0.0974))
  assert 7.421e3 / 3 <= value <= 7.421e3 * 3


def test_qp_loss_exponentially_suppressed():
  t = REF_QP.t_c / 20
  gap = REF_QP.gap_joules
  omega = 2 * math.pi * 5.96e9
  density_without_exponential = 2 * math.sqrt(2 * math.pi * k_B * t * gap)
  prefactor = 0.0974 / math.pi * math.sqrt(2 * gap / (hbar * omega)) * density_without_exponential / gap
  assert qp_loss(t, 5.96e9, REF_QP) < 1e-12 * prefactor


def test_qp_loss_linear_in_alpha():
  doubled = QpParams(t_c=12.0, alpha_kinetic=2 * 0.0974)
  assert qp_loss(2.0, 5.96e9, doubled) == pytest.approx(2 * qp_loss(2.0, 5.96e9, REF_QP), rel=1e-15)


def test_qp_params_validation():
  assert REF_QP.gap_joules == pytest.approx(1.76 * k_B * 12.0, rel=1e-15)
  with pytest.raises(DomainError):
    QpParams(t_c=0.0, alpha_kinetic=0.1)
  with pytest.raises(DomainError):
    QpParams(t_c=12.0, alpha_kinetic=1.0)
  with pytest.raises(DomainError):
    QpParams(t_c=12.0, alpha_kinetic=0.1, gap_joules=-1.0)


def test_field_loss():
  assert field_loss(0.0, 5.0) == 0.0
  assert field_loss(0.1, 1.0) == pytest.approx(0.01, rel=1e-15)
  assert field_loss(-0.1, 1.0) == field_loss(0.1, 1.0)


def test_total_loss_sums_components():
  budget = total_loss(delta_const=1e-6)
  assert budget.total == 1e-6
  assert budget.q_internal == pytest.approx(1e6, rel=1e-15)
  a = total_loss(1.1e-5, 3.3e-7, 2.2e-6, 8e-7)
  b = total_loss(delta_tls=1.1e-5, delta_field=2.2e-6, delta_const=8e-7, delta_qp=3.3e-7)
  assert a.total == b.total
  assert a.total == math.fsum([1.1e-5, 3.3e-7, 2.2e-6, 8e-7])
  assert total_loss().q_internal == math.inf
  with pytest.raises(DomainError):
    total_loss(delta_qp=math.nan)


def test_tls_freq_shift_against_mpmath():
  mpmath.mp.dps = 30
  f_r = 5.952e9
  y = h * f_r / (2 * math.pi * k_B * 1.0)
  bracket = float(mpmath.re(mpmath.digamma(mpmath.mpc(0.5, y)))) - math.log(y)
  assert tls_freq_shift(1.0, f_r, 9.5102e4) == pytest.approx(f_r / (math.pi * 9.5102e4) * bracket, rel=1e-9)


def test_tls_freq_shift_limits():
  f_r = 5.952e9
  t_cold = h * f_r / (2 * math.pi * k_B * 2e3)
  assert abs(tls_freq_shift(t_cold, f_r, 9.5102e4)) < 1e-6 * f_r
  hot = tls_freq_shift(np.linspace(2.0, 50.0, 40), f_r, 9.5102e4)
  assert np.all(hot > 0)
  assert np.all(np.diff(hot) > 0)


def test_qp_freq_shift_regression():
  assert qp_freq_shift(2.5, 5.952e9, REF_QP) == pytest.approx(-1049677.8221940373, rel=1e-12)


def test_qp_freq_shift_red_and_monotone():
  assert qp_freq_shift(0.01, 5.952e9, REF_QP) == 0.0
  t = np.linspace(0.05, 20.0, 400)
  shifts = qp_freq_shift(t, 5.952e9, REF_QP)
  assert np.all(shifts <= 0)
  assert np.all(np.diff(shifts) <= 0)
  assert np.all(np.diff(shifts[t > 1.0]) < 0)


@pytest.mark.parametrize('temperature', [2.0, 2.5, 3.0])
def test_qp_shift_dominates_at_high_temperature(temperature):
  tls = abs(tls_freq_shift(temperature, 5.952e9, REF_TLS.q_tls0))
  qp = abs(qp_freq_shift(temperature, 5.952e9, REF_QP))
  assert qp > tls


def test_total_freq_shift_components():
  t = np.linspace(0.1, 3.0, 30)
  no_kinetic = QpParams(t_c=12.0, alpha_kinetic=0.0)
  np.testing.assert_array_equal(
    total_freq_shift(t, 5.952e9, REF_TLS, no_kinetic), tls_freq_shift(t, 5.952e9, REF_TLS.q_tls0)
  )
  weak_tls = TlsParams(q_tls0=1e30, n_c=13.0, beta=0.35)
  np.testing.assert_allclose(
    total_freq_shift(t, 5.952e9, weak_tls, REF_QP), qp_freq_shift(t, 5.952e9, REF_QP), rtol=0, atol=1e-15
  )


def test_total_freq_shift_blue_to_red_crossover():
  t = np.linspace(0.1, 3.0, 600)
  shifts = total_freq_shift(t, 5.952e9, REF_TLS, REF_QP)
  signs = np.sign(shifts)
  falling = np.flatnonzero((signs[:-1] > 0) & (signs[1:] < 0))
  assert falling.size == 1
  i = int(falling[0])
  crossover = brentq(lambda x: total_freq_shift(x, 5.952e9, REF_TLS, REF_QP), t[i], t[i + 1], xtol=1e-12)
  assert 1.0 < crossover < 2.0


def test_field_freq_shift_reference_value():
  assert field_freq_shift(0.0, 5.303e9, 0.261) == 0.0
  assert field_freq_shift(0.24, 5.303e9, 0.261) == pytest.approx(-79723180.8, rel=1e-12)
  rng = np.random.default_rng(4)
  b = rng.uniform(-1, 1, 20)
  np.testing.assert_array_equal(field_freq_shift(-b, 5.303e9, 0.261), field_freq_shift(b, 5.303e9, 0.261))


@pytest.mark.parametrize(
  't_c, diffusion',
  [(10.0, 2.26189e-4), (12.0, 2.71426e-4), (14.0, 3.16664e-4), (16.0, 3.61902e-4)],
)
def test_diffusion_table(t_c, diffusion):
  assert diffusion_from_k(0.261, 100e-9, t_c) == pytest.approx(diffusion, rel=1e-5)


def test_diffusion_best_matching_critical_temperature():
  table = {t_c: diffusion_from_k(0.261, 100e-9, t_c) for t_c in (10.0, 12.0, 14.0, 16.0)}
  assert min(table, key=lambda t_c: abs(table[t_c] - 6.83e-5)) == 10.0


def test_diffusion_inverse_and_scaling():
  rng = np.random.default_rng(8)
  for k_quad, thickness, t_c in zip(rng.uniform(0.01, 10, 20), rng.uniform(1e-8, 1e-6, 20), rng.uniform(1, 20, 20)):
    d = diffusion_from_k(k_quad, thickness, t_c)
    assert k_from_diffusion(d, thickness, t_c) == pytest.approx(k_quad, rel=1e-12)
  assert diffusion_from_k(0.261, 200e-9, 12.0) == pytest.approx(diffusion_from_k(0.261, 100e-9, 12.0) / 4, rel=1e-14)
  with pytest.raises(DomainError):
    diffusion_from_k(0.261, 0.0, 12.0)
  with pytest.raises(DomainError):
    k_from_diffusion(-1.0, 100e-9, 12.0)


def test_field_params_from_k():
  params = FieldParams.from_k(0.261, 100e-9, 12.0)
  assert params.diffusion == pytest.approx(2.71426e-4, rel=1e-5)
  with pytest.raises(DomainError):
    FieldParams(0.261, 100e-9, 0.0, 12.0)


def test_vortex_thresholds_at_100_nm():
  assert FLUX_QUANTUM == pytest.approx(2.0678338484619295e-15, rel=1e-15)
  thresholds = vortex_thresholds(100e-9)
  assert thresholds.b_a == pytest.approx(0.1624072906793077, rel=1e-12)
  assert thresholds.b_c1 == pytest.approx(0.34119258499621841, rel=1e-12)
  assert thresholds.b_a == pytest.approx(0.161, rel=0.02)
  assert thresholds.b_c1 == pytest.approx(0.341, rel=0.02)


def test_vortex_thresholds_scaling():
  rng = np.random.default_rng(6)
  for t in rng.uniform(10e-9, 1e-6, 20):
    thin = vortex_thresholds(t)
    thick = vortex_thresholds(2 * t)
    assert thin.b_c1 / thin.b_a == pytest.approx(1.65 * 4 / math.pi, rel=1e-14)
    assert thick.b_a == pytest.approx(thin.b_a / 4, rel=1e-14)
    assert thick.b_c1 == pytest.approx(thin.b_c1 / 4, rel=1e-14)
  with pytest.raises(DomainError):
    vortex_thresholds(0.0)


@pytest.mark.parametrize(
  'field, regime',
  [
    (0.0, VortexRegime.EXPULSION),
    (0.1, VortexRegime.EXPULSION),
    (0.2, VortexRegime.ALIGNED),
    (-0.4, VortexRegime.DENSE),
  ],
)
def test_vortex_regime(field, regime):
  assert vortex_regime(field, 100e-9) is regime


def smooth_field_sweep():
  fields = np.linspace(0.0, 0.05, 26)
  return fields, 5.303e9 * (1 - 0.261 * fields**2)


def test_detect_jumps_smooth_and_constant():
  fields, freqs = smooth_field_sweep()
  assert detect_jumps(fields, freqs) == []
  assert detect_jumps(fields, np.full(fields.size, 5.303e9)) == []


def test_detect_jumps_single_step():
  fields, freqs = smooth_field_sweep()
  jumped = freqs.copy()
  jumped[11:] -= 1e6
  events = detect_jumps(fields, jumped)
  assert len(events) == 1
  assert events[0].index == 11
  assert events[0].b_field == pytest.approx(0.5 * (fields[10] + fields[11]))
  assert events[0].delta_f == pytest.approx(jumped[11] - jumped[10])


def test_detect_jumps_invariant_under_offset_and_scaling():
  fields, freqs = smooth_field_sweep()
  jumped = freqs.copy()
  jumped[7:] += 2e6
  reference = [event.index for event in detect_jumps(fields, jumped)]
  assert reference == [7]
  assert [event.index for event in detect_jumps(fields, jumped + 123456.0)] == reference
  assert [event.index for event in detect_jumps(fields, 3.0 * jumped)] == reference
  assert [event.index for event in detect_jumps(fields[::-1], jumped[::-1])] == [fields.size - 7]


def test_detect_jumps_preconditions():
  with pytest.raises(PreconditionError):
    detect_jumps([0.0, 0.1, 0.2], [1.0, 2.0, 3.0])
  with pytest.raises(PreconditionError):
    detect_jumps([0.0, 0.2, 0.1, 0.3], [1.0, 2.0, 3.0, 4.0])
  with pytest.raises(PreconditionError):
    detect_jumps([0.0, 0.1, 0.2, 0.3], [1.0, 2.0, 3.0])


def test_internal_quality_vs_temperature_and_peak():
  t = np.linspace(0.05, 3.0, 60)
  q = internal_quality_vs_temperature(t, 5.952e9, 1.0, REF_TLS, REF_QP, DELTA_CONST)
  expected = 1.0 / (tls_loss(t, 1.0, 5.952e9, REF_TLS) + qp_loss(t, 5.952e9, REF_QP) + DELTA_CONST)
  np.testing.assert_allclose(q, expected, rtol=1e-14)
  peak = find_qi_peak(0.05, 3.0, 5.952e9, 1.0, REF_TLS, REF_QP, DELTA_CONST)
  assert peak is not None
  assert 0.05 < peak.temperature < 3.0
  assert peak.q_internal >= np.max(q) * (1 - 1e-9)


def test_qi_peak_absent_without_quasiparticles():
  no_qp = QpParams(t_c=12.0, alpha_kinetic=0.0)
  assert find_qi_peak(0.05, 3.0, 5.952e9, 1.0, REF_TLS, no_qp, DELTA_CONST) is None
  with pytest.raises(PreconditionError):
    find_qi_peak(3.0, 0.05, 5.952e9, 1.0, REF_TLS, REF_QP)


def test_self_consistent_photon_number_constant_loss():
  q_i, q_c = 9.57e4, 2308.0
  n = self_consistent_photon_number(1e-16, 5.952e9, q_c, lambda _: 1.0 / q_i)
  assert n == pytest.approx(photon_number(1e-16, 5.952e9, q_i, q_c, loaded_quality(q_i, q_c)), rel=1e-10)
  assert self_consistent_photon_number(0.0, 5.952e9, q_c, lambda _: 1.0 / q_i) == 0.0


def test_self_consistent_photon_number_with_tls_saturation():
  q_c = 2308.0

  def loss_at(n):
    return tls_loss(0.026, n, 5.952e9, REF_TLS) + DELTA_CONST

  for p_in in [1e-19, 1e-16, 1e-13]:
    n = self_consistent_photon_number(p_in, 5.952e9, q_c, loss_at)
    q_i = 1.0 / loss_at(n)
    assert n == pytest.approx(photon_number(p_in, 5.952e9, q_i, q_c, loaded_quality(q_i, q_c)), rel=1e-9)


def tls_curve(n_ph, temperature=0.026, f_r=5.952e9):
  return 1.0 / (tls_loss(temperature, n_ph, f_r, REF_TLS) + DELTA_CONST)


def test_fit_tls_noiseless_recovery():
  n = np.geomspace(0.5, 3e4, 20)
  fit = fit_tls(n, tls_curve(n), 0.026, 5.952e9)
  assert fit.converged
  assert not fit.beta_at_bound
  assert fit.params.q_tls0 == pytest.approx(9.5102e4, rel=1e-3)
  assert fit.params.n_c == pytest.approx(13.0, rel=1e-3)
  assert fit.params.beta == pytest.approx(0.35, rel=1e-3)
  assert fit.delta_const == pytest.approx(DELTA_CONST, rel=1e-3)
  assert fit.rms_log_residual < 1e-8
  assert all(value >= 0 for value in fit.uncertainties.values())


def test_fit_tls_preconditions():
  n = np.geomspace(0.5, 3e4, 5)
  with pytest.raises(PreconditionError):
    fit_tls(n, tls_curve(n), 0.026, 5.952e9)
  narrow = np.geomspace(1.0, 50.0, 10)
  with pytest.raises(PreconditionError):
    fit_tls(narrow, tls_curve(narrow), 0.026, 5.952e9)
  n = np.geomspace(0.5, 3e4, 10)
  q = tls_curve(n)
  q[2] = -q[2]
  with pytest.raises(PreconditionError):
    fit_tls(n, q, 0.026, 5.952e9)


def tls_log_residuals(x, n_ph, q_i):
  params = TlsParams(q_tls0=math.exp(-x[0]), n_c=math.exp(x[1]), beta=x[2])
  return np.log((tls_loss(0.026, n_ph, 5.952e9, params) + math.exp(x[3])) * q_i)


def within_tls_tolerance(q_tls0: float, n_c: float, beta: float) -> bool:
  return abs(q_tls0 / 9.5102e4 - 1) <= 0.05 and abs(beta / 0.35 - 1) <= 0.05 and abs(n_c / 13.0 - 1) <= 0.25


@pytest.mark.slow
def test_fit_tls_with_two_percent_noise_reaches_least_squares_optimum():
  n = np.geomspace(0.5, 3e4, 20)
  clean = tls_curve(n)
  truth = [math.log(1 / 9.5102e4), math.log(13.0), 0.35, math.log(DELTA_CONST)]
  hits = 0
  oracle_hits = 0
  for seed in range(100):
    rng = np.random.default_rng(seed)
    noisy = clean * (1 + rng.normal(0, 0.02, n.size))
    fit = fit_tls(n, noisy, 0.026, 5.952e9)
    oracle = least_squares(
      tls_log_residuals,
      truth,
      args=(n, noisy),
      bounds=([-np.inf, -np.inf, 1e-9, -np.inf], [np.inf, np.inf, 1.0, np.inf]),
      xtol=1e-14,
      ftol=1e-14,
      gtol=1e-14,
    )
    cost = n.size * fit.rms_log_residual**2
    assert cost <= 2.0 * oracle.cost * (1 + 1e-6) + 1e-14
    assert fit.rms_log_residual <= 0.03
    hits += within_tls_tolerance(fit.params.q_tls0, fit.params.n_c, fit.params.beta)
    q_tls0, n_c, beta = math.exp(-oracle.x[0]), math.exp(oracle.x[1]), oracle.x[2]
    oracle_hits += within_tls_tolerance(q_tls0, n_c, beta)
  # With 20 points and a free delta_0 the estimator itself scatters beyond the tolerances on about a
  # quarter of the seeds, so the fit is held to the optimum's hit rate rather than a fixed 90%.
  assert hits >= oracle_hits - 2
  assert hits >= 70


def test_fit_freq_shift_recovers_noiseless_sweep():
  t = np.round(np.arange(0.1, 3.05, 0.1), 9)
  f_r0 = 5.9643e9
  freqs = f_r0 + tls_freq_shift(t, f_r0, REF_TLS.q_tls0) + qp_freq_shift(t, f_r0, REF_QP)
  fit = fit_freq_shift(t, freqs, QpParams(t_c=12.0, alpha_kinetic=0.05), q_tls0_guess=1e5)
  assert fit.converged
  assert fit.f_r0 == pytest.approx(f_r0, rel=1e-10)
  assert fit.q_tls0 == pytest.approx(REF_TLS.q_tls0, rel=1e-5)
  assert fit.alpha_kinetic == pytest.approx(0.0974, rel=1e-5)
  assert fit.t_c == 12.0


def test_fit_freq_shift_needs_enough_points():
  with pytest.raises(PreconditionError):
    fit_freq_shift([0.5, 1.0, 1.5], [1.0, 2.0, 3.0], REF_QP)


def test_fit_field_shift_recovers_parabola():
  fields = np.linspace(-0.24, 0.24, 31)
  freqs = 5.303e9 + field_freq_shift(fields, 5.303e9, 0.261)
  fit = fit_field_shift(fields, freqs)
  assert fit.converged
  assert fit.k_quad == pytest.approx(0.261, rel=1e-8)
  assert fit.f_r0 == pytest.approx(5.303e9, rel=1e-12)
  with pytest.raises(PreconditionError):
    fit_field_shift([0.1, -0.1, 0.1], [1.0, 1.0, 1.0])


def test_fit_field_shift_with_noise():
  rng = np.random.default_rng(21)
  fields = np.linspace(-0.24, 0.24, 31)
  shift = field_freq_shift(fields, 5.303e9, 0.261)
  sigma = 0.01 * abs(field_freq_shift(0.24, 5.303e9, 0.261))
  fit = fit_field_shift(fields, 5.303e9 + shift + rng.normal(0.0, sigma, fields.size))
  assert fit.k_quad == pytest.approx(0.261, rel=0.03)
  assert fit.uncertainties['k_quad'] < 0.01 * 0.261


def test_fit_field_loss_recovers_quadratic():
  fields = np.linspace(0.0, 0.24, 16)
  q_i = 1.0 / (DELTA_CONST + field_loss(fields, 2e-4))
  fit = fit_field_loss(fields, q_i)
  assert fit.converged
  assert fit.c2 == pytest.approx(2e-4, rel=1e-2)
  assert fit.delta_const == pytest.approx(DELTA_CONST, rel=1e-2)
  with pytest.raises(PreconditionError):
    fit_field_loss(fields, -q_i)
