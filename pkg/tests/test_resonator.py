import math

import numpy as np
import pytest

from resokit.lib.errors import DomainError, PreconditionError
from resokit.lib.numerics import circle_fit
from resokit.lib.resonator import (
  FRIDGE_CHAIN,
  AttenuationChain,
  NotchParams,
  S21Trace,
  chip_input_power,
  loaded_quality,
  photon_number,
  s21_full,
  s21_ideal,
  single_photon_power,
  synthesize_trace,
)

F_R = 5.9643e9
SAMPLE2_QI = 9.57e4
SAMPLE2_QC = 2308.0


def notch(**changes) -> NotchParams:
  values = {
    'f_r': F_R,
    'q_loaded': 2253.6,
    'q_coupling_mag': SAMPLE2_QC,
    'phi': 0.1,
    'amp': 0.8,
    'phase_offset': 0.3,
    'delay': 42e-9,
  }
  values.update(changes)
  return NotchParams(**values)


def test_ideal_response_at_resonance_and_far_away():
  p = notch()
  assert s21_ideal(F_R, p) == pytest.approx(1.0 - (p.q_loaded / p.q_coupling_mag) * np.exp(1j * p.phi), abs=1e-15)
  assert s21_ideal(1e15, p) == pytest.approx(1.0, abs=1e-5)
  assert s21_ideal(1.0, p) == pytest.approx(1.0, abs=1e-3)


def test_ideal_locus_is_circle_through_one():
  p = notch(q_loaded=5000.0, q_coupling_mag=10000.0, phi=0.0)
  freqs = np.linspace(0.98 * F_R, 1.02 * F_R, 10_000)
  circle = circle_fit(s21_ideal(freqs, p))
  assert 2 * circle.radius == pytest.approx(0.5, abs=1e-8)
  assert circle.center == pytest.approx(0.75 + 0j, abs=1e-8)


def test_full_response_reduces_to_ideal_with_identity_environment():
  p = notch(amp=1.0, phase_offset=0.0, delay=0.0)
  freqs = np.linspace(0.99 * F_R, 1.01 * F_R, 101)
  np.testing.assert_array_equal(s21_full(freqs, p), s21_ideal(freqs, p))


def test_full_response_magnitude_scales_with_amp():
  p = notch()
  freqs = np.linspace(0.99 * F_R, 1.01 * F_R, 101)
  np.testing.assert_allclose(np.abs(s21_full(freqs, p)), p.amp * np.abs(s21_ideal(freqs, p)), rtol=1e-13)


def test_full_response_delay_winding():
  p = notch(delay=50e-9)
  for f in [5.9e9, F_R, 6.1e9]:
    direct = p.amp * np.exp(1j * p.phase_offset) * np.exp(-2j * math.pi * f * 50e-9) * s21_ideal(f, p)
    assert s21_full(f, p) == pytest.approx(direct, rel=1e-12)


def test_magnitude_minimum_at_resonance_without_mismatch():
  p = notch(phi=0.0)
  freqs = np.linspace(F_R - 5e6, F_R + 5e6, 100_001)
  assert abs(freqs[np.argmin(np.abs(s21_full(freqs, p)))] - F_R) <= freqs[1] - freqs[0]


def test_synthesize_trace_noiseless_matches_model():
  p = notch()
  trace = synthesize_trace(p, 5.96e9, 5.97e9, 201)
  assert len(trace) == 201
  np.testing.assert_array_equal(trace.values, s21_full(trace.freqs, p))


def test_synthesize_trace_is_deterministic_in_seed():
  p = notch()
  a = synthesize_trace(p, 5.96e9, 5.97e9, 201, noise_sigma=0.01, seed=4)
  b = synthesize_trace(p, 5.96e9, 5.97e9, 201, noise_sigma=0.01, seed=4)
  c = synthesize_trace(p, 5.96e9, 5.97e9, 201, noise_sigma=0.01, seed=5)
  np.testing.assert_array_equal(a.values, b.values)
  assert not np.array_equal(a.values, c.values)


def test_synthesize_trace_noise_is_zero_mean():
  p = notch()
  sigma = 0.01
  n = 100_000
  noisy = synthesize_trace(p, 5.96e9, 5.97e9, n, noise_sigma=sigma, seed=9)
  diff = noisy.values - s21_full(noisy.freqs, p)
  bound = 5 * sigma / math.sqrt(n)
  assert abs(diff.real.mean()) < bound
  assert abs(diff.imag.mean()) < bound
  assert diff.real.std() == pytest.approx(sigma, rel=0.02)


@pytest.mark.parametrize(
  'args',
  [(5.97e9, 5.96e9, 100, 0.0), (5.96e9, 5.97e9, 15, 0.0), (5.96e9, 5.97e9, 100, -1.0)],
)
def test_synthesize_trace_preconditions(args):
  f_start, f_stop, n_points, sigma = args
  with pytest.raises(PreconditionError):
    synthesize_trace(notch(), f_start, f_stop, n_points, noise_sigma=sigma)


def test_trace_rejects_unsorted_or_mismatched_data():
  with pytest.raises(PreconditionError):
    S21Trace([1.0, 3.0, 2.0], [1, 1, 1])
  with pytest.raises(PreconditionError):
    S21Trace([1.0, 2.0], [1, 1, 1])


@pytest.mark.parametrize('changes', [{'q_loaded': 0.0}, {'f_r': -1.0}, {'amp': math.nan}, {'delay': math.inf}])
def test_notch_params_validation(changes):
  with pytest.raises(DomainError):
    notch(**changes)


def test_chip_input_power_fridge_chain():
  assert FRIDGE_CHAIN.total_db == 100.0
  assert chip_input_power(-30.0, FRIDGE_CHAIN) == pytest.approx(1e-16, rel=1e-12)
  assert chip_input_power(0.0, AttenuationChain()) == pytest.approx(1e-3, rel=1e-12)
  louder = chip_input_power(-30.0, FRIDGE_CHAIN)
  quieter = chip_input_power(-30.0, FRIDGE_CHAIN.with_stage('extra', 3.0))
  assert quieter / louder == pytest.approx(10**-0.3, rel=1e-12)


def test_attenuation_chain_round_trip_and_validation():
  assert AttenuationChain.from_dict(FRIDGE_CHAIN.to_dict()) == FRIDGE_CHAIN
  with pytest.raises(DomainError):
    FRIDGE_CHAIN.with_stage('gain', -10.0)


def test_photon_number_sample2_regression():
  q_l = loaded_quality(SAMPLE2_QI, SAMPLE2_QC)
  assert q_l == pytest.approx(2253.6486817402661, rel=1e-12)
  assert q_l == pytest.approx(2252, rel=1e-3)
  n = photon_number(1e-16, 5.952e9, SAMPLE2_QI, SAMPLE2_QC, q_l)
  assert n == pytest.approx(2.9840416402401733, rel=1e-12)


def test_photon_number_scaling():
  q_l = loaded_quality(SAMPLE2_QI, SAMPLE2_QC)
  base = photon_number(1e-16, 5.952e9, SAMPLE2_QI, SAMPLE2_QC, q_l)
  assert photon_number(0.0, 5.952e9, SAMPLE2_QI, SAMPLE2_QC, q_l) == 0.0
  assert photon_number(7e-16, 5.952e9, SAMPLE2_QI, SAMPLE2_QC, q_l) == pytest.approx(7 * base, rel=1e-14)
  assert photon_number(1e-16, 2 * 5.952e9, SAMPLE2_QI, SAMPLE2_QC, q_l) == pytest.approx(base / 4, rel=1e-14)


def test_photon_number_vanishes_when_decoupled():
  values = []
  for q_c in [1e4, 1e6, 1e8, 1e10]:
    values.append(photon_number(1e-16, 5.952e9, SAMPLE2_QI, q_c, loaded_quality(SAMPLE2_QI, q_c)))
  assert np.all(np.diff(values) < 0)
  assert values[-1] < 1e-3 * values[0]


def test_photon_number_rejects_loaded_above_coupling():
  with pytest.raises(DomainError):
    photon_number(1e-16, 5.952e9, SAMPLE2_QI, SAMPLE2_QC, 2400.0)
  with pytest.raises(DomainError):
    photon_number(-1e-16, 5.952e9, SAMPLE2_QI, SAMPLE2_QC, 2000.0)


def test_single_photon_power_inverts_photon_number():
  q_l = loaded_quality(SAMPLE2_QI, SAMPLE2_QC)
  p_one = single_photon_power(5.952e9, SAMPLE2_QI, SAMPLE2_QC, q_l)
  assert photon_number(p_one, 5.952e9, SAMPLE2_QI, SAMPLE2_QC, q_l) == pytest.approx(1.0, rel=1e-12)
  assert p_one == pytest.approx(1e-16 / 2.9840416402401733, rel=1e-12)


def test_sample1_loaded_quality():
  assert loaded_quality(1.07e6, 6378.0) == pytest.approx(6340.2076222293654, rel=1e-12)
  assert abs(loaded_quality(1.07e6, 6378.0) - 6340) <= 1
