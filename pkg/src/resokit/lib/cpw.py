# Coplanar waveguide design: conformal-mapping line parameters, resonance
# frequencies and the inversion of a measured frequency to kinetic inductance.
#
# Every elliptic_k call below takes the modulus k, not the parameter k**2.

import math
from dataclasses import dataclass
from enum import Enum

from scipy.constants import epsilon_0, mu_0

from resokit.lib.errors import DomainError, NegativeResultError, PreconditionError
from resokit.lib.numerics import elliptic_k


class ResonatorMode(str, Enum):
  QUARTER_WAVE = 'quarter_wave'
  HALF_WAVE = 'half_wave'


@dataclass(frozen=True)
class CpwGeometry:
  width: float
  gap: float
  film_thickness: float
  substrate_epsilon_r: float
  substrate_thickness: float
  resonator_length: float
  mode: ResonatorMode = ResonatorMode.QUARTER_WAVE

  def __post_init__(self):
    for name in ('width', 'gap', 'film_thickness', 'resonator_length', 'substrate_thickness'):
      value = getattr(self, name)
      if not value > 0:
        raise DomainError(f'CPW {name} must be positive, got {value}')
    if not self.substrate_epsilon_r >= 1:
      raise DomainError(f'Substrate relative permittivity must be >= 1, got {self.substrate_epsilon_r}')
    object.__setattr__(self, 'mode', ResonatorMode(self.mode))


@dataclass(frozen=True)
class LineParams:
  l_geo: float
  c_geo: float
  l_kin: float
  impedance: float
  phase_velocity: float
  alpha_kinetic: float
  epsilon_eff: float = math.nan

  @classmethod
  def from_per_length(cls, l_geo: float, c_geo: float, l_kin: float, epsilon_eff: float = math.nan) -> 'LineParams':
    if not (l_geo > 0 and c_geo > 0):
      raise DomainError(f'Per-length inductance and capacitance must be positive, got {l_geo}, {c_geo}')
    if l_kin < 0:
      raise DomainError(f'Kinetic inductance must be >= 0, got {l_kin}')
    l_total = l_geo + l_kin
    return cls(
      l_geo=l_geo,
      c_geo=c_geo,
      l_kin=l_kin,
      impedance=math.sqrt(l_total / c_geo),
      phase_velocity=1.0 / math.sqrt(c_geo * l_total),
      alpha_kinetic=l_kin / l_total,
      epsilon_eff=epsilon_eff,
    )


def _complement(k: float) -> float:
  return math.sqrt((1.0 - k) * (1.0 + k))


def _substrate_modulus(geom: CpwGeometry) -> float:
  """
  k1 = sinh(pi w / 4h) / sinh(pi (w + 2s) / 4h), evaluated without overflow for thin substrates.
  """
  h = geom.substrate_thickness
  outer = geom.width + 2.0 * geom.gap
  if math.isinf(h):
    return geom.width / outer
  a = math.pi * geom.width / (4.0 * h)
  b = math.pi * outer / (4.0 * h)
  return math.exp(a - b) * math.expm1(-2.0 * a) / math.expm1(-2.0 * b)


def effective_permittivity(geom: CpwGeometry) -> float:
  k0 = geom.width / (geom.width + 2.0 * geom.gap)
  k1 = _substrate_modulus(geom)
  filling = 0.5 * (elliptic_k(k1) / elliptic_k(_complement(k1))) * (elliptic_k(_complement(k0)) / elliptic_k(k0))
  return 1.0 + filling * (geom.substrate_epsilon_r - 1.0)


def line_params_from_geometry(geom: CpwGeometry, l_kin: float) -> LineParams:
  """
  Per-unit-length line parameters of a CPW on a substrate of finite height.

  Returns:
    LineParams with the geometric inductance and capacitance from conformal mapping
    and the supplied kinetic inductance per meter.
  """
  k0 = geom.width / (geom.width + 2.0 * geom.gap)
  if not 0.0 < k0 < 1.0:
    raise DomainError(f'Center-conductor modulus {k0} outside (0, 1)')
  k0_ratio = elliptic_k(_complement(k0)) / elliptic_k(k0)
  l_geo = mu_0 / 4.0 * k0_ratio
  eps_eff = effective_permittivity(geom)
  c_geo = 4.0 * epsilon_0 * eps_eff / k0_ratio
  return LineParams.from_per_length(l_geo, c_geo, l_kin, epsilon_eff=eps_eff)


def _mode_factor(n: int, mode: ResonatorMode) -> float:
  """
  Wavelength fraction per unit length: f = v * factor / l.
  """
  if int(n) != n or n < 1:
    raise PreconditionError(f'Mode index must be a positive integer, got {n}')
  if ResonatorMode(mode) is ResonatorMode.QUARTER_WAVE:
    return (2 * n - 1) / 4.0
  return n / 2.0


def resonance_frequency(params: LineParams, length: float, n: int = 1, mode=ResonatorMode.QUARTER_WAVE) -> float:
  """
  Frequency of mode n. For quarter-wave resonators n counts odd harmonics, n = 1 is the fundamental.
  """
  if not length > 0:
    raise PreconditionError(f'Resonator length must be positive, got {length}')
  return params.phase_velocity * _mode_factor(n, mode) / length


def resonator_length_for_frequency(params: LineParams, f_target: float, n: int = 1, mode=ResonatorMode.QUARTER_WAVE):
  if not f_target > 0:
    raise PreconditionError(f'Target frequency must be positive, got {f_target}')
  return params.phase_velocity * _mode_factor(n, mode) / f_target


def invert_kinetic_inductance(f_measured: float, geom: CpwGeometry, n: int = 1, mode=None) -> float:
  """
  Kinetic inductance per meter that puts mode n of the resonator at f_measured.

  L_k = 1 / (v^2 C_l) - L_l, with v the phase velocity the mode formula requires.
  """
  if not f_measured > 0:
    raise PreconditionError(f'Measured frequency must be positive, got {f_measured}')
  mode = geom.mode if mode is None else ResonatorMode(mode)
  bare = line_params_from_geometry(geom, 0.0)
  v_target = f_measured * geom.resonator_length / _mode_factor(n, mode)
  l_kin = 1.0 / (v_target**2 * bare.c_geo) - bare.l_geo
  if l_kin < 0:
    # Rounding at the bare frequency itself lands a few ulps below zero
    if l_kin > -1e-12 * bare.l_geo:
      return 0.0
    f_bare = resonance_frequency(bare, geom.resonator_length, n, mode)
    raise NegativeResultError(
      f'Measured frequency {f_measured:.6g} Hz exceeds the zero kinetic inductance frequency {f_bare:.6g} Hz'
    )
  return l_kin
