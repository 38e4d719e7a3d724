# Forward model of a notch-type resonator on a feedline, trace synthesis,
# and photon-number calibration through the cryostat input chain.

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.constants import hbar

from resokit.lib.errors import DomainError, PreconditionError


@dataclass(frozen=True)
class NotchParams:
  f_r: float
  q_loaded: float
  q_coupling_mag: float
  phi: float = 0.0
  amp: float = 1.0
  phase_offset: float = 0.0
  delay: float = 0.0

  def __post_init__(self):
    for name in ('f_r', 'q_loaded', 'q_coupling_mag', 'amp'):
      value = getattr(self, name)
      if not (math.isfinite(value) and value > 0):
        raise DomainError(f'Notch parameter {name} must be finite and positive, got {value}')
    for name in ('phi', 'phase_offset', 'delay'):
      if not math.isfinite(getattr(self, name)):
        raise DomainError(f'Notch parameter {name} must be finite')

  def as_array(self) -> np.ndarray:
    return np.array([self.f_r, self.q_loaded, self.q_coupling_mag, self.phi, self.amp, self.phase_offset, self.delay])

  @classmethod
  def from_array(cls, values) -> 'NotchParams':
    return cls(*(float(v) for v in values))


NOTCH_FIELDS = ('f_r', 'q_loaded', 'q_coupling_mag', 'phi', 'amp', 'phase_offset', 'delay')


@dataclass(frozen=True)
class TraceMeta:
  vna_power_dbm: float = math.nan
  temperature_k: float = math.nan
  field_mt: float = math.nan
  label: str = ''
  reference_ohms: float = 50.0


@dataclass(frozen=True, eq=False)
class S21Trace:
  freqs: np.ndarray
  values: np.ndarray
  meta: TraceMeta = field(default_factory=TraceMeta)

  def __post_init__(self):
    freqs = np.asarray(self.freqs, dtype=float).ravel()
    values = np.asarray(self.values, dtype=complex).ravel()
    if freqs.size != values.size:
      raise PreconditionError(f'Trace has {freqs.size} frequencies but {values.size} values')
    if freqs.size and not np.all(np.isfinite(freqs)):
      raise PreconditionError('Trace frequencies must be finite')
    if np.any(np.diff(freqs) <= 0):
      raise PreconditionError('Trace frequencies must be strictly increasing')
    freqs.setflags(write=False)
    values.setflags(write=False)
    object.__setattr__(self, 'freqs', freqs)
    object.__setattr__(self, 'values', values)

  def __len__(self) -> int:
    return self.freqs.size

  def with_meta(self, meta: TraceMeta) -> 'S21Trace':
    return S21Trace(self.freqs, self.values, meta)


@dataclass(frozen=True)
class AttenuationStage:
  label: str
  attenuation_db: float

  def __post_init__(self):
    if not self.attenuation_db >= 0:
      raise DomainError(f'Stage {self.label!r} attenuation must be >= 0 dB, got {self.attenuation_db}')


@dataclass(frozen=True)
class AttenuationChain:
  stages: tuple[AttenuationStage, ...] = ()

  @property
  def total_db(self) -> float:
    return math.fsum(stage.attenuation_db for stage in self.stages)

  def with_stage(self, label: str, attenuation_db: float) -> 'AttenuationChain':
    return AttenuationChain(self.stages + (AttenuationStage(label, attenuation_db),))

  def to_dict(self) -> dict:
    return {'stages': [{'label': s.label, 'attenuation_db': s.attenuation_db} for s in self.stages]}

  @classmethod
  def from_dict(cls, data: dict) -> 'AttenuationChain':
    return cls(tuple(AttenuationStage(str(s['label']), float(s['attenuation_db'])) for s in data.get('stages', [])))


# Room-temperature attenuator followed by the 4 K, still and mixing-chamber stages
FRIDGE_CHAIN = AttenuationChain(
  (
    AttenuationStage('room temperature', 40.0),
    AttenuationStage('4 K', 20.0),
    AttenuationStage('still', 20.0),
    AttenuationStage('mixing chamber', 20.0),
  )
)


def s21_ideal(f, p: NotchParams):
  """
  Ideal notch response 1 - (Q_l/|Q_c|) e^{i phi} / (1 + 2i Q_l (f/f_r - 1)).
  """
  f = np.asarray(f, dtype=float)
  response = 1.0 - (p.q_loaded / p.q_coupling_mag) * np.exp(1j * p.phi) / (1.0 + 2j * p.q_loaded * (f / p.f_r - 1.0))
  return complex(response) if response.ndim == 0 else response


def environment(f, p: NotchParams):
  f = np.asarray(f, dtype=float)
  factor = p.amp * np.exp(1j * p.phase_offset) * np.exp(-2j * np.pi * f * p.delay)
  return complex(factor) if factor.ndim == 0 else factor


def s21_full(f, p: NotchParams):
  """
  Notch response seen at the instrument: a e^{i alpha} e^{-2 pi i f tau} times the ideal response.
  """
  return environment(f, p) * s21_ideal(f, p)


def synthesize_trace(
  p: NotchParams,
  f_start: float,
  f_stop: float,
  n_points: int,
  noise_sigma: float = 0.0,
  seed: int = 0,
  meta: TraceMeta | None = None,
) -> S21Trace:
  """
  Evaluate s21_full on a uniform grid and add complex Gaussian noise, sigma per quadrature.
  The result depends only on the arguments, seed included.
  """
  if not f_start < f_stop:
    raise PreconditionError(f'Need f_start < f_stop, got {f_start} and {f_stop}')
  if n_points < 16:
    raise PreconditionError(f'Need at least 16 points, got {n_points}')
  if not noise_sigma >= 0:
    raise PreconditionError(f'Noise sigma must be >= 0, got {noise_sigma}')
  freqs = np.linspace(f_start, f_stop, int(n_points))
  values = s21_full(freqs, p)
  if noise_sigma > 0:
    rng = np.random.default_rng(seed)
    noise = rng.normal(0.0, noise_sigma, size=(2, freqs.size))
    values = values + noise[0] + 1j * noise[1]
  return S21Trace(freqs, values, meta or TraceMeta())


def dbm_to_watts(power_dbm):
  return 10.0 ** ((np.asarray(power_dbm, dtype=float) - 30.0) / 10.0)


def watts_to_dbm(power_w):
  return 10.0 * np.log10(np.asarray(power_w, dtype=float)) + 30.0


def chip_input_power(vna_power_dbm: float, chain: AttenuationChain) -> float:
  return float(dbm_to_watts(vna_power_dbm - chain.total_db))


def _coupling_factor(q_l: float, q_c: float) -> float:
  return 2.0 * q_l * (q_c - q_l) / (q_c * q_c)


def _check_qualities(q_i: float, q_c: float, q_l: float):
  if not (q_i > 0 and q_c > 0 and q_l > 0):
    raise DomainError(f'Quality factors must be positive, got Q_i={q_i}, Q_c={q_c}, Q_l={q_l}')
  if q_l > q_c:
    raise DomainError(f'Loaded Q {q_l} exceeds coupling Q {q_c}')


def photon_number(p_in: float, f_r: float, q_i: float, q_c: float, q_l: float) -> float:
  """
  Mean intra-resonator photon number <n> = Q_i (P_in / hbar w0^2) 2 Q_l (Q_c - Q_l) / Q_c^2.
  """
  if not p_in >= 0:
    raise DomainError(f'Input power must be >= 0, got {p_in}')
  if not f_r > 0:
    raise DomainError(f'Resonance frequency must be positive, got {f_r}')
  _check_qualities(q_i, q_c, q_l)
  omega = 2.0 * math.pi * f_r
  return q_i * p_in / (hbar * omega * omega) * _coupling_factor(q_l, q_c)


def single_photon_power(f_r: float, q_i: float, q_c: float, q_l: float) -> float:
  """
  Chip input power in watts that puts one photon in the resonator on average.
  """
  _check_qualities(q_i, q_c, q_l)
  factor = _coupling_factor(q_l, q_c)
  if factor <= 0:
    raise DomainError('Resonator is decoupled from the feedline, no input power reaches one photon')
  omega = 2.0 * math.pi * f_r
  return hbar * omega * omega / (q_i * factor)


def loaded_quality(q_i: float, q_c: float) -> float:
  return 1.0 / (1.0 / q_i + 1.0 / q_c)
