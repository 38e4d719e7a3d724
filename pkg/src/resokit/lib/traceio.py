# Readers and writers for transmission traces: Touchstone v1 two-port files and
# the three-column CSV layouts. Every malformed input ends in a ParseError carrying
# the offending line number where there is one.

import io
import math
import os
from dataclasses import replace
from enum import Enum
from typing import NamedTuple

import numpy as np
import skrf

from resokit.lib.config import EXECUTABLE_NAME, VERSION
from resokit.lib.errors import DomainError, ParseError
from resokit.lib.file import TraceFormat, get_trace_format
from resokit.lib.resonator import S21Trace, TraceMeta

_UNIT_SCALE = {'hz': 1.0, 'khz': 1e3, 'mhz': 1e6, 'ghz': 1e9}
_TWO_PORT_COLUMNS = 9
# Stand-in for a zero reflection when writing dB data
_DB_FLOOR = -300.0
# 10 ** (dB / 20) stays finite below this
_DB_CEILING = 6000.0


class TouchstoneFormat(str, Enum):
  RI = 'RI'
  MA = 'MA'
  DB = 'DB'


class CsvLayout(str, Enum):
  ri = 'ri'
  db = 'db'


CSV_HEADERS = {
  CsvLayout.ri: 'freq_hz,re,im',
  CsvLayout.db: 'freq_hz,mag_db,phase_deg',
}


class TouchstoneOptions(NamedTuple):
  unit: str
  fmt: TouchstoneFormat
  reference_ohms: float

  @property
  def unit_scale(self) -> float:
    return _UNIT_SCALE[self.unit]

  def option_line(self) -> str:
    return f'# {self.unit} S {self.fmt.value} R {self.reference_ohms!r}'


# Touchstone defaults when the option line is missing
DEFAULT_TOUCHSTONE_OPTIONS = TouchstoneOptions('ghz', TouchstoneFormat.MA, 50.0)


def _decode(data: bytes) -> str:
  if isinstance(data, str):
    return data
  try:
    return data.decode('utf-8-sig')
  except UnicodeDecodeError as err:
    raise ParseError(f'Input is not UTF-8 text: {err.reason} at byte {err.start}') from None


def _number(text: str, line: int) -> float:
  try:
    value = float(text)
  except ValueError:
    raise ParseError(f'Not a number: {text!r}', line) from None
  if not math.isfinite(value):
    raise ParseError(f'Non-finite number: {text!r}', line)
  return value


def _parse_option_line(text: str, line: int) -> TouchstoneOptions:
  tokens = text.strip()[1:].split()
  unit, fmt, parameter, reference = 'ghz', TouchstoneFormat.MA, 's', 50.0
  i = 0
  while i < len(tokens):
    token = tokens[i].lower()
    if token in _UNIT_SCALE:
      unit = token
    elif token.upper() in TouchstoneFormat.__members__:
      fmt = TouchstoneFormat(token.upper())
    elif token in ('s', 'y', 'z', 'h', 'g'):
      parameter = token
    elif token == 'r':
      if i + 1 >= len(tokens):
        raise ParseError('Option line has R without a reference resistance', line)
      reference = _number(tokens[i + 1], line)
      i += 1
    else:
      raise ParseError(f'Malformed option line, unknown token {tokens[i]!r}', line)
    i += 1
  if parameter != 's':
    raise ParseError(f'Only S parameters are supported, option line declares {parameter.upper()}', line)
  return TouchstoneOptions(unit, fmt, reference)


def _to_complex(first: float, second: float, fmt: TouchstoneFormat, line: int | None = None) -> complex:
  if fmt is TouchstoneFormat.RI:
    return complex(first, second)
  try:
    magnitude = first if fmt is TouchstoneFormat.MA else 10.0 ** (first / 20.0)
  except OverflowError:
    raise ParseError(f'Magnitude {first:g} dB is out of range', line) from None
  angle = math.radians(second)
  return complex(magnitude * math.cos(angle), magnitude * math.sin(angle))


def _check_db(value: float, line: int):
  if value > _DB_CEILING:
    raise ParseError(f'Magnitude {value:g} dB is out of range', line)


def _decode_s21(options: TouchstoneOptions, rows: list[str]) -> np.ndarray:
  """
  S21 of validated two-port rows, decoded by scikit-rf.
  """
  source = io.StringIO('\n'.join([options.option_line()] + rows) + '\n')
  # scikit-rf takes the port count from the file extension
  source.name = 'trace.s2p'
  try:
    _, s = skrf.io.touchstone.Touchstone(source).get_sparameter_arrays()
  except (ValueError, IndexError, KeyError, TypeError) as err:
    raise ParseError(f'Touchstone data could not be decoded: {err}') from None
  s21 = np.asarray(s)[:, 1, 0]
  if s21.size != len(rows) or not np.all(np.isfinite(s21)):
    raise ParseError(f'Touchstone data decoded to {s21.size} finite values, expected {len(rows)}')
  return s21


def parse_touchstone(data: bytes, meta: TraceMeta | None = None) -> S21Trace:
  """
  S21 column of a Touchstone v1 two-port file.

  Every line is checked first so errors can name it, then the checked rows are decoded by scikit-rf.

  Returns:
    S21Trace in Hz with complex linear transmission. The reference impedance goes into the metadata.
  """
  text = _decode(data)
  options = None
  freqs: list[float] = []
  rows: list[str] = []
  for line_no, raw in enumerate(text.splitlines(), start=1):
    content = raw.split('!', 1)[0].strip()
    if not content:
      continue
    if content.startswith('#'):
      if options is None:
        options = _parse_option_line(content, line_no)
      continue
    if options is None:
      options = DEFAULT_TOUCHSTONE_OPTIONS
    cells = content.split()
    if len(cells) != _TWO_PORT_COLUMNS:
      raise ParseError(f'Expected {_TWO_PORT_COLUMNS} columns for a two-port row, got {len(cells)}', line_no)
    numbers = [_number(cell, line_no) for cell in cells]
    freq = numbers[0] * options.unit_scale
    if not math.isfinite(freq):
      raise ParseError(f'Frequency {cells[0]} overflows in the declared unit', line_no)
    if freqs and freq <= freqs[-1]:
      raise ParseError(f'Frequency {freq:.12g} Hz does not increase', line_no)
    if options.fmt is TouchstoneFormat.DB:
      for magnitude in numbers[1::2]:
        _check_db(magnitude, line_no)
    freqs.append(freq)
    rows.append(' '.join(cells))
  if not freqs:
    raise ParseError('No data rows found')
  meta = meta or TraceMeta()
  return S21Trace(np.array(freqs), _decode_s21(options, rows), replace(meta, reference_ohms=options.reference_ohms))


def parse_csv_trace(data: bytes, meta: TraceMeta | None = None) -> S21Trace:
  """
  Trace from CSV with a 'freq_hz,re,im' or 'freq_hz,mag_db,phase_deg' header. Rows may come in any order.
  """
  text = _decode(data)
  layout = None
  rows: list[tuple[float, complex, int]] = []
  for line_no, raw in enumerate(text.splitlines(), start=1):
    content = raw.strip()
    if not content:
      continue
    cells = [cell.strip() for cell in content.split(',')]
    if layout is None:
      header = ','.join(cell.lower() for cell in cells)
      for candidate, expected in CSV_HEADERS.items():
        if header == expected:
          layout = candidate
      if layout is None:
        raise ParseError(f'Header must be one of {sorted(CSV_HEADERS.values())}, got {content!r}', line_no)
      continue
    if len(cells) != 3:
      raise ParseError(f'Expected 3 columns, got {len(cells)}', line_no)
    freq, first, second = (_number(cell, line_no) for cell in cells)
    fmt = TouchstoneFormat.RI if layout is CsvLayout.ri else TouchstoneFormat.DB
    value = _to_complex(first, second, fmt, line_no)
    rows.append((freq, value, line_no))
  if layout is None:
    raise ParseError('Missing CSV header')
  if not rows:
    raise ParseError('No data rows found')
  rows.sort(key=lambda row: row[0])
  for previous, current in zip(rows, rows[1:]):
    if current[0] == previous[0]:
      raise ParseError(f'Duplicate frequency {current[0]:.12g} Hz', max(previous[2], current[2]))
  freqs = np.array([row[0] for row in rows])
  values = np.array([row[1] for row in rows])
  return S21Trace(freqs, values, meta or TraceMeta())


def read_trace(path: str, meta: TraceMeta | None = None) -> S21Trace:
  """
  Read a trace file of either format. The label defaults to the file name.
  """
  try:
    with open(path, 'rb') as f:
      data = f.read()
  except OSError as err:
    raise ParseError(f'Could not read trace file {path}: {err.strerror}') from None
  return parse_trace(path, data, meta)


def parse_trace(path: str, data: bytes, meta: TraceMeta | None = None) -> S21Trace:
  """
  Parse trace bytes read from path, picking the format from the extension or the content.
  """
  meta = meta or TraceMeta()
  if not meta.label:
    meta = replace(meta, label=os.path.basename(path))
  if get_trace_format(path, data) is TraceFormat.touchstone:
    return parse_touchstone(data, meta)
  return parse_csv_trace(data, meta)


def _fmt(value: float) -> str:
  return repr(float(value))


def _split(value: complex, fmt: TouchstoneFormat) -> tuple[float, float]:
  if fmt is TouchstoneFormat.RI:
    return value.real, value.imag
  magnitude = abs(value)
  angle = math.degrees(math.atan2(value.imag, value.real))
  if fmt is TouchstoneFormat.MA:
    return magnitude, angle
  return (20.0 * math.log10(magnitude) if magnitude > 0 else _DB_FLOOR), angle


def write_touchstone(trace: S21Trace, fmt: TouchstoneFormat = TouchstoneFormat.RI) -> bytes:
  """
  Two-port Touchstone v1 text in Hz. S21 and S12 both carry the trace, reflections are zero.
  """
  fmt = TouchstoneFormat(fmt)
  lines = [f'! {EXECUTABLE_NAME} {VERSION}']
  if trace.meta.label:
    lines.append(f'! label: {trace.meta.label}')
  lines.append(f'# Hz S {fmt.value} R {_fmt(trace.meta.reference_ohms)}')
  zero = ' '.join(_fmt(v) for v in _split(0j, fmt))
  for freq, value in zip(trace.freqs, trace.values):
    transmission = ' '.join(_fmt(v) for v in _split(complex(value), fmt))
    lines.append(f'{_fmt(freq)} {zero} {transmission} {transmission} {zero}')
  return ('\n'.join(lines) + '\n').encode('utf-8')


def write_csv_trace(trace: S21Trace, layout: CsvLayout = CsvLayout.ri) -> bytes:
  layout = CsvLayout(layout)
  lines = [CSV_HEADERS[layout]]
  for freq, value in zip(trace.freqs, trace.values):
    value = complex(value)
    if layout is CsvLayout.ri:
      first, second = value.real, value.imag
    else:
      if value == 0:
        raise DomainError(f'Cannot write zero transmission at {freq:.12g} Hz in dB')
      first, second = _split(value, TouchstoneFormat.DB)
    lines.append(f'{_fmt(freq)},{_fmt(first)},{_fmt(second)}')
  return ('\n'.join(lines) + '\n').encode('utf-8')


def write_trace(path: str, trace: S21Trace) -> TraceFormat:
  fmt = get_trace_format(path, b'')
  data = write_touchstone(trace) if fmt is TraceFormat.touchstone else write_csv_trace(trace)
  with open(path, 'wb') as f:
    f.write(data)
  return fmt
