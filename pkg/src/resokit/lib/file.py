import os
from enum import Enum

from resokit.lib.errors import ParseError

TOUCHSTONE_EXTENSIONS = ('.s2p', '.ts')
CSV_EXTENSIONS = ('.csv',)


class TraceFormat(str, Enum):
  touchstone = 'touchstone'
  csv = 'csv'


def sniff_trace_format(data: bytes) -> TraceFormat:
  # Text formats carry no file signature, so look at the first meaningful line instead
  for raw in data.splitlines():
    line = raw.strip().lstrip(b'\xef\xbb\xbf')
    if not line or line.startswith(b'!'):
      continue
    if line.startswith(b'#'):
      return TraceFormat.touchstone
    if line.lower().startswith(b'freq_hz'):
      return TraceFormat.csv
    break
  raise ParseError('Could not determine trace file type from its content')


def get_trace_format(file: str, data: bytes | None = None) -> TraceFormat:
  """
  Trace format from the file extension, falling back to the file content.
  """
  if os.path.isdir(file):
    raise ParseError(f'Input is a directory, specify individual trace file(s) instead of: {file}')
  ext = os.path.splitext(file)[1].lower()
  if ext in TOUCHSTONE_EXTENSIONS:
    return TraceFormat.touchstone
  if ext in CSV_EXTENSIONS:
    return TraceFormat.csv
  if data is None:
    if not os.path.isfile(file):
      raise ParseError(f'Input is not a file: {file}')
    with open(file, 'rb') as f:
      data = f.read()
  return sniff_trace_format(data)
