from enum import Enum

from resokit.lib.file import TraceFormat


# Tabular output for the derived curves
class CurveFormat(str, Enum):
  csv = 'csv'
  json = 'json'


# File extensions written by synth for each trace format
trace_format_to_extension = {
  TraceFormat.touchstone: 's2p',
  TraceFormat.csv: 'csv',
}


def get_extension_from_trace_format(fmt: TraceFormat) -> str:
  ext = trace_format_to_extension.get(TraceFormat(fmt))
  if not ext:
    raise ValueError(f'Invalid trace format: {fmt}')
  return ext
