import os

LOG_LEVEL = os.environ.get('RESOKIT_LOG_LEVEL', 'normal')  # 'debug'
EXECUTABLE_NAME = 'resokit'
VERSION = '0.1.0'
REPORT_SCHEMA_VERSION = '1'


def thread_cap() -> int | None:
  """
  Optional cap on worker threads for batch fitting, from RESOKIT_THREADS.
  Unset, empty or non-positive values mean no cap.
  """
  raw = os.environ.get('RESOKIT_THREADS', '').strip()
  if not raw:
    return None
  try:
    value = int(raw)
  except ValueError:
    return None
  return value if value > 0 else None
