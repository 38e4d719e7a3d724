import datetime


def now() -> datetime.datetime:
  return datetime.datetime.now().astimezone()


def now_iso() -> str:
  """
  Local time with UTC offset to the second, as written to report provenance.
  """
  return now().isoformat(timespec='seconds')
