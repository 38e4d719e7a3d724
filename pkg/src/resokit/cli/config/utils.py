# Helpers to put command output on disk

import os

from resokit.lib.logger import log


def ensure_output_dir(path: str) -> str:
  sane = os.path.abspath(os.path.normpath(path))
  if os.path.exists(sane):
    if not os.path.isdir(sane):
      raise ValueError(f'Output path is not a directory: {path}. Please specify a directory to write output to!')
  else:
    log(f'Creating output directory: {sane} ...')
    os.makedirs(sane)
  return sane


def write_output_file(path: str, data: bytes) -> str:
  """
  Write bytes to path, creating the parent directory when needed.

  Returns:
    str: The normalized path written.
  """
  sane = os.path.abspath(os.path.normpath(path))
  outdir = os.path.dirname(sane)
  if outdir and not os.path.exists(outdir):
    os.makedirs(outdir)
  with open(sane, 'wb') as f:
    f.write(data)
  if not os.path.isfile(sane):
    raise OSError(f'Could not create file: {sane}')
  return sane
