# Thin logging facade. Everything goes to stderr so stdout stays usable for CSV and JSON output.

import logging
import sys

from resokit.lib.config import LOG_LEVEL, EXECUTABLE_NAME

_logger = logging.getLogger(EXECUTABLE_NAME)
if not _logger.handlers:
  _handler = logging.StreamHandler(sys.stderr)
  _handler.setFormatter(logging.Formatter('%(message)s'))
  _logger.addHandler(_handler)
  _logger.propagate = False
_logger.setLevel(logging.DEBUG if LOG_LEVEL == 'debug' else logging.INFO)


def set_level(level: str):
  _logger.setLevel(logging.DEBUG if level == 'debug' else logging.INFO)


def log(msg: str):
  _logger.info(msg)


def debug(msg: str):
  _logger.debug(msg)


def error(msg: str):
  _logger.error(f'Error: {msg}')


def warn(msg: str):
  _logger.warning(f'Warning: {msg}')
