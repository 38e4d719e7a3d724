# Failure classes shared by the library and the command line.
# Each class carries the process exit code and a short machine-readable kind.

import json


class ResokitError(Exception):
  kind = 'error'
  exit_code = 1

  def __init__(self, message: str, line: int | None = None):
    super().__init__(message)
    self.message = message
    self.line = line

  def to_json_line(self) -> str:
    return json.dumps(
      {'error': self.kind, 'exit_code': self.exit_code, 'message': self.message, 'line': self.line},
      sort_keys=True,
    )


class UsageError(ResokitError):
  kind = 'usage'
  exit_code = 1


class DomainError(ResokitError, ValueError):
  kind = 'domain'


class PreconditionError(ResokitError, ValueError):
  kind = 'precondition'


class DegenerateError(ResokitError, ValueError):
  kind = 'degenerate'


class NegativeResultError(ResokitError, ValueError):
  kind = 'negative_result'


class UnphysicalError(ResokitError, ValueError):
  kind = 'unphysical'


class SingularJacobianError(ResokitError, ArithmeticError):
  kind = 'singular_jacobian'
  exit_code = 4

  def __init__(self, message: str, rank: int):
    super().__init__(f'{message} (rank {rank})')
    self.rank = rank


class NoResonanceError(ResokitError, ValueError):
  kind = 'no_resonance'
  exit_code = 2


class ParseError(ResokitError, ValueError):
  kind = 'parse'
  exit_code = 3

  def __init__(self, message: str, line: int | None = None):
    super().__init__(f'line {line}: {message}' if line is not None else message, line=line)


class NonConvergenceError(ResokitError):
  kind = 'non_convergence'
  exit_code = 4
