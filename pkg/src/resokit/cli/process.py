# Per-trace fitting and the manifest batch built on it.

import hashlib
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import tqdm

from resokit.lib.config import thread_cap
from resokit.lib.date import now
from resokit.lib.errors import DomainError, NonConvergenceError, ParseError, ResokitError
from resokit.lib.logger import debug, error, log
from resokit.lib.manifest import ManifestEntry, SweepManifest
from resokit.lib.report import SweepKind, TraceRecord, error_to_dict
from resokit.lib.resonator import AttenuationChain, TraceMeta, chip_input_power, photon_number
from resokit.lib.spectrum_fit import FitFlag, FitReport, fit_notch
from resokit.lib.traceio import parse_trace


@dataclass(frozen=True)
class FileResult:
  record: TraceRecord
  digest: str | None
  failure: ResokitError | None = None


@dataclass(frozen=True)
class BatchResult:
  records: tuple[TraceRecord, ...]
  digests: dict[str, str] = field(default_factory=dict)
  first_failure: ResokitError | None = None

  @property
  def had_error(self) -> bool:
    return self.first_failure is not None


def read_input(path: str) -> tuple[bytes, str]:
  """
  Returns:
    bytes: File content.
    str: Its sha256 hex digest.
  """
  try:
    with open(path, 'rb') as f:
      data = f.read()
  except OSError as err:
    raise ParseError(f'Could not read {path}: {err.strerror}') from None
  return data, hashlib.sha256(data).hexdigest()


def calibrated_photon_number(fit: FitReport, vna_power_dbm: float, chain: AttenuationChain) -> tuple[float, float]:
  """
  Chip input power and mean photon number for a fitted trace. Unknown power gives NaN for both.
  """
  if not math.isfinite(vna_power_dbm):
    return math.nan, math.nan
  p_in = chip_input_power(vna_power_dbm, chain)
  try:
    n_ph = photon_number(p_in, fit.params.f_r, fit.q_internal, fit.coupling_q_effective, fit.params.q_loaded)
  except DomainError as err:
    debug(f'No photon number for this trace: {err.message}')
    n_ph = math.nan
  return p_in, n_ph


def process_file(
  index: int,
  src: str,
  display_path: str,
  meta: TraceMeta,
  chain: AttenuationChain,
  sweep: SweepKind | None = None,
) -> FileResult:
  """
  Parse and fit one trace file. Failures come back inside the result instead of being raised.
  """
  debug(f'{now()}: Processing file {src} ...')
  digest = None
  try:
    data, digest = read_input(src)
    trace = parse_trace(src, data, meta)
    fit = fit_notch(trace)
  except ResokitError as err:
    record = TraceRecord(
      index=index,
      label=meta.label or os.path.basename(src),
      path=display_path,
      sweep=sweep,
      vna_power_dbm=meta.vna_power_dbm,
      temperature_k=meta.temperature_k,
      field_mt=meta.field_mt,
      error=error_to_dict(err),
    )
    return FileResult(record, digest, err)

  p_in, n_ph = calibrated_photon_number(fit, meta.vna_power_dbm, chain)
  record = TraceRecord(
    index=index,
    label=trace.meta.label,
    path=display_path,
    sweep=sweep,
    vna_power_dbm=meta.vna_power_dbm,
    temperature_k=meta.temperature_k,
    field_mt=meta.field_mt,
    p_in_w=p_in,
    photon_number=n_ph,
    fit=fit,
  )
  failure = None
  if FitFlag.NOT_CONVERGED in fit.flags:
    failure = NonConvergenceError(f'Fit of {display_path} did not converge')
  return FileResult(record, digest, failure)


def _process_entry(args: tuple[int, ManifestEntry, SweepManifest]) -> FileResult:
  index, entry, manifest = args
  return process_file(index, manifest.resolve(entry), entry.path, entry.meta, manifest.chain, entry.sweep)


def worker_count(requested: int | None, jobs: int) -> int:
  cap = thread_cap()
  workers = requested or min(32, (os.cpu_count() or 1) + 4)
  if cap is not None:
    workers = min(workers, cap)
  return max(1, min(workers, jobs))


def process_manifest(manifest: SweepManifest, threads: int | None = None) -> BatchResult:
  """
  Fit every trace of a manifest. Files are fitted concurrently, results are assembled in manifest order.

  Returns:
    BatchResult: Records in manifest order, input digests and the first failure in that order.
  """
  jobs = [(i, entry, manifest) for i, entry in enumerate(manifest.entries)]
  workers = worker_count(threads, len(jobs))
  log(f'{now()}: Fitting {len(jobs)} traces on {workers} thread(s) ...')
  with ThreadPoolExecutor(max_workers=workers) as executor:
    results = list(tqdm.tqdm(executor.map(_process_entry, jobs), total=len(jobs), unit='trace', disable=None))

  records = []
  digests = {}
  first_failure = None
  for entry, result in zip(manifest.entries, results):
    records.append(result.record)
    if result.digest is not None:
      digests[entry.path] = result.digest
    if result.failure is not None:
      error(f'Error processing file {entry.path}: {result.failure.message}')
      if first_failure is None:
        first_failure = result.failure
  log(f'Finished all processing jobs at: {now()}')
  return BatchResult(tuple(records), digests, first_failure)
