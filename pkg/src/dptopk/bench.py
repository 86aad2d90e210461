"""Dataset ingestion, error metrics, the experiment grid and result output.

Only the selection call is timed. Index construction counts as part of the
call for FastJoint and Joint; reading the dataset does not.
"""

from __future__ import annotations

import csv
import io
import itertools
import json
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from importlib import resources
from pathlib import Path
from typing import Dict, List, Optional, Sequence as _Seq, Tuple

import numpy as np

from dptopk.baselines import cdp_peel_select, joint_select, pnf_peel_select
from dptopk.fastjoint import MechanismParams, fastjoint_select
from dptopk.histogram import Histogram, TopScores, build_histogram, check_sequence, top_scores
from dptopk.sampling import RandomSource

MECHANISMS = ("fastjoint", "joint", "cdp-peel", "pnf-peel")
DEFAULT_K = 100
DEFAULT_EPSILON = 1.0
DEFAULT_BETA = 2.0 ** -10
DEFAULT_DELTA = 1e-6
DEFAULT_REPS = 200
K_GRID = tuple(range(10, 201, 10))
EPSILON_GRID = (0.25, 0.5, 1.0, 2.0, 4.0)
BETA_GRID = tuple(2.0 ** -e for e in (6, 8, 10, 12, 14))
THREADS_ENV = "DPTOPK_THREADS"
METRICS = ("wall_time", "linf_error", "l1_error")
CSV_HEADER = ("mechanism", "k", "epsilon", "beta", "delta", "metric", "p25", "median", "p75")


class DatasetError(ValueError):
  pass


def bundled_dataset_path() -> Path:
  """Path of the synthetic Zipf count file shipped with the package."""
  return Path(str(resources.files("dptopk") / "data" / "synthetic_zipf.txt"))


def load_dataset(path) -> Histogram:
  """Reads one non-negative integer count per line.

  Blank lines and lines starting with ``#`` are skipped; the item index is
  the order of the remaining lines.
  """
  path = Path(path)
  values = []
  with path.open(encoding="utf-8") as fh:
    for lineno, line in enumerate(fh, 1):
      text = line.strip()
      if not text or text.startswith("#"):
        continue
      try:
        value = int(text)
      except ValueError:
        raise DatasetError(f"{path}:{lineno}: not an integer: {text!r}") from None
      if value < 0:
        raise DatasetError(f"{path}:{lineno}: negative count {value}")
      if value > np.iinfo(np.int64).max:
        raise DatasetError(f"{path}:{lineno}: count {value} does not fit 64 bits")
      values.append(value)
  if not values:
    raise DatasetError(f"{path}: no counts found")
  return build_histogram(np.array(values, dtype=np.int64))


def _deficits(t: TopScores, h: Histogram, s) -> np.ndarray:
  s = check_sequence(h, s)
  if len(s) != t.k:
    raise ValueError(f"sequence has length {len(s)}, expected k={t.k}")
  return np.abs(t.sorted_desc - h.scores[list(s)])


def linf_error(t: TopScores, h: Histogram, s) -> int:
  """``max_i |h_(i) - h[s[i]]|``."""
  return int(_deficits(t, h, s).max())


def l1_error(t: TopScores, h: Histogram, s) -> int:
  """``sum_i |h_(i) - h[s[i]]|``."""
  return int(_deficits(t, h, s).sum())


def gap_report(h, m: int) -> List[int]:
  """Consecutive gaps ``h_(i) - h_(i+1)`` among the ``m`` largest scores."""
  h = build_histogram(h)
  if not 1 <= m <= h.d:
    raise ValueError(f"m must lie in [1, d={h.d}], got {m}")
  return (-np.diff(top_scores(h, m).sorted_desc)).tolist()


def run_mechanism(name: str, h: Histogram, k: int, epsilon: float, beta: float,
                  delta: float, rs: RandomSource):
  if name == "fastjoint":
    return fastjoint_select(h, MechanismParams(epsilon, beta, k), rs)
  if name == "joint":
    return joint_select(h, k, epsilon, rs)
  if name == "cdp-peel":
    return cdp_peel_select(h, k, epsilon, delta, rs)
  if name == "pnf-peel":
    return pnf_peel_select(h, k, epsilon, rs)
  raise ValueError(f"unknown mechanism {name!r}; choose from {MECHANISMS}")


@dataclass
class ExperimentConfig:
  """One sweep: a mechanism, a dataset and a parameter grid.

  At most one of ``ks``, ``epsilons``, ``betas`` holds more than one value.
  """

  mechanism: str
  dataset: object
  ks: Tuple[int, ...] = (DEFAULT_K,)
  epsilons: Tuple[float, ...] = (DEFAULT_EPSILON,)
  betas: Tuple[float, ...] = (DEFAULT_BETA,)
  delta: float = DEFAULT_DELTA
  repetitions: int = DEFAULT_REPS
  seed: int = 0
  output: Optional[str] = None
  format: str = "csv"

  def __post_init__(self):
    if self.mechanism not in MECHANISMS:
      raise ValueError(f"unknown mechanism {self.mechanism!r}; choose from {MECHANISMS}")
    self.ks = tuple(int(k) for k in self.ks)
    self.epsilons = tuple(float(e) for e in self.epsilons)
    self.betas = tuple(float(b) for b in self.betas)
    if not (self.ks and self.epsilons and self.betas):
      raise ValueError("parameter lists must be non-empty")
    if sum(len(x) > 1 for x in (self.ks, self.epsilons, self.betas)) > 1:
      raise ValueError("only one of k, epsilon, beta may vary per sweep")
    if self.repetitions < 1:
      raise ValueError(f"repetitions must be >= 1, got {self.repetitions}")
    if not 0 < self.delta < 1:
      raise ValueError(f"delta must lie in (0, 1), got {self.delta}")
    if self.format not in ("csv", "json"):
      raise ValueError(f"format must be csv or json, got {self.format!r}")

  def grid(self) -> List[Tuple[int, float, float]]:
    return list(itertools.product(self.ks, self.epsilons, self.betas))


@dataclass
class ExperimentRecord:
  mechanism: str
  k: int
  epsilon: float
  beta: float
  delta: Optional[float]
  repetition: int
  wall_time: float
  linf_error: int
  l1_error: int
  error: Optional[str] = None


def _threads() -> int:
  raw = os.environ.get(THREADS_ENV, "1")
  try:
    return max(1, int(raw))
  except ValueError:
    raise ValueError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None


def run_experiment(cfg: ExperimentConfig, threads: Optional[int] = None) -> List[ExperimentRecord]:
  """Runs every grid point ``cfg.repetitions`` times.

  Repetition ``r`` of grid point ``g`` draws from the stream derived from
  ``(seed, g, r)``, so results do not depend on scheduling. A failing
  repetition aborts its grid point and leaves one record carrying the error.
  """
  h = cfg.dataset if isinstance(cfg.dataset, Histogram) else (
      build_histogram(cfg.dataset) if not isinstance(cfg.dataset, (str, os.PathLike))
      else load_dataset(cfg.dataset))
  root = RandomSource(cfg.seed)
  delta = cfg.delta if cfg.mechanism == "cdp-peel" else None
  threads = _threads() if threads is None else max(1, int(threads))

  def one_point(g: int, k: int, eps: float, beta: float) -> List[ExperimentRecord]:
    t = top_scores(h, k)
    out = []
    for rep in range(cfg.repetitions):
      rs = root.derive(g, rep)
      try:
        start = time.perf_counter_ns()
        s = run_mechanism(cfg.mechanism, h, k, eps, beta, cfg.delta, rs)
        elapsed = max(time.perf_counter_ns() - start, 1) / 1e9
      except Exception as exc:  # recorded, not raised
        out.append(ExperimentRecord(cfg.mechanism, k, eps, beta, delta, rep,
                                    math.nan, -1, -1, error=f"{type(exc).__name__}: {exc}"))
        break
      out.append(ExperimentRecord(cfg.mechanism, k, eps, beta, delta, rep, elapsed,
                                  linf_error(t, h, s), l1_error(t, h, s)))
    return out

  points = list(enumerate(cfg.grid()))
  if threads == 1:
    chunks = [one_point(g, *p) for g, p in points]
  else:
    with ThreadPoolExecutor(max_workers=threads) as pool:
      chunks = list(pool.map(lambda gp: one_point(gp[0], *gp[1]), points))
  return [rec for chunk in chunks for rec in chunk]


@dataclass
class AggregateRecord:
  mechanism: str
  k: int
  epsilon: float
  beta: float
  delta: Optional[float]
  metric: str
  p25: float
  median: float
  p75: float


def nearest_rank(values: _Seq[float], q: float):
  """Smallest value whose empirical CDF reaches ``q`` percent."""
  if not len(values):
    raise ValueError("empty group")
  ordered = sorted(values)
  rank = max(1, math.ceil(q / 100.0 * len(ordered)))
  return ordered[rank - 1]


def aggregate(records: _Seq[ExperimentRecord]) -> List[AggregateRecord]:
  """25th, 50th and 75th nearest-rank percentiles per grid point and metric.

  Records carrying an error are left out.
  """
  groups: Dict[tuple, List[ExperimentRecord]] = {}
  for rec in records:
    if rec.error is not None:
      continue
    key = (rec.mechanism, rec.k, rec.epsilon, rec.beta, rec.delta)
    groups.setdefault(key, []).append(rec)
  out = []
  for key, recs in groups.items():
    for metric in METRICS:
      vals = [getattr(r, metric) for r in recs]
      out.append(AggregateRecord(*key, metric, nearest_rank(vals, 25),
                                 nearest_rank(vals, 50), nearest_rank(vals, 75)))
  return out


def _fmt(v) -> str:
  if v is None:
    return ""
  if isinstance(v, float):
    return repr(v)
  return str(v)


def aggregates_to_csv(aggregates: _Seq[AggregateRecord]) -> str:
  buf = io.StringIO()
  writer = csv.writer(buf, lineterminator="\n")
  writer.writerow(CSV_HEADER)
  for a in aggregates:
    writer.writerow([_fmt(getattr(a, f)) for f in CSV_HEADER])
  return buf.getvalue()


def _parse_number(text: str):
  if text == "":
    return None
  try:
    return int(text)
  except ValueError:
    return float(text)


def aggregates_from_csv(text: str) -> List[AggregateRecord]:
  rows = list(csv.reader(io.StringIO(text)))
  if not rows or tuple(rows[0]) != CSV_HEADER:
    raise ValueError("missing or unexpected CSV header")
  out = []
  for row in rows[1:]:
    fields = dict(zip(CSV_HEADER, row))
    out.append(AggregateRecord(
        mechanism=fields["mechanism"], k=int(fields["k"]),
        epsilon=float(fields["epsilon"]), beta=float(fields["beta"]),
        delta=None if fields["delta"] == "" else float(fields["delta"]),
        metric=fields["metric"], p25=_parse_number(fields["p25"]),
        median=_parse_number(fields["median"]), p75=_parse_number(fields["p75"])))
  return out


def emit_results(aggregates: _Seq[AggregateRecord], format: str = "csv", path=None) -> str:
  """Serializes aggregates as CSV or a JSON array; writes to ``path`` if given."""
  if format == "csv":
    text = aggregates_to_csv(aggregates)
  elif format == "json":
    text = json.dumps([asdict(a) for a in aggregates], indent=1) + "\n"
  else:
    raise ValueError(f"format must be csv or json, got {format!r}")
  if path is not None:
    try:
      Path(path).write_text(text, encoding="utf-8")
    except OSError as exc:
      raise OSError(f"cannot write results to {path}: {exc}") from exc
  return text
