"""Reference mechanisms: Joint, CDP-Peel and PNF-Peel."""

from __future__ import annotations

import heapq
import math
from typing import Iterator, List, Sequence as _Seq, Tuple

import numpy as np

from dptopk.histogram import Histogram, Sequence, build_histogram
from dptopk.sampling import (RandomSource, array_sampler_pop, as_random_source,
                             exponential_noise, gumbel, gumbel_argmax,
                             gumbel_argmax_many)

_INT64_MAX = np.iinfo(np.int64).max


def _check_common(h: Histogram, k: int, epsilon: float) -> None:
  if isinstance(k, bool) or int(k) != k or not 1 <= k <= h.d:
    raise ValueError(f"k must lie in [1, d={h.d}], got {k}")
  if not (epsilon > 0 and math.isfinite(epsilon)):
    raise ValueError(f"epsilon must be positive and finite, got {epsilon}")


# --------------------------------------------------------------------- Joint

def pair_keys(sorted_scores: np.ndarray, k: int) -> np.ndarray:
  """Integer sort keys of the ``(i, j)`` pairs, one row per position ``i``.

  The key is ``2dk * loss_{i,j} - d*i + j`` (1-based ``i``, ``j``), i.e. the
  loss ``h_(i) - h_(j)`` scaled by ``2dk`` plus a tie-breaker smaller than
  ``2dk`` in magnitude. Keys are pairwise distinct; among equal losses the
  larger ``i`` comes first, which makes the running per-row counters equal
  to the strictly-greater counts before position ``i`` and the
  greater-or-equal counts after it. Each row is increasing in ``j``.
  """
  d = sorted_scores.shape[0]
  scale = 2 * d * k
  top = int(sorted_scores[0]) - int(sorted_scores[-1])
  if scale * top + scale > _INT64_MAX:
    raise OverflowError("pair keys do not fit in 64 bits for this histogram")
  loss = sorted_scores[:k, None] - sorted_scores[None, :]
  i = np.arange(1, k + 1, dtype=np.int64)[:, None]
  j = np.arange(1, d + 1, dtype=np.int64)[None, :]
  return scale * loss - d * i + j


def kway_merge(rows: _Seq[_Seq[int]]) -> Iterator[Tuple[int, int, int]]:
  """Merges sorted rows with a heap; yields ``(key, row, column)``."""
  heap = [(row[0], r, 0) for r, row in enumerate(rows) if len(row)]
  heapq.heapify(heap)
  while heap:
    key, r, c = heap[0]
    if c + 1 < len(rows[r]):
      heapq.heapreplace(heap, (rows[r][c + 1], r, c + 1))
    else:
      heapq.heappop(heap)
    yield key, r, c


class JointPairState:
  """Step-by-step walk over the ``(i, j)`` pairs in key order.

  Keeps the counters ``t[l]`` (row-``l`` pairs seen so far) and derives
  ``ln|U_{i,j}| = sum_{l != i} ln(t[l] - l)`` (0-based ``l``) in O(1) per
  step from a running log-sum over the positive terms plus a count of
  non-positive terms. Rows are merged with :func:`kway_merge`.
  """

  def __init__(self, h, k: int):
    self.hist = build_histogram(h)
    self.k = int(k)
    self.order = np.argsort(-self.hist.scores, kind="stable")
    self.sorted_scores = self.hist.scores[self.order]
    self.keys = pair_keys(self.sorted_scores, self.k)
    self.counters = [0] * self.k
    self._logsum = 0.0
    self._nonpositive = self.k

  def __iter__(self):
    """Yields ``(i, j, loss, ln|U_{i,j}|)`` in increasing key order."""
    rows = [row.tolist() for row in self.keys]
    s = self.sorted_scores
    for _, i, j in kway_merge(rows):
      old = self.counters[i] - i
      self.counters[i] += 1
      new = old + 1
      if new > 0:
        self._logsum += math.log(new)
        if old > 0:
          self._logsum -= math.log(old)
        else:
          self._nonpositive -= 1
      if new > 0:
        rest, nonpos = self._logsum - math.log(new), self._nonpositive
      else:
        rest, nonpos = self._logsum, self._nonpositive - 1
      yield i, j, int(s[i] - s[j]), (rest if nonpos == 0 else -math.inf)

  def recount(self, key: int) -> List[int]:
    """From-scratch counters: row-``l`` pairs with key ``<= key``."""
    return [int(np.count_nonzero(row <= key)) for row in self.keys]


def joint_pair_log_sizes(sorted_scores: np.ndarray, k: int):
  """Vectorized pass over all pairs.

  Returns ``(rows, cols, losses, log_sizes)`` in increasing key order. The
  rows of :func:`pair_keys` are already sorted, so the stable sort is a
  merge of ``k`` runs.
  """
  d = sorted_scores.shape[0]
  keys = pair_keys(sorted_scores, k).ravel()
  order = np.argsort(keys, kind="stable")
  rows, cols = np.divmod(order, d)
  new = cols + 1 - rows
  old = new - 1
  with np.errstate(divide="ignore", invalid="ignore"):
    log_new = np.where(new > 0, np.log(np.maximum(new, 1)), 0.0)
    log_old = np.where(old > 0, np.log(np.maximum(old, 1)), 0.0)
  logsum = np.cumsum(log_new - log_old)
  nonpos = k - np.cumsum(new == 1)
  rest_nonpos = nonpos - (new <= 0)
  log_sizes = np.where(rest_nonpos == 0, logsum - log_new, -np.inf)
  losses = sorted_scores[rows] - sorted_scores[cols]
  return rows, cols, losses, log_sizes


def _sample_pair_member(i: int, j: int, loss: int, sorted_scores: np.ndarray,
                        k: int, rs: RandomSource) -> List[int]:
  """Uniform member of ``U_{i,j}`` in sorted positions.

  Items with score ``> v`` form a prefix of the sorted order, so every
  candidate pool is a growing prefix minus the items already used.
  """
  neg = -sorted_scores
  s = [0] * k
  pool: List[int] = []
  p = 0

  def grow(threshold):
    nonlocal p
    q = int(np.searchsorted(neg, -threshold, side="left"))
    if q > p:
      pool.extend(x for x in range(p, q) if x != j)
      p = q

  for l in range(i):
    grow(sorted_scores[l] - loss)
    s[l] = array_sampler_pop(pool, rs)
  s[i] = j
  for l in range(i + 1, k):
    grow(sorted_scores[l] - loss - 1)
    s[l] = array_sampler_pop(pool, rs)
  return s


class JointSampler:
  """Joint mechanism state for one ``(h, k, epsilon)``; sample repeatedly."""

  def __init__(self, h, k: int, epsilon: float):
    self.hist = build_histogram(h)
    _check_common(self.hist, k, epsilon)
    self.k, self.epsilon = int(k), float(epsilon)
    self.order = np.argsort(-self.hist.scores, kind="stable")
    self.sorted_scores = self.hist.scores[self.order]
    rows, cols, losses, log_sizes = joint_pair_log_sizes(self.sorted_scores, self.k)
    self.rows, self.cols, self.losses = rows, cols, losses
    self.log_sizes = log_sizes
    self.log_weights = log_sizes - (self.epsilon / 2.0) * losses

  def sample(self, rs=None) -> Sequence:
    rs = as_random_source(rs)
    t = gumbel_argmax(rs, self.log_weights)
    s = _sample_pair_member(int(self.rows[t]), int(self.cols[t]), int(self.losses[t]),
                            self.sorted_scores, self.k, rs)
    return tuple(int(x) for x in self.order[s])

  def sample_many(self, n: int, rs=None):
    rs = as_random_source(rs)
    picks = gumbel_argmax_many(rs, self.log_weights, n)
    out = []
    for t in picks.tolist():
      s = _sample_pair_member(int(self.rows[t]), int(self.cols[t]), int(self.losses[t]),
                              self.sorted_scores, self.k, rs)
      out.append(tuple(int(x) for x in self.order[s]))
    return out


def joint_select(h, k: int, epsilon: float, rs=None) -> Sequence:
  """One draw from the (untruncated) Joint exponential mechanism.

  ``O(dk log k + d log d)`` time and ``O(dk)`` space.
  """
  return JointSampler(h, k, epsilon).sample(rs)


# ------------------------------------------------------------------ CDP-Peel

def cdp_composed_epsilon(per_round: float, k: int, delta: float) -> float:
  """(eps, delta) of ``k`` exponential mechanisms with budget ``per_round``.

  Each is ``per_round**2 / 8``-zCDP; zCDP ``rho`` converts to
  ``rho + 2 sqrt(rho ln(1/delta))``.
  """
  rho = k * per_round ** 2 / 8.0
  return rho + 2.0 * math.sqrt(rho * math.log(1.0 / delta))


def cdp_peel_budget(epsilon: float, k: int, delta: float, tol: float = 1e-12) -> float:
  """Largest per-round budget whose ``k``-fold composition is at most ``epsilon``."""
  if not 0 < delta < 1:
    raise ValueError(f"delta must lie in (0, 1), got {delta}")
  if not epsilon > 0:
    raise ValueError(f"epsilon must be positive, got {epsilon}")
  lo, hi = 0.0, math.sqrt(8.0 * epsilon / k)
  while hi - lo > tol * max(1.0, hi):
    mid = 0.5 * (lo + hi)
    if cdp_composed_epsilon(mid, k, delta) <= epsilon:
      lo = mid
    else:
      hi = mid
  return lo


def cdp_peel_select(h, k: int, epsilon: float, delta: float = 1e-6, rs=None) -> Sequence:
  """Peeling exponential mechanism in its one-shot Gumbel form.

  Adds Gumbel(2 / eps0) noise to every score and returns the ``k`` items
  with the largest noisy scores, largest first.
  """
  h = build_histogram(h)
  _check_common(h, k, epsilon)
  eps0 = cdp_peel_budget(epsilon, k, delta)
  rs = as_random_source(rs)
  noisy = h.scores + gumbel(rs, 2.0 / eps0, h.d)
  return _top_k_desc(noisy, k)


def _top_k_desc(noisy: np.ndarray, k: int) -> Sequence:
  d = noisy.shape[0]
  block = np.arange(d) if k == d else np.argpartition(-noisy, k - 1)[:k]
  block = block[np.argsort(-noisy[block], kind="stable")]
  return tuple(int(x) for x in block)


# ------------------------------------------------------------------ PNF-Peel

def pnf_peel_select(h, k: int, epsilon: float, rs=None, monotone: bool = False) -> Sequence:
  """``k`` rounds of report-noisy-max with exponential noise.

  Noise scale is ``2k / epsilon`` (``k / epsilon`` when ``monotone``).
  """
  h = build_histogram(h)
  _check_common(h, k, epsilon)
  rs = as_random_source(rs)
  scale = (1.0 if monotone else 2.0) * k / epsilon
  live = np.ones(h.d, dtype=bool)
  base = h.scores.astype(np.float64)
  out = []
  for _ in range(k):
    noisy = np.where(live, base + exponential_noise(rs, scale, h.d), -np.inf)
    pick = int(np.argmax(noisy))
    live[pick] = False
    out.append(pick)
  return tuple(out)
