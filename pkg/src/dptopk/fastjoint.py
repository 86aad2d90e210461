"""Pruned group-by sampler for the truncated Joint exponential mechanism.

The output space of length-``k`` sequences is partitioned into groups
``(r, i)``: sequences whose Joint loss is exactly ``r`` and whose first
position attaining that loss is ``i``. Losses at or above the threshold
``tau`` are truncated to ``tau`` and the matching groups are merged into one
tail bucket per position, so only ``(tau + 1) * k`` groups exist. A group is
drawn with the Gumbel-max trick over ``ln|G| - eps * r / 2`` and then a
uniform member of it is drawn. Time and space are ``O(d + k * tau)``.

Positions ``i`` are 0-based in code.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from dptopk.histogram import (Histogram, Sequence, TopScores, ValueIndex,
                              build_histogram, build_value_index, check_sequence,
                              top_scores)
from dptopk.sampling import (DescendingPool, RandomSource, as_random_source,
                             gumbel_argmax, gumbel_argmax_many)

SENSITIVITY = 1


@dataclass(frozen=True)
class MechanismParams:
  """Privacy budget ``epsilon``, utility failure probability ``beta`` and ``k``."""

  epsilon: float
  beta: float
  k: int

  def __post_init__(self):
    if not (self.epsilon > 0 and math.isfinite(self.epsilon)):
      raise ValueError(f"epsilon must be positive and finite, got {self.epsilon}")
    if not 0 < self.beta < 1:
      raise ValueError(f"beta must lie in (0, 1), got {self.beta}")
    if isinstance(self.k, bool) or int(self.k) != self.k or self.k < 1:
      raise ValueError(f"k must be a positive integer, got {self.k}")

  @property
  def sensitivity(self) -> int:
    return SENSITIVITY


class GroupId(NamedTuple):
  """Group ``(r, i)``; ``r == tau`` is the merged tail bucket."""

  r: int
  i: int


def log_falling_factorial(d: int, k: int) -> float:
  """``ln(d! / (d - k)!)``, the log of the number of length-k sequences."""
  return math.fsum(math.log(j) for j in range(d - k + 1, d + 1))


def compute_tau(d: int, k: int, epsilon: float, beta: float) -> int:
  """Pruning threshold ``ceil((2 / eps) * ln(d! / ((d - k)! * beta)))``.

  A value within 1e-9 (relative) of an integer is rounded to it so that
  exact-integer cases do not get bumped up by floating-point noise.
  """
  if not 1 <= k <= d:
    raise ValueError(f"need 1 <= k <= d, got k={k}, d={d}")
  MechanismParams(epsilon, beta, k)
  x = (2.0 / epsilon) * (log_falling_factorial(d, k) + math.log(1.0 / beta))
  n = round(x)
  if abs(x - n) <= 1e-9 * max(1.0, abs(x)):
    return max(1, int(n))
  return max(1, math.ceil(x))


def max_loss(h: Histogram, t: TopScores) -> int:
  """Largest Joint loss any sequence can have: ``h_(1) - min(h)``."""
  return int(t.sorted_desc[0]) - h.min_score


def effective_tau(h: Histogram, t: TopScores, tau: int) -> int:
  """``tau`` clamped to ``max_loss + 1``; the output distribution is unchanged."""
  if tau < 1:
    raise ValueError(f"tau must be >= 1, got {tau}")
  return min(int(tau), max_loss(h, t) + 1)


def compute_counts(h: Histogram, t: TopScores, vi: ValueIndex, tau: int):
  """Count table ``c_r[j] = |{l : h[l] >= h_(j) - r}|`` for ``r = -1 .. tau-1``.

  Row ``r + 1`` of the returned ``(tau + 1, k)`` array holds ``c_r``. Row 0 is
  the strictly-greater count ``|{l : h[l] > h_(j)}|``; each later row adds
  the size of the score bucket ``h_(j) - r``.

  Returns:
    ``(counts, steps)`` where ``steps`` counts the elementary recursion
    updates performed (``d`` for the bucket pass plus ``k`` per row).
  """
  if tau < 1:
    raise ValueError(f"tau must be >= 1, got {tau}")
  if vi.floor > int(t.sorted_desc[-1]) - tau:
    raise ValueError("value index does not reach down to h_(k) - tau")
  top = t.sorted_desc
  k = t.k
  pos = np.fromiter((vi.position(v) for v in top.tolist()), dtype=np.int64, count=k)
  counts = np.empty((tau + 1, k), dtype=np.int64)
  counts[0] = vi.greater_counts[pos]
  levels = top[None, :] - np.arange(tau, dtype=np.int64)[:, None]
  np.cumsum(vi.count_with(levels), axis=0, out=counts[1:])
  counts[1:] += counts[0]
  steps = h.d + (tau + 1) * k
  return counts, steps


def _log_pos(x: np.ndarray) -> np.ndarray:
  x = np.asarray(x, dtype=np.float64)
  with np.errstate(divide="ignore"):
    return np.log(np.where(x > 0, x, 0.0))


@dataclass(frozen=True, eq=False)
class GroupIndex:
  """Pruned partition state.

  Attributes:
    tau: pruning threshold (already clamped).
    counts: ``(tau + 2, k)`` array; row ``r + 1`` holds ``c_r`` for
      ``r = -1 .. tau - 1`` and the last row is the unified ``c_tau = d``.
    prefix_logsums: ``(tau + 1, k + 1)``; ``[r, i]`` sums the head terms
      ``ln(c_{r-1}[j] - j)`` over the first ``i`` positions.
    suffix_logsums: ``(tau + 1, k + 2)``; ``[r, i]`` sums the tail terms
      ``ln(c_r[j] - j)`` over positions ``j >= i - 1`` (1-based ``i``).
    log_sizes: ``(tau + 1, k)``; ``ln|G_{r,i}|``, ``-inf`` for empty groups.
    log_weights: ``log_sizes - eps * r / 2``.
    steps: instrumented count of recursion updates.
  """

  tau: int
  d: int
  k: int
  epsilon: float
  counts: np.ndarray
  prefix_logsums: np.ndarray
  suffix_logsums: np.ndarray
  log_sizes: np.ndarray
  log_weights: np.ndarray
  steps: int

  def log_size(self, gid: GroupId) -> float:
    return float(self.log_sizes[gid.r, gid.i])

  def group_ids(self):
    return [GroupId(r, i) for r in range(self.tau + 1) for i in range(self.k)]


def build_group_index(h: Histogram, t: TopScores, vi: ValueIndex,
                      epsilon: float, tau: int) -> GroupIndex:
  """Counts, prefix/suffix log-sums and group log-sizes for every group."""
  if not epsilon > 0:
    raise ValueError(f"epsilon must be positive, got {epsilon}")
  d, k = h.d, t.k
  counts, steps = compute_counts(h, t, vi, tau)
  unified = np.vstack([counts, np.full((1, k), d, dtype=np.int64)])
  offsets = np.arange(k, dtype=np.int64)
  head = _log_pos(unified[:-1] - offsets)        # uses c_{r-1}
  tail = _log_pos(unified[1:] - offsets)         # uses c_r
  middle = _log_pos(unified[1:] - unified[:-1])  # c_r[i] - c_{r-1}[i]
  rows = tau + 1
  prefix = np.zeros((rows, k + 1))
  np.cumsum(head, axis=1, out=prefix[:, 1:])
  suffix = np.zeros((rows, k + 2))
  suffix[:, 1:k + 1] = np.cumsum(tail[:, ::-1], axis=1)[:, ::-1]
  log_sizes = prefix[:, :k] + middle + suffix[:, 2:]
  log_weights = log_sizes - (epsilon / 2.0) * np.arange(rows)[:, None]
  for arr in (unified, prefix, suffix, log_sizes, log_weights):
    arr.setflags(write=False)
  return GroupIndex(tau=tau, d=d, k=k, epsilon=float(epsilon), counts=unified,
                    prefix_logsums=prefix, suffix_logsums=suffix,
                    log_sizes=log_sizes, log_weights=log_weights, steps=steps)


def subset_sampling(gi: GroupIndex, rs: RandomSource) -> GroupId:
  """Draws ``(r, i)`` with probability proportional to ``|G_{r,i}| e^{-eps r / 2}``."""
  flat = gumbel_argmax(rs, gi.log_weights.ravel())
  return GroupId(*divmod(flat, gi.k))


def sequence_sampling(gid: GroupId, h: Histogram, t: TopScores, vi: ValueIndex,
                      tau: int, rs: RandomSource) -> Sequence:
  """Draws a uniform member of group ``gid``.

  Head positions draw from a pool of items with score ``> h_(j) - r`` that
  grows bucket by bucket in decreasing score order; position ``i`` draws
  from the items at score ``h_(i) - r`` (``<= h_(i) - tau`` for the merged
  bucket); tail positions reuse the pool with the ``>= h_(j) - r`` bound, or
  draw from every unused item in the merged case.
  """
  r, i = int(gid.r), int(gid.i)
  top = t.sorted_desc.tolist()
  k = len(top)
  if not (0 <= r <= tau and 0 <= i < k):
    raise ValueError(f"group {gid} outside the index (tau={tau}, k={k})")
  s = [0] * k
  pool = DescendingPool(vi.sorted_values.tolist(), vi.buckets)
  for j in range(i):
    pool.extend_above(top[j] - r)
    s[j] = pool.pop(rs)
  if r < tau:
    cand = vi.items_with(top[i] - r)
  else:
    cand = np.flatnonzero(h.scores <= top[i] - tau)
  if cand.size == 0:
    raise RuntimeError(f"group {gid} is empty; the group index is inconsistent")
  s[i] = int(cand[rs.integer(cand.size)])
  if r < tau:
    pool.exclude = {s[i]}
    for j in range(i + 1, k):
      pool.extend_above(top[j] - r - 1)
      s[j] = pool.pop(rs)
  elif i + 1 < k:
    rest = np.delete(np.arange(h.d, dtype=np.int64), s[:i + 1])
    size = rest.size
    for j in range(i + 1, k):
      u = rs.integer(size)
      size -= 1
      rest[u], rest[size] = rest[size], rest[u]
      s[j] = int(rest[size])
  return tuple(s)


def classify_sequence(h: Histogram, t: TopScores, s, tau: int) -> GroupId:
  """Group of ``s`` by definition: truncated loss and first binding position."""
  s = check_sequence(h, s, t.k)
  deficit = t.sorted_desc - h.scores[list(s)]
  loss = int(deficit.max())
  if loss >= tau:
    return GroupId(tau, int(np.argmax(deficit >= tau)))
  return GroupId(loss, int(np.argmax(deficit == loss)))


class FastJointSampler:
  """Index built once for ``(h, k, epsilon, tau)``; draws as many outputs as needed."""

  def __init__(self, h, k: int, epsilon: float, beta: float = 2.0 ** -10,
               tau: Optional[int] = None):
    self.hist = build_histogram(h)
    self.params = MechanismParams(epsilon, beta, k)
    self.top = top_scores(self.hist, k)
    raw_tau = compute_tau(self.hist.d, k, epsilon, beta) if tau is None else int(tau)
    self.raw_tau = raw_tau
    self.tau = effective_tau(self.hist, self.top, raw_tau)
    self.value_index = build_value_index(self.hist, self.top, self.tau)
    self.index = build_group_index(self.hist, self.top, self.value_index,
                                   epsilon, self.tau)

  def sample_group(self, rs: RandomSource) -> GroupId:
    return subset_sampling(self.index, rs)

  def sample_sequence(self, gid: GroupId, rs: RandomSource) -> Sequence:
    return sequence_sampling(gid, self.hist, self.top, self.value_index, self.tau, rs)

  def sample(self, rs=None) -> Sequence:
    rs = as_random_source(rs)
    return self.sample_sequence(self.sample_group(rs), rs)

  def sample_many(self, n: int, rs=None):
    """``n`` independent outputs; group draws are vectorized."""
    rs = as_random_source(rs)
    flat = gumbel_argmax_many(rs, self.index.log_weights.ravel(), n)
    k = self.index.k
    return [self.sample_sequence(GroupId(*divmod(int(f), k)), rs) for f in flat]


def fastjoint_select(h, params: MechanismParams, rs=None,
                     tau: Optional[int] = None) -> Sequence:
  """One draw from the truncated Joint mechanism in ``O(d + k * tau)``.

  Args:
    h: a :class:`Histogram` or a vector of non-negative integer scores.
    params: privacy budget, failure probability and ``k``.
    rs: a :class:`RandomSource`, an integer seed, or ``None`` for fresh entropy.
    tau: overrides the threshold derived from ``params`` when given.

  Returns:
    A tuple of ``k`` distinct 0-based item indices.
  """
  sampler = FastJointSampler(h, params.k, params.epsilon, params.beta, tau=tau)
  return sampler.sample(rs)
