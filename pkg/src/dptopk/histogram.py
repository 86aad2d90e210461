"""Histogram data model, top-k scores, the value-group index and the losses.

Items are indexed from 0 internally. A *sequence* is a tuple of ``k``
distinct item indices; position ``i`` of a sequence is compared against the
``i``-th largest score of the histogram.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Iterable, Sequence as _Seq, Tuple

import numpy as np

Sequence = Tuple[int, ...]

_INT64_MAX = np.iinfo(np.int64).max


@dataclass(frozen=True, eq=False)
class Histogram:
  """Immutable vector of non-negative integer item scores."""

  scores: np.ndarray
  max_score: int
  min_score: int

  @property
  def d(self) -> int:
    return int(self.scores.shape[0])

  def __len__(self) -> int:
    return self.d

  def __eq__(self, other) -> bool:
    if not isinstance(other, Histogram):
      return NotImplemented
    return np.array_equal(self.scores, other.scores)

  def __hash__(self) -> int:
    return hash(self.scores.tobytes())

  def __repr__(self) -> str:
    return f"Histogram(d={self.d}, max_score={self.max_score})"


def build_histogram(scores: Iterable[int]) -> Histogram:
  """Validates ``scores`` and wraps them in a read-only :class:`Histogram`.

  Raises:
    ValueError: if ``scores`` is empty, contains negative or non-integer
      values, or values that do not fit a signed 64-bit integer.
  """
  if isinstance(scores, Histogram):
    return scores
  raw = np.asarray(list(scores) if not isinstance(scores, np.ndarray) else scores)
  if raw.ndim != 1:
    raise ValueError(f"scores must be one-dimensional, got shape {raw.shape}")
  if raw.size == 0:
    raise ValueError("a histogram needs at least one item")
  if raw.dtype.kind == "f":
    if not np.all(np.isfinite(raw)) or not np.all(raw == np.floor(raw)):
      raise ValueError("scores must be integers")
  elif raw.dtype.kind == "O":
    if any(not isinstance(v, (int, np.integer)) for v in raw):
      raise ValueError("scores must be integers")
    if any(int(v) > _INT64_MAX for v in raw):
      raise ValueError("scores must fit in a signed 64-bit integer")
  elif raw.dtype.kind not in "iub":
    raise ValueError(f"scores must be integers, got dtype {raw.dtype}")
  if raw.dtype.kind == "u" and raw.size and int(raw.max()) > _INT64_MAX:
    raise ValueError("scores must fit in a signed 64-bit integer")
  arr = np.array(raw, dtype=np.int64)
  if arr.min() < 0:
    raise ValueError("scores must be non-negative")
  arr.setflags(write=False)
  return Histogram(scores=arr, max_score=int(arr.max()), min_score=int(arr.min()))


@dataclass(frozen=True, eq=False)
class TopScores:
  """The ``k`` largest scores of a histogram in non-increasing order."""

  sorted_desc: np.ndarray

  @property
  def k(self) -> int:
    return int(self.sorted_desc.shape[0])

  def __getitem__(self, i):
    return self.sorted_desc[i]

  def tolist(self):
    return self.sorted_desc.tolist()


def top_scores(h: Histogram, k: int) -> TopScores:
  """Returns the ``k`` largest entries of ``h`` in non-increasing order.

  Uses a linear-time partial selection followed by a sort of the top block.
  """
  _check_k(h, k)
  if k == h.d:
    block = h.scores.copy()
  else:
    block = np.partition(h.scores, h.d - k)[h.d - k:]
  block = np.sort(block)[::-1].copy()
  block.setflags(write=False)
  return TopScores(sorted_desc=block)


def _check_k(h: Histogram, k: int) -> None:
  if isinstance(k, bool) or int(k) != k:
    raise ValueError(f"k must be an integer, got {k!r}")
  if not 1 <= k <= h.d:
    raise ValueError(f"k must lie in [1, d={h.d}], got {k}")


@dataclass(frozen=True, eq=False)
class ValueIndex:
  """Items grouped by score for the high-score band of a histogram.

  ``sorted_values`` holds, in strictly decreasing order, every distinct score
  greater than ``floor`` (which is ``h_(k) - tau_max``); ``buckets[m]`` holds
  the items whose score equals ``sorted_values[m]`` and ``sizes[m]`` its
  length. Scores at or below ``floor`` are resolved lazily by
  :meth:`items_with`.
  """

  hist: Histogram
  floor: int
  sorted_values: np.ndarray
  buckets: Tuple[np.ndarray, ...]
  sizes: np.ndarray
  greater_counts: np.ndarray
  _lookup: Dict[int, int] = field(repr=False)

  def position(self, value: int) -> int:
    """Index of ``value`` in ``sorted_values``, or -1 when absent."""
    return self._lookup.get(int(value), -1)

  def items_with(self, value: int) -> np.ndarray:
    """Items whose score equals ``value``."""
    value = int(value)
    if value > self.floor:
      m = self._lookup.get(value, -1)
      if m < 0:
        return np.empty(0, dtype=np.int64)
      return self.buckets[m]
    return np.flatnonzero(self.hist.scores == value)

  def count_with(self, values: np.ndarray) -> np.ndarray:
    """Vectorized ``|f_h(v)|`` for values strictly above ``floor``."""
    values = np.asarray(values, dtype=np.int64)
    if np.any(values <= self.floor):
      raise ValueError("count_with only covers values above the index floor")
    asc = self.sorted_values[::-1]
    pos = np.searchsorted(asc, values)
    pos_c = np.minimum(pos, asc.size - 1)
    hit = (pos < asc.size) & (asc[pos_c] == values)
    return np.where(hit, self.sizes[::-1][pos_c], 0)

  def groups(self) -> Dict[int, np.ndarray]:
    """Full map from every present score to its items (O(d log d))."""
    order = np.argsort(-self.hist.scores, kind="stable")
    vals = self.hist.scores[order]
    cuts = np.flatnonzero(np.diff(vals)) + 1
    return {int(vals[start]): order[start:stop]
            for start, stop in zip(np.r_[0, cuts], np.r_[cuts, vals.size])}


def build_value_index(h: Histogram, t: TopScores, tau_max: int) -> ValueIndex:
  """Groups the items with score ``> h_(k) - tau_max`` by their score."""
  if tau_max < 1:
    raise ValueError(f"tau_max must be >= 1, got {tau_max}")
  floor = int(t.sorted_desc[-1]) - int(tau_max)
  cand = np.flatnonzero(h.scores > floor)
  order = cand[np.argsort(-h.scores[cand], kind="stable")]
  vals = h.scores[order]
  cuts = np.flatnonzero(np.diff(vals)) + 1
  starts = np.r_[0, cuts].astype(np.int64)
  stops = np.r_[cuts, vals.size].astype(np.int64)
  sorted_values = vals[starts] if vals.size else np.empty(0, dtype=np.int64)
  buckets = tuple(order[a:b] for a, b in zip(starts, stops))
  sizes = (stops - starts).astype(np.int64)
  greater = np.concatenate(([0], np.cumsum(sizes)[:-1])).astype(np.int64)
  lookup = {int(v): m for m, v in enumerate(sorted_values.tolist())}
  return ValueIndex(hist=h, floor=floor, sorted_values=sorted_values,
                    buckets=buckets, sizes=sizes, greater_counts=greater,
                    _lookup=lookup)


def check_sequence(h: Histogram, s: _Seq[int], k: int | None = None) -> Sequence:
  """Validates ``s`` as a sequence of distinct items of ``h``."""
  s = tuple(int(x) for x in s)
  if k is not None and len(s) != k:
    raise ValueError(f"sequence has length {len(s)}, expected k={k}")
  if len(set(s)) != len(s):
    raise ValueError(f"sequence entries must be distinct: {s}")
  if any(not 0 <= x < h.d for x in s):
    raise ValueError(f"sequence entries must lie in [0, {h.d}): {s}")
  return s


def joint_loss(h: Histogram, t: TopScores, s: _Seq[int]) -> int:
  """``max_i (h_(i) - h[s[i]])``: the worst per-position score deficit."""
  s = check_sequence(h, s, t.k)
  return int(np.max(t.sorted_desc - h.scores[list(s)]))


def truncated_loss(h: Histogram, t: TopScores, s: _Seq[int], tau: int) -> int:
  """``min(joint_loss, tau)``."""
  if tau < 1:
    raise ValueError(f"tau must be >= 1, got {tau}")
  return min(joint_loss(h, t, s), int(tau))
