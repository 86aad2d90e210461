"""Random primitives shared by every mechanism."""

from __future__ import annotations

from typing import Iterable, List, Optional, Sequence

import numpy as np

_TWO53 = float(2 ** 53)


class RandomSource:
  """Seeded, splittable stream of random draws.

  Backed by numpy's Philox counter-based generator. Child streams derived
  with :meth:`derive` are independent of the parent and of each other and
  depend only on ``(seed, key)``.
  """

  def __init__(self, seed: int = 0, _seq: Optional[np.random.SeedSequence] = None):
    if _seq is None:
      if int(seed) < 0 or int(seed) >= 2 ** 64:
        raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
      _seq = np.random.SeedSequence(int(seed))
    self.seed = int(_seq.entropy)
    self._seq = _seq
    self.generator = np.random.Generator(np.random.Philox(_seq))

  def derive(self, *key: int) -> "RandomSource":
    """Independent child stream addressed by a tuple of non-negative ints."""
    seq = np.random.SeedSequence(self._seq.entropy,
                                 spawn_key=tuple(self._seq.spawn_key) + tuple(int(x) for x in key))
    return RandomSource(_seq=seq)

  def uniform(self, size=None):
    """Uniform draws on the open interval (0, 1); never exactly 0 or 1."""
    raw = self.generator.integers(0, 1 << 53, size=size, dtype=np.int64)
    return (raw + 0.5) / _TWO53

  def integer(self, n: int) -> int:
    """Uniform integer in ``[0, n)``."""
    return int(self.generator.integers(n))

  def __repr__(self) -> str:
    return f"RandomSource(seed={self.seed}, key={tuple(self._seq.spawn_key)})"


def as_random_source(rs) -> RandomSource:
  if isinstance(rs, RandomSource):
    return rs
  if rs is None:
    return RandomSource(np.random.SeedSequence().entropy % (1 << 64))
  return RandomSource(int(rs))


def gumbel(rs: RandomSource, b: float = 1.0, size=None):
  """Gumbel(b) draws, ``-b * ln(-ln U)``."""
  if not b > 0:
    raise ValueError(f"Gumbel scale must be positive, got {b}")
  return -b * np.log(-np.log(rs.uniform(size)))


def exponential_noise(rs: RandomSource, scale: float, size=None):
  """Exponential draws with mean ``scale``, ``-scale * ln U``."""
  if not scale > 0:
    raise ValueError(f"exponential scale must be positive, got {scale}")
  return -scale * np.log(rs.uniform(size))


def _support(logw) -> np.ndarray:
  logw = np.asarray(logw, dtype=np.float64)
  if np.any(np.isnan(logw)) or np.any(logw == np.inf):
    raise ValueError("log-weights must be finite or -inf")
  return logw


def gumbel_argmax(rs: RandomSource, logw: Sequence[float]) -> int:
  """Index ``i`` drawn with probability proportional to ``exp(logw[i])``.

  Entries equal to ``-inf`` are never returned. Exact ties go to the
  smaller index.
  """
  logw = _support(logw)
  live = np.flatnonzero(logw > -np.inf)
  if live.size == 0:
    raise ValueError("gumbel_argmax needs at least one finite log-weight")
  noisy = logw[live] + gumbel(rs, 1.0, live.size)
  return int(live[np.argmax(noisy)])


def gumbel_argmax_many(rs: RandomSource, logw: Sequence[float], n: int,
                       chunk: int = 1 << 20) -> np.ndarray:
  """``n`` independent :func:`gumbel_argmax` draws over the same weights."""
  logw = _support(logw)
  live = np.flatnonzero(logw > -np.inf)
  if live.size == 0:
    raise ValueError("gumbel_argmax needs at least one finite log-weight")
  out = np.empty(n, dtype=np.int64)
  rows = max(1, chunk // live.size)
  for start in range(0, n, rows):
    m = min(rows, n - start)
    noisy = logw[live][None, :] + gumbel(rs, 1.0, (m, live.size))
    out[start:start + m] = live[np.argmax(noisy, axis=1)]
  return out


def array_sampler_pop(a: List, rs: RandomSource):
  """Removes and returns a uniformly random element of ``a`` in O(1).

  The chosen slot is swapped with the last one and the list is truncated,
  so the order of the remaining elements changes.
  """
  n = len(a)
  if n == 0:
    raise ValueError("cannot sample from an empty array")
  i = rs.integer(n)
  a[i], a[-1] = a[-1], a[i]
  return a.pop()


class DescendingPool:
  """Candidate pool fed by score buckets in decreasing score order.

  ``extend_above(v)`` merges every not-yet-merged bucket whose score is
  ``> v``; ``pop`` removes a uniform element. ``pos`` counts merged buckets.
  Items listed in ``exclude`` are dropped when their bucket is merged.
  """

  __slots__ = ("values", "buckets", "pos", "items", "exclude")

  def __init__(self, values: Sequence[int], buckets: Sequence[np.ndarray],
               exclude: Iterable[int] = ()):
    self.values = values
    self.buckets = buckets
    self.pos = 0
    self.items: List[int] = []
    self.exclude = set(exclude)

  def extend_above(self, threshold: int) -> None:
    values, n = self.values, len(self.values)
    while self.pos < n and values[self.pos] > threshold:
      bucket = self.buckets[self.pos].tolist()
      if self.exclude:
        bucket = [x for x in bucket if x not in self.exclude]
      self.items.extend(bucket)
      self.pos += 1

  def pop(self, rs: RandomSource) -> int:
    if not self.items:
      raise RuntimeError("candidate pool is empty; the group index is inconsistent")
    return array_sampler_pop(self.items, rs)

  def __len__(self) -> int:
    return len(self.items)
