"""Exact brute-force ground truth for small instances.

Everything here enumerates the full output space, so it is guarded to small
``d`` and ``k``. The fast mechanisms never import this module.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence as _Seq, Tuple

import mpmath
import numpy as np
from scipy import integrate, stats

from dptopk.histogram import Histogram, Sequence, build_histogram, top_scores

MAX_D = 8
MAX_K = 4


def _falling(d: int, k: int) -> int:
  return math.perm(d, k)


def enumerate_sequences(d: int, k: int, max_d: int = MAX_D, max_k: int = MAX_K) -> List[Sequence]:
  """Every length-``k`` sequence of distinct items of ``range(d)``, lexicographic."""
  if not 1 <= k <= d:
    raise ValueError(f"need 1 <= k <= d, got k={k}, d={d}")
  if d > max_d or k > max_k:
    raise ValueError(f"enumeration of d={d}, k={k} would list {_falling(d, k)} sequences; "
                     f"guard is d <= {max_d}, k <= {max_k}")
  return list(itertools.permutations(range(d), k))


@dataclass(frozen=True, eq=False)
class ExactDistribution:
  """A probability vector over an explicit, ordered support."""

  support: Tuple[Sequence, ...]
  masses: np.ndarray
  log_masses: np.ndarray

  def __len__(self) -> int:
    return len(self.support)

  def as_dict(self) -> Dict[Sequence, float]:
    return dict(zip(self.support, self.masses.tolist()))


def _compensated_logsumexp(x: np.ndarray) -> float:
  m = float(np.max(x))
  if m == -math.inf:
    return m
  return m + math.log(math.fsum(np.exp(x - m).tolist()))


def sequence_losses(h: Histogram, k: int, support: _Seq[Sequence]) -> np.ndarray:
  """Joint loss of each sequence in ``support``."""
  t = top_scores(h, k).sorted_desc
  arr = np.asarray(support, dtype=np.int64).reshape(len(support), k)
  return np.max(t[None, :] - h.scores[arr], axis=1)


def exact_mechanism_distribution(h, k: int, epsilon: float, tau: Optional[int] = None,
                                 exact: bool = False, max_d: int = MAX_D,
                                 max_k: int = MAX_K) -> ExactDistribution:
  """Exact output distribution of the (optionally truncated) Joint mechanism.

  ``mass(s)`` is proportional to ``exp(-epsilon * loss(s) / 2)`` with
  ``loss = min(joint_loss, tau)`` when ``tau`` is given. With ``exact=True``
  normalization runs in 60-digit arithmetic over the loss histogram.
  """
  h = build_histogram(h)
  if not epsilon > 0:
    raise ValueError(f"epsilon must be positive, got {epsilon}")
  if tau is not None and tau < 1:
    raise ValueError(f"tau must be >= 1, got {tau}")
  support = enumerate_sequences(h.d, k, max_d, max_k)
  losses = sequence_losses(h, k, support)
  if tau is not None:
    losses = np.minimum(losses, int(tau))
  if exact:
    with mpmath.workdps(60):
      values, counts = np.unique(losses, return_counts=True)
      half = mpmath.mpf(epsilon) / 2
      log_z = mpmath.log(mpmath.fsum(int(c) * mpmath.exp(-half * int(v))
                                     for v, c in zip(values, counts)))
      table = {int(v): float(-half * int(v) - log_z) for v in values}
    log_masses = np.array([table[int(v)] for v in losses])
  else:
    logits = -0.5 * epsilon * losses.astype(np.float64)
    log_masses = logits - _compensated_logsumexp(logits)
  return ExactDistribution(support=tuple(support), masses=np.exp(log_masses),
                           log_masses=log_masses)


def empirical_distribution(samples: Iterable[Sequence], support: _Seq[Sequence]) -> np.ndarray:
  """Counts of ``samples`` aligned with ``support``; unknown samples are rejected."""
  pos = {s: n for n, s in enumerate(support)}
  counts = np.zeros(len(support), dtype=np.int64)
  for s in samples:
    try:
      counts[pos[tuple(s)]] += 1
    except KeyError:
      raise ValueError(f"sample {s} is outside the support") from None
  return counts


def _as_vector(p) -> Tuple[Optional[tuple], np.ndarray]:
  if isinstance(p, ExactDistribution):
    return p.support, p.masses
  arr = np.asarray(p, dtype=np.float64)
  total = arr.sum()
  if total <= 0:
    raise ValueError("distribution has no mass")
  return None, arr / total


def tv_distance(p, q) -> float:
  """Total variation distance ``0.5 * sum |p - q|``.

  Accepts :class:`ExactDistribution` objects or count/probability vectors
  (normalized here). Supports must match.
  """
  sp, a = _as_vector(p)
  sq, b = _as_vector(q)
  if a.shape != b.shape or (sp is not None and sq is not None and sp != sq):
    raise ValueError("distributions have different supports")
  return float(min(1.0, 0.5 * np.abs(a - b).sum()))


def _pooled_groups(expected: np.ndarray, minimum: float = 5.0) -> List[np.ndarray]:
  """Cells grouped in increasing expected count until each group reaches ``minimum``."""
  groups, acc, acc_e = [], [], 0.0
  for idx in np.argsort(expected, kind="stable"):
    acc.append(idx)
    acc_e += expected[idx]
    if acc_e >= minimum:
      groups.append(acc)
      acc, acc_e = [], 0.0
  if acc:
    if groups:
      groups[-1].extend(acc)
    else:
      groups.append(acc)
  return [np.array(g) for g in groups]


def chi_square_gof(counts, probs) -> float:
  """p-value of a goodness-of-fit test; cells with expected < 5 are pooled."""
  counts = np.asarray(counts, dtype=np.float64)
  probs = np.asarray(probs, dtype=np.float64)
  if counts.shape != probs.shape:
    raise ValueError("counts and probabilities differ in length")
  if np.any((probs == 0) & (counts > 0)):
    return 0.0
  expected = probs / probs.sum() * counts.sum()
  groups = _pooled_groups(expected)
  if len(groups) < 2:
    return 1.0
  obs = np.array([counts[g].sum() for g in groups])
  exp = np.array([expected[g].sum() for g in groups])
  return float(stats.chisquare(obs, exp).pvalue)


def chi_square_two_sample(counts_a, counts_b) -> float:
  """p-value of a homogeneity test on two count vectors over one support."""
  a = np.asarray(counts_a, dtype=np.float64)
  b = np.asarray(counts_b, dtype=np.float64)
  if a.shape != b.shape:
    raise ValueError("count vectors differ in length")
  pooled = a + b
  share = min(a.sum(), b.sum()) / pooled.sum()
  groups = _pooled_groups(pooled * share)
  if len(groups) < 2:
    return 1.0
  table = np.array([[a[g].sum() for g in groups], [b[g].sum() for g in groups]])
  return float(stats.chi2_contingency(table, correction=False).pvalue)


def is_neighboring(h, h_prime) -> bool:
  """Coordinatewise difference in {0, 1} with one histogram dominating."""
  a = build_histogram(h).scores
  b = build_histogram(h_prime).scores
  if a.shape != b.shape:
    return False
  diff = b - a
  return bool(np.all((diff >= 0) & (diff <= 1)) or np.all((diff <= 0) & (diff >= -1)))


def neighboring_pairs(h, kind: str = "both", max_d: int = 10) -> List[Histogram]:
  """Every histogram one individual's votes away from ``h``.

  Additions come first (``2^d - 1`` of them), then the removals that keep
  every score non-negative.
  """
  h = build_histogram(h)
  if h.d > max_d:
    raise ValueError(f"neighbor listing for d={h.d} exceeds the guard d <= {max_d}")
  if kind not in ("both", "add", "remove"):
    raise ValueError(f"unknown kind {kind!r}")
  out = []
  vectors = [np.array(v, dtype=np.int64)
             for v in itertools.product((0, 1), repeat=h.d) if any(v)]
  if kind in ("both", "add"):
    out.extend(build_histogram(h.scores + v) for v in vectors)
  if kind in ("both", "remove"):
    out.extend(build_histogram(h.scores - v) for v in vectors
               if np.all(h.scores - v >= 0))
  return out


def group_index_distribution(h, k: int, epsilon: float, tau: int) -> ExactDistribution:
  """Per-sequence masses read off the FastJoint group index.

  Each sequence gets ``exp(log_weight(G) - logsumexp(log_weights)) / |G|``
  for its group ``G``, classified by definition.
  """
  from dptopk.fastjoint import FastJointSampler, classify_sequence

  h = build_histogram(h)
  sampler = FastJointSampler(h, k, epsilon, tau=tau)
  lw = sampler.index.log_weights
  log_z = _compensated_logsumexp(lw.ravel())
  support = enumerate_sequences(h.d, k)
  logs = []
  for s in support:
    g = classify_sequence(h, sampler.top, s, sampler.tau)
    logs.append(lw[g] - log_z - sampler.index.log_sizes[g])
  log_masses = np.array(logs)
  return ExactDistribution(support=tuple(support), masses=np.exp(log_masses),
                           log_masses=log_masses)


def privacy_ratio_check(h, h_prime, k: int, epsilon: float, tau: Optional[int] = None,
                        exact: bool = False, source: str = "oracle") -> float:
  """Largest ``|ln mass_h(s) - ln mass_h'(s)|`` over all sequences.

  ``source="index"`` reads the masses from the FastJoint group index
  (``tau`` required) instead of the enumeration oracle.
  """
  if not is_neighboring(h, h_prime):
    raise ValueError("histograms are not neighbors")
  if source == "oracle":
    p = exact_mechanism_distribution(h, k, epsilon, tau, exact=exact)
    q = exact_mechanism_distribution(h_prime, k, epsilon, tau, exact=exact)
  elif source == "index":
    if tau is None:
      raise ValueError("source='index' needs tau")
    p = group_index_distribution(h, k, epsilon, tau)
    q = group_index_distribution(h_prime, k, epsilon, tau)
  else:
    raise ValueError(f"unknown source {source!r}")
  return float(np.max(np.abs(p.log_masses - q.log_masses)))


def all_histograms(d_max: int, score_max: int) -> Iterable[Histogram]:
  """Every histogram with ``1 <= d <= d_max`` and scores in ``[0, score_max]``."""
  for d in range(1, d_max + 1):
    for v in itertools.product(range(score_max + 1), repeat=d):
      yield build_histogram(v)


def exact_peeling_distribution(h, k: int, per_round: float) -> ExactDistribution:
  """Sequential exponential-mechanism peeling, exactly.

  Each round picks an unused item with probability proportional to
  ``exp(per_round * h[item] / 2)``.
  """
  h = build_histogram(h)
  support = enumerate_sequences(h.d, k)
  logits = 0.5 * per_round * h.scores.astype(np.float64)
  logs = []
  for s in support:
    used = np.zeros(h.d, dtype=bool)
    total = 0.0
    for item in s:
      live = logits[~used]
      total += logits[item] - _compensated_logsumexp(live)
      used[item] = True
    logs.append(total)
  log_masses = np.array(logs)
  return ExactDistribution(support=tuple(support), masses=np.exp(log_masses),
                           log_masses=log_masses)


def noisy_max_probabilities(scores, scale: float) -> np.ndarray:
  """Winning probabilities of ``argmax(scores + Exp(scale))`` by quadrature.

  ``P(i wins) = integral f_i(x) prod_{j != i} F_j(x) dx`` with ``f``/``F`` the
  density and CDF of the exponential shifted to each score. The integral is
  split at the scores, where the CDFs have kinks.
  """
  scores = np.asarray(scores, dtype=np.float64)

  def cdf(x, c):
    return 0.0 if x < c else -math.expm1(-(x - c) / scale)

  out = []
  for i, c in enumerate(scores):
    def integrand(x, i=i, c=c):
      p = math.exp(-(x - c) / scale) / scale
      for j, cj in enumerate(scores):
        if j != i:
          p *= cdf(x, cj)
      return p
    cuts = [c] + sorted(set(float(v) for v in scores if v > c))
    total = sum(integrate.quad(integrand, a, b, limit=200)[0]
                for a, b in zip(cuts, cuts[1:]))
    total += integrate.quad(integrand, cuts[-1], np.inf, limit=200)[0]
    out.append(total)
  return np.array(out)
