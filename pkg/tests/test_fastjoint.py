import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from dptopk.fastjoint import (FastJointSampler, GroupId, MechanismParams, build_group_index,
                              classify_sequence, compute_counts, compute_tau, effective_tau,
                              fastjoint_select, log_falling_factorial, sequence_sampling)
from dptopk.histogram import build_histogram, build_value_index, top_scores, truncated_loss
from dptopk.oracle import (all_histograms, enumerate_sequences, exact_mechanism_distribution,
                           group_index_distribution, neighboring_pairs, privacy_ratio_check,
                           tv_distance)
from dptopk.sampling import RandomSource

instances = st.lists(st.integers(0, 6), min_size=1, max_size=6).flatmap(
    lambda s: st.tuples(st.just(s), st.integers(1, min(3, len(s))),
                        st.sampled_from([0.5, 1.0, 2.0]), st.integers(1, 8)))


def _index(scores, k, eps=1.0, tau=3):
  h = build_histogram(scores)
  t = top_scores(h, k)
  tau = effective_tau(h, t, tau)
  vi = build_value_index(h, t, tau)
  return h, t, vi, tau, build_group_index(h, t, vi, eps, tau)


def test_mechanism_params_validation():
  MechanismParams(1.0, 0.5, 3)
  for bad in [(0.0, 0.5, 1), (1.0, 0.0, 1), (1.0, 1.0, 1), (1.0, 0.5, 0), (math.inf, 0.5, 1)]:
    with pytest.raises(ValueError):
      MechanismParams(*bad)


def test_compute_tau_small():
  # (2 / 1) * (ln 2 + ln(1 / 0.5)) = 4 ln 2 = 2.77
  assert compute_tau(2, 1, 1.0, 0.5) == 3
  # ln 1 + ln 1 = 0 gives the floor of 1
  assert compute_tau(1, 1, 1.0, 1 - 1e-12) == 1


def test_compute_tau_frozen_value():
  # frozen from a 60-digit evaluation
  assert compute_tau(59047, 100, 1.0, 2.0 ** -10) == 2211
  assert compute_tau(50, 5, 1.0, 0.05) == 45


def test_compute_tau_beta_spread():
  base = compute_tau(59047, 100, 1.0, 2.0 ** -10)
  values = [compute_tau(59047, 100, 1.0, 2.0 ** -e) for e in (6, 8, 10, 12, 14)]
  assert values == [2206, 2209, 2211, 2214, 2217]
  assert max(abs(v - base) for v in values) / base < 0.01


def test_compute_tau_rejects():
  with pytest.raises(ValueError):
    compute_tau(3, 4, 1.0, 0.1)
  with pytest.raises(ValueError):
    compute_tau(3, 1, -1.0, 0.1)


def test_compute_counts_example():
  h, t, vi, tau, _ = _index([5, 3, 3, 1], 2, tau=3)
  counts, steps = compute_counts(h, t, vi, tau)
  assert counts.shape == (tau + 1, 2)
  assert counts[0].tolist() == [0, 1]   # strictly greater
  assert counts[1].tolist() == [1, 3]   # r = 0
  assert counts[3].tolist() == [3, 4]   # r = 2
  assert steps == h.d + (tau + 1) * 2


def test_compute_counts_all_equal():
  h, t, vi, tau, _ = _index([4, 4, 4], 2, tau=5)
  counts, _ = compute_counts(h, t, vi, tau)
  assert tau == 1
  assert counts[1].tolist() == [3, 3]


@settings(max_examples=80)
@given(instances)
def test_compute_counts_definition(inst):
  scores, k, eps, tau = inst
  h, t, vi, tau, _ = _index(scores, k, eps, tau)
  counts, _ = compute_counts(h, t, vi, tau)
  arr = np.array(scores)
  for r in range(-1, tau):
    for j in range(k):
      if r < 0:
        want = int(np.sum(arr > t[j]))
      else:
        want = int(np.sum(arr >= t[j] - r))
      assert counts[r + 1, j] == want


def test_group_sizes_example():
  _, _, _, _, gi = _index([2, 1, 1], 2, eps=2.0, tau=5)
  sizes = np.exp(gi.log_sizes)
  assert gi.tau == 2
  assert sizes[0, 0] == pytest.approx(2)
  assert sizes[1, 0] == pytest.approx(4)
  assert sizes[0, 1] == 0 and sizes[1, 1] == 0
  assert np.all(sizes[2] == 0)


def test_group_sizes_merged_bucket():
  _, _, _, _, gi = _index([2, 1, 1], 2, eps=2.0, tau=1)
  sizes = np.exp(gi.log_sizes)
  assert sizes[1, 0] == pytest.approx(4)
  assert sizes.sum() == pytest.approx(6)


def test_unreachable_merged_bucket_is_empty():
  fs = FastJointSampler([3, 3, 3], 2, 1.0)
  assert fs.tau == 1
  assert np.all(np.isneginf(fs.index.log_sizes[fs.tau]))
  rs = RandomSource(0)
  assert all(fs.sample_group(rs).r == 0 for _ in range(100))


def test_subset_sampling_probabilities():
  fs = FastJointSampler([2, 1, 1], 2, 2.0)
  groups = [g.r for g in (fs.sample_group(RandomSource(1).derive(n)) for n in range(20_000))]
  p0 = 2 / (2 + 4 * math.exp(-1))
  freq = np.bincount(groups, minlength=2)[:2] / len(groups)
  assert tv_distance(freq, [p0, 1 - p0]) < 0.01


def _members(h, t, tau):
  out = {}
  for s in enumerate_sequences(h.d, t.k):
    out.setdefault(classify_sequence(h, t, s, tau), []).append(s)
  return out


@pytest.mark.parametrize("scores,k,tau", [
    ((5, 3, 3, 1), 2, 2),
    ((4, 0, 3, 3, 1), 3, 2),
    ((6, 1, 5, 2, 2, 0), 2, 3),
])
def test_sequence_sampling_uniform_within_group(scores, k, tau):
  h, t, vi, tau, gi = _index(scores, k, tau=tau)
  rs = RandomSource(hash(scores) % 1000)
  for gid, members in _members(h, t, tau).items():
    assert gi.log_size(gid) == pytest.approx(math.log(len(members)))
    draws = [sequence_sampling(gid, h, t, vi, tau, rs) for _ in range(300 * len(members))]
    assert all(classify_sequence(h, t, s, tau) == gid for s in draws)
    if len(members) > 1:
      counts = [draws.count(s) for s in members]
      assert stats.chisquare(counts).pvalue > 1e-4


@settings(max_examples=60)
@given(instances)
def test_sampled_sequences_belong_to_their_group(inst):
  scores, k, eps, tau = inst
  h, t, vi, tau, gi = _index(scores, k, eps, tau)
  rs = RandomSource(len(scores) * 31 + k)
  for r, i in zip(*np.nonzero(np.isfinite(gi.log_sizes))):
    gid = GroupId(int(r), int(i))
    for _ in range(3):
      s = sequence_sampling(gid, h, t, vi, tau, rs)
      assert len(set(s)) == k
      assert classify_sequence(h, t, s, tau) == gid
      assert truncated_loss(h, t, s, tau) == r


def test_sequence_sampling_rejects_empty_and_invalid_groups():
  h, t, vi, tau, _ = _index([3, 3, 3], 2, tau=4)
  with pytest.raises(RuntimeError):
    sequence_sampling(GroupId(tau, 0), h, t, vi, tau, RandomSource(0))
  with pytest.raises(ValueError):
    sequence_sampling(GroupId(tau + 1, 0), h, t, vi, tau, RandomSource(0))


def test_partition_totality_exhaustive():
  for scores in itertools.chain(all_histograms(4, 3), [build_histogram([7, 0, 3, 3, 5, 1, 1, 6])]):
    for k in range(1, min(4, scores.d) + 1):
      for tau in (1, 2, 5):
        _, _, _, _, gi = _index(scores.scores.tolist(), k, tau=tau)
        lw = gi.log_sizes[np.isfinite(gi.log_sizes)]
        m = lw.max()
        total = m + math.log(math.fsum(np.exp(lw - m).tolist()))
        target = log_falling_factorial(scores.d, k)
        assert abs(total - target) <= 1e-9 * max(1.0, target)


@settings(max_examples=60)
@given(instances)
def test_group_index_matches_enumeration(inst):
  scores, k, eps, tau = inst
  a = group_index_distribution(scores, k, eps, tau)
  b = exact_mechanism_distribution(scores, k, eps, tau)
  assert a.support == b.support
  np.testing.assert_allclose(a.masses, b.masses, rtol=1e-9)


def test_step_bound():
  gen = np.random.default_rng(3)
  for d, k in [(1000, 10), (5000, 50), (20000, 100)]:
    fs = FastJointSampler(gen.integers(0, 400, d), k, 1.0)
    assert fs.index.steps <= d + (fs.tau + 1) * k


def test_large_instance_output_shape():
  gen = np.random.default_rng(4)
  h = gen.integers(0, 10 ** 6, 100_000)
  s = fastjoint_select(h, MechanismParams(1.0, 2.0 ** -10, 100), RandomSource(0))
  assert len(s) == 100 and len(set(s)) == 100
  assert all(0 <= x < h.size for x in s)


def test_utility_bound_small():
  # loss >= tau has probability at most beta
  scores = [int(40 / (r + 1)) for r in range(20)]
  fs = FastJointSampler(scores, 3, 1.0, beta=0.2)
  draws = fs.sample_many(4000, RandomSource(5))
  h, t = fs.hist, fs.top
  rate = np.mean([truncated_loss(h, t, s, fs.raw_tau) >= fs.raw_tau for s in draws])
  assert rate <= 0.2 + 3 * math.sqrt(0.2 / 4000)


def test_privacy_via_index():
  worst = -math.inf
  for h in all_histograms(3, 2):
    for hp in neighboring_pairs(h):
      for k in range(1, min(2, h.d) + 1):
        for tau in (1, 2):
          worst = max(worst, privacy_ratio_check(h, hp, k, 1.0, tau, source="index") - 1.0)
  assert worst <= 1e-9


def test_seeded_select_is_reproducible():
  p = MechanismParams(1.0, 0.1, 3)
  h = [9, 4, 4, 7, 1, 0, 8]
  assert fastjoint_select(h, p, 12) == fastjoint_select(h, p, 12)
  assert fastjoint_select(h, p, RandomSource(3)) == fastjoint_select(h, p, RandomSource(3))
