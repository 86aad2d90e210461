"""Acceptance criteria 1-9, each reported as one PASS/FAIL line."""

import csv
import io
import math
import subprocess
import sys
import time

import numpy as np
import pytest

from dptopk.baselines import JointSampler, joint_select
from dptopk.bench import CSV_HEADER
from dptopk.fastjoint import (FastJointSampler, MechanismParams, compute_tau, fastjoint_select,
                              log_falling_factorial)
from dptopk.histogram import build_histogram, joint_loss
from dptopk.oracle import (all_histograms, chi_square_gof, chi_square_two_sample,
                           empirical_distribution, exact_mechanism_distribution,
                           neighboring_pairs, tv_distance)
from dptopk.sampling import RandomSource

pytestmark = pytest.mark.acceptance

SAMPLES = 200_000
DEFAULT_BETA = 2.0 ** -10


def _instances():
  """25 random small instances; every other one forces a small tau."""
  gen = np.random.default_rng(2024)
  out = []
  for n in range(25):
    d = int(gen.integers(3, 7))
    scores = tuple(int(x) for x in gen.integers(0, 7, d))
    k = int(gen.integers(1, min(3, d) + 1))
    eps = float(gen.choice([0.5, 1.0, 2.0]))
    tau = int(gen.integers(1, 4)) if n % 2 else compute_tau(d, k, eps, DEFAULT_BETA)
    out.append((scores, k, eps, tau))
  return out


INSTANCES = _instances()
_FAST_SAMPLES = {}


def _fast_counts(n):
  """Cached fastjoint draws for instance ``n`` at its own tau."""
  if n not in _FAST_SAMPLES:
    scores, k, eps, tau = INSTANCES[n]
    fs = FastJointSampler(scores, k, eps, tau=tau)
    _FAST_SAMPLES[n] = fs.sample_many(SAMPLES, RandomSource(100).derive(n))
  return _FAST_SAMPLES[n]


def test_criterion_1_oracle_equivalence(report):
  worst_tv, worst_p = 0.0, 1.0
  for n, (scores, k, eps, tau) in enumerate(INSTANCES):
    exact = exact_mechanism_distribution(scores, k, eps, tau)
    counts = empirical_distribution(_fast_counts(n), exact.support)
    worst_tv = max(worst_tv, tv_distance(counts, exact))
    worst_p = min(worst_p, chi_square_gof(counts, exact.masses))
  ok = worst_tv < 0.02 and worst_p > 1e-3
  report(1, "oracle equivalence", ok,
         f"25 instances x {SAMPLES} draws, max TV {worst_tv:.4f} (< 0.02), "
         f"min chi-square p {worst_p:.3g} (> 0.001)")
  assert ok


def test_criterion_2_joint_equivalence(report):
  worst_p = 1.0
  for n, (scores, k, eps, _) in enumerate(INSTANCES):
    support = exact_mechanism_distribution(scores, k, eps).support
    h = build_histogram(scores)
    above = h.max_score - h.min_score + 1
    fs = FastJointSampler(h, k, eps, tau=above)
    fast = empirical_distribution(fs.sample_many(SAMPLES, RandomSource(201).derive(n)), support)
    js = JointSampler(h, k, eps)
    joint = empirical_distribution(js.sample_many(SAMPLES, RandomSource(301).derive(n)), support)
    worst_p = min(worst_p, chi_square_two_sample(fast, joint))
  ok = worst_p > 1e-3
  report(2, "joint/fastjoint equivalence", ok,
         f"25 instances, min two-sample chi-square p {worst_p:.3g} (> 0.001)")
  assert ok


def test_criterion_3_privacy_sweep(report):
  cache = {}

  def log_masses(h, k, eps, tau):
    key = (tuple(h.scores.tolist()), k, eps, tau)
    if key not in cache:
      cache[key] = exact_mechanism_distribution(h, k, eps, tau).log_masses
    return cache[key]

  worst = {"truncated": -math.inf, "untruncated": -math.inf}
  pairs = 0
  for h in all_histograms(4, 3):
    neighbors = neighboring_pairs(h)
    for k in range(1, min(2, h.d) + 1):
      for eps in (0.5, 1.0):
        taus = {compute_tau(h.d, k, eps, DEFAULT_BETA), 1, 2}
        for hp in neighbors:
          pairs += 1
          a = log_masses(h, k, eps, None)
          b = log_masses(hp, k, eps, None)
          worst["untruncated"] = max(worst["untruncated"], float(np.max(np.abs(a - b))) - eps)
          for tau in taus:
            a = log_masses(h, k, eps, tau)
            b = log_masses(hp, k, eps, tau)
            worst["truncated"] = max(worst["truncated"], float(np.max(np.abs(a - b))) - eps)
  ok = max(worst.values()) <= 1e-9
  report(3, "privacy ratio sweep", ok,
         f"{pairs} neighboring pairs x (k, eps); max(ratio - eps): truncated "
         f"{worst['truncated']:.3g}, untruncated {worst['untruncated']:.3g} (<= 1e-9)")
  assert ok


def _zipf(d, seed):
  gen = np.random.default_rng(seed)
  ranks = np.arange(1, d + 1)
  return np.floor(1000.0 / ranks ** 1.1).astype(np.int64) + gen.integers(0, 3, d)


def test_criterion_4_utility_bound(report):
  beta, reps = 0.05, 10_000
  bound = beta + 3 * math.sqrt(beta / reps)
  rates, taus = [], set()
  for seed in (1, 2, 3):
    fs = FastJointSampler(_zipf(50, seed), 5, 1.0, beta=beta)
    taus.add(fs.raw_tau)
    draws = fs.sample_many(reps, RandomSource(400).derive(seed))
    rates.append(np.mean([joint_loss(fs.hist, fs.top, s) >= fs.raw_tau for s in draws]))
  ok = max(rates) <= bound and taus == {45}
  report(4, "utility bound", ok,
         f"tau {sorted(taus)}, Pr[loss >= tau] = {[round(float(r), 4) for r in rates]} "
         f"(<= {bound:.4f})")
  assert ok


def test_criterion_5_partition_totality(report):
  worst = 0.0
  for scores, k, eps, tau in INSTANCES:
    lw = FastJointSampler(scores, k, eps, tau=tau).index.log_sizes
    lw = lw[np.isfinite(lw)]
    m = lw.max()
    total = m + math.log(math.fsum(np.exp(lw - m).tolist()))
    target = log_falling_factorial(len(scores), k)
    worst = max(worst, abs(total - target) / max(target, 1.0))
  ok = worst <= 1e-9
  report(5, "partition totality", ok, f"max relative error {worst:.2e} (<= 1e-9)")
  assert ok


def test_criterion_6_complexity_scaling(report):
  ds = (100_000, 200_000, 400_000)
  k, reps = 100, 25
  params = MechanismParams(1.0, DEFAULT_BETA, k)
  gen = np.random.default_rng(6)
  hists = {d: build_histogram(gen.integers(0, 10 ** 6, d)) for d in ds}
  step_ok = True
  for d in ds:
    fs = FastJointSampler(hists[d], k, 1.0)
    step_ok &= fs.index.steps <= d + (fs.tau + 1) * k + 10 * k
    fastjoint_select(hists[d], params, RandomSource(0))
  times = {d: [] for d in ds}
  for rep in range(reps):
    for d in ds:
      start = time.perf_counter_ns()
      fastjoint_select(hists[d], params, RandomSource(rep))
      times[d].append(time.perf_counter_ns() - start)
  x = np.array(ds, dtype=float)
  y = np.array([np.median(times[d]) for d in ds]) / 1e6
  r2 = float(np.corrcoef(x, y)[0, 1] ** 2)
  ok = r2 > 0.95 and step_ok
  report(6, "complexity scaling", ok,
         f"median ms {np.round(y, 2).tolist()} at d={list(ds)}, linear R^2 {r2:.3f} (> 0.95); "
         f"step bound {'holds' if step_ok else 'violated'}")
  assert ok


def test_criterion_7_speedup(report):
  d, k, reps = 50_000, 100, 5
  h = build_histogram(np.random.default_rng(7).integers(0, 10 ** 6, d))
  params = MechanismParams(1.0, DEFAULT_BETA, k)

  def median_time(fn):
    out = []
    for rep in range(reps):
      start = time.perf_counter()
      fn(RandomSource(rep))
      out.append(time.perf_counter() - start)
    return float(np.median(out))

  fast = median_time(lambda rs: fastjoint_select(h, params, rs))
  joint = median_time(lambda rs: joint_select(h, k, 1.0, rs))
  ratio = joint / fast
  ok = fast < joint
  report(7, "speedup", ok,
         f"median fastjoint {fast * 1e3:.1f} ms, joint {joint * 1e3:.1f} ms, "
         f"ratio {ratio:.1f}x (target >= 10x, reported only)")
  assert ok


def test_criterion_8_beta_robustness(report):
  base = compute_tau(59047, 100, 1.0, 2.0 ** -10)
  values = [compute_tau(59047, 100, 1.0, 2.0 ** -e) for e in (6, 8, 10, 12, 14)]
  spread = max(abs(v - base) for v in values) / base
  ok = spread < 0.015
  report(8, "beta robustness", ok, f"tau {values}, max relative change {spread:.4f} (< 0.015)")
  assert ok


def test_criterion_9_cli_contract(report):
  verify = subprocess.run([sys.executable, "-m", "dptopk", "verify"],
                          capture_output=True, text=True)
  bench = subprocess.run([sys.executable, "-m", "dptopk", "bench", "--dataset", "synthetic",
                          "--vary", "k", "--reps", "10"], capture_output=True, text=True)
  rows = list(csv.DictReader(io.StringIO(bench.stdout))) if bench.returncode == 0 else []
  header_ok = bench.stdout.splitlines()[:1] == [",".join(CSV_HEADER)]
  ordered = all(float(r["p25"]) <= float(r["median"]) <= float(r["p75"]) for r in rows)
  ok = verify.returncode == 0 and bench.returncode == 0 and header_ok and bool(rows) and ordered
  report(9, "CLI contract", ok,
         f"verify exit {verify.returncode}; bench exit {bench.returncode}, {len(rows)} CSV rows, "
         f"p25 <= median <= p75 {'in every row' if ordered else 'violated'}")
  assert ok, verify.stdout + verify.stderr + bench.stderr
