"""Oracle checks on built-in small instances, shared by the CLI and tests."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, List

import numpy as np

from dptopk.baselines import JointSampler
from dptopk.fastjoint import FastJointSampler, compute_tau, log_falling_factorial
from dptopk.oracle import (all_histograms, chi_square_gof, chi_square_two_sample,
                           empirical_distribution, exact_mechanism_distribution,
                           group_index_distribution, neighboring_pairs,
                           privacy_ratio_check, tv_distance)
from dptopk.sampling import RandomSource

INSTANCES = (
    ((2, 1, 1), 2, 2.0),
    ((5, 3, 3, 1), 2, 1.0),
    ((2, 2, 2), 2, 1.0),
    ((4, 0, 3, 3, 1), 3, 0.5),
    ((6, 1, 5, 2, 2, 0), 2, 1.0),
)


@dataclass
class CheckResult:
  name: str
  passed: bool
  detail: str

  def line(self) -> str:
    return f"[{'PASS' if self.passed else 'FAIL'}] {self.name}: {self.detail}"


def check_partition_totality() -> CheckResult:
  worst = 0.0
  for scores, k, eps in INSTANCES:
    for tau in (1, 2, None):
      fs = FastJointSampler(scores, k, eps, tau=tau)
      lw = fs.index.log_sizes.ravel()
      m = lw.max()
      total = m + math.log(math.fsum(np.exp(lw - m).tolist()))
      target = log_falling_factorial(len(scores), k)
      worst = max(worst, abs(total - target) / target if target else abs(total))
  return CheckResult("partition totality", worst < 1e-9, f"max relative error {worst:.2e}")


def check_index_masses() -> CheckResult:
  worst = 0.0
  for scores, k, eps in INSTANCES:
    for tau in (1, 2, 50):
      a = group_index_distribution(scores, k, eps, tau)
      b = exact_mechanism_distribution(scores, k, eps, tau)
      worst = max(worst, float(np.max(np.abs(a.masses - b.masses) / b.masses)))
  return CheckResult("group-index masses vs enumeration", worst < 1e-9,
                     f"max relative error {worst:.2e}")


def check_privacy(d_max: int = 3, score_max: int = 2) -> CheckResult:
  worst_excess = -math.inf
  checked = 0
  for h in all_histograms(d_max, score_max):
    for hp in neighboring_pairs(h):
      for k in range(1, min(2, h.d) + 1):
        for eps in (0.5, 1.0):
          for tau in (None, 1, 2):
            ratio = privacy_ratio_check(h, hp, k, eps, tau)
            worst_excess = max(worst_excess, ratio - eps)
            checked += 1
  return CheckResult("privacy ratio sweep", worst_excess <= 1e-9,
                     f"{checked} pairs, max(ratio - eps) = {worst_excess:.3g}")


def check_sampling(samples: int = 40_000, seed: int = 7) -> CheckResult:
  rs = RandomSource(seed)
  worst_tv, worst_p = 0.0, 1.0
  for n, (scores, k, eps) in enumerate(INSTANCES):
    fs = FastJointSampler(scores, k, eps)
    exact = exact_mechanism_distribution(scores, k, eps, fs.tau)
    counts = empirical_distribution(fs.sample_many(samples, rs.derive(n)), exact.support)
    worst_tv = max(worst_tv, tv_distance(counts, exact))
    worst_p = min(worst_p, chi_square_gof(counts, exact.masses))
  ok = worst_tv < 0.03 and worst_p > 1e-3
  return CheckResult("fastjoint sampling vs exact", ok,
                     f"max TV {worst_tv:.4f}, min chi-square p {worst_p:.3g}")


def check_joint_equivalence(samples: int = 40_000, seed: int = 11) -> CheckResult:
  rs = RandomSource(seed)
  worst_p = 1.0
  for n, (scores, k, eps) in enumerate(INSTANCES):
    exact = exact_mechanism_distribution(scores, k, eps)
    fs = FastJointSampler(scores, k, eps, tau=10 ** 6)
    js = JointSampler(scores, k, eps)
    a = empirical_distribution(fs.sample_many(samples, rs.derive(n, 0)), exact.support)
    b = empirical_distribution(js.sample_many(samples, rs.derive(n, 1)), exact.support)
    worst_p = min(worst_p, chi_square_two_sample(a, b))
  return CheckResult("joint vs fastjoint (untruncated)", worst_p > 1e-3,
                     f"min two-sample p {worst_p:.3g}")


def check_tau_robustness() -> CheckResult:
  base = compute_tau(59047, 100, 1.0, 2.0 ** -10)
  spread = max(abs(compute_tau(59047, 100, 1.0, 2.0 ** -e) - base) / base
               for e in (6, 8, 10, 12, 14))
  return CheckResult("tau robustness in beta", spread < 0.015, f"max relative change {spread:.4f}")


CHECKS: List[Callable[[], CheckResult]] = [
    check_partition_totality,
    check_index_masses,
    check_tau_robustness,
    check_privacy,
    check_sampling,
    check_joint_equivalence,
]


def run_all(echo: Callable[[str], None] = print) -> bool:
  ok = True
  for check in CHECKS:
    try:
      result = check()
    except Exception as exc:  # a crash is a failed check
      result = CheckResult(check.__name__, False, f"{type(exc).__name__}: {exc}")
    echo(result.line())
    ok &= result.passed
  return ok
