"""Differentially private top-k selection with the pruned Joint mechanism."""

from dptopk.baselines import (JointSampler, cdp_peel_budget, cdp_peel_select, joint_select,
                              pnf_peel_select)
from dptopk.fastjoint import (FastJointSampler, GroupId, GroupIndex, MechanismParams,
                              build_group_index, compute_counts, compute_tau,
                              fastjoint_select, sequence_sampling, subset_sampling)
from dptopk.histogram import (Histogram, TopScores, ValueIndex, build_histogram,
                              build_value_index, joint_loss, top_scores, truncated_loss)
from dptopk.sampling import (RandomSource, array_sampler_pop, exponential_noise, gumbel,
                             gumbel_argmax)

__all__ = [
    "FastJointSampler", "GroupId", "GroupIndex", "Histogram", "JointSampler",
    "MechanismParams", "RandomSource", "TopScores", "ValueIndex", "array_sampler_pop",
    "build_group_index", "build_histogram", "build_value_index", "cdp_peel_budget",
    "cdp_peel_select", "compute_counts", "compute_tau", "exponential_noise",
    "fastjoint_select", "gumbel", "gumbel_argmax", "joint_loss", "joint_select",
    "pnf_peel_select", "sequence_sampling", "subset_sampling", "top_scores",
    "truncated_loss",
]
