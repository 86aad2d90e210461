"""
Comparing mechanisms on the bundled dataset
===========================================

Sweep k for each mechanism and print the median errors and times. Same as
``dptopk bench`` but from Python.
"""

from dptopk import bench

h = bench.load_dataset(bench.bundled_dataset_path())
print("items:", h.d, "largest count:", h.max_score)

# %%
# A short sweep; the CLI defaults use 200 repetitions.
rows = []
for mechanism in bench.MECHANISMS:
  cfg = bench.ExperimentConfig(mechanism=mechanism, dataset=h, ks=(10, 50, 100),
                               repetitions=10, seed=0)
  rows.extend(bench.aggregate(bench.run_experiment(cfg)))

# %%
print(f"{'mechanism':<10} {'k':>4} {'linf':>6} {'l1':>8} {'ms':>8}")
by_key = {}
for a in rows:
  by_key.setdefault((a.mechanism, a.k), {})[a.metric] = a.median
for (mechanism, k), m in by_key.items():
  print(f"{mechanism:<10} {k:>4} {m['linf_error']:>6} {m['l1_error']:>8} "
        f"{m['wall_time'] * 1e3:>8.2f}")

# %%
# CSV text, as the CLI writes it.
print(bench.emit_results(rows[:3], "csv"))
