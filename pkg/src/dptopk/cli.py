"""Command line entry point: ``select``, ``bench``, ``verify`` and ``gaps``."""

from __future__ import annotations

import argparse
import json
import sys
import time

from dptopk import bench
from dptopk.histogram import top_scores
from dptopk.sampling import RandomSource


def _dataset(arg: str):
  if arg == "synthetic":
    return bench.load_dataset(bench.bundled_dataset_path())
  return bench.load_dataset(arg)


def _common(p: argparse.ArgumentParser) -> None:
  p.add_argument("--mechanism", choices=bench.MECHANISMS, default="fastjoint")
  p.add_argument("--dataset", required=True,
                 help="count file (one integer per line) or 'synthetic' for the bundled one")
  p.add_argument("--seed", type=int, default=0)
  p.add_argument("--delta", type=float, default=bench.DEFAULT_DELTA)


def build_parser() -> argparse.ArgumentParser:
  parser = argparse.ArgumentParser(prog="dptopk", description=__doc__)
  sub = parser.add_subparsers(dest="command", required=True)

  sel = sub.add_parser("select", help="run one mechanism once")
  _common(sel)
  sel.add_argument("--k", type=int, default=bench.DEFAULT_K)
  sel.add_argument("--eps", type=float, default=bench.DEFAULT_EPSILON)
  sel.add_argument("--beta", type=float, default=bench.DEFAULT_BETA)

  b = sub.add_parser("bench", help="sweep one parameter and report percentiles")
  _common(b)
  b.add_argument("--vary", choices=("k", "eps", "beta"), default="k")
  b.add_argument("--k", type=int, nargs="+", default=None)
  b.add_argument("--eps", type=float, nargs="+", default=None)
  b.add_argument("--beta", type=float, nargs="+", default=None)
  b.add_argument("--reps", type=int, default=bench.DEFAULT_REPS)
  b.add_argument("--out", default=None, help="output file (stdout when omitted)")
  b.add_argument("--format", choices=("csv", "json"), default="csv")

  sub.add_parser("verify", help="run the oracle checks on built-in small instances")

  g = sub.add_parser("gaps", help="gaps between consecutive top scores")
  g.add_argument("--dataset", required=True)
  g.add_argument("--top", type=int, default=300)
  return parser


def _cmd_select(args) -> int:
  h = _dataset(args.dataset)
  start = time.perf_counter()
  s = bench.run_mechanism(args.mechanism, h, args.k, args.eps, args.beta, args.delta,
                          RandomSource(args.seed))
  elapsed = time.perf_counter() - start
  t = top_scores(h, args.k)
  print(json.dumps({"mechanism": args.mechanism, "k": args.k, "epsilon": args.eps,
                    "beta": args.beta, "sequence": list(s),
                    "linf_error": bench.linf_error(t, h, s),
                    "l1_error": bench.l1_error(t, h, s), "wall_time": elapsed}))
  return 0


def _cmd_bench(args) -> int:
  h = _dataset(args.dataset)
  grids = {"k": bench.K_GRID, "eps": bench.EPSILON_GRID, "beta": bench.BETA_GRID}
  defaults = {"k": (bench.DEFAULT_K,), "eps": (bench.DEFAULT_EPSILON,),
              "beta": (bench.DEFAULT_BETA,)}
  given = {"k": args.k, "eps": args.eps, "beta": args.beta}
  values = {}
  for name in ("k", "eps", "beta"):
    if name == args.vary:
      values[name] = tuple(given[name]) if given[name] else grids[name]
    else:
      values[name] = tuple(given[name]) if given[name] else defaults[name]
  values["k"] = tuple(k for k in values["k"] if k <= h.d)
  cfg = bench.ExperimentConfig(mechanism=args.mechanism, dataset=h, ks=values["k"],
                               epsilons=values["eps"], betas=values["beta"],
                               delta=args.delta, repetitions=args.reps, seed=args.seed,
                               output=args.out, format=args.format)
  records = bench.run_experiment(cfg)
  for rec in records:
    if rec.error:
      print(f"grid point k={rec.k} eps={rec.epsilon} beta={rec.beta} failed: {rec.error}",
            file=sys.stderr)
  text = bench.emit_results(bench.aggregate(records), args.format, args.out)
  if args.out is None:
    sys.stdout.write(text)
  return 0


def _cmd_gaps(args) -> int:
  h = _dataset(args.dataset)
  for gap in bench.gap_report(h, min(args.top, h.d)):
    print(gap)
  return 0


def main(argv=None) -> int:
  args = build_parser().parse_args(argv)
  try:
    if args.command == "select":
      return _cmd_select(args)
    if args.command == "bench":
      return _cmd_bench(args)
    if args.command == "gaps":
      return _cmd_gaps(args)
    from dptopk.verify import run_all
    return 0 if run_all() else 1
  except (ValueError, OSError) as exc:
    print(f"dptopk: error: {exc}", file=sys.stderr)
    return 2


if __name__ == "__main__":
  sys.exit(main())
