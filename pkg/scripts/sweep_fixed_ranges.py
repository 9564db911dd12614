"""Sweep the fixed-range baseline over a grid of range durations.

Shows where constant range sizes land between naive_1s and the learned
policy: short ranges waste little but pay per-request overhead, long ranges
amortize round trips but bleed wasted bits on early swipes.

    python3 scripts/sweep_fixed_ranges.py --suite /tmp/eval --durations 0.5 1 2 4 8
"""

import argparse
from pathlib import Path

import numpy as np

from swipesim.harness import (
    ingest_traces,
    load_catalog,
    load_retention,
    session_record,
    simulate_one,
)
from swipesim.policy import FixedRangeStrategy
from swipesim.sim import SimConfig
from swipesim.watchtime import ParamTable


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--suite", required=True,
                    help="suite directory from gen-synthetic (after a fit)")
    ap.add_argument("--durations", type=float, nargs="+",
                    default=[0.5, 1.0, 2.0, 3.0, 5.0, 8.0])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--max-traces", type=int, default=None,
                    help="evaluate on the first N traces only")
    args = ap.parse_args()

    suite = Path(args.suite)
    traces = ingest_traces(str(suite / "traces" / "*.csv"))
    if args.max_traces:
        traces = traces[: args.max_traces]
    catalog = load_catalog(suite / "videos.csv")
    retention = load_retention(suite / "retention_params.csv")
    table = ParamTable.load(suite / "param_table.csv")
    sim_cfg = SimConfig()

    print(f"{len(traces)} traces, {len(catalog)} videos")
    print(f"{'range_s':>8}  {'mean_qoe':>9}  {'rebuffer_s':>10}  {'waste':>6}")
    for dur in args.durations:
        strategy = FixedRangeStrategy(f"fixed_{dur:g}s", dur)
        records = [
            session_record(strategy, simulate_one(
                strategy, trace, ti, catalog, table, retention, sim_cfg, args.seed
            ), trace)
            for ti, trace in enumerate(traces)
        ]
        qoe = float(np.mean([r.qoe for r in records]))
        reb = float(np.mean([r.rebuffer_s for r in records]))
        waste = float(np.mean([r.waste_ratio for r in records]))
        print(f"{dur:8.2f}  {qoe:9.3f}  {reb:10.3f}  {waste:6.3f}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
