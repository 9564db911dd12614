"""Generate a synthetic suite, fit, train both policy variants, evaluate all
five strategies, and emit plot data. One command, one output directory.

    python3 scripts/run_offline_eval.py --out /tmp/eval --seed 0 --jobs 4
"""

import argparse
import sys
from pathlib import Path

import yaml

from swipesim.cli import main as swipesim


def run(argv: list[str]) -> None:
    rc = swipesim(argv)
    if rc != 0:
        print(f"step failed (exit {rc}): swipesim {' '.join(argv)}", file=sys.stderr)
        sys.exit(rc)


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", required=True, help="working directory for the whole run")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--jobs", type=int, default=1, help="parallel evaluation workers")
    ap.add_argument("--traces", type=int, default=None, help="suite size override")
    ap.add_argument("--videos", type=int, default=None)
    ap.add_argument("--users", type=int, default=None)
    ap.add_argument("--episodes", type=int, default=None, help="training episodes override")
    args = ap.parse_args()

    out = Path(args.out)
    gen = ["gen-synthetic", "--out", str(out), "--seed", str(args.seed)]
    for flag, value in (("--traces", args.traces), ("--videos", args.videos), ("--users", args.users)):
        if value is not None:
            gen += [flag, str(value)]
    run(gen)

    cfg_path = out / "config.yaml"
    if args.episodes is not None:
        doc = yaml.safe_load(cfg_path.read_text())
        doc.setdefault("train", {})["episodes"] = args.episodes
        cfg_path.write_text(yaml.safe_dump(doc, sort_keys=False))

    run(["fit", "--config", str(cfg_path)])
    run(["train", "--config", str(cfg_path), "--variant", "deload"])
    run(["train", "--config", str(cfg_path), "--variant", "deload_no_wte"])
    run(["simulate", "--config", str(cfg_path), "--out", str(out / "run"),
         "--jobs", str(args.jobs)])
    run(["report", "--run", str(out / "run"), "--out", str(out / "plots")])
    print(f"\nall artifacts under {out}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
