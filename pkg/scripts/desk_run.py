"""Desk-scale run: pretrain the surrogate on stand-in stegos, train MRAG for
500 steps on 32 synthetic 64x64 pairs and evaluate.

    python3 scripts/desk_run.py --out artifacts/desk_run [--steps 500] [--growth 32]

Writes loss.csv, summary.json, metrics.json, mrag.mrag and surrogate.mstg.
"""

import argparse
import json
import logging
import time
from pathlib import Path

from mrag.acceptance import desk_run

log = logging.getLogger("desk_run")


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, default=Path("artifacts/desk_run"))
    ap.add_argument("--steps", type=int, default=500)
    ap.add_argument("--growth", type=int, default=32)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--every", type=int, default=25, help="log every N steps")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    args.out.mkdir(parents=True, exist_ok=True)

    def on_step(step, row):
        if step % args.every == 0 or step == args.steps - 1:
            log.info("step %4d  " + "  ".join(f"{k} {v:+.5f}" for k, v in row.items() if k != "step"), step)

    t = time.perf_counter()
    run = desk_run(steps=args.steps, growth=args.growth, seed=args.seed, on_step=on_step)
    summary = {**run.summary(), "wall_seconds": time.perf_counter() - t}
    run.training.write_csv(args.out / "loss.csv")
    run.training.model.save(args.out / "mrag.mrag")
    run.pretrain.surrogate.save(args.out / "surrogate.mstg")
    (args.out / "metrics.json").write_text(run.report.to_json())
    (args.out / "summary.json").write_text(json.dumps(summary, indent=1))
    print(json.dumps(summary, indent=1))


if __name__ == "__main__":
    main()
