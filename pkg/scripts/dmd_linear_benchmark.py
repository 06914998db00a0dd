"""DMD surrogate on a linear-plate corpus: fit, single-block and rollout scores.

    python scripts/dmd_linear_benchmark.py --config berger_linear.toml --work runs/linear
    python scripts/dmd_linear_benchmark.py --config berger_linear.toml --work runs/quick --count 20 --duration 0.3

Writes summary.json / table1.csv / blockwise CSVs into <work>/report.
"""

import argparse
from pathlib import Path
import time

from plateforge.cli import main as cli_main
from plateforge.config import load_config


def run(argv):
    t0 = time.perf_counter()
    code = cli_main([str(a) for a in argv])
    if code:
        raise SystemExit(code)
    print(f"{argv[0]}: {time.perf_counter() - t0:.1f} s")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", required=True)
    ap.add_argument("--work", required=True)
    ap.add_argument("--count", type=int, default=None)
    ap.add_argument("--duration", type=float, default=None)
    args = ap.parse_args()

    cfg = load_config(args.config)
    work = Path(args.work)
    data, model, preds = work / "data", work / "dmd.pld", work / "pred"
    gen = ["generate", "--config", args.config, "--out", data]
    if args.count:
        gen += ["--count", args.count]
    if args.duration:
        gen += ["--duration", args.duration]
    run(gen)
    run(["fit-dmd", "--config", args.config, "--data", data, "--out", model])
    steps = min(cfg.evaluation.rollout_steps, int(round((args.duration or cfg.dataset.duration) * cfg.plate.fs)) - 1)
    for L in cfg.surrogate.block_lengths:
        run(["rollout", "--config", args.config, "--data", data, "--out", preds, "--model", model,
             "--block", L, "--steps", steps])
    run(["evaluate", "--config", args.config, "--data", data, "--pred", preds, "--out", work / "report",
         "--model", model])
    print((work / "report" / "table1.csv").read_text())


if __name__ == "__main__":
    main()
