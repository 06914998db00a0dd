"""Generate the 100-trajectory corpus from a config and report its statistics.

    python scripts/reproduce_dataset.py --config berger.toml --out data/berger
"""

import argparse
import time

import numpy as np

from plateforge.cli import main as cli_main
from plateforge.dataset import DatasetManifest, _Moments, load_split
from plateforge.metrics import energy_fraction_above, radial_spatial_power_spectrum


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", required=True)
    ap.add_argument("--out", required=True)
    ap.add_argument("--jobs", type=int, default=0)
    args = ap.parse_args()

    t0 = time.perf_counter()
    code = cli_main(["generate", "--config", args.config, "--out", args.out, "--jobs", str(args.jobs)])
    if code:
        raise SystemExit(code)
    print(f"generation: {time.perf_counter() - t0:.0f} s")

    manifest = DatasetManifest.load(args.out)
    print("splits:", {s: len(manifest.entries(s)) for s in ("train", "val", "test")})
    print("scales:", manifest.normalization)
    m = _Moments()
    worst = 0.0
    for traj in load_split(manifest, "train"):
        m = m.merge(_Moments.of(traj.data))
        c, p = radial_spatial_power_spectrum(traj, frames=4000, Lx=0.4, Ly=0.36)
        worst = max(worst, energy_fraction_above(c, p, 50.0))
    print("normalised train std per channel:", np.array2string(m.std(), precision=10))
    print(f"largest displacement energy fraction beyond 50 cycles/m: {worst:.3e}")


if __name__ == "__main__":
    main()
