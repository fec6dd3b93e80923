"""Outcome frequencies for a weighted two-bump superposition.

Compares the share of trajectories that collapse into each bump with the
squared amplitudes, on the grid and in the two-level testbed.
"""
import argparse

import numpy as np

from collapse_sde import harness, oracles
from collapse_sde.harness import InitialState, RunConfig
from collapse_sde.state import GridSpec


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--weight", type=float, default=0.7, help="|amplitude|^2 of the bump at +5")
    ap.add_argument("--n", type=int, default=400)
    ap.add_argument("--n-finite", type=int, default=10_000)
    ap.add_argument("--seed", type=int, default=21)
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args()
    cfg = RunConfig(grid=GridSpec.centered(12.0, 256), scheme="nonlinear", dt=2.5e-4, t_end=0.25,
                    record_stride=40, n_trajectories=args.n, seed=args.seed,
                    initial_state=InitialState("two_bump", x1=5.0, x2=-5.0, w1=args.weight, alpha_re=0.5),
                    regions=((0.0, np.inf), (-np.inf, 0.0)))
    out = harness.default_out_dir() / "born_statistics"
    c = harness.run_ensemble(cfg, out, workers=args.workers).collapse
    w = (args.weight, 1 - args.weight)
    print(f"grid, {c['n_used']} collapsed of {args.n} (records in {out}):")
    for side, f, s, wj in zip(("x > 0", "x < 0"), c["fractions"], c["stderr"], w):
        print(f"  {side}: {f:.3f} +- {s:.3f}  (weight {wj:.3f})")
    if c["collapse_times"]:
        print(f"  median collapse time {np.median(c['collapse_times']):.3f}")
    b = oracles.finite_born(w, n_paths=args.n_finite, seed=args.seed)
    print(f"two-level testbed, {b.n_used} decided:")
    for j, (f, s, wj) in enumerate(zip(b.fractions, b.stderr, b.weights)):
        print(f"  state {j}: {f:.4f} +- {s:.4f}  (weight {wj:.4f})")


if __name__ == "__main__":
    main()
