"""Time-regime numbers across masses, from a nucleon to a kilogram."""
import argparse

from collapse_sde import regimes


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--c", type=float, default=1.0)
    ap.add_argument("--T", type=float, default=1e-3, help="perception time in seconds")
    args = ap.parse_args()
    cols = ("mass [kg]", "omega [1/s]", "1/omega [s]", "modes n >", "sqrt(hbar/m)", "onset [s]")
    print("".join(f"{c:>14}" for c in cols))
    for mass in (1.67e-27, 1e-21, 1e-15, 1e-9, 1e-3, 1.0):
        r = regimes.build_report(mass, c=args.c, T_perception=args.T)
        vals = (mass, r.omega, r.t_bar_inverse_omega, r.decayed_mode_threshold,
                r.classical_fluct_coeffs[1], r.diffusive_onset)
        print("".join(f"{v:14.3e}" for v in vals))


if __name__ == "__main__":
    main()
