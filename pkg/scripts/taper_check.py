"""Adiabaticity of a constant-hot-zone pull and of a linear cone."""
import argparse

import numpy as np

from nvfiber import taper_design as td


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--r0", type=float, default=62.5e-6, help="initial fiber radius in m")
    ap.add_argument("--waist", type=float, default=450e-9, help="waist diameter in m")
    ap.add_argument("--hot-zone", type=float, default=5e-3, help="hot-zone length in m")
    ap.add_argument("--wavelength", type=float, default=700e-9)
    ap.add_argument("--cone-deg", type=float, default=5.0, help="linear cone half angle")
    ap.add_argument("--out", default="taper_rho.csv")
    args = ap.parse_args()
    rec = td.PullRecipe.for_waist(args.r0, args.waist / 2, args.hot_zone)
    prof = td.profile_from_recipe(rec)
    rep = td.adiabaticity_check(prof, args.wavelength)
    rep.to_csv(args.out)
    r_worst = float(np.interp(rep.worst_position, rep.z, rep.r))
    print(f"recipe: elongation {rec.total_elongation * 1e3:.2f} mm, waist "
          f"{2 * prof.waist_radius * 1e9:.1f} nm x {prof.waist_length * 1e3:g} mm, "
          f"max rho {rep.max_rho:.3f} at r = {r_worst * 1e6:.2f} um, "
          f"{'pass' if rep.passed else 'fail'}")
    cone = td.adiabaticity_check(td.linear_cone(1e-6, args.waist, args.cone_deg), args.wavelength)
    print(f"{args.cone_deg:g} deg cone: max rho {cone.max_rho:.3f}, "
          f"{'pass' if cone.passed else 'fail'}")


if __name__ == "__main__":
    main()
