"""Radial-dipole coupling to a silica nanofiber versus diameter.

Writes monochromatic (637 nm) and broadband sweeps to CSV and prints the
optimum of each.
"""
import argparse

from nvfiber import dipole_coupling as dc


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--step", type=float, default=10e-9, help="diameter step in m")
    ap.add_argument("--prefix", default="coupling", help="output file prefix")
    args = ap.parse_args()
    dip = dc.DipoleEmitter.radial()
    for name, spectrum in (("mono637", dc.SpectrumModel.monochromatic(637e-9)),
                           ("broadband", dc.SpectrumModel.nv_default())):
        sw = dc.coupling_sweep(0.2e-6, 1.0e-6, args.step, spectrum, dip)
        sw.to_csv(f"{args.prefix}_{name}.csv")
        cut = sw.fraction_cutoff(0.01)
        print(f"{name:10s} peak eta {sw.peak_eta:.4f} at d = {sw.argmax_diameter * 1e9:.0f} nm, "
              f"99% fundamental share lost at "
              f"{'n/a' if cut is None else f'{cut * 1e9:.0f} nm'}")


if __name__ == "__main__":
    main()
