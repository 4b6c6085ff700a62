"""Simulated HBT measurement of one NV under CW drive with background.

Prints raw and background-corrected g2(0) and the three-level fit.
"""
import argparse

import numpy as np

from nvfiber import emitter_sim as es
from nvfiber import photon_analysis as pa


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--power", type=float, default=100e-6, help="excitation power in W")
    ap.add_argument("--duration", type=float, default=0.5, help="acquisition time in s")
    ap.add_argument("--eta", type=float, default=0.05, help="collection efficiency")
    ap.add_argument("--dark", type=float, default=2e4, help="background rate per channel in Hz")
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--out", default="g2.csv")
    args = ap.parse_args()
    nv = es.ThreeLevelModel()
    scene = es.Scene(nv, es.BackgroundModel(dark_rate=args.dark), es.CW(args.power),
                     collection_efficiency=args.eta)
    s = es.simulate_stream(scene, args.duration, seed=args.seed)
    g = pa.normalize_g2(pa.correlate(s, 1, 2, 1e-9, 500.5e-9, duration=args.duration))
    T = args.duration
    # background rates are known here; in the lab they come from a dark spot
    rec = pa.BackgroundRecord.from_totals(s.count(1) / T, s.count(2) / T, args.dark, args.dark)
    cor = pa.corrected_g2(g, rec)
    cor.to_csv(args.out)
    z = int(np.argmin(np.abs(g.tau)))
    print(f"{len(s)} tags, raw g2(0) = {g.g2[z]:.3f}, corrected {cor.g2[z]:.3f} "
          f"+- {cor.sigma[z]:.3f}")
    fit = pa.fit_g2_three_level(cor)
    print(fit.to_json())


if __name__ == "__main__":
    main()
