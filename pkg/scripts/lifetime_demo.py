"""Pulsed-excitation decay histogram and bi-exponential lifetime fit."""
import argparse

from nvfiber import emitter_sim as es
from nvfiber import photon_analysis as pa


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--rep-rate", type=float, default=2e6, help="pulse rate in Hz")
    ap.add_argument("--energy", type=float, default=3e-12, help="pulse energy in J")
    ap.add_argument("--duration", type=float, default=0.5)
    ap.add_argument("--eta", type=float, default=0.1)
    ap.add_argument("--seed", type=int, default=3)
    ap.add_argument("--out", default="decay.csv")
    args = ap.parse_args()
    scene = es.Scene(excitation=es.Pulsed(args.rep_rate, args.energy),
                     collection_efficiency=args.eta)
    s = es.simulate_stream(scene, args.duration, seed=args.seed)
    d = pa.decay_histogram(s, 0, 1, 0.5e-9, 300e-9)
    d.to_csv(args.out)
    print(pa.fit_lifetime(d).to_json())


if __name__ == "__main__":
    main()
