"""Heston mimic parity for one updating function: KS at checkpoints and option prices.

usage: python3 scripts/heston_parity.py [--phi identity|maximum|integral] [--scheme gaussian] [--paths 200000]
"""
import argparse

from mimicking.ito_models import Heston
from mimicking.mimic_sde import mimic_pipeline
from mimicking.paths import TimeGrid
from mimicking.projection import EstimatorConfig, make_feature
from mimicking.updating import make
from mimicking.verify import compare

HESTON = dict(s0=100.0, v0=0.04, kappa=1.5, theta=0.04, xi=0.5, rho=-0.7, r=0.0)
PAYOFFS = {
    "identity": [f"european_call:{k}" for k in (80, 90, 100, 110, 120)],
    "maximum": ["lookback_fixed:100"],
    "integral": ["asian_call:100"],
}


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--phi", default="identity", choices=sorted(PAYOFFS))
    ap.add_argument("--scheme", default=None, help="default: mixture for maximum, gaussian otherwise")
    ap.add_argument("--steps", type=int, default=200)
    ap.add_argument("--paths", type=int, default=200_000)
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args()
    phi = make(args.phi)
    feature, est, scheme = None, None, args.scheme or "gaussian"
    if args.phi == "maximum":
        feature, est = make_feature(phi, "level_drawdown"), EstimatorConfig(bins=128, edges="quantile")
        scheme = args.scheme or "mixture"
    # the log price commutes with the maximum but not with the running integral
    model = Heston(**HESTON, log_price=args.phi != "integral")
    grid = TimeGrid.uniform(1.0, args.steps)
    res = mimic_pipeline(model, phi, feature, est, grid, args.paths, args.seed, args.workers, scheme=scheme)
    pair = dict(phi=phi, feature=make_feature(phi)) if args.phi != "identity" else {}
    rep = compare(res.original, res.mimic, [0.5, 1.0], PAYOFFS[args.phi], seed=args.seed, **pair)
    print(f"phi={args.phi} scheme={scheme} paths={args.paths} steps={args.steps} seed={args.seed}")
    print(rep.to_table())


if __name__ == "__main__":
    main()
