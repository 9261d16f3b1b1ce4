"""Show how the ensemble size biases the roll-out KL, using the true dynamics as the 'model'.

    python scripts/kl_estimator_bias.py --seeds-per-init 10 100 1000
"""
import argparse

from brognet.evaluation import GroundTruthModel, Protocol, evaluate
from brognet.systems import default_spec


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--n", type=int, default=5)
    p.add_argument("--n-init", type=int, default=10)
    p.add_argument("--seeds-per-init", type=int, nargs="+", default=[10, 100, 1000])
    args = p.parse_args()
    spec = default_spec("linear", args.n)
    print("seeds_per_init,gm_kl,gm_position_error")
    for j in args.seeds_per_init:
        r = evaluate(GroundTruthModel(), spec, Protocol(args.n_init, j, 100), seed=0)
        print(f"{j},{r.gm_kl:.6g},{r.gm_position_error:.6g}", flush=True)


if __name__ == "__main__":
    main()
