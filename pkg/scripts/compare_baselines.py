"""Train every model family on one system and compare roll-out metrics.

    python scripts/compare_baselines.py --kind linear --n 5 --epochs 60 --seeds 0 1 2
"""
import argparse
import csv
import time

from brognet.evaluation import Protocol, evaluate
from brognet.integrator import derive_seed, generate_training_data
from brognet.models import FAMILIES, init_params
from brognet.systems import default_spec
from brognet.training import TrainConfig, fit


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--kind", default="linear")
    p.add_argument("--n", type=int, default=5)
    p.add_argument("--epochs", type=int, default=60)
    p.add_argument("--seeds", type=int, nargs="+", default=[0])
    p.add_argument("--families", nargs="+", default=list(FAMILIES))
    p.add_argument("--n-init", type=int, default=10)
    p.add_argument("--seeds-per-init", type=int, default=1000)
    p.add_argument("--steps", type=int, default=100)
    p.add_argument("--out", default="baselines.csv")
    args = p.parse_args()

    spec = default_spec(args.kind, args.n)
    protocol = Protocol(args.n_init, args.seeds_per_init, args.steps)
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["seed", "family", "trained", "brownian_error", "gm_position_error", "gm_kl", "seconds"])
        for seed in args.seeds:
            data = generate_training_data(spec, 100, 100, seed=derive_seed(seed, "data"))
            runs = [("brognet", False)] + [(f, True) for f in args.families]
            for family, train in runs:
                t0 = time.time()
                if train:
                    model = fit(family, spec, data, TrainConfig(max_epochs=args.epochs, seed=seed)).params
                else:
                    model = init_params(family, spec, derive_seed(seed, "init"))
                rep = evaluate(model, spec, protocol, seed=derive_seed(seed, "eval"))
                row = [seed, family, train, rep.brownian_error, rep.gm_position_error, rep.gm_kl, round(time.time() - t0, 1)]
                w.writerow(row)
                fh.flush()
                print(*row, flush=True)


if __name__ == "__main__":
    main()
