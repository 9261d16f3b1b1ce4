"""``brognet`` command line: generate, train, evaluate, rollout, generalize, sweep.

Exit codes: 0 success, 1 validation error, 2 runtime or numerical error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import io
from .config import ConfigError, ExperimentConfig, load_config
from .evaluation import EvaluationError, MetricReport, evaluate, zero_shot
from .integrator import (
    NumericalError,
    derive_seed,
    extract_pairs,
    generate_ensemble,
    random_initial_condition,
    simulate,
)
from .models import GRAPH_FAMILIES, GAMMA_FLOOR, CapabilityError, check_compatible, model_drift
from .training import TrainConfig, TrainingError, fit

log = logging.getLogger("brognet")

DEFAULT_SWEEP_SIZES = (100, 500, 1000, 5000, 10000)
DEFAULT_SIZE_TARGETS = (50, 500)
DEFAULT_KBT_TARGETS = (10.0, 100.0)

# flag -> (section, key)
FLAG_MAP = {
    "kind": ("system", "kind"),
    "n": ("system", "n"),
    "kbt": ("system", "kbt"),
    "dt": ("system", "dt"),
    "n_traj": ("system", "n_traj"),
    "points_per_traj": ("system", "points_per_traj"),
    "family": ("model", "family"),
    "lr": ("train", "lr"),
    "batch_size": ("train", "batch_size"),
    "max_epochs": ("train", "max_epochs"),
    "patience": ("train", "patience"),
    "sample_noise_in_training": ("train", "sample_noise_in_training"),
    "n_init": ("eval", "n_init"),
    "seeds": ("eval", "seeds_per_init"),
    "steps": ("eval", "steps"),
    "out_dir": ("paths", "out_dir"),
    "dataset": ("paths", "dataset"),
    "checkpoint": ("paths", "checkpoint"),
    "seed": ("run", "seed"),
    "threads": ("run", "threads"),
}


class ValidationError(ValueError):
    pass


def _common(p: argparse.ArgumentParser, system_flags: bool = True) -> None:
    p.add_argument("--config", help="INI config file")
    p.add_argument("--out-dir", dest="out_dir")
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int)
    if system_flags:
        p.add_argument("--kind", choices=["linear", "nonlinear", "binary"])
        p.add_argument("--n", type=int)
        p.add_argument("--kbt", type=float)
        p.add_argument("--dt", type=float)
    p.add_argument("--family", choices=["brognet", "bdgnn", "bfgn", "bnn", "nn"])
    p.add_argument("--n-traj", dest="n_traj", type=int)
    p.add_argument("--points-per-traj", dest="points_per_traj", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--max-epochs", dest="max_epochs", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--sample-noise-in-training", dest="sample_noise_in_training", action="store_true", default=None)
    p.add_argument("--n-init", dest="n_init", type=int)
    p.add_argument("--seeds", type=int, help="seeds per initial condition")
    p.add_argument("--steps", type=int)
    p.add_argument("--dataset")
    p.add_argument("--checkpoint")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="brognet", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_ in (
        ("generate", "simulate ground truth and write the training dataset"),
        ("train", "fit a model on a dataset"),
        ("evaluate", "score a checkpoint on fresh roll-outs"),
        ("rollout", "dump a predicted trajectory ensemble"),
        ("sweep", "train and evaluate across dataset sizes"),
    ):
        _common(sub.add_parser(name, help=help_))
    gen = sub.add_parser("generalize", help="zero-shot evaluation at other sizes/temperatures")
    _common(gen, system_flags=False)
    gen.add_argument("--kind", choices=["linear", "nonlinear", "binary"])
    gen.add_argument("--train-n", dest="n", type=int, help="system size the checkpoint was trained on")
    gen.add_argument("--n", dest="target_n", type=int, action="append", help="target size (repeatable)")
    gen.add_argument("--kbt", dest="target_kbt", type=float, action="append", help="target kBT (repeatable)")
    sub.choices["sweep"].add_argument("--sizes", type=str, help="comma-separated dataset sizes")
    sub.choices["rollout"].add_argument("--rollout-traj", dest="rollout_traj", type=int, default=10)
    return parser


def config_from_args(args) -> ExperimentConfig:
    overrides = {}
    for flag, key in FLAG_MAP.items():
        if hasattr(args, flag):
            overrides[key] = getattr(args, flag)
    try:
        return load_config(args.config, overrides)
    except (ConfigError, ValueError, OSError) as exc:
        raise ValidationError(str(exc)) from exc


def _out(cfg: ExperimentConfig) -> Path:
    out = Path(cfg.paths.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _train_config(cfg: ExperimentConfig, seed: int | None = None) -> TrainConfig:
    d = asdict(cfg.train)
    d["seed"] = cfg.run.seed if seed is None else seed
    return TrainConfig(**d)


def _require(path: str, what: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise ValidationError(f"{what} not found: {path}")
    return p


# ---------------------------------------------------------------- commands

def cmd_generate(cfg: ExperimentConfig) -> dict:
    spec = cfg.spec()
    out = _out(cfg)
    ens = generate_ensemble(spec, cfg.system.n_traj, cfg.system.points_per_traj, derive_seed(cfg.run.seed, "data"))
    ds = extract_pairs(ens)
    io.write_ensemble(ens, out / "trajectories.csv", out / "trajectories.meta.json")
    ds_path = Path(cfg.paths.dataset) if cfg.paths.dataset else out / "dataset.npz"
    io.save_dataset(ds, ds_path)
    digest = io.dataset_digest(ds)
    print(f"dataset {ds_path} pairs={len(ds)} digest={digest}")
    return {"dataset": str(ds_path), "digest": digest, "pairs": len(ds)}


def cmd_train(cfg: ExperimentConfig) -> dict:
    out = Path(cfg.paths.out_dir)
    ds_path = _require(cfg.paths.dataset or str(out / "dataset.npz"), "dataset")
    ds = io.load_dataset(ds_path)
    spec = ds.spec
    family = cfg.model.family
    out = _out(cfg)
    result = fit(family, spec, ds, _train_config(cfg))
    ck_path = Path(cfg.paths.checkpoint) if cfg.paths.checkpoint else out / f"{family}.ckpt"
    io.save_checkpoint(result.checkpoint, ck_path)
    hist_path = out / f"{family}.history.csv"
    io.write_history(result.history, hist_path)
    manifest = {
        "config": cfg.to_ini(),
        "family": family,
        "dataset": str(ds_path),
        "dataset_digest": io.dataset_digest(ds),
        "checkpoint": str(ck_path),
        "checkpoint_sha256": io.file_digest(ck_path),
        "history_sha256": io.file_digest(hist_path),
        "epochs": len(result.history),
    }
    (out / f"{family}.manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    print(f"checkpoint {ck_path} family={family} epochs={len(result.history)}")
    return manifest


def _load_model(cfg: ExperimentConfig):
    out = Path(cfg.paths.out_dir)
    path = _require(cfg.paths.checkpoint or str(out / f"{cfg.model.family}.ckpt"), "checkpoint")
    try:
        return io.load_checkpoint(path).best_params
    except (io.FormatError, KeyError, ValueError) as exc:
        raise ValidationError(f"unreadable checkpoint {path}: {exc}") from exc


def _write_report(report: MetricReport, out: Path, stem: str) -> None:
    io.write_report(report, out / f"{stem}.csv", out / f"{stem}.json")
    s = report.summary()
    print(
        f"{stem}: brownian_error={s['brownian_error']:.6g} gm_position_error={s['gm_position_error']:.6g} "
        f"gm_kl={s['gm_kl']:.6g} diverged={s['n_diverged']}/{s['n_traj']}"
    )


def cmd_evaluate(cfg: ExperimentConfig) -> MetricReport:
    model = _load_model(cfg)
    spec = cfg.spec()
    try:
        check_compatible(model, spec)
    except ValueError as exc:
        raise ValidationError(str(exc)) from exc
    out = _out(cfg)
    report = evaluate(model, spec, cfg.protocol(), derive_seed(cfg.run.seed, "eval"))
    _write_report(report, out, f"{model.family}.report")
    return report


def cmd_rollout(cfg: ExperimentConfig, n_traj: int) -> Path:
    model = _load_model(cfg)
    spec = cfg.spec()
    try:
        check_compatible(model, spec)
    except ValueError as exc:
        raise ValidationError(str(exc)) from exc
    out = _out(cfg)
    seed = derive_seed(cfg.run.seed, "rollout")
    X0 = np.stack([random_initial_condition(spec, derive_seed(seed, f"init/{i}")) for i in range(n_traj)])
    drift = model_drift(model, spec)

    def safe(X, X_prev=None):
        F, g = drift(X, X_prev)
        return F, np.maximum(g, GAMMA_FLOOR)

    seeds = [derive_seed(seed, f"noise/{i}") for i in range(n_traj)]
    ens = simulate(spec, X0, safe, cfg.eval.steps, seeds, on_divergence="mask")
    path = out / f"{model.family}.rollout.csv"
    io.write_ensemble(ens, path, out / f"{model.family}.rollout.meta.json")
    print(f"rollout {path} trajectories={n_traj} steps={cfg.eval.steps} diverged={int(ens.diverged.sum())}")
    return path


def cmd_generalize(cfg: ExperimentConfig, sizes, kbts) -> list[MetricReport]:
    model = _load_model(cfg)
    if model.family not in GRAPH_FAMILIES:
        raise ValidationError(f"{model.family} is not inductive; zero-shot evaluation needs a graph model")
    train_spec = cfg.spec()
    if sizes is None and kbts is None:
        sizes, kbts = DEFAULT_SIZE_TARGETS, DEFAULT_KBT_TARGETS
    out = _out(cfg)
    reports = []
    seed = derive_seed(cfg.run.seed, "eval")
    for n in sizes or ():
        r = zero_shot(model, train_spec, n=n, protocol=cfg.protocol(), seed=seed)
        _write_report(r, out, f"{model.family}.n{n}.report")
        reports.append(r)
    for kbt in kbts or ():
        r = zero_shot(model, train_spec, kbt=kbt, protocol=cfg.protocol(), seed=seed)
        _write_report(r, out, f"{model.family}.kbt{kbt:g}.report")
        reports.append(r)
    return reports


def cmd_sweep(cfg: ExperimentConfig, sizes) -> Path:
    spec = cfg.spec()
    out = _out(cfg)
    rows = []
    ppt = cfg.system.points_per_traj
    for size in sizes:
        n_traj = max(1, -(-size // ppt))
        ens = generate_ensemble(spec, n_traj, ppt, derive_seed(cfg.run.seed, f"sweep-data/{size}"))
        ds = extract_pairs(ens).subset(np.arange(min(size, n_traj * ppt)))
        result = fit(cfg.model.family, spec, ds, _train_config(cfg, derive_seed(cfg.run.seed, f"sweep-train/{size}")))
        report = evaluate(result.params, spec, cfg.protocol(), derive_seed(cfg.run.seed, "eval"))
        s = report.summary()
        rows.append((size, cfg.model.family, s["brownian_error"], s["gm_position_error"], s["gm_kl"], len(result.history)))
        print(f"size={size} gm_kl={s['gm_kl']:.6g} brownian_error={s['brownian_error']:.6g}")
    path = out / f"{cfg.model.family}.sweep.csv"
    with open(path, "w") as fh:
        fh.write("dataset_size,family,brownian_error,gm_position_error,gm_kl,epochs\n")
        for r in rows:
            fh.write(f"{r[0]},{r[1]},{r[2]:.17g},{r[3]:.17g},{r[4]:.17g},{r[5]}\n")
    return path


def _parse_sizes(text: str | None) -> tuple[int, ...]:
    if not text:
        return DEFAULT_SWEEP_SIZES
    try:
        sizes = tuple(int(s) for s in text.split(",") if s.strip())
    except ValueError as exc:
        raise ValidationError(f"bad --sizes {text!r}") from exc
    if not sizes or min(sizes) < 1:
        raise ValidationError("--sizes needs positive integers")
    return sizes


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on bad usage; that is a validation error here
        return 0 if exc.code in (0, None) else 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = config_from_args(args)
        if args.command == "generate":
            cmd_generate(cfg)
        elif args.command == "train":
            cmd_train(cfg)
        elif args.command == "evaluate":
            cmd_evaluate(cfg)
        elif args.command == "rollout":
            cmd_rollout(cfg, args.rollout_traj)
        elif args.command == "generalize":
            cmd_generalize(cfg, args.target_n, args.target_kbt)
        elif args.command == "sweep":
            cmd_sweep(cfg, _parse_sizes(args.sizes))
    except (ValidationError, CapabilityError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (NumericalError, TrainingError, EvaluationError, OSError, RuntimeError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
