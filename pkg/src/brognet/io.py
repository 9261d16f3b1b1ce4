"""On-disk formats: parameter containers, trajectory CSVs, datasets, reports.

Parameter container layout::

    BROGNET-PARAMS <version>\\n
    <header byte length>\\n
    <JSON header>\\n
    <little-endian float64 blobs, back to back>

The header records family, architecture, a manifest of
``{name, shape, offset, nbytes}`` (offsets relative to the blob section) and
any extra metadata.
"""
from __future__ import annotations

import csv
import hashlib
import json
from pathlib import Path

import numpy as np

from .autodiff import AdamState
from .evaluation import MetricReport
from .integrator import StepPairDataset, TrajectoryEnsemble
from .models import ModelParams
from .systems import SystemSpec
from .training import Checkpoint

MAGIC = b"BROGNET-PARAMS"
FORMAT_VERSION = 1
ENSEMBLE_SCHEMA = 1


class FormatError(ValueError):
    pass


def _write_container(path, header: dict, blobs: dict[str, np.ndarray]) -> None:
    manifest, chunks, offset = [], [], 0
    for name, arr in blobs.items():
        raw = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        manifest.append({"name": name, "shape": list(np.shape(arr)), "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    header = dict(header, format_version=FORMAT_VERSION, manifest=manifest)
    text = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC + b" %d\n" % FORMAT_VERSION)
        fh.write(b"%d\n" % len(text))
        fh.write(text + b"\n")
        for raw in chunks:
            fh.write(raw)


def _read_container(path) -> tuple[dict, dict[str, np.ndarray]]:
    data = Path(path).read_bytes()
    first, rest = data.split(b"\n", 1)
    magic, _, version = first.partition(b" ")
    if magic != MAGIC:
        raise FormatError(f"{path} is not a parameter container")
    if int(version) != FORMAT_VERSION:
        raise FormatError(f"unsupported container version {int(version)}")
    length_line, rest = rest.split(b"\n", 1)
    length = int(length_line)
    header = json.loads(rest[:length])
    body = rest[length + 1 :]
    blobs = {}
    for entry in header["manifest"]:
        raw = body[entry["offset"] : entry["offset"] + entry["nbytes"]]
        blobs[entry["name"]] = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(entry["shape"])
    return header, blobs


def save_params(params: ModelParams, path, extra: dict | None = None) -> None:
    _write_container(path, {"family": params.family, "arch": params.arch, "extra": extra or {}}, params.params)


def load_params(path) -> ModelParams:
    header, blobs = _read_container(path)
    return ModelParams(header["family"], header["arch"], blobs)


def save_checkpoint(ck: Checkpoint, path) -> None:
    """Best parameters first, plus current parameters and Adam moments."""
    best = ck.best_params if ck.best_params is not None else ck.params
    blobs = dict(best.params)
    for k, v in ck.params.params.items():
        blobs[f"current/{k}"] = v
    for k in ck.opt_state.m:
        blobs[f"adam_m/{k}"] = ck.opt_state.m[k]
        blobs[f"adam_v/{k}"] = ck.opt_state.v[k]
    extra = {
        "epoch": ck.epoch,
        "adam_step": ck.opt_state.step,
        "best_val": ck.best_val,
        "ref_val": ck.ref_val,
        "stall": ck.stall,
        "history": ck.history,
    }
    _write_container(path, {"family": best.family, "arch": best.arch, "extra": extra}, blobs)


def load_checkpoint(path) -> Checkpoint:
    header, blobs = _read_container(path)
    fam, arch, extra = header["family"], header["arch"], header["extra"]
    plain = {k: v for k, v in blobs.items() if not k.startswith(("current/", "adam_m/", "adam_v/"))}
    current = {k[len("current/") :]: v for k, v in blobs.items() if k.startswith("current/")}
    m = {k[len("adam_m/") :]: v for k, v in blobs.items() if k.startswith("adam_m/")}
    v = {k[len("adam_v/") :]: val for k, val in blobs.items() if k.startswith("adam_v/")}
    return Checkpoint(
        params=ModelParams(fam, arch, current or plain),
        opt_state=AdamState(m, v, int(extra.get("adam_step", 0))),
        epoch=int(extra.get("epoch", 0)),
        history=[tuple(h) for h in extra.get("history", [])],
        best_params=ModelParams(fam, arch, plain),
        best_val=float(extra.get("best_val", float("inf"))),
        ref_val=float(extra.get("ref_val", float("inf"))),
        stall=int(extra.get("stall", 0)),
    )


# ---------------------------------------------------------------- trajectories

def write_ensemble(ens: TrajectoryEnsemble, csv_path, meta_path) -> None:
    T, S1, n, _ = ens.positions.shape
    with open(csv_path, "w", newline="") as fh:
        fh.write("traj_id,step,particle_id,x,y,z\n")
        flat = ens.positions.reshape(-1, 3)
        t_idx, s_idx, p_idx = np.unravel_index(np.arange(T * S1 * n), (T, S1, n))
        for t, s, p, (x, y, z) in zip(t_idx, s_idx, p_idx, flat):
            fh.write(f"{t},{s},{p},{x:.17g},{y:.17g},{z:.17g}\n")
    meta = {
        "schema_version": ENSEMBLE_SCHEMA,
        "spec": ens.spec.to_dict(),
        "seeds": [int(s) for s in ens.seeds],
        "diverged": [bool(d) for d in ens.diverged],
        "dt": ens.spec.dt,
        "n_steps": S1 - 1,
        "n_traj": T,
    }
    Path(meta_path).write_text(json.dumps(meta, indent=2, sort_keys=True))


def read_ensemble(csv_path, meta_path) -> TrajectoryEnsemble:
    meta = json.loads(Path(meta_path).read_text())
    if meta.get("schema_version") != ENSEMBLE_SCHEMA:
        raise FormatError("unsupported ensemble schema")
    spec = SystemSpec.from_dict(meta["spec"])
    T, S1, n = meta["n_traj"], meta["n_steps"] + 1, spec.n_particles
    table = np.loadtxt(csv_path, delimiter=",", skiprows=1, ndmin=2)
    pos = np.empty((T, S1, n, 3))
    idx = table[:, :3].astype(int)
    pos[idx[:, 0], idx[:, 1], idx[:, 2]] = table[:, 3:]
    return TrajectoryEnsemble(spec, pos, meta["seeds"], np.asarray(meta["diverged"], dtype=bool))


# ---------------------------------------------------------------- datasets

def save_dataset(ds: StepPairDataset, path) -> None:
    np.savez(
        path,
        inputs=ds.inputs,
        targets=ds.targets,
        prev=ds.prev,
        has_prev=ds.has_prev,
        traj_ids=ds.traj_ids if ds.traj_ids is not None else np.zeros(0, dtype=int),
        spec=np.array(json.dumps(ds.spec.to_dict(), sort_keys=True)),
    )


def load_dataset(path) -> StepPairDataset:
    with np.load(path) as z:
        spec = SystemSpec.from_dict(json.loads(str(z["spec"])))
        traj = z["traj_ids"]
        return StepPairDataset(
            spec, z["inputs"], z["targets"], z["prev"], z["has_prev"], traj if traj.size else None
        )


def dataset_digest(ds: StepPairDataset) -> str:
    h = hashlib.sha256()
    h.update(json.dumps(ds.spec.to_dict(), sort_keys=True).encode())
    for arr in (ds.inputs, ds.targets, ds.prev, ds.has_prev.astype(np.uint8)):
        h.update(np.ascontiguousarray(arr).tobytes())
    return h.hexdigest()


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# ---------------------------------------------------------------- reports

def write_history(history, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "train_loss", "val_loss"])
        for epoch, tr, va in history:
            w.writerow([epoch, f"{tr:.17g}", f"{va:.17g}"])


def write_report(report: MetricReport, csv_path, summary_path) -> None:
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "position_error", "kl"])
        for s, pe, kl in zip(report.steps, report.position_error, report.kl):
            w.writerow([int(s), f"{pe:.17g}", f"{kl:.17g}"])
    Path(summary_path).write_text(json.dumps(report.summary(), indent=2, sort_keys=True))
