import json

import numpy as np
import pytest

from brognet.evaluation import MetricReport
from brognet.integrator import generate_ensemble, generate_training_data
from brognet.io import (
    FormatError,
    dataset_digest,
    load_checkpoint,
    load_dataset,
    load_params,
    read_ensemble,
    save_checkpoint,
    save_dataset,
    save_params,
    write_ensemble,
    write_history,
    write_report,
)
from brognet.models import init_params
from brognet.systems import default_spec
from brognet.training import TrainConfig, fit


def test_params_round_trip_bit_exact(tmp_path):
    spec = default_spec("binary", 10)
    for family in ("brognet", "bfgn", "nn"):
        p = init_params(family, spec, 3)
        save_params(p, tmp_path / f"{family}.bin")
        q = load_params(tmp_path / f"{family}.bin")
        assert q.family == family and q.arch == p.arch
        assert set(q.params) == set(p.params)
        for k in p.params:
            assert q.params[k].tobytes() == p.params[k].tobytes()


def test_rejects_foreign_file(tmp_path):
    path = tmp_path / "junk.bin"
    path.write_bytes(b"hello\nworld")
    with pytest.raises(FormatError):
        load_params(path)


def test_checkpoint_resumes_identically(tmp_path):
    spec = default_spec("linear", 5)
    data = generate_training_data(spec, n_traj=4, points_per_traj=10, seed=0)
    full = fit("brognet", spec, data, TrainConfig(max_epochs=3, seed=2))
    part = fit("brognet", spec, data, TrainConfig(max_epochs=1, seed=2))
    save_checkpoint(part.checkpoint, tmp_path / "ck.bin")
    ck = load_checkpoint(tmp_path / "ck.bin")
    assert ck.epoch == 1 and ck.history == part.history
    resumed = fit("brognet", spec, data, TrainConfig(max_epochs=3, seed=2), resume=ck)
    assert resumed.history == full.history
    for k in full.params.params:
        assert np.array_equal(resumed.params.params[k], full.params.params[k])


def test_checkpoint_best_params_loadable_as_params(tmp_path):
    spec = default_spec("linear", 5)
    data = generate_training_data(spec, n_traj=3, points_per_traj=10, seed=0)
    res = fit("bdgnn", spec, data, TrainConfig(max_epochs=2))
    save_checkpoint(res.checkpoint, tmp_path / "ck.bin")
    best = load_checkpoint(tmp_path / "ck.bin").best_params
    for k in res.params.params:
        assert best.params[k].tobytes() == res.params.params[k].tobytes()


def test_ensemble_csv_round_trip(tmp_path):
    spec = default_spec("linear", 3)
    ens = generate_ensemble(spec, 2, 4, seed=1)
    write_ensemble(ens, tmp_path / "t.csv", tmp_path / "t.json")
    back = read_ensemble(tmp_path / "t.csv", tmp_path / "t.json")
    assert np.array_equal(back.positions, ens.positions)
    assert back.seeds == ens.seeds and back.spec == spec
    header = (tmp_path / "t.csv").read_text().splitlines()[0]
    assert header == "traj_id,step,particle_id,x,y,z"
    meta = json.loads((tmp_path / "t.json").read_text())
    assert meta["schema_version"] == 1 and meta["n_steps"] == 4


def test_ensemble_schema_check(tmp_path):
    spec = default_spec("linear", 2)
    ens = generate_ensemble(spec, 1, 1, seed=0)
    write_ensemble(ens, tmp_path / "t.csv", tmp_path / "t.json")
    meta = json.loads((tmp_path / "t.json").read_text())
    meta["schema_version"] = 99
    (tmp_path / "t.json").write_text(json.dumps(meta))
    with pytest.raises(FormatError):
        read_ensemble(tmp_path / "t.csv", tmp_path / "t.json")


def test_dataset_round_trip_and_digest(tmp_path):
    spec = default_spec("binary", 10)
    ds = generate_training_data(spec, n_traj=2, points_per_traj=5, seed=4)
    save_dataset(ds, tmp_path / "d.npz")
    back = load_dataset(tmp_path / "d.npz")
    assert back.spec == spec
    assert dataset_digest(back) == dataset_digest(ds)
    assert np.array_equal(back.traj_ids, ds.traj_ids)
    other = generate_training_data(spec, n_traj=2, points_per_traj=5, seed=5)
    assert dataset_digest(other) != dataset_digest(ds)


def test_report_and_history_csv(tmp_path):
    rep = MetricReport(np.arange(1, 4), np.array([0.1, 0.2, 1 / 3]), np.array([1e-3, 2e-3, 3e-3]), 0.01, 10)
    write_report(rep, tmp_path / "r.csv", tmp_path / "r.json")
    rows = (tmp_path / "r.csv").read_text().splitlines()
    assert rows[0] == "step,position_error,kl"
    assert float(rows[3].split(",")[1]) == 1 / 3
    assert json.loads((tmp_path / "r.json").read_text())["n_traj"] == 10
    write_history([(0, 1.5, 2.5)], tmp_path / "h.csv")
    assert (tmp_path / "h.csv").read_text().splitlines() == ["epoch,train_loss,val_loss", "0,1.5,2.5"]
