"""End-to-end tests of the command-line runner.

Commands run in process through main(argv); every run writes into a
pytest tmp_path, so the tests double as determinism checks on the
on-disk outputs.
"""

import json

import numpy as np
import pytest

from spdm.cli import main
from spdm.io import read_spdt, write_spdt


def run(cmd, cfg, out_dir, extra=()):
    out_dir.mkdir(parents=True, exist_ok=True)
    argv = [cmd, "--out", str(out_dir)]
    if cfg is not None:
        cfg_path = out_dir / "config.json"
        cfg_path.write_text(json.dumps(cfg), "utf-8")
        argv += ["--config", str(cfg_path)]
    return main(argv + list(extra))


def base_config():
    return {
        "schedule": {"kind": "vp"},
        "group": {"name": "C4"},
        "data": {
            "components": [
                {"weight": 1.0, "mean": [1.2, 0.0], "variance": 0.05}
            ],
            "symmetrize": True,
            "n_samples": 200,
            "seed": 7,
        },
        "model": {"kind": "oracle+FA"},
    }


def read_rows(path):
    lines = path.read_text("utf-8").strip().split("\n")
    return lines[0].split(","), [line.split(",") for line in lines[1:]]


# ---- gen-data ------------------------------------------------------------


def test_gen_data_outputs(tmp_path):
    out = tmp_path / "run"
    assert run("gen-data", base_config(), out) == 0
    data = read_spdt(out / "data.spdt")
    assert data.shape == (200, 2)
    spec = json.loads((out / "data_spec.json").read_text("utf-8"))
    assert spec["seed"] == 7 and spec["n_samples"] == 200
    assert len(spec["config_hash"]) == 16
    assert spec["symmetrized"] is True
    counts = spec["orientation_counts"]
    assert sorted(counts) == ["e", "r1", "r2", "r3"]
    assert sum(counts.values()) == 200
    # symmetrized source spreads mass across all four orientations
    assert min(counts.values()) > 20
    manifest = json.loads((out / "gen-data_manifest.json").read_text("utf-8"))
    assert manifest["outputs"] == ["data.spdt", "data_spec.json"]
    assert manifest["seed"] == 7
    assert (out / "run.log").exists()


def test_gen_data_concentrated_without_symmetrize(tmp_path):
    cfg = base_config()
    cfg["data"]["symmetrize"] = False
    # keep the component away from the sector boundary at angle 0
    cfg["data"]["components"][0]["mean"] = [1.0, 0.45]
    assert run("gen-data", cfg, tmp_path / "run") == 0
    spec = json.loads((tmp_path / "run" / "data_spec.json").read_text("utf-8"))
    assert max(spec["orientation_counts"].values()) > 150


def test_gen_data_byte_identical_across_dirs(tmp_path):
    for name in ("a", "b"):
        assert run("gen-data", base_config(), tmp_path / name) == 0
    for fname in ("data.spdt", "data_spec.json", "gen-data_manifest.json"):
        assert (tmp_path / "a" / fname).read_bytes() == \
            (tmp_path / "b" / fname).read_bytes()


def test_gen_data_seed_override(tmp_path):
    assert run("gen-data", base_config(), tmp_path / "a") == 0
    assert run("gen-data", base_config(), tmp_path / "b", ["--seed", "99"]) == 0
    spec = json.loads((tmp_path / "b" / "data_spec.json").read_text("utf-8"))
    assert spec["seed"] == 99
    assert (tmp_path / "a" / "data.spdt").read_bytes() != \
        (tmp_path / "b" / "data.spdt").read_bytes()


# ---- error paths ---------------------------------------------------------


def test_unknown_config_key_exits_2(tmp_path):
    cfg = base_config()
    cfg["misspelled"] = 1
    assert run("gen-data", cfg, tmp_path / "run") == 2


def test_empty_components_exits_2(tmp_path):
    cfg = base_config()
    cfg["data"]["components"] = []
    assert run("gen-data", cfg, tmp_path / "run") == 2


def test_broken_json_exits_2(tmp_path):
    out = tmp_path / "run"
    out.mkdir()
    (out / "config.json").write_text("{oops", "utf-8")
    assert main(["gen-data", "--config", str(out / "config.json"),
                 "--out", str(out)]) == 2


def test_missing_config_file_exits_2(tmp_path):
    assert main(["gen-data", "--config", str(tmp_path / "none.json"),
                 "--out", str(tmp_path / "run")]) == 2


def test_missing_dataset_exits_2(tmp_path):
    cfg = base_config()
    cfg["train"] = {"steps": 5, "hidden": [8], "seed": 0}
    assert run("train", cfg, tmp_path / "run") == 2


def test_missing_checkpoint_exits_2(tmp_path):
    cfg = base_config()
    cfg["model"] = {"kind": "mlp"}
    cfg["sampler"] = {"steps": 5, "n_samples": 2, "seed": 0}
    assert run("sample", cfg, tmp_path / "run") == 2


def test_nan_dataset_exits_3(tmp_path):
    out = tmp_path / "run"
    out.mkdir()
    write_spdt(out / "data.spdt", np.full((32, 2), np.nan))
    cfg = base_config()
    cfg["train"] = {"steps": 5, "hidden": [8], "seed": 0,
                    "batch_size": 16, "learning_rate": 1e-3}
    assert run("train", cfg, out) == 3


# ---- train ---------------------------------------------------------------


def train_config(**extra):
    cfg = base_config()
    cfg["train"] = {"steps": 40, "hidden": [16], "seed": 0,
                    "batch_size": 32, "learning_rate": 1e-3, **extra}
    return cfg


def test_train_outputs(tmp_path):
    out = tmp_path / "run"
    cfg = train_config()
    assert run("gen-data", cfg, out) == 0
    assert run("train", cfg, out) == 0
    manifest = json.loads((out / "checkpoint.json").read_text("utf-8"))
    assert manifest["steps_done"] == 40
    assert manifest["mode"] == "plain"
    assert manifest["x_dim"] == 2 and manifest["hidden"] == [16]
    assert manifest["free_parameters"] > 0
    params = read_spdt(out / "checkpoint.spdt")
    ema = read_spdt(out / "checkpoint_ema.spdt")
    adam = read_spdt(out / "checkpoint_adam.spdt")
    assert params.shape == ema.shape
    assert adam.shape == (2, params.size)
    header, rows = read_rows(out / "loss.csv")
    assert header == ["step", "dsm_loss", "reg_loss", "config_hash", "seed"]
    assert len(rows) == 40
    assert all(np.isfinite(float(r[1])) for r in rows)


def test_train_reg_weight_zero_matches_plain(tmp_path):
    plain = train_config()
    reg0 = train_config(mode="regularized", reg_weight=0.0)
    for name, cfg in (("plain", plain), ("reg0", reg0)):
        out = tmp_path / name
        assert run("gen-data", cfg, out) == 0
        assert run("train", cfg, out) == 0
    assert (tmp_path / "plain" / "checkpoint.spdt").read_bytes() == \
        (tmp_path / "reg0" / "checkpoint.spdt").read_bytes()
    assert (tmp_path / "plain" / "checkpoint_ema.spdt").read_bytes() == \
        (tmp_path / "reg0" / "checkpoint_ema.spdt").read_bytes()


def test_train_resume_matches_straight_run(tmp_path):
    straight = tmp_path / "straight"
    cfg40 = train_config()
    assert run("gen-data", cfg40, straight) == 0
    assert run("train", cfg40, straight) == 0

    part = tmp_path / "part"
    cfg20 = train_config(steps=20)
    assert run("gen-data", cfg20, part) == 0
    assert run("train", cfg20, part) == 0
    resume = train_config(steps=20,
                          init_checkpoint=str(part / "checkpoint.json"))
    assert run("train", resume, part) == 0

    manifest = json.loads((part / "checkpoint.json").read_text("utf-8"))
    assert manifest["steps_done"] == 40
    for fname in ("checkpoint.spdt", "checkpoint_ema.spdt",
                  "checkpoint_adam.spdt"):
        assert (straight / fname).read_bytes() == (part / fname).read_bytes()


# ---- sample --------------------------------------------------------------


def sample_config(**sampler):
    cfg = base_config()
    cfg["sampler"] = {"lam": 1.0, "steps": 30, "n_samples": 8, "seed": 3,
                      **sampler}
    return cfg


def test_sample_equivariant_noise_outputs(tmp_path):
    cfg = sample_config(equivariant_noise=True)
    for name in ("a", "b"):
        out = tmp_path / name
        assert run("gen-data", cfg, out) == 0
        assert run("sample", cfg, out) == 0
    samples = read_spdt(tmp_path / "a" / "samples.spdt")
    assert samples.shape == (8, 2)
    assert np.all(np.isfinite(samples))
    summary = json.loads(
        (tmp_path / "a" / "sample_summary.json").read_text("utf-8"))
    assert summary["equivariant_noise"] is True
    assert summary["delta_x0"] <= 1e-8
    for fname in ("samples.spdt", "sample_summary.json",
                  "sample_manifest.json"):
        assert (tmp_path / "a" / fname).read_bytes() == \
            (tmp_path / "b" / fname).read_bytes()


def test_sample_plain_noise_breaks_chain_equivariance(tmp_path):
    out = tmp_path / "run"
    cfg = sample_config(equivariant_noise=False)
    assert run("gen-data", cfg, out) == 0
    assert run("sample", cfg, out) == 0
    summary = json.loads((out / "sample_summary.json").read_text("utf-8"))
    assert summary["delta_x0"] > 1e-3


def test_sample_ode_has_no_delta_probe(tmp_path):
    out = tmp_path / "run"
    cfg = sample_config(lam=0.0)
    assert run("gen-data", cfg, out) == 0
    assert run("sample", cfg, out) == 0
    summary = json.loads((out / "sample_summary.json").read_text("utf-8"))
    assert "delta_x0" not in summary
    assert summary["lam"] == 0.0


# ---- bridge --------------------------------------------------------------


def test_bridge_outputs(tmp_path):
    cfg = base_config()
    del cfg["data"]
    cfg["model"] = {"kind": "oracle+FA",
                    "coupling": {"matrix": 0.5, "noise_var": 0.04}}
    cfg["sampler"] = {"tau": 1.0, "steps": 30, "n_samples": 6, "seed": 4,
                      "equivariant_noise": True}
    for name in ("a", "b"):
        assert run("bridge", cfg, tmp_path / name) == 0
    samples = read_spdt(tmp_path / "a" / "bridge_samples.spdt")
    assert samples.shape == (6, 2)
    assert np.all(np.isfinite(samples))
    summary = json.loads(
        (tmp_path / "a" / "bridge_summary.json").read_text("utf-8"))
    assert summary["delta_x0"] <= 1e-12
    for fname in ("bridge_samples.spdt", "bridge_summary.json"):
        assert (tmp_path / "a" / fname).read_bytes() == \
            (tmp_path / "b" / fname).read_bytes()


def test_bridge_without_coupling_exits_2(tmp_path):
    cfg = base_config()
    del cfg["data"]
    cfg["sampler"] = {"steps": 5, "n_samples": 2}
    assert run("bridge", cfg, tmp_path / "run") == 2


# ---- nll -----------------------------------------------------------------


def test_nll_outputs_and_thread_invariance(tmp_path):
    cfg = base_config()
    cfg["data"]["n_samples"] = 64
    cfg["nll"] = {"points": 4, "steps": 50}
    for name, extra in (("a", ["--threads", "1"]), ("b", ["--threads", "2"])):
        out = tmp_path / name
        assert run("gen-data", cfg, out) == 0
        assert run("nll", cfg, out, extra) == 0
    header, rows = read_rows(tmp_path / "a" / "nll.csv")
    assert header == ["index", "log_likelihood", "nll_nats_per_dim",
                      "bits_per_dim", "config_hash", "seed"]
    assert len(rows) == 4
    vals = np.array([[float(r[1]), float(r[2]), float(r[3])] for r in rows])
    assert np.all(np.isfinite(vals))
    summary = json.loads((tmp_path / "a" / "nll_summary.json").read_text("utf-8"))
    assert summary["points"] == 4
    assert summary["mean_nll_nats_per_dim"] == pytest.approx(
        np.mean(vals[:, 1]), abs=1e-12)
    # worker count must not change the numbers
    assert (tmp_path / "a" / "nll.csv").read_bytes() == \
        (tmp_path / "b" / "nll.csv").read_bytes()


# ---- metrics -------------------------------------------------------------


def metrics_config():
    cfg = base_config()
    cfg["data"]["n_samples"] = 400
    cfg["sampler"] = {"lam": 0.0, "steps": 30, "n_samples": 200, "seed": 5}
    cfg["metrics"] = ["fid", "inv_fid", "energy"]
    return cfg


def test_metrics_outputs(tmp_path):
    cfg = metrics_config()
    for name in ("a", "b"):
        out = tmp_path / name
        assert run("gen-data", cfg, out) == 0
        assert run("sample", cfg, out) == 0
        assert run("metrics", cfg, out) == 0
    header, rows = read_rows(tmp_path / "a" / "metrics.csv")
    assert header == ["name", "value", "config_hash", "seed"]
    names = [r[0] for r in rows]
    assert names == ["fid", "inv_fid", "energy_stat", "energy_p"]
    values = {r[0]: float(r[1]) for r in rows}
    assert all(np.isfinite(v) for v in values.values())
    assert values["fid"] >= 0 and values["inv_fid"] >= 0
    assert 0 < values["energy_p"] <= 1
    svg = (tmp_path / "a" / "scatter.svg").read_text("utf-8")
    assert "config" in svg and "seed" in svg
    for fname in ("metrics.csv", "scatter.svg"):
        assert (tmp_path / "a" / fname).read_bytes() == \
            (tmp_path / "b" / fname).read_bytes()


def test_metrics_nll_table_invariance(tmp_path):
    out = tmp_path / "run"
    cfg = base_config()
    cfg["data"]["n_samples"] = 32
    cfg["sampler"] = {"lam": 0.0, "steps": 10, "n_samples": 8, "seed": 5}
    cfg["metrics"] = ["nll_table"]
    cfg["nll"] = {"points": 2, "steps": 30}
    assert run("gen-data", cfg, out) == 0
    assert run("sample", cfg, out) == 0
    assert run("metrics", cfg, out) == 0
    header, rows = read_rows(out / "nll_table.csv")
    assert header == ["kappa", "mean_nll_nats_per_dim", "config_hash", "seed"]
    assert [r[0] for r in rows] == ["e", "r1", "r2", "r3"]
    vals = [float(r[1]) for r in rows]
    # symmetrized oracle: likelihood does not depend on orientation
    assert max(vals) - min(vals) < 1e-6


def test_metrics_inv_fid_without_group_exits_2(tmp_path):
    out = tmp_path / "run"
    cfg = metrics_config()
    del cfg["group"]
    cfg["data"]["symmetrize"] = False
    cfg["model"] = {"kind": "oracle"}
    cfg["metrics"] = ["inv_fid"]
    assert run("gen-data", cfg, out) == 0
    assert run("sample", cfg, out) == 0
    assert run("metrics", cfg, out) == 2


# ---- mlp pipeline --------------------------------------------------------


def test_mlp_sample_and_nll_pipeline(tmp_path):
    out = tmp_path / "run"
    cfg = train_config(steps=60, hidden=[16, 16])
    cfg["model"] = {"kind": "mlp+FA"}
    cfg["sampler"] = {"lam": 1.0, "steps": 20, "n_samples": 4, "seed": 1}
    cfg["nll"] = {"points": 2, "steps": 40}
    assert run("gen-data", cfg, out) == 0
    assert run("train", cfg, out) == 0
    assert run("sample", cfg, out) == 0
    samples = read_spdt(out / "samples.spdt")
    assert samples.shape == (4, 2) and np.all(np.isfinite(samples))
    assert run("nll", cfg, out) == 0
    _, rows = read_rows(out / "nll.csv")
    assert len(rows) == 2
    assert all(np.isfinite(float(r[1])) for r in rows)


# ---- verify --------------------------------------------------------------


def test_verify_command(tmp_path, capsys):
    out = tmp_path / "run"
    out.mkdir()
    assert main(["verify", "--out", str(out)]) == 0
    doc = json.loads((out / "verify.json").read_text("utf-8"))
    assert doc["all_passed"] is True
    assert len(doc["checks"]) >= 30
    printed = capsys.readouterr().out
    assert printed.count("PASS") >= len(doc["checks"])
    assert "FAIL" not in printed
