import csv
import json
import subprocess
import sys

import pytest

from mlcurv import cli, datagen

TINY = """
[spheres]
n_sph = 40
[train.ns]
max_epochs = 3
[split]
n_folds = 5
groups = [3, 1, 1]
[preprocess]
m_iota_ns = 10
[merge]
nbins = 5
"""


@pytest.fixture(scope="module")
def tiny(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    cfg = d / "tiny.toml"
    cfg.write_text(TINY)
    return d, str(cfg)


def run(*argv):
    return cli.run([str(a) for a in argv])


@pytest.fixture(scope="module")
def ns_pipeline(tiny):
    d, cfg = tiny
    out = d / "ns"
    common = ["--config", cfg, "--workers", "1", "--out", out]
    assert run("gen-spheres", *common) == 0
    assert run("merge", out / "spheres_ns.c3ds", "--class", "ns", "--fractions", "1.0", *common) == 0
    assert run("split", out / "merged_ns.c3ds", *common) == 0
    assert run("fit-preprocess", out / "train_ns.c3ds", *common) == 0
    train = ["train", "--class", "ns", "--train", out / "train_ns.c3ds", "--validation",
             out / "validation_ns.c3ds", "--stats", out / "stats_ns.json", *common]
    assert run(*train) == 0
    return out, train


def test_gen_spheres_same_seed_is_byte_identical(tiny):
    d, cfg = tiny
    for sub in ("a", "b"):
        assert run("gen-spheres", "--config", cfg, "--seed", 7, "--workers", 1, "--out", d / sub) == 0
    a, b = (d / s / "spheres_ns.c3ds" for s in ("a", "b"))
    assert a.read_bytes() == b.read_bytes()
    assert cli.sha256(a) == cli.sha256(b)


def test_config_precedence(tiny, tmp_path):
    d, cfg = tiny
    over = tmp_path / "over.toml"
    over.write_text("seed = 3\n[spheres]\nn_sph = 10\nnu = 5\n")
    argv = ["gen-spheres", "--config", over, "--set", "spheres.n_sph=8", "--seed", 11, "--workers", 1,
            "--out", tmp_path]
    assert run(*argv) == 0
    man = json.loads((tmp_path / "gen-spheres.manifest.json").read_text())
    c = man["config"]
    # flag > --set > config file > profile
    assert man["seed"] == 11 and c["seed"] == 11
    assert c["spheres"]["n_sph"] == 8
    assert c["spheres"]["nu"] == 5
    assert c["spheres"]["n_per_sph"] == 4 and c["profile"] == "desk"
    assert len(datagen.read_dataset(tmp_path / "spheres_ns.c3ds")) == 8 * 4
    for key in ("argv", "versions", "inputs", "outputs"):
        assert key in man
    assert "time" not in json.dumps(man["outputs"])


def test_paper_profile_values():
    cfg = cli.load_profile("paper")
    assert cfg["spheres"]["n_sph"] == 200000 and cfg["spheres"]["n_per_sph"] == 10
    assert cfg["train"]["ns"]["n_h"] == 140


@pytest.mark.parametrize("argv,code", [
    (["frobnicate"], 2),
    (["gen-spheres", "--set", "spheres.bogus=1"], 2),
    (["gen-spheres", "--set", "spheres.n_sph=many"], 2),
    (["gen-spheres", "--set", "nodot"], 2),
    (["gen-spheres", "--config", "/nonexistent/x.toml"], 2),
    (["eval-geometry", "ellipsoid", "--models", "/nonexistent"], 3),
    (["split", "/nonexistent/x.c3ds"], 3),
])
def test_exit_codes(argv, code, tmp_path):
    assert run(*argv, "--out", tmp_path) == code


def test_class_mismatch_is_artifact_error(ns_pipeline, tmp_path):
    out, _ = ns_pipeline
    assert run("merge", out / "spheres_ns.c3ds", "--class", "sd", "--fractions", "1.0", "--out", tmp_path) == 3


def test_degenerate_data_is_numeric_error(tiny, tmp_path):
    d, cfg = tiny
    assert run("gen-spheres", "--config", cfg, "--set", "spheres.n_sph=1", "--workers", 1, "--out", tmp_path) == 0
    assert run("split", tmp_path / "spheres_ns.c3ds", "--set", "split.n_folds=20", "--out", tmp_path) == 0
    # an empty validation subset cannot be fitted
    assert run("fit-preprocess", tmp_path / "validation_ns.c3ds", "--out", tmp_path) == 4


def test_pipeline_outputs(ns_pipeline):
    out, _ = ns_pipeline
    for name in ("spheres_ns.c3ds", "merged_ns.c3ds", "train_ns.c3ds", "test_ns.c3ds", "validation_ns.c3ds",
                 "stats_ns.json", "model_ns.json", "history_ns.json", "mlcurv.log.jsonl"):
        assert (out / name).exists(), name
    log = [json.loads(l) for l in (out / "mlcurv.log.jsonl").read_text().splitlines()]
    assert {"t", "level", "cmd", "msg"} <= set(log[0])
    assert any(r["cmd"] == "train" for r in log)


def test_training_rerun_reproduces_validation_error(ns_pipeline, tmp_path):
    out, train = ns_pipeline
    first = json.loads((out / "history_ns.json").read_text())
    again = [a if a != out else tmp_path for a in train]
    assert run(*again) == 0
    second = json.loads((tmp_path / "history_ns.json").read_text())
    assert abs(min(first["val_mae"]) - min(second["val_mae"])) <= 1e-7


def test_replay(ns_pipeline, tmp_path, capsys):
    out, _ = ns_pipeline
    assert cli.run(["replay", str(out / "train_ns.manifest.json")]) == 0
    assert "replay identical" in capsys.readouterr().out
    assert cli.run(["replay", str(out / "gen-spheres.manifest.json"), "--out", str(tmp_path)]) == 0


def test_replay_detects_changed_input(ns_pipeline, tmp_path):
    out, _ = ns_pipeline
    src = tmp_path / "copy.c3ds"
    src.write_bytes((out / "merged_ns.c3ds").read_bytes())
    (tmp_path / "copy.c3ds.json").write_text((out / "merged_ns.c3ds.json").read_text())
    assert run("split", src, "--set", "split.n_folds=5", "--set", "split.groups=[3, 1, 1]",
               "--set", "split.nbins=5", "--out", tmp_path) == 0
    src.write_bytes(src.read_bytes()[:-1] + b"\x00")
    assert cli.run(["replay", str(tmp_path / "split_copy.manifest.json")]) == 3


def test_eval_geometry_baseline_only(tmp_path):
    assert run("eval-geometry", "paraboloid", "--eta", 5, "--baseline-only", "--out", tmp_path) == 0
    with open(tmp_path / "paraboloid_summary.csv") as f:
        rows = list(csv.DictReader(f))
    assert "mae_factor" in rows[0] and float(rows[1]["mae_factor"]) == 1.0
    assert (tmp_path / "paraboloid_records.jsonl").exists() and (tmp_path / "paraboloid_plot.json").exists()


def test_infer_surface(tmp_path):
    spec = tmp_path / "s.toml"
    spec.write_text('kind = "sphere"\nradius = 0.1\neta = 5\nnu = 0\neps_rnd = 0.0\n')
    assert run("infer", "--surface", spec, "--baseline-only", "--out", tmp_path) == 0
    rows = [json.loads(l) for l in (tmp_path / "infer_surface.jsonl").read_text().splitlines()]
    assert len(rows) > 50


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "mlcurv", "--version"], capture_output=True, text=True)
    assert r.returncode == 0 and "mlcurv" in r.stdout
