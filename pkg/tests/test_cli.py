import json

import numpy as np
import pytest

from rayleigh_fwmdn import cli
from rayleigh_fwmdn.dataset import SampleRanges, generate_dataset, load_dataset
from rayleigh_fwmdn.dispersion import EarthStack, dispersion_curve, default_frequency_grid

FAST = {"train": {"epochs": 3, "batch_size": 64}, "architecture": {"hidden": [8, 8]}}


def run(*argv):
    return cli.main(["--threads", "1", *map(str, argv)])


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    (d / "fast.json").write_text(json.dumps(FAST))
    assert run("gen-data", "--layers", 3, "--num", 60, "--seed", 2, "--out", d / "d.csv") == 0
    return d


def test_forward_matches_library(tmp_path):
    assert run("forward", "--vs", "2,4,3", "--out", tmp_path / "f.csv") == 0
    got = np.loadtxt(tmp_path / "f.csv", delimiter=",", skiprows=1)
    ref = dispersion_curve(EarthStack.from_vs([2, 4, 3]), default_frequency_grid())
    np.testing.assert_array_equal(got[:, 1], ref.velocities)


def test_forward_model_file_and_poisson(tmp_path):
    (tmp_path / "m.json").write_text(json.dumps({"vs": [3.0, 3.0]}))
    assert run("forward", "--model-file", tmp_path / "m.json", "--poisson", "--n-omega", 5, "--out", tmp_path / "f.csv") == 0
    c = np.loadtxt(tmp_path / "f.csv", delimiter=",", skiprows=1)[:, 1]
    np.testing.assert_allclose(c / 3.0, 0.9194, atol=1e-3)


def test_forward_svg_byte_identical(tmp_path):
    for k in (1, 2):
        assert run("forward", "--vs", "2,3", "--out", tmp_path / f"f{k}.csv", "--svg", tmp_path / f"f{k}.svg") == 0
    assert (tmp_path / "f1.svg").read_bytes() == (tmp_path / "f2.svg").read_bytes()


@pytest.mark.parametrize("argv", [
    ["forward", "--out", "x.csv"],
    ["forward", "--vs", "2,-1", "--out", "x.csv"],
    ["forward", "--vs", "a,b", "--out", "x.csv"],
])
def test_forward_usage_errors(tmp_path, argv, monkeypatch, capsys):
    monkeypatch.chdir(tmp_path)
    assert run(*argv) == 2
    assert "error:" in capsys.readouterr().err


def test_gen_data_is_byte_identical(work):
    assert run("gen-data", "--layers", 3, "--num", 60, "--seed", 2, "--out", work / "d2.csv") == 0
    assert (work / "d.csv").read_bytes() == (work / "d2.csv").read_bytes()
    assert len(load_dataset(work / "d.csv")) == 60


def test_parallel_generation_equals_serial():
    r = SampleRanges.preset(3)
    a = generate_dataset(r, 40, seed=6, chunk=8)
    b = generate_dataset(r, 40, seed=6, chunk=8, workers=2)
    assert a.x.tobytes() == b.x.tobytes() and a.y.tobytes() == b.y.tobytes()


def test_bad_layer_count_rejected(tmp_path):
    with pytest.raises(SystemExit):
        run("gen-data", "--layers", 4, "--num", 5, "--out", tmp_path / "d.csv")


def test_fwmdn_requires_surrogate(work, capsys):
    assert run("--config", work / "fast.json", "train", "--kind", "fwmdn", "--data", work / "d.csv", "--out", work / "x.json") == 2
    assert "--surrogate" in capsys.readouterr().err
    assert not (work / "x.json").exists()


def test_config_schema_rejects_unknown_key(work, tmp_path):
    (tmp_path / "bad.json").write_text(json.dumps({"train": {"learning_rate": 0.1}}))
    assert run("--config", tmp_path / "bad.json", "train", "--kind", "fnn", "--data", work / "d.csv", "--out", tmp_path / "m.json") == 2


def test_threads_env(monkeypatch):
    monkeypatch.setenv(cli.THREADS_ENV, "3")
    assert cli.resolve_threads(None) == 3
    assert cli.resolve_threads(1) == 1
    monkeypatch.setenv(cli.THREADS_ENV, "many")
    with pytest.raises(cli.UsageError):
        cli.resolve_threads(None)


def test_train_eval_pipeline_deterministic(work):
    cfg = work / "fast.json"
    out = {}
    for k in (1, 2):
        d = work / f"run{k}"
        d.mkdir()
        assert run("--config", cfg, "train", "--kind", "fw-fnn", "--data", work / "d.csv", "--seed", 4, "--out", d / "s.json") == 0
        assert run("--config", cfg, "train", "--kind", "fwmdn", "--data", work / "d.csv", "--surrogate", d / "s.json",
                   "--seed", 4, "--out", d / "m.json") == 0
        assert run("--config", cfg, "train", "--kind", "fnn", "--data", work / "d.csv", "--seed", 4, "--out", d / "n.json") == 0
        assert run("eval", "--model", d / "m.json", "--data", work / "d.csv", "--surrogate", d / "s.json",
                   "--noise-specs", "table", "--out", d / "r.json", "--plots-dir", d / "plots") == 0
        out[k] = d
    for name in ("s.json", "m.json", "n.json", "r.json"):
        assert (out[1] / name).read_bytes() == (out[2] / name).read_bytes(), name
    p1 = sorted(p.name for p in (out[1] / "plots").iterdir())
    assert len(p1) == 2 * 4 * 5
    for name in p1:
        assert (out[1] / "plots" / name).read_bytes() == (out[2] / "plots" / name).read_bytes()
    rep = json.loads((out[1] / "r.json").read_text())
    assert [r["noise"]["kind"] for r in rep["reports"]] == ["none", "gaussian", "gaussian", "uniform", "uniform"]
    meta = json.loads((out[1] / "m.json").read_text())["meta"]
    assert meta["split_seed"] == 4 and len(meta["data_digest"]) == 64


def test_surrogate_checkpoint_not_accepted_by_eval(work, capsys):
    assert run("eval", "--model", work / "run1" / "s.json", "--data", work / "d.csv", "--out", work / "bad.json") == 2


def test_toy_cli_deterministic(tmp_path):
    (tmp_path / "c.json").write_text(json.dumps({"toy_n": 400, "train": {"epochs": 3}}))
    for k in (1, 2):
        assert run("--config", tmp_path / "c.json", "toy", "--seed", 1, "--out", tmp_path / f"t{k}") == 0
    for name in ("toy_report.json", "toy_fnn_scatter.csv", "toy_mdn_scatter.csv"):
        assert (tmp_path / "t1" / name).read_bytes() == (tmp_path / "t2" / name).read_bytes()


def test_probe_cli(work):
    assert run("probe", "--data", work / "d.csv", "--out", work / "p.csv") == 0
    assert (work / "p.csv").read_text().startswith("i,j,dy_rel,dx_rel")


def test_config_flag_after_subcommand(work, tmp_path):
    (tmp_path / "bad.json").write_text(json.dumps({"bogus": 1}))
    assert run("train", "--kind", "fnn", "--data", work / "d.csv", "--config", tmp_path / "bad.json",
               "--out", tmp_path / "m.json") == 2


def test_schema_in_docs_matches_package():
    from pathlib import Path

    docs = Path(__file__).resolve().parents[1] / "docs" / "config_schema.json"
    assert json.loads(docs.read_text()) == cli.config_schema()


def test_forward_failure_nonzero(tmp_path, capsys):
    # a bracket that excludes the root: no sign change anywhere
    (tmp_path / "c.json").write_text(json.dumps({"root_search": {"c_min": 3.5, "c_max": 3.9}}))
    assert run("--config", tmp_path / "c.json", "forward", "--vs", "3.0", "--out", tmp_path / "f.csv") == 1
    assert "error:" in capsys.readouterr().err
