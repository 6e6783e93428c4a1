import csv
import json

import numpy as np
import pytest

from dsparse.ablation import downscaled_width, plan, raised_dropout, run_ablation
from dsparse.checkpoint import load_checkpoint
from dsparse.cli import main
from dsparse.config import ConfigError, RunConfig, coerce, load_run_config, parse_pairs
from dsparse.kgdata import generate_toy_kg
from dsparse.model import parameter_count

FAST = ["--set", "dim=8", "--set", "n_experts=2", "--set", "depth=2", "--set", "batch_size=16", "--epochs", "2"]


# ---------------------------------------------------------------- config


def test_parse_pairs_with_comments():
    assert parse_pairs("# header\ndim = 16  # width\n\nlr=0.01\n") == {"dim": "16", "lr": "0.01"}


def test_unknown_key_rejected():
    with pytest.raises(ConfigError, match="bogus"):
        parse_pairs("bogus = 1")
    with pytest.raises(ConfigError):
        RunConfig().with_overrides({"bogus": "1"})


def test_coercion():
    assert coerce("dim", "12") == 12
    assert coerce("hidden", "none") is None
    assert coerce("residual", "off") is False
    assert coerce("temperature", "2.5") == 2.5
    with pytest.raises(ConfigError):
        coerce("dim", "wide")


def test_file_then_overrides(tmp_path):
    p = tmp_path / "c.txt"
    p.write_text("dim = 16\nepochs = 5\n", encoding="utf-8")
    cfg = load_run_config(str(p), {"epochs": "7"})
    assert cfg.dim == 16 and cfg.epochs == 7


def test_every_hyperparameter_addressable():
    cfg = RunConfig().with_overrides(
        {"dim": "4", "hidden": "6", "n_experts": "2", "temperature": "3", "sparsity": "0.1", "depth": "2", "dropout": "0.4",
         "label_smoothing": "0", "lr": "0.01", "epochs": "1", "batch_size": "4", "seed": "9", "runs": "2"}
    )
    kg = generate_toy_kg(20, 0)
    m, t = cfg.model_config(kg), cfg.train_config()
    assert (m.dim, m.hidden, m.n_experts, m.temperature, m.sparsity, m.depth, m.dropout) == (4, 6, 2, 3.0, 0.1, 2, 0.4)
    assert (t.label_smoothing, t.lr, t.epochs, t.batch_size, t.seed) == (0.0, 0.01, 1, 4, 9)


def test_config_text_round_trip(tmp_path):
    cfg = RunConfig(dim=12, toy=30, hidden=None, residual=False)
    p = tmp_path / "c.txt"
    p.write_text(cfg.to_text(), encoding="utf-8")
    assert load_run_config(str(p)) == cfg


# ---------------------------------------------------------------- ablation plans


def test_raised_dropout_formula():
    assert raised_dropout(0.3, 0.5) == pytest.approx(0.65)
    points = plan("dropout", ["0.5"], RunConfig(dropout=0.3))
    assert points[0].overrides["dropout"] == pytest.approx(0.65)


def test_downscale_rejects_zero_width():
    with pytest.raises(ConfigError):
        plan("downscale", ["0"], RunConfig(dim=32))
    assert downscaled_width(0.25, 32) == 8
    assert plan("downscale", ["0.25"], RunConfig(dim=32))[0].overrides["hidden"] == 8


def test_experts_plan_has_pure_mlp_baseline():
    points = plan("experts", ["1:1", "3:10"], RunConfig())
    assert [p.overrides.get("encoder") for p in points][-1] == "pure-mlp"
    assert points[1].overrides == {"n_experts": 3, "temperature": 10.0}


def test_depth_plan_controls():
    names = [p.name for p in plan("depth", ["1", "3"], RunConfig())]
    assert names == ["depth=1,residual", "depth=1,plain", "depth=3,residual", "depth=3,plain", "depth=3,wide-linear"]


def test_components_plan():
    names = [p.name for p in plan("components", ["1", "4"], RunConfig())]
    assert names == ["D+R+Res", "D+Res", "R+Res", "Res(depth=1)", "Res(depth=4)"]


@pytest.mark.parametrize("mode,grid", [("sparsity", ["1.0"]), ("experts", ["0:1"]), ("experts", ["2:0"]), ("depth", ["0"]), ("nope", [])])
def test_bad_grid_rejected(mode, grid):
    with pytest.raises(ConfigError):
        plan(mode, grid, RunConfig())


def test_run_ablation_rows():
    kg = generate_toy_kg(20, 0)
    base = RunConfig(dim=8, n_experts=2, depth=1, epochs=1, batch_size=16, runs=2, toy=20)
    rows = run_ablation("sparsity", ["0", "0.5"], base, kg)
    assert [r["point"] for r in rows] == ["sparsity=0", "sparsity=0.5"]
    assert len(rows[0]["hits1_per_run"]) == 2
    assert rows[0]["n_params"] == parameter_count(base.model_config(kg))


# ---------------------------------------------------------------- commands


def test_missing_data_dir_exit_2(tmp_path, capsys):
    missing = tmp_path / "nowhere"
    assert main(["train", "--data", str(missing), "--out", str(tmp_path / "o")]) == 2
    assert str(missing) in capsys.readouterr().err


def test_no_dataset_exit_2(tmp_path):
    assert main(["train", "--out", str(tmp_path / "o")]) == 2


def test_bad_config_value_exit_2(tmp_path):
    assert main(["train", "--toy", "20", "--set", "sparsity=1.5", "--out", str(tmp_path / "o")]) == 2


def test_train_writes_outputs(tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["train", "--toy", "20", *FAST, "--out", str(out)]) == 0
    for name in ("config.txt", "checkpoint.bin", "history.json", "report.txt", "report.json"):
        assert (out / name).is_file()
    assert "dim = 8" in (out / "config.txt").read_text()
    assert json.loads((out / "report.json").read_text())["split"] == "test"
    assert "hits1 = " in capsys.readouterr().out


def test_train_runs_flag(tmp_path):
    out = tmp_path / "runs"
    assert main(["train", "--toy", "20", *FAST, "--runs", "3", "--out", str(out)]) == 0
    assert all((out / f"run{i}" / "checkpoint.bin").is_file() for i in range(3))
    report = json.loads((out / "report.json").read_text())
    assert report["n_runs"] == 3 and len(report["per_run"]) == 3


def test_eval_is_repeatable(tmp_path, capsys):
    out = tmp_path / "run"
    main(["train", "--toy", "20", *FAST, "--out", str(out)])
    capsys.readouterr()
    assert main(["eval", str(out / "checkpoint.bin"), "--split", "train", "--out", str(out / "e1")]) == 0
    assert main(["eval", str(out / "checkpoint.bin"), "--split", "train", "--out", str(out / "e2")]) == 0
    assert (out / "e1" / "eval_train.json").read_bytes() == (out / "e2" / "eval_train.json").read_bytes()


def test_eval_vocab_mismatch_exit_1(tmp_path, capsys):
    out = tmp_path / "run"
    main(["train", "--toy", "20", *FAST, "--out", str(out)])
    assert main(["eval", str(out / "checkpoint.bin"), "--toy", "25"]) == 1
    assert "entities" in capsys.readouterr().err


def test_eval_missing_checkpoint_exit_2(tmp_path):
    assert main(["eval", str(tmp_path / "none.bin"), "--toy", "20"]) == 2


def test_export_gates_csv(tmp_path):
    out = tmp_path / "run"
    main(["train", "--toy", "20", *FAST, "--out", str(out)])
    csv_path = tmp_path / "gates.csv"
    assert main(["export-gates", str(out / "checkpoint.bin"), "--out", str(csv_path)]) == 0
    with open(csv_path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["entity", "relation", "g_1", "g_2"]
    kg = generate_toy_kg(20, 7)
    assert len(rows) - 1 == len({(s, r) for s, r, _ in kg.augmented("train").tolist()})
    sums = np.array([[float(x) for x in row[2:]] for row in rows[1:]]).sum(axis=1)
    np.testing.assert_allclose(sums, 1, atol=1e-9)


def test_make_toy_then_train_from_directory(tmp_path):
    data = tmp_path / "toy"
    assert main(["make-toy", str(data), "--entities", "20"]) == 0
    assert sorted(p.name for p in data.iterdir()) == ["test.txt", "train.txt", "valid.txt"]
    assert main(["train", "--data", str(data), *FAST, "--out", str(tmp_path / "run")]) == 0
    ck = load_checkpoint(tmp_path / "run" / "checkpoint.bin")
    assert ck.meta["data"] == str(data)


def test_ablate_command(tmp_path):
    out = tmp_path / "abl"
    assert main(["ablate", "components", "--grid", "1", "--toy", "20", *FAST, "--out", str(out)]) == 0
    rows = json.loads((out / "ablation_components.json").read_text())["rows"]
    assert [r["point"] for r in rows] == ["D+R+Res", "D+Res", "R+Res", "Res(depth=1)"]
    assert (out / "ablation_components.txt").read_text().startswith("point")


def test_ablate_invalid_grid_exit_2(tmp_path):
    assert main(["ablate", "downscale", "--grid", "0", "--toy", "20", "--out", str(tmp_path / "a")]) == 2
