import json
import shutil
import subprocess
import sys
import time

import numpy as np
import pytest

from cgpcnn.cli import (
    EXIT_CHECK_FAILED,
    EXIT_CONFIG,
    EXIT_DATASET,
    EXIT_GENOTYPE,
    EXIT_OK,
    ConfigError,
    main,
    parse_assignments,
    resolve_config,
)
from cgpcnn.genome import CgpConfig, Genotype

SURROGATE = ["--surrogate", "target_active_count(25)", "--quiet"]


def write_chain(path, codes, **cfg):
    n = len(codes)
    config = CgpConfig(n_rows=1, n_cols=n, levels_back=1, min_active=0, max_active=n, **cfg)
    g = Genotype(config, np.array([(f, j, j) for j, f in enumerate(codes)]), np.array([n]))
    path.write_text(g.to_text())
    return path


def test_surrogate_search_outputs(tmp_path):
    start = time.perf_counter()
    code = main(["search", *SURROGATE, "--seed", "0", "--set", "generations=50", "--out", str(tmp_path)])
    assert code == EXIT_OK
    assert time.perf_counter() - start < 10
    rows = (tmp_path / "history.csv").read_text().splitlines()
    assert len(rows) == 1 + 51
    for name in ("manifest.json", "checkpoint.json", "results.jsonl", "best.genotype", "best.dot"):
        assert (tmp_path / name).is_file()
    records = [json.loads(line) for line in (tmp_path / "results.jsonl").read_text().splitlines()]
    assert len(records) == 1 + 50 * 2
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["seed"] == 0 and manifest["config"]["generations"] == 50


def test_search_is_reproducible(tmp_path):
    for name in ("a", "b"):
        main(["search", *SURROGATE, "--set", "generations=30", "--out", str(tmp_path / name)])
    for name in ("history.csv", "checkpoint.json", "results.jsonl", "best.genotype"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_resume_matches_uninterrupted(tmp_path):
    main(["search", *SURROGATE, "--seed", "3", "--set", "generations=40", "--out", str(tmp_path / "full")])
    main(["search", *SURROGATE, "--seed", "3", "--set", "generations=15", "--out", str(tmp_path / "part")])
    shutil.copy(tmp_path / "part" / "checkpoint.json", tmp_path / "saved.json")
    code = main(["search", *SURROGATE, "--seed", "3", "--set", "generations=40", "--out", str(tmp_path / "part"),
                 "--resume", str(tmp_path / "saved.json")])
    assert code == EXIT_OK
    for name in ("history.csv", "checkpoint.json", "results.jsonl", "best.genotype"):
        assert (tmp_path / "full" / name).read_bytes() == (tmp_path / "part" / name).read_bytes()


def test_resume_with_other_seed_is_config_error(tmp_path):
    main(["search", *SURROGATE, "--seed", "1", "--set", "generations=3", "--out", str(tmp_path)])
    code = main(["search", *SURROGATE, "--seed", "2", "--set", "generations=6", "--out", str(tmp_path),
                 "--resume", str(tmp_path / "checkpoint.json")])
    assert code == EXIT_CONFIG


def test_corrupt_checkpoint_exit(tmp_path):
    (tmp_path / "c.json").write_text('{"format": "cgpcnn-checkpoint", "ver')
    assert main(["search", *SURROGATE, "--resume", str(tmp_path / "c.json"), "--out", str(tmp_path)]) == EXIT_CONFIG


def test_unknown_key_names_it(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# comment\ngenerations = 5\nmutaton_rate = 0.1\n")
    assert main(["search", *SURROGATE, "--config", str(cfg), "--out", str(tmp_path)]) == EXIT_CONFIG
    assert "mutaton_rate" in capsys.readouterr().err


def test_bad_value_and_missing_config(tmp_path, capsys):
    assert main(["search", *SURROGATE, "--set", "lam=0", "--out", str(tmp_path)]) == EXIT_CONFIG
    assert main(["search", *SURROGATE, "--set", "lam", "--out", str(tmp_path)]) == EXIT_CONFIG
    assert main(["search", *SURROGATE, "--config", str(tmp_path / "nope.cfg")]) == EXIT_CONFIG
    assert main(["search", "--surrogate", "oracle", "--out", str(tmp_path)]) == EXIT_CONFIG


def test_config_layering():
    base = resolve_config({}, {})
    assert base.generations == 500 and base.scenario == "default"
    desk = resolve_config({"scenario": "desk"}, {})
    assert desk.n_cols == 10 and desk.search_epochs == 1
    file_values = parse_assignments(["scenario = desk", "n_cols = 12", "levels_back = 3"], "file")
    layered = resolve_config(file_values, parse_assignments(["n_cols=14"], "--set"))
    assert layered.n_cols == 14 and layered.levels_back == 3 and layered.n_rows == 3
    schedule = parse_assignments(["search_lr_schedule=30:0.001,40:0.0001"], "--set")
    assert resolve_config({}, schedule).search_lr_schedule == ((30, 0.001), (40, 0.0001))
    with pytest.raises(ConfigError):
        parse_assignments(["no equals sign"], "x")


def test_export_dot_and_json(tmp_path, capsys):
    g = write_chain(tmp_path / "g.txt", [0, 6])
    assert main(["export", str(g)]) == EXIT_OK
    dot = capsys.readouterr().out
    assert dot.startswith("digraph") and "CB(32,3×3)" in dot
    assert main(["export", str(g), "--format", "json", "--out", str(tmp_path / "g.json")]) == EXIT_OK
    body = json.loads((tmp_path / "g.json").read_text())
    assert body["param_count"] > 0
    with pytest.raises(SystemExit) as exc:
        main(["export", str(g), "--format", "svg"])
    assert exc.value.code == EXIT_CONFIG


def test_invalid_genotype_exit(tmp_path):
    (tmp_path / "bad.txt").write_text("not a genotype\n")
    assert main(["export", str(tmp_path / "bad.txt")]) == EXIT_GENOTYPE
    assert main(["export", str(tmp_path / "missing.txt")]) == EXIT_GENOTYPE
    g = write_chain(tmp_path / "pools.txt", [6] * 6)
    assert main(["export", str(g), "--format", "json"]) == EXIT_GENOTYPE


def test_eval_surrogate(tmp_path, capsys):
    cfg = CgpConfig(n_rows=1, n_cols=50, levels_back=1, min_active=0, max_active=50)
    g = Genotype(cfg, np.array([(0, j, j) for j in range(50)]), np.array([25]))
    (tmp_path / "g.txt").write_text(g.to_text())
    assert main(["eval", str(tmp_path / "g.txt"), "--surrogate", "active_count_ratio"]) == EXIT_OK
    assert json.loads(capsys.readouterr().out)["fitness"] == 0.5


def test_dataset_missing_exit(tmp_path, monkeypatch):
    monkeypatch.delenv("CGPNAS_DATA_DIR", raising=False)
    g = write_chain(tmp_path / "g.txt", [0])
    code = main(["retrain", str(g), "--scenario", "small", "--set", f"data_dir={tmp_path / 'none'}", "--quiet"])
    assert code == EXIT_DATASET


def test_gradcheck_command(capsys):
    assert main(["gradcheck", "--samples", "50"]) == EXIT_OK
    out = json.loads(capsys.readouterr().out)
    assert out["passed"] is True and out["max_relative_error"] < 1e-3
    assert main(["gradcheck", "--samples", "50", "--tolerance", "1e-30"]) == EXIT_CHECK_FAILED


def test_console_script_version():
    res = subprocess.run([sys.executable, "-m", "cgpcnn.cli", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and "cgpcnn" in res.stdout


@pytest.mark.slow
def test_desk_retrain(tmp_path, capsys):
    g = write_chain(tmp_path / "g.txt", [0], channels=(8, 16))
    code = main(["retrain", str(g), "--scenario", "desk", "--quiet", "--out", str(tmp_path / "r")])
    assert code == EXIT_OK
    summary = json.loads(capsys.readouterr().out)
    assert summary["test_accuracy"] > 0.95
    assert summary["param_count"] == 3 * 3 * 3 * 8 + 3 * 8 + 16 * 16 * 8 * 2 + 2
    assert (tmp_path / "r" / "weights.bin").is_file()
