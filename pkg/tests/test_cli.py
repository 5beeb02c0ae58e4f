import csv
import json

import pytest

from deltron.cli import main
from deltron.experiments import (ConfigError, ExperimentConfig, ResultTable, derive_seed, emit_plotdata,
                                 load_config)

SMALL = ["--override", "p_list=[3,5]", "--override", "delta_v=[0.5]", "--override", "n_background=60",
         "--seeds", "2"]


def read_rows(path):
    with open(path) as fh:
        return list(csv.reader(fh))


def test_category_count(tmp_path, capsys):
    assert main(["category-count", "--out", str(tmp_path)]) == 0
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["P_cat"] == "9" and summary["P_C"] == "1"
    assert json.loads(capsys.readouterr().out)["status"] == "ok"


def test_empty_table_is_header_only(tmp_path):
    emit_plotdata(ResultTable(["a", "b"]), tmp_path / "t.csv")
    assert (tmp_path / "t.csv").read_text() == "a,b\n"


def test_memorize_rerun_is_byte_identical(tmp_path):
    a, b, c = tmp_path / "a", tmp_path / "b", tmp_path / "c"
    assert main(["memorize", "--out", str(a), *SMALL]) == 0
    assert main(["memorize", "--out", str(b), *SMALL]) == 0
    assert main(["memorize", "--out", str(c), "--workers", "2", *SMALL]) == 0
    for name in ("runs.csv", "summary.csv", "summary.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes() == (c / name).read_bytes()
    header = read_rows(a / "summary.csv")[0]
    assert header == ["P", "delta_v", "mean_recall", "sd_recall", "mean_fp", "mean_fn"]
    tallies = json.loads((a / "summary.json").read_text())["groups"][0]["exit_reasons"]
    assert sum(tallies.values()) == 2


def test_adding_seeds_keeps_earlier_runs(tmp_path):
    main(["memorize", "--out", str(tmp_path / "two"), *SMALL])
    main(["memorize", "--out", str(tmp_path / "three"), *SMALL, "--seeds", "3"])
    two = read_rows(tmp_path / "two" / "runs.csv")
    three = read_rows(tmp_path / "three" / "runs.csv")
    assert set(map(tuple, two[1:])) <= set(map(tuple, three[1:]))


@pytest.mark.parametrize("argv,code,kind", [
    (["no-such-experiment", "--out", "x"], 2, "unknown_experiment"),
    (["memorize", "--out", "x", "--override", "learn.nope=1"], 2, "config"),
    (["memorize", "--out", "x", "--override", "seeds=0"], 2, "config"),
    (["memorize"], 2, "config"),
])
def test_errors_are_reported_as_json(argv, code, kind, capsys):
    assert main(argv) == code
    err = json.loads(capsys.readouterr().err)
    assert err["status"] == "error" and err["error"] == kind


def test_unwritable_output_is_io_error(tmp_path, capsys):
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert main(["category-count", "--out", str(blocker / "sub")]) == 3
    assert json.loads(capsys.readouterr().err)["error"] == "io"


def test_config_file_and_overrides(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text("seeds: 4\nlearn:\n  eta0: 3.0\nkernel:\n  tau: 20\n")
    cfg = load_config(path, "memorize", ["learn.stall_window=10", "p_list=[7]"])
    assert (cfg.seeds, cfg.learn.eta0, cfg.learn.stall_window, cfg.kernel.tau, cfg.p_list) == (4, 3.0, 10, 20, (7,))
    assert cfg.digest() != ExperimentConfig().digest()
    with pytest.raises(ConfigError):
        load_config(None, "memorize", ["novalue"])
    (tmp_path / "bad.yaml").write_text("- a list\n")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "bad.yaml")


def test_derived_seeds_are_stable_and_distinct():
    cfg = ExperimentConfig()
    assert derive_seed(cfg, 1, 10, 0) == derive_seed(cfg, 1, 10, 0)
    assert len({derive_seed(cfg, 1, 10, r) for r in range(50)}) == 50
    assert derive_seed(cfg, 1, 10, 0) != derive_seed(ExperimentConfig(base_seed=1), 1, 10, 0)
