import csv

import numpy as np
import pytest

from selectcf import harness
from selectcf.cli import main
from selectcf.core import ConfigError, read_study

TINY = dict(L=4, n=120, d=6, k_x=3, k_z=3)


def _spec(**kw):
    base = dict(fast=True, replicates=2, sweep_values=(0.0, 1.0), **TINY)
    base.update(kw)
    return harness.setting_spec("A", **base)


def test_setting_grids():
    assert harness.setting_spec("A").sweep_values == (0.0, 0.25, 0.5, 0.75, 1.0)
    assert harness.setting_spec("B").sweep_param == "rho"
    c = harness.setting_spec("C", fast=True)
    assert c.sweep_values == (0, 5, 10, 15, 20, 25) and c.replicates == harness.FAST_REPLICATES
    assert c.base.d == 50 and c.base.n == 250


def test_setting_validation():
    with pytest.raises(ConfigError):
        harness.setting_spec("D")
    with pytest.raises(ConfigError):
        _spec(learners=("SP", "XX")).validate()
    with pytest.raises(ConfigError):
        _spec(replicates=0).validate()
    with pytest.raises(ConfigError):
        harness.setting_spec("C", fast=True, sweep_values=(60,)).validate()


def test_row_count_and_order():
    spec = _spec(learners=("SP", "DR"), dr_mse=True)
    rows = harness.run_experiment(spec)
    assert len(rows) == 2 * 2 * 2 * 3
    assert [r["metric"] for r in rows[:3]] == ["mse", "dr_mse", "truth_mse"]
    assert rows[0]["param"] == 0.0 and rows[-1]["param"] == 1.0


def test_replicate_seed_shared_across_sweep():
    rows = harness.run_experiment(_spec(learners=("SP",)))
    by_param = {}
    for r in rows:
        by_param.setdefault(r["param"], []).append(r["seed"])
    assert by_param[0.0] == by_param[1.0]
    assert len(set(by_param[0.0])) == 2


def test_byte_identical_csv(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    harness.run_experiment(_spec(out_path=str(a)))
    harness.run_experiment(_spec(out_path=str(b)), workers=2)
    assert a.read_bytes() == b.read_bytes()


def test_missing_output_dir(tmp_path):
    with pytest.raises(ConfigError):
        harness.run_experiment(_spec(out_path=str(tmp_path / "nope" / "r.csv")))


def test_stratified_split_counts(small_study):
    train = harness.stratified_split(small_study, 0.7, seed=3)
    for loc in small_study.locations:
        here = small_study.location == loc
        assert train[here].sum() == round(0.7 * here.sum())
    np.testing.assert_array_equal(train, harness.stratified_split(small_study, 0.7, seed=3))


def test_sweep_summary_matches_brute_force(tmp_path):
    rows = harness.run_experiment(_spec(replicates=3))
    summary = harness.sweep_summary(rows)
    for s in summary:
        vals = [r["value"] for r in rows if r["param"] == s["param"]
                and r["learner"] == s["learner"] and r["metric"] == s["metric"]]
        assert s["n"] == len(vals) == 3
        assert s["mean"] == pytest.approx(np.mean(vals))
        assert s["stderr"] == pytest.approx(np.std(vals, ddof=1) / np.sqrt(3))


def test_results_round_trip(tmp_path):
    rows = harness.run_experiment(_spec(out_path=str(tmp_path / "r.csv")))
    back = harness.read_results(tmp_path / "r.csv")
    assert [r["value"] for r in back] == [r["value"] for r in rows]


def test_config_file_parsing(tmp_path):
    f = tmp_path / "c.cfg"
    f.write_text("# comment\nL = 3\nk-z = 2  # inline\n")
    assert harness.read_config_file(f) == {"L": "3", "k_z": "2"}
    f.write_text("garbage\n")
    with pytest.raises(ConfigError):
        harness.read_config_file(f)


def test_pool_size_env(monkeypatch):
    monkeypatch.setenv("SELECTCF_THREADS", "3")
    assert harness.pool_size() == 3
    monkeypatch.setenv("SELECTCF_THREADS", "x")
    assert harness.pool_size() == 1


# CLI

def _cli_generate(tmp_path, *extra):
    out = tmp_path / "study.csv"
    assert main(["generate", "--L", "3", "--n", "90", "--d", "5", "--kx", "2", "--kz", "2",
                 "--seed", "7", "--out", str(out), *extra]) == 0
    return out


def test_cli_generate_writes_study_and_truth(tmp_path):
    out = _cli_generate(tmp_path)
    s = read_study(out)
    assert len(s) == 270 and s.truth is not None and s.d == 5


def test_cli_config_file_and_flag_precedence(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("L = 5\nn = 40\nd = 4\nkx = 2\nkz = 2\n")
    out = tmp_path / "s.csv"
    assert main(["generate", "--config", str(cfg), "--n", "30", "--out", str(out)]) == 0
    assert len(read_study(out)) == 5 * 30


def test_cli_fit_eval_swap(tmp_path, capsys):
    study = _cli_generate(tmp_path)
    pred = tmp_path / "dr.json"
    assert main(["fit", "--study", str(study), "--learner", "DR", "--out", str(pred)]) == 0
    capsys.readouterr()
    assert main(["eval", "--study", str(study), "--predictor", str(pred)]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0] == ",".join(harness.RESULT_HEADER)
    assert [ln.split(",")[4] for ln in lines[1:]] == ["mse", "dr_mse", "truth_mse"]
    swap = tmp_path / "swap.csv"
    assert main(["swap", "--study", str(study), "--predictor", str(pred), "--out", str(swap)]) == 0
    rows = list(csv.DictReader(swap.open()))
    assert len(rows) == 3
    assert all(0 <= float(r["fr_swapped"]) <= 1 for r in rows)


def test_cli_run_and_summary(tmp_path):
    res = tmp_path / "res.csv"
    assert main(["run", "--setting", "C", "--fast", "--sweep", "0,2", "--replicates", "2",
                 "--L", "3", "--n", "80", "--d", "6", "--kx", "2", "--learners", "SP,DR",
                 "--out", str(res)]) == 0
    rows = harness.read_results(res)
    assert len(rows) == 2 * 2 * 2
    summ = tmp_path / "summ.csv"
    assert main(["sweep-summary", "--in", str(res), "--out", str(summ)]) == 0
    assert len(list(csv.DictReader(summ.open()))) == 4


def test_cli_missing_out_is_usage_error(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["run", "--setting", "A"])
    assert exc.value.code == 2
    assert "usage" in capsys.readouterr().err


def test_cli_bad_config_returns_2(tmp_path, capsys):
    assert main(["generate", "--kx", "0", "--out", str(tmp_path / "s.csv")]) == 2
    assert "error" in capsys.readouterr().err
