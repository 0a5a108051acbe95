import csv
import json

import pytest

from deepsharpe.cli import LABELS, main
from deepsharpe.config import RunConfig, config_from_dict, load_config
from deepsharpe.errors import ConfigError, IOFailure
from deepsharpe.metrics import METRIC_HEADERS

FAST = {
    "features": {"lookback": 10},
    "train": {"epochs": 2, "hidden": 4, "batch_size": 32},
    "baselines": {"solver": {"iterations": 40, "restarts": 3}},
    "walk_forward": {"first_test_start": "2002-06-03", "retrain_every_years": 5},
}


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    data = root / "prices.csv"
    assert main(["synth", "--out", str(data), "--days", "700", "--planted-asset", "0", "--seed", "3"]) == 0
    cfg = root / "fast.json"
    cfg.write_text(json.dumps(FAST))
    return root, data, cfg


def _error(capsys):
    return json.loads(capsys.readouterr().err.strip().splitlines()[-1])


def test_synth_writes_loadable_csv(workspace):
    _, data, _ = workspace
    lines = data.read_text().splitlines()
    assert lines[0] == "date,A1,A2,A3,A4"
    assert len(lines) == 701


def test_train_one_split_one_checkpoint(workspace, tmp_path):
    _, data, cfg = workspace
    out = tmp_path / "train"
    assert main(["train", "--config", str(cfg), "--data", str(data), "--out", str(out)]) == 0
    assert [p.name for p in out.glob("split_*.npz")] == ["split_00.npz"]
    echoed = json.loads((out / "config.json").read_text())
    assert echoed["train"]["epochs"] == 2


def test_backtest_two_strategies(workspace, tmp_path, capsys):
    _, data, cfg = workspace
    out = tmp_path / "bt"
    rc = main(["backtest", "--config", str(cfg), "--data", str(data), "--out", str(out),
               "--strategy", "alloc1", "--strategy", "dls", "--shift-from", "2002-07-01"])
    assert rc == 0
    assert (out / "alloc1" / "report.json").exists() and (out / "dls" / "split_00.npz").exists()
    assert (out / "dls" / "weight_shift.csv").exists()
    with open(out / "comparison.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["strategy", "label", *METRIC_HEADERS]
    assert [r[1] for r in rows[1:]] == ["Allocation 1", "DLS"]
    printed = capsys.readouterr().out
    assert "Allocation 1" in printed and "DLS" in printed
    report = json.loads((out / "dls" / "report.json").read_text())
    assert report["config"]["strategies"] == ["alloc1", "dls"]


def test_backtest_all_strategies_and_report(workspace, tmp_path, capsys):
    _, data, cfg = workspace
    out = tmp_path / "all"
    assert main(["backtest", "--config", str(cfg), "--data", str(data), "--out", str(out)]) == 0
    with open(out / "comparison.csv") as fh:
        labels = [r[1] for r in list(csv.reader(fh))[1:]]
    assert labels == ["Allocation 1", "Allocation 2", "Allocation 3", "Allocation 4", "MV", "MD", "DWP", "DLS"]
    capsys.readouterr()
    assert main(["report", str(out)]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0].split() == list(METRIC_HEADERS)
    assert len(lines) == 2 + 8
    assert main(["report", str(out / "mv")]) == 0
    assert len(capsys.readouterr().out.splitlines()) == 3


def test_reuse_checkpoints(workspace, tmp_path):
    _, data, cfg = workspace
    ck = tmp_path / "ck"
    assert main(["train", "--config", str(cfg), "--data", str(data), "--out", str(ck)]) == 0
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["backtest", "--config", str(cfg), "--data", str(data), "--out", str(a), "--strategy", "dls"]) == 0
    assert main(["backtest", "--config", str(cfg), "--data", str(data), "--out", str(b), "--strategy", "dls",
                 "--checkpoints", str(ck)]) == 0
    assert (a / "comparison.csv").read_bytes() == (b / "comparison.csv").read_bytes()


def test_sensitivity_export(workspace, tmp_path):
    _, data, cfg = workspace
    out = tmp_path / "sens"
    assert main(["sensitivity", "--config", str(cfg), "--data", str(data), "--out", str(out)]) == 0
    header = (out / "sensitivity.csv").read_text().splitlines()[0].split(",")
    assert header[:2] == ["date", "A1_price_lag0"] and len(header) == 1 + 4 * 2 * 10


def test_missing_data_file_exit_2(tmp_path, capsys):
    rc = main(["backtest", "--data", str(tmp_path / "none.csv"), "--out", str(tmp_path / "o"),
               "--test-start", "2001-01-01"])
    assert rc == 2
    assert _error(capsys)["error"] == "io"


def test_unknown_config_key_exit_3(workspace, tmp_path, capsys):
    _, data, _ = workspace
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"train": {"epochs": 1, "learning_rat": 0.1}}))
    rc = main(["train", "--config", str(bad), "--data", str(data), "--out", str(tmp_path / "o")])
    assert rc == 3
    err = _error(capsys)
    assert err["error"] == "config" and "learning_rat" in err["message"]


def test_empty_strategy_list_is_config_error(workspace, tmp_path, capsys):
    _, data, _ = workspace
    cfg = tmp_path / "empty.json"
    cfg.write_text(json.dumps({**FAST, "strategies": []}))
    rc = main(["backtest", "--config", str(cfg), "--data", str(data), "--out", str(tmp_path / "o")])
    assert rc == 3 and _error(capsys)["error"] == "config"


def test_corrupt_report_names_file(tmp_path, capsys):
    d = tmp_path / "run" / "alloc1"
    d.mkdir(parents=True)
    (d / "report.json").write_text("{not json")
    assert main(["report", str(tmp_path / "run")]) == 2
    err = _error(capsys)
    assert err["error"] == "io" and "report.json" in err["message"]


def test_bad_price_row_exit_2(tmp_path, capsys):
    data = tmp_path / "p.csv"
    data.write_text("date,A\n2020-01-01,1\n2020-01-02,-5\n")
    rc = main(["train", "--data", str(data), "--out", str(tmp_path / "o"), "--test-start", "2020-01-02"])
    assert rc == 2 and _error(capsys)["error"] == "data"


def test_config_roundtrip_and_rejections(tmp_path):
    cfg = config_from_dict(FAST)
    assert cfg.train.epochs == 2 and cfg.baselines.solver.restarts == 3
    again = config_from_dict(json.loads(json.dumps(cfg.to_dict())))
    assert again == cfg
    assert set(LABELS) == set(RunConfig().strategies)
    with pytest.raises(ConfigError):
        config_from_dict({"backtest": {"sigma": 0.1}})
    with pytest.raises(ConfigError):
        config_from_dict({"strategies": ["alloc9"]})
    with pytest.raises(ConfigError):
        config_from_dict({"train": {"hidden": 0}})
    with pytest.raises(IOFailure):
        load_config(tmp_path / "missing.json")
    broken = tmp_path / "broken.json"
    broken.write_text("{")
    with pytest.raises(ConfigError):
        load_config(broken)
