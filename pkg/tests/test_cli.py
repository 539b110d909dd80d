import json

import pytest

from hetfl.cli import (
    EXIT_CONFIG,
    EXIT_OK,
    EXIT_RUNTIME,
    OUTPUT_ENV,
    compare_reports,
    main,
    parse_config,
    serialize_config,
)
from hetfl.errors import ConfigError
from hetfl.federation import ExperimentConfig
from hetfl.metrics import EvalReport

FAST = ["--set", "clients=3", "--set", "init_epochs=1", "--set", "kd_epochs=1",
        "--set", "local_epochs=1", "--set", "train_per_class=10", "--set", "public_per_class=5",
        "--set", "public_subset_size=30", "--set", "test_per_class=5", "--set", "hidden_width=8"]


def test_empty_config_is_all_defaults(tmp_path):
    empty = tmp_path / "empty.cfg"
    empty.write_text("# nothing\n")
    assert parse_config(empty) == ExperimentConfig()
    assert parse_config() == ExperimentConfig()


def test_file_then_flags(tmp_path):
    cfg = tmp_path / "a.cfg"
    cfg.write_text("rounds = 7\nalpha = 0.5  # skew\nclient_depths = 1,2\nclients = 2\nkd_lr = none\n")
    c = parse_config(cfg, ["rounds=3"])
    assert (c.rounds, c.alpha, c.client_depths, c.kd_lr) == (3, 0.5, (1, 2), None)


@pytest.mark.parametrize("flag,key", [("participation=1.3", "participation"), ("bogus=1", "bogus"),
                                      ("rounds=abc", "rounds"), ("method=sgd", "method")])
def test_bad_values_name_the_key(flag, key):
    with pytest.raises(ConfigError, match=key):
        parse_config(None, [flag])


def test_serialize_round_trip(tmp_path):
    for c in (ExperimentConfig(), ExperimentConfig(alpha=1e6, lr=0.1 + 0.2, kd_lr=None,
                                                   clients=2, client_depths=(3, 5))):
        path = tmp_path / "c.cfg"
        path.write_text(serialize_config(c))
        assert parse_config(path) == c


def test_run_writes_outputs(tmp_path, monkeypatch):
    monkeypatch.setenv(OUTPUT_ENV, str(tmp_path / "env"))
    assert main(["run", "--quiet", "--set", "rounds=1", *FAST]) == EXIT_OK
    out = tmp_path / "env"
    text = (out / "rounds.csv").read_bytes()
    lines = text.decode("ascii").split("\n")
    assert lines[0] == "round,global_acc,distilled_mean,personalised_mean,gap"
    assert len(lines) == 3 and lines[-1] == "" and b"\r" not in text
    fields = lines[1].split(",")
    assert fields[0] == "1" and all(len(f.split(".")[1]) == 2 for f in fields[1:])
    summary = json.loads((out / "summary.json").read_text())
    assert EvalReport.from_dict(summary).per_round[0].round_index == 1
    manifest = json.loads((out / "manifest.json").read_text())
    assert set(manifest) >= {"config", "seeds", "started", "finished", "outputs", "version"}
    assert manifest["config"]["rounds"] == 1


def test_rerun_from_manifest_is_byte_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["run", "--quiet", "--out", str(a), "--set", "rounds=2", *FAST]) == EXIT_OK
    assert main(["run", "--quiet", "--out", str(b), "--manifest", str(a / "manifest.json")]) == EXIT_OK
    assert (a / "rounds.csv").read_bytes() == (b / "rounds.csv").read_bytes()
    assert (a / "summary.json").read_bytes() == (b / "summary.json").read_bytes()


def test_flag_beats_env(tmp_path, monkeypatch):
    monkeypatch.setenv(OUTPUT_ENV, str(tmp_path / "env"))
    assert main(["run", "--quiet", "--out", str(tmp_path / "flag"), "--set", "rounds=0", *FAST]) == 0
    assert (tmp_path / "flag" / "rounds.csv").read_text() == \
        "round,global_acc,distilled_mean,personalised_mean,gap\n"
    assert not (tmp_path / "env").exists()


def test_fedavg_columns_carry_broadcast_accuracy(tmp_path):
    assert main(["run", "--quiet", "--out", str(tmp_path), "--set", "method=fedavg",
                 "--set", "rounds=1", *FAST]) == EXIT_OK
    row = (tmp_path / "rounds.csv").read_text().split("\n")[1].split(",")
    assert row[1] == row[2] == row[3] and row[4] == "0.00"


def test_exit_codes(tmp_path, capsys):
    assert main(["run", "--set", "participation=1.3"]) == EXIT_CONFIG
    assert "participation" in capsys.readouterr().err
    assert main(["run", "--config", str(tmp_path / "missing.cfg")]) == EXIT_CONFIG
    assert main(["nope"]) == EXIT_CONFIG
    # valid config that cannot be partitioned
    code = main(["run", "--quiet", "--out", str(tmp_path), *FAST, "--set", "min_shard_size=500"])
    assert code == EXIT_RUNTIME
    assert "setup" in capsys.readouterr().err


def test_partition_report(tmp_path):
    assert main(["partition-report", "--out", str(tmp_path), "--set", "alpha=1e6"]) == EXIT_OK
    lines = (tmp_path / "partition.csv").read_text().split("\n")
    assert lines[0] == "client_id,class,count"
    counts = [int(x.split(",")[2]) for x in lines[1:-1]]
    assert len(counts) == 20 * 10 and sum(counts) == 1000
    assert max(counts) - min(counts) <= 2


def _max_share(path):
    rows = [tuple(map(int, x.split(","))) for x in path.read_text().split("\n")[1:-1]]
    shares = []
    for c in {r[0] for r in rows}:
        counts = [r[2] for r in rows if r[0] == c]
        if sum(counts):
            shares.append(max(counts) / sum(counts))
    return sum(shares) / len(shares)


def test_partition_report_skew_ordering(tmp_path):
    for a in ("0.1", "0.5"):
        main(["partition-report", "--out", str(tmp_path / a), "--set", f"alpha={a}"])
    assert _max_share(tmp_path / "0.1" / "partition.csv") > _max_share(tmp_path / "0.5" / "partition.csv")


def test_compare_identical_runs(tmp_path, capsys):
    main(["run", "--quiet", "--out", str(tmp_path / "a"), "--set", "rounds=1", *FAST])
    capsys.readouterr()
    assert main(["compare", str(tmp_path / "a"), str(tmp_path / "a"), "--json"]) == EXIT_OK
    rows = json.loads(capsys.readouterr().out)
    assert all(r["delta"] == 0 and r["direction"] == "same" for r in rows)


def test_compare_warns_on_other_differences(tmp_path, capsys):
    main(["run", "--quiet", "--out", str(tmp_path / "a"), "--set", "rounds=1", *FAST])
    main(["run", "--quiet", "--out", str(tmp_path / "b"), "--set", "rounds=1", "--set", "seed=4", *FAST])
    capsys.readouterr()
    assert main(["compare", str(tmp_path / "a"), str(tmp_path / "b")]) == EXIT_OK
    captured = capsys.readouterr()
    assert "seed" in captured.err and "personalised" in captured.out
    assert main(["compare", str(tmp_path / "a"), str(tmp_path / "nothing")]) == EXIT_CONFIG


def test_compare_signs_and_markers():
    base = EvalReport(0.2, 0.5, 0.6, 0.4, 0.2)
    other = EvalReport(0.2, 0.45, 0.55, 0.5, 0.05)
    rows = {r["metric"]: r for r in compare_reports(base, other)}
    assert rows["gap"]["direction"] == "down" and rows["gap"]["delta"] < 0
    assert rows["personalised"]["direction"] == "up" and abs(rows["personalised"]["delta"] - 10) < 1e-9
    assert rows["initial"]["direction"] == "same"


def test_module_entry_point():
    import subprocess
    import sys
    res = subprocess.run([sys.executable, "-m", "hetfl", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and res.stdout.strip()
