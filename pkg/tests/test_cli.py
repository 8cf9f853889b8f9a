import pytest

import hsmm_cli
from utils import read_csv_rows

FAST_MODEL = ["--states", "2", "--dmax", "3", "--max-iters", "3"]


def generate(out_dir, *extra):
    assert hsmm_cli.main(["--seed", "3", *extra, "gen", "--profile", "separable", "--out-dir", str(out_dir)]) == 0
    return out_dir / "train.jsonl", out_dir / "test.jsonl"


def test_unknown_kind_is_a_usage_error(tmp_path):
    with pytest.raises(SystemExit) as excinfo:
        hsmm_cli.main(["train", "--dataset", str(tmp_path / "x.jsonl"), "--kind", "hmm"])
    assert excinfo.value.code == 2


def test_unknown_kind_list_is_a_usage_error():
    with pytest.raises(SystemExit) as excinfo:
        hsmm_cli.main(["bench", "--kinds", "hsmm,hmm"])
    assert excinfo.value.code == 2


def test_gen_train_recognize_eval(tmp_path):
    train_path, test_path = generate(tmp_path)
    bank_path = tmp_path / "bank.json"
    log_path = tmp_path / "train_log.csv"
    predictions = tmp_path / "predictions.csv"
    metrics = tmp_path / "metrics.csv"

    assert hsmm_cli.main(["train", "--dataset", str(train_path), "--out", str(bank_path),
                          "--train-log", str(log_path), "--kind", "is-hsmm", "--dmax-int", "3", *FAST_MODEL]) == 0
    assert hsmm_cli.main(["recognize", "--bank", str(bank_path), "--dataset", str(test_path),
                          "--out", str(predictions)]) == 0
    assert hsmm_cli.main(["eval", "--predictions", str(predictions), "--out", str(metrics)]) == 0

    rows = read_csv_rows(str(predictions))
    assert len(rows) == 12
    assert {"index", "kind", "states", "true", "predicted", "log_prob", "all_zero"} <= set(rows[0])
    assert rows[0]["kind"] == "is-hsmm"
    assert rows[0]["states"] == "2"
    assert metrics.read_text().splitlines()[0] == "kind,states,label,precision,recall,f"
    assert read_csv_rows(str(metrics))[-1]["label"] == "macro"
    log_rows = read_csv_rows(str(log_path))
    assert log_rows[0]["delta"] == ""
    assert {r["label"] for r in log_rows} == {"label0", "label1", "label2"}


def test_eval_from_bank_and_repro(tmp_path):
    train_path, test_path = generate(tmp_path)
    bank_path = tmp_path / "bank.json"
    assert hsmm_cli.main(["train", "--dataset", str(train_path), "--out", str(bank_path), *FAST_MODEL]) == 0
    metrics = tmp_path / "metrics.csv"
    assert hsmm_cli.main(["eval", "--bank", str(bank_path), "--dataset", str(test_path), "--out", str(metrics)]) == 0
    assert read_csv_rows(str(metrics))[0]["kind"] == "hsmm"
    repro = tmp_path / "repro.csv"
    assert hsmm_cli.main(["repro", "--bank", str(bank_path), "--dataset", str(train_path), "--out", str(repro)]) == 0
    assert all(0.0 <= float(r["r"]) <= 1.0 for r in read_csv_rows(str(repro)))


def test_runs_are_deterministic(tmp_path):
    first, _ = generate(tmp_path / "a")
    second, _ = generate(tmp_path / "b")
    assert first.read_bytes() == second.read_bytes()
    banks = []
    for name in ("a", "b"):
        out = tmp_path / name / "bank.json"
        assert hsmm_cli.main(["--seed", "7", "train", "--dataset", str(first), "--out", str(out),
                              "--kind", "ilp-hsmm", *FAST_MODEL]) == 0
        banks.append(out.read_bytes())
    assert banks[0] == banks[1]


def test_missing_file_is_an_io_error(tmp_path, capsys):
    code = hsmm_cli.main(["train", "--dataset", str(tmp_path / "missing.jsonl"), "--out", str(tmp_path / "b.json")])
    assert code == 1
    assert "error[IO]" in capsys.readouterr().err


def test_malformed_dataset_is_a_schema_error(tmp_path, capsys):
    path = tmp_path / "bad.jsonl"
    path.write_text('{"label": "x", "obs": ["a"]}\nnot json\n')
    code = hsmm_cli.main(["train", "--dataset", str(path), "--out", str(tmp_path / "b.json")])
    assert code == 2
    assert "error[SCHEMA]: line 2:" in capsys.readouterr().err


def test_eval_needs_an_input(tmp_path, capsys):
    assert hsmm_cli.main(["eval", "--out", str(tmp_path / "m.csv")]) == 2
    assert "error[SCHEMA]" in capsys.readouterr().err


def test_small_comparison(tmp_path):
    out_dir = tmp_path / "compare"
    code = hsmm_cli.main(["compare", "--profile", "separable", "--kinds", "hsmm,ilp-hsmm", "--states-list", "2",
                          "--repetitions", "1", "--max-intervals", "1", "--dmax", "3", "--max-iters", "2",
                          "--out-dir", str(out_dir)])
    assert code == 0
    assert (out_dir / "metrics.csv").exists()
    assert [r["kind"] for r in read_csv_rows(str(out_dir / "repro.csv"))] == ["hsmm", "hsmm", "ilp-hsmm", "ilp-hsmm"]
    assert (out_dir / "repro.dat").read_text().startswith("# num_intervals hsmm ilp-hsmm\n")


def test_bench(tmp_path):
    profile = tmp_path / "profile.json"
    profile.write_text('{"num_labels": 1, "sequences_per_label": 2, "num_runs": 3, "alphabet_size": 3, '
                       '"d_max": 2, "l_max": 2}')
    out = tmp_path / "times.csv"
    assert hsmm_cli.main(["bench", "--profile", str(profile), "--sizes", "2", "--kinds", "hsmm",
                          "--states", "2", "--dmax", "2", "--max-iters", "2", "--out", str(out)]) == 0
    assert [r["phase"] for r in read_csv_rows(str(out))] == ["train", "recognize"]
