import json

import pytest

from conflict_audit import cli


def run(capsys, *argv):
    code = cli.main(list(argv))
    return code, capsys.readouterr()


def test_all_then_report(tmp_path, capsys):
    out = str(tmp_path / "r")
    code, io = run(capsys, "all", "--synthetic", "40", "--out", out, "--n-boot", "50", "--n-perm", "50")
    assert code == 0 and io.out.strip().endswith("report.json")
    code, io = run(capsys, "report", "--out", out, "--print", "--n-boot", "50", "--n-perm", "50")
    assert code == 0 and set(json.loads(io.out)) == {"models", "pooled", "provenance"}


@pytest.mark.parametrize("argv,code", [
    (["infer", "--endpoint", "bogus"], 2),
    (["infer", "--endpoint", "http://127.0.0.1:9"], 3),
    (["metrics"], 4),
    (["ingest"], 2),
    (["ingest", "--synthetic", "10", "--positive-label", "Q"], 2),
    (["ingest", "--input", "/nonexistent.csv"], 4),
    (["ingest", "--synthetic", "10", "--country", "Atlantis"], 4),
])
def test_exit_codes(tmp_path, capsys, argv, code):
    got, io = run(capsys, *argv, "--out", str(tmp_path))
    assert got == code and io.err


def test_unknown_flag_exits_2(capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(["infer", "--no-such-flag"])
    assert exc.value.code == 2


def test_env_strategy_defaults(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("STRATEGY", "few_shot")
    monkeypatch.setenv("NUM_EXAMPLES", "2")
    assert run(capsys, "ingest", "--synthetic", "5", "--out", str(tmp_path))[0] == 0
    assert (tmp_path / "Cameroon" / "few_shot_2" / "_pooled" / "corpus.jsonl").exists()
    # explicit flags win over the environment
    assert run(capsys, "ingest", "--synthetic", "5", "--out", str(tmp_path), "--strategy", "zero_shot")[0] == 0
    assert (tmp_path / "Cameroon" / "zero_shot").is_dir()


def test_legitbias_from_counts(capsys):
    code, io = run(capsys, "legitbias", "--counts", "28,62,362,339")
    d = json.loads(io.out)
    assert code == 0 and d["delta_lb_pp"] == pytest.approx(10.55, abs=0.01)


def test_sample_review(tmp_path, capsys):
    run(capsys, "ingest", "--synthetic", "20", "--out", str(tmp_path))
    code, io = run(capsys, "perturb", "--sample-review", "3", "--out", str(tmp_path))
    rows = [json.loads(line) for line in io.out.splitlines()]
    assert code == 0 and len(rows) == 3 and all(r["original"] != r["perturbed"] for r in rows)
