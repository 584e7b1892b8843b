import json

import pytest

from batchgemba.cli import EXIT_CONFIG, EXIT_TRANSPORT, main
from batchgemba.metaeval import read_run_records
from conftest import SAMPLE_PATH


@pytest.fixture
def oracle(tmp_path):
    path = tmp_path / "oracle.yaml"
    path.write_text("mode: oracle\n")
    return f"mock:{path}"


def run(*argv):
    return main([str(a) for a in argv])


def test_evaluate_writes_runs_and_report(tmp_path, oracle, capsys):
    out = tmp_path / "o"
    assert run("evaluate", "--dataset", SAMPLE_PATH, "--provider", oracle, "--model", "gpt/x",
               "--batch-sizes", "1,4", "--out", out) == 0
    runs = out / "runs" / "gpt_x" / "plain"
    assert sorted(p.name for p in runs.iterdir()) == ["bs1.jsonl", "bs4.jsonl"]
    recs = read_run_records(runs / "bs4.jsonl")
    assert recs[0].meta["config"]["batch_sizes"] == [1, 4]
    assert (out / "report" / "pearson.csv").exists()
    assert "1.0000" in capsys.readouterr().out


def test_full_grid_writes_five_run_files(tmp_path, oracle):
    out = tmp_path / "o"
    assert run("evaluate", "--dataset", SAMPLE_PATH, "--provider", oracle, "--out", out) == 0
    assert len(list((out / "runs").rglob("bs*.jsonl"))) == 5


def test_report_reads_directories(tmp_path, oracle, capsys):
    out = tmp_path / "o"
    run("evaluate", "--dataset", SAMPLE_PATH, "--provider", oracle, "--batch-size", "2", "--out", out)
    run("evaluate", "--dataset", SAMPLE_PATH, "--provider", oracle, "--batch-size", "1", "--out", out)
    capsys.readouterr()
    assert run("report", out, "--format", "csv", "--out", tmp_path / "rep") == 0
    text = capsys.readouterr().out
    assert "Model,Comp.,1,2" in text
    assert (tmp_path / "rep" / "degradation.csv").read_text().count("\n") == 3


def test_report_needs_runs(capsys):
    assert run("report") == EXIT_CONFIG
    assert "error" in capsys.readouterr().err


def test_transport_failure_exit_code(tmp_path):
    script = tmp_path / "s.yaml"
    script.write_text("fail:\n  'eval:*':\n    times: -1\n")
    code = run("evaluate", "--dataset", SAMPLE_PATH, "--provider", f"mock:{script}", "--batch-size", "16",
               "--max-attempts", "1", "--out", tmp_path / "o")
    assert code == EXIT_TRANSPORT


def test_missing_dataset(tmp_path, oracle):
    assert run("evaluate", "--dataset", tmp_path / "none.jsonl", "--provider", oracle) == EXIT_CONFIG


def test_config_precedence(tmp_path, oracle):
    cfg = tmp_path / "c.yaml"
    cfg.write_text(f"batch_sizes: [2]\nmodel: from-config\nprovider: '{oracle}'\n")
    out = tmp_path / "o"
    assert run("evaluate", "--config", cfg, "--dataset", SAMPLE_PATH, "--model", "from-cli", "--out", out) == 0
    assert [p.name for p in (out / "runs").iterdir()] == ["from-cli"]
    assert [p.name for p in (out / "runs" / "from-cli" / "plain").iterdir()] == ["bs2.jsonl"]


def test_token_audit(capsys):
    assert run("token-audit", "--dataset", SAMPLE_PATH, "--batch-sizes", "1,4,16", "--format", "jsonl") == 0
    rows = [json.loads(line) for line in capsys.readouterr().out.splitlines()]
    assert [r["batch_size"] for r in rows] == [1, 4, 16]
    assert float(rows[1]["ratio_vs_bs1"]) > 2


def test_token_audit_compressed(capsys):
    assert run("token-audit", "--dataset", SAMPLE_PATH, "--batch-sizes", "1", "--compress",
               "--compressor", "random:0.5", "--format", "csv") == 0
    header, row = capsys.readouterr().out.splitlines()
    assert header.endswith("segment_reduction")
    assert float(row.split(",")[-1]) == pytest.approx(0.5, abs=0.01)


def test_gen_stage1(tmp_path):
    out = tmp_path / "s1.jsonl"
    assert run("gen-stage1", "--dataset", SAMPLE_PATH, "--count", "40", "--out", out) == 0
    recs = [json.loads(line) for line in out.read_text().splitlines()]
    assert len(recs) == 40
    assert sum(r["meta"]["split"] == "holdout" for r in recs) == 4


def test_gen_stage1_requires_count(tmp_path):
    assert run("gen-stage1", "--dataset", SAMPLE_PATH, "--out", tmp_path / "x") == EXIT_CONFIG


def test_gen_pairs(tmp_path, oracle, capsys):
    out = tmp_path / "pairs.jsonl"
    assert run("gen-pairs", "--dataset", SAMPLE_PATH, "--provider", oracle, "--compressor", "random",
               "--candidates", "3", "--count", "5", "--out", out) == 0
    recs = [json.loads(line) for line in out.read_text().splitlines()]
    assert len(recs) == 5
    assert set(recs[0]) == {"prompt", "chosen", "rejected", "meta"}
    assert "pairs: 5" in capsys.readouterr().out


def test_import_wmt(tmp_path):
    tsv = tmp_path / "m.tsv"
    tsv.write_text("system\tdoc\tdoc_id\tseg_id\trater\tsource\ttarget\tcategory\tseverity\n"
                   "s\td\t1\t1\tr\tHallo\t<v>Helo</v>\tFluency/Spelling\tMinor\n", encoding="utf-8")
    out = tmp_path / "ds.jsonl"
    assert run("import-wmt", "--dataset", tsv, "--lang-pair", "de-en", "--out", out) == 0
    rec = json.loads(out.read_text())
    assert rec["human_score"] == -1.0 and rec["spans"][0]["end"] == 4
    assert run("import-wmt", "--dataset", tsv, "--lang-pair", "deen", "--out", out) == EXIT_CONFIG
