import json

import pytest

from helpers import BUBBLE_SORT_SOURCE, make_curriculum, planted_partition_corpus

from tutorkit import cli, train
from tutorkit.corpus import save_corpus


def run_cli(args):
    return cli.main(args)


def test_help_exits_zero(capsys):
    with pytest.raises(SystemExit) as exc:
        run_cli(["--help"])
    assert exc.value.code == 0
    assert "tutorkit" in capsys.readouterr().out


def test_invalid_flag_nonzero():
    with pytest.raises(SystemExit) as exc:
        run_cli(["segment", "--nonsense"])
    assert exc.value.code != 0


def test_missing_command_nonzero():
    with pytest.raises(SystemExit) as exc:
        run_cli([])
    assert exc.value.code != 0


def test_segment_structured(tmp_path, capsys):
    source = tmp_path / "task.py"
    source.write_text(BUBBLE_SORT_SOURCE, encoding="utf-8")
    assert run_cli(["segment", "--source", str(source), "--format", "structured"]) == 0
    plan = json.loads(capsys.readouterr().out)
    assert [item["tag"] for item in plan] == [
        "function_definition", "loop", "loop", "conditional", "swap", "return",
    ]


def test_segment_bad_path_nonzero(capsys):
    assert run_cli(["segment", "--source", "/does/not/exist.py"]) == 1
    assert "error:" in capsys.readouterr().err


def test_segment_syntax_error_nonzero(tmp_path, capsys):
    source = tmp_path / "bad.py"
    source.write_text("for x in", encoding="utf-8")
    assert run_cli(["segment", "--source", str(source)]) == 1
    assert "error:" in capsys.readouterr().err


def test_split_data_empty_corpus(tmp_path, capsys):
    corpus = tmp_path / "empty.jsonl"
    corpus.write_text("", encoding="utf-8")
    manifest = tmp_path / "manifest.json"
    code = run_cli(
        ["split-data", "--corpus", str(corpus), "--out-manifest", str(manifest)]
    )
    assert code == 0
    assert json.loads(manifest.read_text()) == {}


def test_split_data_bad_path(capsys):
    assert run_cli(["split-data", "--corpus", "/missing.jsonl"]) == 1
    assert capsys.readouterr().err.startswith("error:")


def test_split_data_planted_fixture(tmp_path, capsys):
    data, planted = planted_partition_corpus()
    corpus = tmp_path / "corpus.jsonl"
    save_corpus(data, str(corpus))
    manifest = tmp_path / "manifest.json"
    heatmap = tmp_path / "heat.csv"
    code = run_cli(
        [
            "split-data",
            "--corpus", str(corpus),
            "--threshold", "0.6",
            "--seed", "13",
            "--dimension", "64",
            "--net-epochs", "150",
            "--out-manifest", str(manifest),
            "--out-heatmap", str(heatmap),
        ]
    )
    assert code == 0
    entries = json.loads(manifest.read_text())
    local = [rid for rid, e in entries.items() if e["set"] == "local"]
    assert set(planted) <= set(local)
    assert 0.01 <= len(local) / len(entries) <= 0.05
    assert heatmap.exists()


def test_train_zero_epochs_checkpoint_identical_to_init(tmp_path):
    corpus_path = tmp_path / "curriculum.jsonl"
    save_corpus(make_curriculum(), str(corpus_path))
    out = tmp_path / "runs"
    code = run_cli(
        [
            "train",
            "--corpus", str(corpus_path),
            "--epochs", "0",
            "--seed", "3",
            "--window", "6",
            "--hidden", "16",
            "--rank", "3",
            "--out-dir", str(out),
        ]
    )
    assert code == 0
    trained = train.load_model(str(out / "model_llm3.bin"))
    corpus = make_curriculum()
    vocab = "".join(sorted({ch for r in corpus for ch in train.render_record(r)}))
    init = train.create_tiny_model(vocab, window=6, hidden=16, rank=3, seed=3)
    ref = tmp_path / "init.bin"
    train.save_model(init, str(ref))
    assert ref.read_bytes() == (out / "model_llm3.bin").read_bytes()
    report = json.loads((out / "phase_report.json").read_text())
    assert report["variant"] == "three_phase"
    assert len(report["phases"]) == 3


def test_train_fixture_reports_three_phases_and_prune(tmp_path):
    corpus_path = tmp_path / "curriculum.jsonl"
    save_corpus(make_curriculum(), str(corpus_path))
    out = tmp_path / "runs"
    code = run_cli(
        [
            "train",
            "--corpus", str(corpus_path),
            "--epochs", "40",
            "--reg-epochs", "30",
            "--reg-lambda", "0.08",
            "--seed", "0",
            "--window", "6",
            "--hidden", "16",
            "--rank", "3",
            "--out-dir", str(out),
        ]
    )
    assert code == 0
    report = json.loads((out / "phase_report.json").read_text())
    assert [p["phase"] for p in report["phases"]] == [1, 2, 3]
    assert report["prune"]["params_after"] <= report["prune"]["params_before"]
    assert report["reg_losses"]


def test_train_single_phase_flag(tmp_path):
    corpus_path = tmp_path / "c.jsonl"
    save_corpus(make_curriculum(), str(corpus_path))
    out = tmp_path / "runs"
    code = run_cli(
        [
            "train",
            "--corpus", str(corpus_path),
            "--epochs", "5",
            "--single-phase",
            "--window", "6",
            "--hidden", "16",
            "--rank", "3",
            "--out-dir", str(out),
        ]
    )
    assert code == 0
    report = json.loads((out / "phase_report.json").read_text())
    assert report["variant"] == "single_phase"
    assert (out / "model_single.bin").exists()


def test_eval_text_and_structured(capsys):
    assert run_cli(["eval", "--variant", "full,wo_filter", "--seeds", "0,1"]) == 0
    text = capsys.readouterr().out
    assert "full" in text and "wo_filter" in text
    assert run_cli(
        ["eval", "--variant", "full", "--seeds", "0,1", "--format", "structured"]
    ) == 0
    data = json.loads(capsys.readouterr().out)
    assert data["per_variant"]["full"]["leak_rate"] == 0.0


def test_eval_deterministic(capsys):
    run_cli(["eval", "--variant", "wo_filter", "--seeds", "4,5", "--format", "structured"])
    first = capsys.readouterr().out
    run_cli(["eval", "--variant", "wo_filter", "--seeds", "4,5", "--format", "structured"])
    assert capsys.readouterr().out == first


def test_eval_unknown_variant(capsys):
    assert run_cli(["eval", "--variant", "nope"]) == 1


def test_build_index_and_search(tmp_path, capsys):
    corpus_path = tmp_path / "c.jsonl"
    save_corpus(make_curriculum(), str(corpus_path))
    out = tmp_path / "know.vdb"
    code = run_cli(
        [
            "build-index",
            "--corpus", str(corpus_path),
            "--out", str(out),
            "--clusters", "4",
            "--dimension", "64",
        ]
    )
    assert code == 0
    assert out.read_bytes()[:4] == b"VDB1"
    capsys.readouterr()
    code = run_cli(
        ["search", "--index", str(out), "--query", "the cat sat on the mat",
         "--k", "3", "--format", "structured"]
    )
    assert code == 0
    hits = json.loads(capsys.readouterr().out)
    assert hits[0]["id"] == "t0"
    assert hits[0]["score"] > 0.99
    # clustered probe through the CLI
    code = run_cli(
        ["search", "--index", str(out), "--query", "the cat sat on the mat",
         "--k", "3", "--nprobe", "4", "--format", "structured"]
    )
    assert code == 0
    probed = json.loads(capsys.readouterr().out)
    assert probed[0]["id"] == "t0"


def test_session_interactive_loop(tmp_path, capsys, monkeypatch):
    import io

    source = tmp_path / "task.py"
    source.write_text(BUBBLE_SORT_SOURCE, encoding="utf-8")
    monkeypatch.setattr(
        "sys.stdin", io.StringIO("How do I sort?\ndone next\nquit\n")
    )
    assert run_cli(["session", "--source", str(source)]) == 0
    out = capsys.readouterr().out
    assert "plan has 6 steps" in out
    assert "[guided] tutor:" in out


def test_env_variable_mirror(tmp_path, capsys, monkeypatch):
    source = tmp_path / "task.py"
    source.write_text("x = 1", encoding="utf-8")
    monkeypatch.setenv("TUTORKIT_FORMAT", "structured")
    monkeypatch.setenv("TUTORKIT_SOURCE", str(source))
    assert run_cli(["segment"]) == 0
    plan = json.loads(capsys.readouterr().out)
    assert plan[0]["tag"] == "assignment"
