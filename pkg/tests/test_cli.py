"""Command line round trips and exit codes."""

import json

import pytest

from citationsum.harness.cli import build_parser, main


@pytest.fixture(scope="module")
def data(tmp_path_factory):
    out = tmp_path_factory.mktemp("data")
    assert main(["build-dataset", "--num-docs", "16", "--out", str(out)]) == 0
    return out


def test_flags_mirror_config_keys():
    parser = build_parser()
    args = parser.parse_args(["train", "--corpus", "c", "--out", "o", "--encoder-lr", "0.1", "--per_ref_token_budget", "9"])
    assert args.cfg_encoder_lr == "0.1" and args.cfg_per_ref_token_budget == "9"


def test_select_train_evaluate(data, tmp_path, capsys):
    corpus = str(data / "corpus.jsonl")
    assert main(["select", "--corpus", corpus, "--split-sizes", "10,3,3", "--out", str(tmp_path / "sel")]) == 0
    split = str(tmp_path / "sel" / "split.json")
    sel = str(tmp_path / "sel" / "selection.jsonl")
    rec = json.loads((tmp_path / "sel" / "selection.jsonl").read_text().splitlines()[0])
    assert set(rec) == {"source_id", "ref_id", "sentence_indices", "score"}

    run = tmp_path / "run"
    code = main(["train", "--corpus", corpus, "--split", split, "--selection", sel, "--total-steps", "4",
                 "--checkpoint-every", "2", "--dump-graphs", "--out", str(run)])
    assert code == 0
    assert (run / "ckpt_000004.pt").exists() and (run / "graphs.jsonl").exists()
    assert (run / "best_checkpoint.txt").read_text().strip() in {"ckpt_000002.pt", "ckpt_000004.pt"}

    code = main(["evaluate", "--corpus", corpus, "--split", split, "--checkpoint", str(run / "ckpt_000004.pt"),
                 "--out", str(tmp_path / "ev")])
    assert code == 0
    lines = (tmp_path / "ev" / "eval_test.jsonl").read_text().splitlines()
    assert len(lines) == 3 + 1
    assert "R-1" in (tmp_path / "ev" / "eval_test.txt").read_text()

    code = main(["verify-theory", "--graph-dump", str(run / "graphs.jsonl"), "--out", str(tmp_path / "vt")])
    assert code == 0


def test_sweep_rho_table(data, tmp_path):
    code = main(["sweep-rho", "0.5", "0.6", "--corpus", str(data / "corpus.jsonl"), "--split-sizes", "10,3,3",
                 "--total-steps", "2", "--out", str(tmp_path)])
    assert code == 0
    table = (tmp_path / "rho_sweep.txt").read_text().splitlines()
    assert table[0].split() == ["rho", "R-1", "R-2", "R-L"]
    assert len(table) == 3
    assert len((tmp_path / "rho_sweep.jsonl").read_text().splitlines()) == 2


def test_verify_theory_pass_and_fail(tmp_path):
    assert main(["verify-theory", "--problems", "2", "--out", str(tmp_path / "ok")]) == 0
    text = (tmp_path / "ok" / "verify_theory.txt").read_text()
    assert text.rstrip().splitlines()[-1].startswith("PASS")
    assert main(["verify-theory", "--problems", "2", "--steps", "1", "--tolerance", "1e-12", "--out", str(tmp_path / "bad")]) == 1


def test_validation_error_exit_code(data, tmp_path, capsys):
    assert main(["train", "--corpus", str(data / "corpus.jsonl"), "--rho", "2", "--out", str(tmp_path)]) == 2
    assert main(["train", "--corpus", str(data / "corpus.jsonl"), "--total-steps", "x", "--out", str(tmp_path)]) == 2
    assert main(["train", "--corpus", str(tmp_path / "missing.jsonl"), "--out", str(tmp_path)]) == 2
    bad = tmp_path / "bad.txt"
    bad.write_text("rhoo = 0.5\n")
    assert main(["train", "--corpus", str(data / "corpus.jsonl"), "--config", str(bad), "--out", str(tmp_path)]) == 2
    assert "error" in capsys.readouterr().err


def test_degenerate_exit_code(data, tmp_path):
    code = main(["train", "--corpus", str(data / "corpus.jsonl"), "--rho", "1.0", "--total-steps", "1", "--out", str(tmp_path)])
    assert code == 3
