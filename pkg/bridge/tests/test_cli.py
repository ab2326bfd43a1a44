"""Command surface: exit codes, artifacts, error reporting."""

import json

from tabtext_bridge.cli import main

from conftest import BLOCKS, write_jsonl


def run_cli(capsys, *argv):
    rc = main([str(a) for a in argv])
    captured = capsys.readouterr()
    return rc, captured.out, captured.err


def test_export_command(flat_file, tmp_path, capsys):
    out = tmp_path / "index.bin"
    rc, stdout, _ = run_cli(capsys, "export", "--blocks", flat_file,
                            "--out", out, "--dim", "8")
    assert rc == 0
    assert "exported 3 blocks at dim 24 (first, model hash-v1)" in stdout
    assert out.exists() and (tmp_path / "ids.txt").exists()
    assert (tmp_path / "manifest.json").exists()


def test_finetune_then_generate(blocks_file, pairs_file, tmp_path, capsys):
    ckpt = tmp_path / "gen.ckpt.json"
    rc, stdout, _ = run_cli(capsys, "finetune", "--pairs", pairs_file,
                            "--blocks", blocks_file, "--checkpoint", ckpt)
    assert rc == 0 and "3 oracle pairs" in stdout

    out = tmp_path / "questions.jsonl"
    rc, stdout, stderr = run_cli(capsys, "generate", "--blocks", blocks_file,
                                 "--out", out, "--checkpoint", ckpt,
                                 "--beam-size", "2", "--max-length", "20")
    assert rc == 0 and "generated 3 questions for 3 blocks" in stdout
    assert stderr == ""
    lines = [json.loads(l) for l in open(out) if "_meta" not in l]
    assert len(lines) == len(BLOCKS)


def test_generate_reports_skips_on_stderr(tmp_path, capsys):
    block = dict(BLOCKS[0], title="")
    blocks = write_jsonl(tmp_path / "blocks.jsonl", [block])
    rc, stdout, stderr = run_cli(capsys, "generate", "--blocks", blocks,
                                 "--out", tmp_path / "q.jsonl")
    assert rc == 0
    assert "(1 skipped)" in stdout
    assert "skipped opera-1905#0: no template applies" in stderr


def test_bad_strategy_is_a_usage_error(flat_file, tmp_path, capsys):
    import pytest
    with pytest.raises(SystemExit) as exc:
        run_cli(capsys, "export", "--blocks", flat_file,
                "--out", tmp_path / "i.bin", "--strategy", "selfatt2")
    assert exc.value.code == 2


def test_runtime_error_prints_prefix_and_exits_2(tmp_path, capsys):
    rc, _, stderr = run_cli(capsys, "export", "--blocks",
                            tmp_path / "missing.jsonl", "--out",
                            tmp_path / "i.bin")
    assert rc == 2
    assert stderr.startswith("error:")


def test_unknown_model_over_cli(flat_file, tmp_path, capsys):
    rc, _, stderr = run_cli(capsys, "export", "--blocks", flat_file,
                            "--out", tmp_path / "i.bin", "--model", "bert-xxl")
    assert rc == 2 and "unknown model 'bert-xxl'" in stderr
