from __future__ import annotations

import json

from moeextract.cli import main


def test_cli_dump_feeds_downstream_metrics(checkpoint_dir, gold_path,
                                           tmp_path, capsys):
    """Contract check: a dump from a real checkpoint over the ten-sentence
    corpus validates cleanly, its header matches the model config, and the
    routing metrics pipeline runs end to end on the file."""
    from transformers import AutoConfig

    from moepos.cli import main as metrics_main
    from moepos.trace import read_trace, validate_trace

    trace_path = tmp_path / "dump.trace.jsonl"
    rc = main([
        "--model", str(checkpoint_dir),
        "--corpus", str(gold_path),
        "--output", str(trace_path),
    ])
    assert rc == 0
    out = capsys.readouterr().out
    assert "wrote" in out and "records" in out

    header, records = read_trace(trace_path)
    result = validate_trace(header, records)
    assert result.ok
    assert not result.violations

    model_config = AutoConfig.from_pretrained(checkpoint_dir)
    assert header.n_layers == model_config.num_hidden_layers
    assert header.n_experts == model_config.num_local_experts
    assert header.k == model_config.num_experts_per_tok

    out_dir = tmp_path / "metrics"
    rc = metrics_main(["metrics", str(trace_path), "--out-dir", str(out_dir)])
    assert rc == 0
    for name in ("spec_report.md", "spec_matrix.tsv", "kl_report.md"):
        assert (out_dir / name).is_file()


def test_cli_reports_errors_as_json(gold_path, tmp_path, capsys):
    rc = main([
        "--model", str(tmp_path / "missing_model"),
        "--corpus", str(gold_path),
        "--output", str(tmp_path / "x.trace.jsonl"),
    ])
    assert rc == 1
    payload = json.loads(capsys.readouterr().err)
    assert set(payload) == {"error", "message"}


def test_cli_rejects_bad_precision_flag(checkpoint_dir, gold_path, tmp_path,
                                        capsys):
    import pytest

    with pytest.raises(SystemExit):
        main([
            "--model", str(checkpoint_dir),
            "--corpus", str(gold_path),
            "--output", str(tmp_path / "x.trace.jsonl"),
            "--precision", "int4",
        ])
    assert "invalid choice" in capsys.readouterr().err
