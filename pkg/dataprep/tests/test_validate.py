import json

import numpy as np

from rwen_dataprep.cli import main
from rwen_dataprep.export import export, validate


def _export_small(tmp_path):
    corpus = tmp_path / "c.txt"
    corpus.write_text("The shark eats quickly.\nFish can whisper stories.\n")
    out = tmp_path / "out"
    export(corpus, out, d_h=8, seed=2)
    return out


def _rewrite(out, mutate):
    path = out / "manifest.jsonl"
    records = [json.loads(l) for l in path.read_text().splitlines()]
    mutate(records)
    path.write_text("".join(json.dumps(r, sort_keys=True) + "\n"
                            for r in records))


def test_fresh_export_passes(tmp_path):
    out = _export_small(tmp_path)
    report = validate(out)
    assert report.ok and report.records == 2


def test_truncated_tensor_fails_naming_file(tmp_path):
    out = _export_small(tmp_path)
    target = next((out / "tensors").iterdir())
    target.write_bytes(target.read_bytes()[:-3])
    report = validate(out)
    assert not report.ok
    assert any(target.name in err for err in report.errors)


def test_span_gap_injection_fails(tmp_path):
    out = _export_small(tmp_path)

    def mutate(records):
        records[0]["spans"][1][0] += 1

    _rewrite(out, mutate)
    report = validate(out)
    assert any("span" in err for err in report.errors)


def test_bad_tree_fails(tmp_path):
    out = _export_small(tmp_path)

    def mutate(records):
        records[0]["head"] = [0] * len(records[0]["head"])

    _rewrite(out, mutate)
    report = validate(out)
    assert any("roots" in err for err in report.errors)


def test_missing_manifest_fails(tmp_path):
    report = validate(tmp_path)
    assert not report.ok


def test_cli_validate_exit_codes(tmp_path, capsys):
    out = _export_small(tmp_path)
    assert main(["validate", "--out", str(out)]) == 0
    next((out / "tensors").iterdir()).unlink()
    assert main(["validate", "--out", str(out)]) == 1


def test_cli_export(tmp_path, capsys):
    corpus = tmp_path / "c.txt"
    corpus.write_text("Blue fish eat.\n")
    assert main(["export", "--corpus", str(corpus), "--out",
                 str(tmp_path / "out"), "--d-h", "8"]) == 0
    assert "exported 1 sentences" in capsys.readouterr().out


def test_cli_unavailable_backend(tmp_path):
    corpus = tmp_path / "c.txt"
    corpus.write_text("hello\n")
    assert main(["export", "--corpus", str(corpus), "--out",
                 str(tmp_path / "out"), "--encoder", "bogus"]) == 1
