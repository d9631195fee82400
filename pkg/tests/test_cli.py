import argparse
import hashlib
import json
import os
import struct
import subprocess
import sys
from pathlib import Path

import pytest

from toxvae import fixture
from toxvae.cli import build_parser, main, manifest_path, read_candidates
from toxvae.data import read_labeled

SNAPSHOTS = Path(__file__).parent / "snapshots"
SUBCOMMANDS = ("curate", "pretrain", "finetune", "generate", "evaluate", "gradcheck")


def fx(name):
    return str(fixture(name))


def curate(out, *extra, data="pesticides.csv", cache=None):
    cache = cache or fx("cache.tsv")
    return main(["curate", "--input", fx(data), "--cache", cache, "--offline", "--out", str(out), *extra])


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    """A short pretrain and finetune shared by the pipeline tests."""
    d = tmp_path_factory.mktemp("pipeline")
    assert curate(d / "labeled.csv") == 0
    assert main(["pretrain", "--corpus", fx("corpus_1000.smi"), "--config", fx("toy.cfg"),
                 "--out", str(d / "pre.ckpt"), "--steps", "15"]) == 0
    assert main(["finetune", "--init", str(d / "pre.ckpt"), "--data", str(d / "labeled.csv"),
                 "--config", fx("toy.cfg"), "--out", str(d / "ft.ckpt"), "--steps", "5"]) == 0
    return d


# -- curate -----------------------------------------------------------------


def test_curate_mixture_labels(tmp_path):
    out = tmp_path / "t3.csv"
    assert curate(out, data="herbicide_mixtures.csv") == 0
    rows = read_labeled(out)
    assert len(rows) == 4
    for rec, lab in rows:
        assert (lab.livestock_raw, lab.aqua_raw) == (10, 1)
        assert (lab.livestock_norm, lab.aqua_norm) == (0.01, 0.0625)
        assert rec.smiles.count(".") == len(rec.components) - 1


def test_curate_is_byte_identical(tmp_path):
    assert curate(tmp_path / "a.csv") == 0
    assert curate(tmp_path / "b.csv") == 0
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    assert len(read_labeled(tmp_path / "a.csv")) == 36


def test_curate_cold_cache_offline_exits_3(tmp_path, capsys):
    out = tmp_path / "x.csv"
    assert curate(out, cache=str(tmp_path / "empty.tsv")) == 3
    assert not out.exists()
    assert "Atrazine" in capsys.readouterr().err


def _bad_dataset(tmp_path):
    text = fx("herbicide_mixtures.csv")
    p = tmp_path / "bad.csv"
    p.write_text(Path(text).read_text() + "Mystery,Class IX,Class III,,,\n")
    return p


def test_curate_rejects_exit_2(tmp_path):
    p = _bad_dataset(tmp_path)
    out = tmp_path / "o.csv"
    code = main(["curate", "--input", str(p), "--cache", fx("cache.tsv"), "--offline", "--out", str(out)])
    assert code == 2 and not out.exists()
    report = Path(str(out) + ".rejects.tsv").read_text()
    assert report == "6\tunknown livestock class 'Class IX'\n"


def test_curate_allow_rejects(tmp_path):
    p = _bad_dataset(tmp_path)
    out = tmp_path / "o.csv"
    code = main(["curate", "--input", str(p), "--cache", fx("cache.tsv"), "--offline", "--out", str(out),
                 "--allow-rejects", "--rejects", str(tmp_path / "r.tsv")])
    assert code == 0 and len(read_labeled(out)) == 4
    assert (tmp_path / "r.tsv").read_text().startswith("6\t")


def test_curate_manifest(tmp_path):
    out = tmp_path / "t3.csv"
    curate(out, data="herbicide_mixtures.csv")
    m = json.loads(manifest_path(out).read_text())
    assert m["command"] == "curate"
    digest = hashlib.sha256(fixture("herbicide_mixtures.csv").read_bytes()).hexdigest()
    assert m["inputs"][fx("herbicide_mixtures.csv")] == digest
    assert str(out) in m["outputs"] and m["started"] <= m["finished"]


def test_missing_input_exits_2(tmp_path):
    assert main(["curate", "--input", str(tmp_path / "nope.csv"), "--cache", fx("cache.tsv"),
                 "--offline", "--out", str(tmp_path / "o.csv")]) == 2


# -- usage ------------------------------------------------------------------


@pytest.mark.parametrize("argv", [[], ["bogus"], ["generate", "--n", "3"], ["generate", "--ckpt", "x", "--n", "-1",
                                                                          "--out", "o"],
                                  ["pretrain", "--corpus", "c", "--out", "o", "--steps", "zero"]])
def test_usage_errors_exit_1(argv, capsys):
    assert main(argv) == 1
    assert "usage error" in capsys.readouterr().err


# -- training and checkpoints -------------------------------------------------


def test_pretrain_manifest_and_logs(work):
    m = json.loads(manifest_path(work / "pre.ckpt").read_text())
    assert m["seed"] == 42 and len(m["config_digest"]) == 64
    assert set(m["inputs"]) == {fx("corpus_1000.smi"), fx("toy.cfg")}


def test_pretrain_logs_json_lines(tmp_path, capsys):
    corpus = tmp_path / "c.smi"
    corpus.write_text("CCO\nc1ccccc1\n# comment\n\nCN\n")
    assert main(["pretrain", "--corpus", str(corpus), "--config", fx("toy.cfg"),
                 "--out", str(tmp_path / "p.ckpt"), "--steps", "3"]) == 0
    records = [json.loads(line) for line in capsys.readouterr().err.splitlines()]
    assert [r["step"] for r in records] == [1, 2, 3]
    assert {"recon", "kl", "total", "elapsed", "epoch"} <= set(records[0])


def test_bad_checkpoint_exits_4(tmp_path, work):
    bad = tmp_path / "bad.ckpt"
    data = bytearray((work / "pre.ckpt").read_bytes())
    data[100] ^= 0xFF
    bad.write_bytes(bytes(data))
    assert main(["generate", "--ckpt", str(bad), "--n", "2", "--out", str(tmp_path / "g.txt")]) == 4
    assert not (tmp_path / "g.txt").exists()


def test_finetune_requires_encoder_digest(tmp_path, work):
    data = (work / "pre.ckpt").read_bytes()
    n = struct.unpack("<I", data[8:12])[0]
    meta = json.loads(data[12 : 12 + n])
    del meta["digests"]["encoder"]
    blob = json.dumps(meta, sort_keys=True).encode()
    body = data[:8] + struct.pack("<I", len(blob)) + blob + data[12 + n : -32]
    stripped = tmp_path / "stripped.ckpt"
    stripped.write_bytes(body + hashlib.sha256(body).digest())
    code = main(["finetune", "--init", str(stripped), "--data", str(work / "labeled.csv"),
                 "--out", str(tmp_path / "ft.ckpt"), "--steps", "1"])
    assert code == 4


def test_finetune_config_shape_mismatch(tmp_path, work):
    cfg = tmp_path / "other.cfg"
    cfg.write_text(fixture("toy.cfg").read_text().replace("latent_dim = 8", "latent_dim = 9"))
    code = main(["finetune", "--init", str(work / "pre.ckpt"), "--data", str(work / "labeled.csv"),
                 "--config", str(cfg), "--out", str(tmp_path / "ft.ckpt"), "--steps", "1"])
    assert code == 4


def test_finetune_keeps_encoder(work):
    from toxvae.vae import load_checkpoint

    pre, _ = load_checkpoint(work / "pre.ckpt")
    ft, stage = load_checkpoint(work / "ft.ckpt")
    assert stage == "finetune"
    assert pre.group_digest("encoder") == ft.group_digest("encoder")
    assert pre.group_digest("decoder") != ft.group_digest("decoder")


# -- generate and evaluate ----------------------------------------------------


def test_generate_is_deterministic(tmp_path, work):
    for name in ("a", "b"):
        assert main(["generate", "--ckpt", str(work / "ft.ckpt"), "--n", "25", "--out", str(tmp_path / name)]) == 0
    assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()
    assert (tmp_path / "a.sidecar.tsv").read_bytes() == (tmp_path / "b.sidecar.tsv").read_bytes()
    assert len(read_candidates(tmp_path / "a")) == 25
    lines = (tmp_path / "a.sidecar.tsv").read_text().splitlines()
    assert lines[0] == "index\tsmiles\tvalid\tlivestock\taqua" and len(lines) == 26
    for line in lines[1:]:
        _, _, valid, liv, aqua = line.split("\t")
        assert valid in ("0", "1") and 0.0 <= float(liv) <= 1.0 and 0.0 <= float(aqua) <= 1.0


def test_generate_seed_changes_output(tmp_path, work):
    for name, seed in (("a", "1"), ("b", "2")):
        main(["generate", "--ckpt", str(work / "ft.ckpt"), "--n", "25", "--seed", seed, "--out", str(tmp_path / name)])
    assert (tmp_path / "a").read_bytes() != (tmp_path / "b").read_bytes()


def test_generate_zero(tmp_path, work):
    assert main(["generate", "--ckpt", str(work / "ft.ckpt"), "--n", "0", "--out", str(tmp_path / "g")]) == 0
    assert (tmp_path / "g").read_text() == ""


def test_evaluate_outputs(tmp_path, capsys):
    out = tmp_path / "report.tsv"
    pairs = tmp_path / "pairs.tsv"
    code = main(["evaluate", "--original", fx("eval_original.smi"), "--generated", fx("eval_generated.smi"),
                 "--out", str(out), "--emit-pairs", str(pairs)])
    assert code == 0
    text = Path(str(out) + ".txt").read_text()
    assert capsys.readouterr().out == text
    assert out.read_text().splitlines()[1] == "Metric\tOriginal\tGenerated"
    assert len(pairs.read_text().splitlines()) == 13
    assert manifest_path(out).exists()


def test_evaluate_empty_generated_exits_2(tmp_path):
    empty = tmp_path / "g.txt"
    empty.write_text("")
    assert main(["evaluate", "--original", fx("eval_original.smi"), "--generated", str(empty),
                 "--out", str(tmp_path / "r.tsv")]) == 2


# -- gradcheck ----------------------------------------------------------------


def test_gradcheck_exits_0(tmp_path, capsys):
    out = tmp_path / "gc.txt"
    assert main(["gradcheck", "--seeds", "1", "--out", str(out)]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines and all(line.startswith("PASS\t") for line in lines)
    assert out.read_text().splitlines() == lines


def test_gradcheck_failure_exits_5(monkeypatch):
    from toxvae import gradcheck

    fake = [gradcheck.CheckResult("add", 0, 1.0, 1e-4)]
    monkeypatch.setattr(gradcheck, "run_all", lambda *a, **k: fake)
    assert main(["gradcheck", "--seeds", "1"]) == 5


# -- help text ----------------------------------------------------------------


def _subparsers(parser):
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            return action.choices
    return {}


def _help(name, monkeypatch):
    monkeypatch.setenv("COLUMNS", "100")
    parser = build_parser()
    return parser.format_help() if name == "toxvae" else _subparsers(parser)[name].format_help()


@pytest.mark.parametrize("name", ("toxvae",) + SUBCOMMANDS)
def test_help_snapshot(name, monkeypatch):
    text = _help(name, monkeypatch)
    path = SNAPSHOTS / f"help_{name}.txt"
    if os.environ.get("UPDATE_SNAPSHOTS"):
        path.write_text(text)
    assert text == path.read_text()


@pytest.mark.parametrize("name", SUBCOMMANDS)
def test_every_flag_documented(name, monkeypatch):
    text = _help(name, monkeypatch)
    parser = _subparsers(build_parser())[name]
    for action in parser._actions:
        for flag in action.option_strings:
            assert flag in text
        assert action.help, action.option_strings


def test_console_script_entry_point():
    proc = subprocess.run([sys.executable, "-m", "toxvae.cli", "--version"], capture_output=True, text=True)
    assert proc.returncode == 0 and proc.stdout.startswith("toxvae ")
