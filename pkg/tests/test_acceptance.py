"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

The lines are collected in ``RESULTS`` and echoed in the terminal summary
by ``conftest.py`` so they appear even when output capture is on.
"""

import contextlib
import dataclasses
import io
import json
import math
import random
import re
import time
from pathlib import Path

import numpy as np
import pytest

from toxvae import fixture, gradcheck
from toxvae import tensor as T
from toxvae.cli import main
from toxvae.data import AquaClass, LivestockClass, map_aqua_class, map_livestock_class, normalize, read_labeled
from toxvae.metrics import REPORT_ROWS, levenshtein_similarity, logp, sas, validity_rate
from toxvae.smiles import build_vocabulary, is_valid_smiles, load_golden
from toxvae.tensor import Tensor
from toxvae.vae import ModelConfig, SmilesVAE, Trainer, make_batch

from .conftest import read_smiles
from .test_metrics import oracle_similarity

RESULTS: list[str] = []


def record(number: int, title: str, ok: bool, detail: str) -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] {number:2d}. {title}: {detail}"
    RESULTS.append(line)
    print(line)
    assert ok, line


def fx(name):
    return str(fixture(name))


def toy_config(**changes) -> ModelConfig:
    return dataclasses.replace(ModelConfig.load(fixture("toy.cfg")), **changes)


def run_cli(argv) -> tuple[int, list[dict]]:
    err = io.StringIO()
    with contextlib.redirect_stderr(err), contextlib.redirect_stdout(io.StringIO()):
        code = main([str(a) for a in argv])
    logs = []
    for line in err.getvalue().splitlines():
        with contextlib.suppress(json.JSONDecodeError):
            logs.append(json.loads(line))
    return code, logs


def pipeline(d: Path) -> dict:
    d.mkdir(parents=True, exist_ok=True)
    codes, logs = {}, {}
    steps = [
        ("curate", ["curate", "--input", fx("pesticides.csv"), "--cache", fx("cache.tsv"), "--offline",
                    "--out", d / "labeled.csv"]),
        ("pretrain", ["pretrain", "--corpus", fx("corpus_1000.smi"), "--config", fx("toy.cfg"), "--seed", 42,
                      "--out", d / "pre.ckpt"]),
        ("finetune", ["finetune", "--init", d / "pre.ckpt", "--data", d / "labeled.csv", "--config", fx("toy.cfg"),
                      "--seed", 42, "--out", d / "ft.ckpt"]),
        ("generate", ["generate", "--ckpt", d / "ft.ckpt", "--n", 200, "--seed", 42, "--out", d / "cands.txt"]),
        ("evaluate", ["evaluate", "--original", fx("eval_original.smi"), "--generated", d / "cands.txt",
                      "--out", d / "report.tsv", "--emit-pairs", d / "pairs.tsv"]),
    ]
    for name, argv in steps:
        codes[name], logs[name] = run_cli(argv)
    return {"codes": codes, "logs": logs, "dir": d}


@pytest.fixture(scope="module")
def pipelines(tmp_path_factory):
    t0 = time.perf_counter()
    base = tmp_path_factory.mktemp("acceptance")
    runs = [pipeline(base / "run1"), pipeline(base / "run2")]
    return runs, time.perf_counter() - t0


# --------------------------------------------------------------------------


def test_01_label_exactness(tmp_path):
    t0 = time.perf_counter()
    code, _ = run_cli(["curate", "--input", fx("herbicide_mixtures.csv"), "--cache", fx("cache.tsv"), "--offline",
                       "--out", tmp_path / "t3.csv"])
    elapsed = time.perf_counter() - t0
    rows = read_labeled(tmp_path / "t3.csv") if code == 0 else []
    exact = len(rows) == 4 and all(
        lab.livestock_norm == 0.01 and lab.aqua_norm == 0.0625 for _, lab in rows
    )
    record(1, "label exactness", exact and elapsed < 1.0,
           f"{len(rows)} rows at 0.01/0.0625, exit {code}, {elapsed:.3f}s (< 1 s)")


def test_02_mapping_consistency():
    L, A = LivestockClass, AquaClass
    liv = {L.II: 1.0, L.III: 0.1, L.IV: 0.01, L.UNCLASSIFIED: 0.0}
    aqua = {A.I: 1.0, A.II: 0.25, A.IIS: 0.25, A.III: 0.0625, A.EXEMPT: 0.0}
    got_l = {c: normalize(map_livestock_class(c), 0, 1000) for c in liv}
    got_a = {c: normalize(map_aqua_class(c), 0, 16) for c in aqua}
    ok = got_l == liv and got_a == aqua
    record(2, "mapping consistency", ok, f"livestock {len(liv)} classes, aqua {len(aqua)} classes exact")


def test_03_gradient_fidelity():
    t0 = time.perf_counter()
    results = gradcheck.run_all(range(10))
    elapsed = time.perf_counter() - t0
    failed = [r for r in results if not r.passed]
    prim = max(r.error for r in results if r.tol == gradcheck.PRIMITIVE_TOL)
    e2e = max(r.error for r in results if r.tol == gradcheck.END_TO_END_TOL)
    record(3, "gradient fidelity", not failed and elapsed < 60,
           f"{len(results)} checks, {len(failed)} failed, worst primitive {prim:.2e} (< 1e-4), "
           f"worst end-to-end {e2e:.2e} (< 1e-3), {elapsed:.1f}s (< 60 s)")


def test_04_freeze_invariance(corpus):
    t0 = time.perf_counter()
    rows = read_labeled_fixture()
    cfg = toy_config()
    model = SmilesVAE(cfg, build_vocabulary(corpus, cfg.max_length))
    trainer = Trainer(model, "finetune")
    before = {g: model.group_digest(g) for g in ("encoder", "decoder", "heads")}
    enc_bytes = [p.data.tobytes() for p in model.parameters("encoder")]
    for _ in range(100):
        trainer.step(make_batch([s for s, _ in rows], model.vocab, [lab for _, lab in rows]))
    elapsed = time.perf_counter() - t0
    enc_same = model.group_digest("encoder") == before["encoder"] and enc_bytes == [
        p.data.tobytes() for p in model.parameters("encoder")]
    changed = model.group_digest("decoder") != before["decoder"] or model.group_digest("heads") != before["heads"]
    record(4, "freeze invariance", enc_same and changed and elapsed < 60,
           f"encoder digest unchanged={enc_same}, decoder/heads changed={changed}, {elapsed:.1f}s (< 60 s)")


def read_labeled_fixture():
    import tempfile

    with tempfile.TemporaryDirectory() as d:
        out = Path(d) / "labeled.csv"
        code, _ = run_cli(["curate", "--input", fx("pesticides.csv"), "--cache", fx("cache.tsv"), "--offline",
                           "--out", out])
        assert code == 0
        return [(rec.smiles, lab) for rec, lab in read_labeled(out) if len(rec.smiles) <= 60]


def test_05_loss_law(pipelines):
    runs, _ = pipelines
    steps = [r for r in runs[0]["logs"]["finetune"] if "step" in r]
    worst = 0.0
    for r in steps:
        expected = r["kl"] + r["recon"] + 0.5 * r["tox_livestock"] + 0.5 * r["tox_aqua"]
        worst = max(worst, abs(r["total"] - expected) / max(abs(expected), 1e-300))
    cfg = ModelConfig.load(fixture("toy.cfg"))
    ok = bool(steps) and worst <= 1e-12 and (cfg.alpha, cfg.beta) == (0.5, 0.5)
    record(5, "loss law", ok, f"{len(steps)} fine-tune steps, worst relative gap {worst:.1e} (<= 1e-12)")


def test_06_training_trend(corpus):
    t0 = time.perf_counter()
    drops = []
    for seed in range(5):
        cfg = toy_config(seed=seed)
        model = SmilesVAE(cfg, build_vocabulary(corpus, cfg.max_length))
        trainer = Trainer(model, "pretrain")
        totals = []
        while len(totals) < 200:
            for chunk in trainer.batches(corpus, cfg.batch_size):
                totals.append(trainer.step(make_batch(chunk, model.vocab))["total"])
                if len(totals) == 200:
                    break
        drops.append((totals[0], totals[-1]))
    trend_ok = all(last < first for first, last in drops)

    item = "CC(=O)Nc1ccc(O)cc1"
    cfg = ModelConfig(learning_rate=1e-3, seed=42)
    model = SmilesVAE(cfg, build_vocabulary([item], 32))
    trainer = Trainer(model, "pretrain")
    batch = make_batch([item], model.vocab)
    reached = None
    for step in range(1, 501):
        if trainer.step(batch)["recon"] < 0.05:
            reached = step
            break
    elapsed = time.perf_counter() - t0
    summary = ", ".join(f"{a:.2f}->{b:.2f}" for a, b in drops)
    record(6, "training trend", trend_ok and reached is not None and elapsed < 600,
           f"200-step totals {summary}; single-item recon < 0.05 at step {reached} (<= 500), "
           f"{elapsed:.1f}s (< 600 s)")


def test_07_validity_oracle():
    golden = load_golden(fixture("smiles_golden.tsv"))
    agree = sum(is_valid_smiles(s) == want for s, want, _ in golden)
    rate = validity_rate(["CCO", "C1CC", "C"])
    ok = len(golden) >= 50 and agree == len(golden) and abs(rate - 66.67) <= 0.01
    record(7, "validity oracle", ok, f"golden {agree}/{len(golden)} agree, three-item rate {rate:.4f}% (66.67 +- 0.01)")


def test_08_metric_oracles():
    rng = random.Random(8)
    mismatches = 0
    for _ in range(500):
        a = "".join(rng.choice("CNOcn()=#1234[]+-") for _ in range(rng.randint(0, 20)))
        b = "".join(rng.choice("CNOcn()=#1234[]+-") for _ in range(rng.randint(0, 20)))
        mismatches += levenshtein_similarity(a, b) != oracle_similarity(a, b)
    mixtures = read_smiles("mixtures.smi")
    additive = sum(logp(m) == sum(logp(p) for p in m.split(".")) for m in mixtures)
    pairs = [line.split("\t") for line in fixture("ring_pairs.tsv").read_text().splitlines()]
    monotone = sum(0.0 <= sas(a) < sas(b) <= 1.0 for a, b in pairs)
    ok = mismatches == 0 and additive == len(mixtures) == 50 and monotone == len(pairs) == 20
    record(8, "metric oracles", ok, f"levenshtein 500 pairs, {mismatches} mismatches; logp additive "
           f"{additive}/{len(mixtures)}; sas ring-monotone in [0,1] {monotone}/{len(pairs)}")


def test_09_kl_correctness():
    rng = np.random.default_rng(9)
    n, dim, worst = 100_000, 3, 0.0
    for _ in range(20):
        mu = rng.normal(0, 1, dim)
        logvar = rng.normal(0, 0.7, dim)
        closed = T.kl_diag_gaussian(Tensor(mu), Tensor(logvar)).item()
        mus, lvs = np.tile(mu, (n, 1)), np.tile(logvar, (n, 1))
        z = T.reparameterize(Tensor(mus), Tensor(lvs), rng).data
        log_q = -0.5 * (lvs + (z - mus) ** 2 / np.exp(lvs)).sum(axis=1)
        log_p = -0.5 * (z ** 2).sum(axis=1)
        samples = log_q - log_p
        se = samples.std(ddof=1) / math.sqrt(n)
        worst = max(worst, abs(samples.mean() - closed) / se)
    zero = T.kl_diag_gaussian(Tensor(np.zeros(4)), Tensor(np.zeros(4))).item()
    record(9, "KL correctness", worst < 3 and zero == 0.0 and math.copysign(1.0, zero) > 0,
           f"20 pairs, worst deviation {worst:.2f} SE (< 3); KL at (0,0) = {zero!r}")


def test_10_noise_statistics():
    sigma, n = 0.1, 100_000
    eps = T.inject_noise(Tensor(np.zeros(n)), sigma, np.random.default_rng(10)).data
    mean, var = eps.mean(), eps.var()
    ok = abs(mean) < 4 * sigma / math.sqrt(n) and abs(var - sigma ** 2) < 0.05 * sigma ** 2
    record(10, "noise statistics", ok, f"mean {mean:.2e} (|.| < {4 * sigma / math.sqrt(n):.2e}), "
           f"variance {var:.5f} (within 5% of {sigma ** 2:g})")


def test_11_pipeline_determinism(pipelines):
    runs, elapsed = pipelines
    codes = [r["codes"] for r in runs]
    all_ok = all(c == 0 for cs in codes for c in cs.values())
    names = ["labeled.csv", "pre.ckpt", "ft.ckpt", "cands.txt", "cands.txt.sidecar.tsv", "report.tsv",
             "report.tsv.txt", "pairs.tsv"]
    d1, d2 = runs[0]["dir"], runs[1]["dir"]
    same = [n for n in names if all_ok and (d1 / n).read_bytes() == (d2 / n).read_bytes()]
    n_cands = len((d1 / "cands.txt").read_text().split("\n")) - 1 if all_ok else 0
    record(11, "pipeline determinism", all_ok and len(same) == len(names) and n_cands == 200 and elapsed < 900,
           f"exit codes {codes[0]}, {len(same)}/{len(names)} artifacts byte-identical, {n_cands} candidates, "
           f"two runs in {elapsed:.1f}s (< 900 s)")


def test_12_report_shape(pipelines):
    runs, _ = pipelines
    lines = (runs[0]["dir"] / "report.tsv").read_text().splitlines()
    body = [line.split("\t") for line in lines[2:]]
    labels = tuple(row[0] for row in body)
    cells = [c for row in body for c in row[1:]]
    values = [float(x) for c in cells for x in re.findall(r"-?\d+(?:\.\d+)?(?:e[-+]?\d+)?", c)]
    finite = "n/a" not in cells and all(math.isfinite(v) for v in values)
    numeric = len(values)
    original_validity = dict((row[0], row[1]) for row in body).get("Validity (%)")
    ok = labels == REPORT_ROWS and finite and float(original_validity) == 100.0
    record(12, "report shape", ok, f"rows {list(labels)}, {numeric} finite values, original validity {original_validity}")
