"""Command-line pipeline: curate, pretrain, finetune, generate, evaluate, gradcheck.

Exit codes: 0 ok, 1 usage, 2 schema/input, 3 name resolution, 4 checkpoint,
5 non-finite numerics or failed gradient check.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import math
import sys
import time
from datetime import datetime, timezone
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .data import (
    PubChemClient,
    ResolutionError,
    SchemaError,
    SmilesCache,
    atomic_write_text,
    emit,
    ingest,
    label_record,
    read_labeled,
    resolve_smiles,
)
from .metrics import build_report
from .smiles import SmilesError, build_vocabulary, is_valid_smiles, tokenize
from .tensor import NonFiniteError
from .vae import CheckpointError, ModelConfig, SmilesVAE, Trainer, load_checkpoint, make_batch, save_checkpoint

EXIT_OK, EXIT_USAGE, EXIT_SCHEMA, EXIT_RESOLUTION, EXIT_CHECKPOINT, EXIT_NUMERIC = range(6)
DEFAULT_SEED = 42
SHAPE_FIELDS = ("embedding_dim", "hidden_dim", "latent_dim", "cell")


class UsageError(Exception):
    pass


class GradcheckFailed(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# --------------------------------------------------------------------------
# plumbing


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="milliseconds")


@dataclasses.dataclass
class RunManifest:
    command: str
    config_digest: str
    inputs: dict[str, str]
    seed: int | None
    started: str
    finished: str = ""
    outputs: list[str] = dataclasses.field(default_factory=list)

    def write(self, path: str | Path) -> None:
        self.finished = _now()
        atomic_write_text(path, json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True) + "\n")


def manifest_path(out: str | Path) -> Path:
    return Path(str(out) + ".manifest.json")


def _start(command: str, config_text: str, inputs: Sequence[str | Path], seed: int | None) -> RunManifest:
    for p in inputs:
        if not Path(p).is_file():
            raise FileNotFoundError(f"input file not found: {p}")
    return RunManifest(
        command=command,
        config_digest=hashlib.sha256(config_text.encode()).hexdigest(),
        inputs={str(p): sha256_file(p) for p in inputs},
        seed=seed,
        started=_now(),
    )


def _args_text(args: argparse.Namespace) -> str:
    items = {k: str(v) for k, v in vars(args).items() if k != "func"}
    return json.dumps(items, sort_keys=True)


def log_record(**fields) -> None:
    """One JSON object per line on stderr."""
    print(json.dumps(fields, sort_keys=True), file=sys.stderr, flush=True)


def read_smiles_list(path: str | Path) -> list[str]:
    """Non-empty, non-comment lines (corpus and reference files)."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    return [s.strip() for s in lines if s.strip() and not s.lstrip().startswith("#")]


def read_candidates(path: str | Path) -> list[str]:
    """One candidate per line, empty lines kept (an empty decode is a candidate)."""
    text = Path(path).read_text(encoding="utf-8")
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    return lines


def _training_config(path: str | None, seed: int | None) -> ModelConfig:
    cfg = ModelConfig.load(path) if path else ModelConfig()
    if seed is not None:
        cfg = dataclasses.replace(cfg, seed=seed)
    return cfg


def _train(trainer: Trainer, items: list, make, steps: int, stage: str) -> dict[str, float]:
    t0 = time.perf_counter()
    step, epoch, last = 0, 0, {}
    while step < steps:
        epoch += 1
        for chunk in trainer.batches(items, trainer.model.config.batch_size):
            step += 1
            last = trainer.step(make(chunk))
            if not all(math.isfinite(v) for v in last.values()):
                raise NonFiniteError(f"non-finite loss at step {step}: {last}")
            log_record(stage=stage, step=step, epoch=epoch, elapsed=round(time.perf_counter() - t0, 3), **last)
            if step >= steps:
                break
    return last


# --------------------------------------------------------------------------
# commands


def cmd_curate(args) -> int:
    manifest = _start("curate", _args_text(args), [args.input] + ([args.cache] if Path(args.cache).exists() else []), None)
    result = ingest(args.input)
    cache = SmilesCache(args.cache)
    network = "offline" if args.offline else "online"
    client = None if args.offline else PubChemClient()
    records, labels, missing = [], [], []
    for rec in result.records:
        smiles = rec.smiles
        if smiles is None:
            try:
                smiles = resolve_smiles(rec.name, cache, network, client)
            except ResolutionError as exc:
                missing += [m for m in exc.missing if m not in missing]
                continue
        else:
            tokenize(smiles)
        records.append(dataclasses.replace(rec, smiles=smiles))
        labels.append(label_record(rec))
    if missing:
        raise ResolutionError(missing)
    rejects_path = Path(args.rejects or str(args.out) + ".rejects.tsv")
    atomic_write_text(rejects_path, result.rejects_report())
    manifest.outputs.append(str(rejects_path))
    if result.rejects and not args.allow_rejects:
        log_record(command="curate", rejects=len(result.rejects), report=str(rejects_path))
        raise SchemaError(f"{len(result.rejects)} row(s) rejected; see {rejects_path}")
    atomic_write_text(args.out, emit(records, labels))
    manifest.outputs.insert(0, str(args.out))
    manifest.write(manifest_path(args.out))
    log_record(command="curate", records=len(records), rejects=len(result.rejects))
    return EXIT_OK


def cmd_pretrain(args) -> int:
    cfg = _training_config(args.config, args.seed)
    manifest = _start("pretrain", cfg.to_text(), [args.corpus] + ([args.config] if args.config else []), cfg.seed)
    corpus = read_smiles_list(args.corpus)
    if not corpus:
        raise SchemaError(f"corpus {args.corpus} is empty")
    vocab = build_vocabulary(corpus, cfg.max_length)
    model = SmilesVAE(cfg, vocab)
    trainer = Trainer(model, "pretrain")
    per_epoch = math.ceil(len(corpus) / model.config.batch_size)
    steps = args.steps if args.steps is not None else model.config.epochs * per_epoch
    _train(trainer, corpus, lambda chunk: make_batch(chunk, vocab), steps, "pretrain")
    save_checkpoint(model, args.out, stage="pretrain")
    manifest.config_digest = hashlib.sha256(model.config.to_text().encode()).hexdigest()
    manifest.outputs.append(str(args.out))
    manifest.write(manifest_path(args.out))
    return EXIT_OK


def _finetune_config(base: ModelConfig, path: str | None, seed: int | None) -> ModelConfig:
    cfg = base
    if path:
        loaded = ModelConfig.load(path)
        for name in SHAPE_FIELDS:
            if getattr(loaded, name) != getattr(base, name):
                raise CheckpointError(
                    f"config {name}={getattr(loaded, name)} does not match checkpoint {getattr(base, name)}"
                )
        keep = {"vocab_size", "max_length", *SHAPE_FIELDS}
        updates = {f.name: getattr(loaded, f.name) for f in dataclasses.fields(loaded) if f.name not in keep}
        cfg = dataclasses.replace(base, **updates)
    if seed is not None:
        cfg = dataclasses.replace(cfg, seed=seed)
    return cfg


def cmd_finetune(args) -> int:
    manifest = _start("finetune", "", [args.init, args.data] + ([args.config] if args.config else []), None)
    model, stage = load_checkpoint(args.init, require_groups=("encoder",))
    model.config = _finetune_config(model.config, args.config, args.seed)
    manifest.config_digest = hashlib.sha256(model.config.to_text().encode()).hexdigest()
    manifest.seed = model.config.seed
    rows = read_labeled(args.data)
    limit = model.vocab.max_length - 2
    items, skipped = [], 0
    for rec, lab in rows:
        if not rec.smiles:
            skipped += 1
            continue
        if len(tokenize(rec.smiles)) > limit:
            skipped += 1
            continue
        items.append((rec.smiles, lab))
    log_record(command="finetune", init_stage=stage, usable=len(items), skipped=skipped)
    if not items:
        raise SchemaError(f"no labeled rows in {args.data} fit max_length {model.vocab.max_length}")
    trainer = Trainer(model, "finetune")
    per_epoch = math.ceil(len(items) / model.config.batch_size)
    steps = args.steps if args.steps is not None else model.config.epochs * per_epoch

    def make(chunk):
        return make_batch([s for s, _ in chunk], model.vocab, [lab for _, lab in chunk])

    _train(trainer, items, make, steps, "finetune")
    save_checkpoint(model, args.out, stage="finetune")
    manifest.outputs.append(str(args.out))
    manifest.write(manifest_path(args.out))
    return EXIT_OK


def cmd_generate(args) -> int:
    manifest = _start("generate", _args_text(args), [args.ckpt], args.seed)
    model, _ = load_checkpoint(args.ckpt)
    rng = np.random.default_rng(args.seed)
    candidates, z = model.generate_with_latents(args.n, rng, args.temperature)
    liv, aqua = model.predict_toxicity(z) if args.n else (np.zeros(0), np.zeros(0))
    sidecar = ["index\tsmiles\tvalid\tlivestock\taqua"]
    for i, s in enumerate(candidates):
        sidecar.append(f"{i}\t{s}\t{int(is_valid_smiles(s))}\t{float(liv[i])!r}\t{float(aqua[i])!r}")
    sidecar_path = Path(str(args.out) + ".sidecar.tsv")
    atomic_write_text(args.out, "".join(s + "\n" for s in candidates))
    atomic_write_text(sidecar_path, "\n".join(sidecar) + "\n")
    manifest.outputs += [str(args.out), str(sidecar_path)]
    manifest.write(manifest_path(args.out))
    valid = sum(int(line.split("\t")[2]) for line in sidecar[1:])
    log_record(command="generate", n=args.n, valid=valid)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    manifest = _start("evaluate", _args_text(args), [args.original, args.generated], None)
    original = read_smiles_list(args.original)
    generated = read_candidates(args.generated)
    if not original or not generated:
        raise SchemaError("original and generated sets must be non-empty")
    report = build_report(original, generated)
    text_path = Path(str(args.out) + ".txt")
    atomic_write_text(args.out, report.to_tsv())
    atomic_write_text(text_path, report.to_text())
    manifest.outputs += [str(args.out), str(text_path)]
    if args.emit_pairs:
        atomic_write_text(args.emit_pairs, report.pairs_tsv())
        manifest.outputs.append(str(args.emit_pairs))
    manifest.write(manifest_path(args.out))
    sys.stdout.write(report.to_text())
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from . import gradcheck

    config = ModelConfig.load(args.config) if args.config else None
    results = gradcheck.run_all(range(args.seeds), config=config)
    worst: dict[str, gradcheck.CheckResult] = {}
    for r in results:
        if r.name not in worst or not r.error <= worst[r.name].error:
            worst[r.name] = r
    lines = [f"{'PASS' if r.passed else 'FAIL'}\t{name}\t{r.error:.3e}\t< {r.tol:g}" for name, r in worst.items()]
    report = "\n".join(lines) + "\n"
    sys.stdout.write(report)
    if args.out:
        manifest = _start("gradcheck", config.to_text() if config else "", [args.config] if args.config else [], None)
        atomic_write_text(args.out, report)
        manifest.outputs.append(str(args.out))
        manifest.write(manifest_path(args.out))
    failed = [r for r in results if not r.passed]
    if failed:
        raise GradcheckFailed(f"{len(failed)} of {len(results)} finite-difference checks failed")
    return EXIT_OK


# --------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="toxvae", description="Toxicity-aware SMILES VAE pipeline.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", required=True)

    p = sub.add_parser("curate", help="label a pesticide dataset and resolve SMILES",
                       description="Map hazard classes to normalized labels and resolve names to SMILES.")
    p.add_argument("--input", required=True, help="dataset CSV (name, livestock_class, aqua_class, latitude, longitude[, smiles])")
    p.add_argument("--cache", required=True, help="name<TAB>smiles cache file (created if missing)")
    p.add_argument("--offline", action="store_true", help="resolve from the cache only, never query PubChem")
    p.add_argument("--out", required=True, help="labeled CSV to write")
    p.add_argument("--rejects", help="rejects report path (default: OUT.rejects.tsv)")
    p.add_argument("--allow-rejects", action="store_true", help="exit 0 even when rows were rejected")
    p.set_defaults(func=cmd_curate)

    p = sub.add_parser("pretrain", help="train encoder and decoder on a SMILES corpus",
                       description="Stage 1: reconstruction + KL on an unlabeled corpus.")
    p.add_argument("--corpus", required=True, help="SMILES file, one per line, '#' comments allowed")
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--out", required=True, help="checkpoint to write")
    p.add_argument("--steps", type=int, help="optimizer steps (default: epochs x batches per epoch)")
    p.add_argument("--seed", type=int, help="seed for init, batching and sampling (default: config seed, 42)")
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("finetune", help="fine-tune decoder and toxicity heads with a frozen encoder",
                       description="Stage 2: frozen encoder, latent noise, toxicity-aware loss.")
    p.add_argument("--init", required=True, help="pretrained checkpoint")
    p.add_argument("--data", required=True, help="labeled CSV written by curate")
    p.add_argument("--out", required=True, help="checkpoint to write")
    p.add_argument("--config", help="config file; shape keys must match the checkpoint")
    p.add_argument("--steps", type=int, help="optimizer steps (default: epochs x batches per epoch)")
    p.add_argument("--seed", type=int, help="seed for batching and noise (default: config seed, 42)")
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("generate", help="sample candidate SMILES from the prior",
                       description="Decode N(0, I) latent draws into raw candidates plus a sidecar report.")
    p.add_argument("--ckpt", required=True, help="checkpoint to sample from")
    p.add_argument("--n", type=int, required=True, help="number of candidates")
    p.add_argument("--seed", type=int, default=DEFAULT_SEED, help="sampling seed (default: 42)")
    p.add_argument("--temperature", type=float, default=1.0, help="softmax temperature; 0 decodes greedily")
    p.add_argument("--out", required=True, help="candidate file; sidecar goes to OUT.sidecar.tsv")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("evaluate", help="compare generated candidates with an original set",
                       description="LogP, SAS, validity and similarity report.")
    p.add_argument("--original", required=True, help="reference SMILES file")
    p.add_argument("--generated", required=True, help="candidate file, one per line")
    p.add_argument("--out", required=True, help="TSV report; aligned text goes to OUT.txt")
    p.add_argument("--emit-pairs", help="write original<TAB>generated<TAB>similarity lines here")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("gradcheck", help="finite-difference check of every differentiable op",
                       description="Exit 0 iff every primitive and end-to-end check passes.")
    p.add_argument("--config", help="also check a model with this config's layer sizes")
    p.add_argument("--seeds", type=int, default=10, help="number of random seeds (default: 10)")
    p.add_argument("--out", help="write the per-check summary here")
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "n", 0) is not None and getattr(args, "n", 0) < 0:
            raise UsageError("--n must be non-negative")
        if getattr(args, "steps", None) is not None and args.steps <= 0:
            raise UsageError("--steps must be positive")
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ResolutionError as exc:
        print(f"resolution error: {exc}", file=sys.stderr)
        return EXIT_RESOLUTION
    except CheckpointError as exc:
        print(f"checkpoint error: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT
    except (NonFiniteError, FloatingPointError, GradcheckFailed) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (SchemaError, SmilesError, FileNotFoundError, ValueError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA


if __name__ == "__main__":
    raise SystemExit(main())
