"""Two-stage SMILES VAE.

Stage 1 (``pretrain``) trains encoder and decoder on reconstruction + KL.
Stage 2 (``finetune``) freezes the encoder, perturbs latent codes with
isotropic Gaussian noise and adds two toxicity regression heads to the loss::

    total = kl + recon + alpha * tox_livestock + beta * tox_aqua
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import tensor as T
from .smiles import TokenVocabulary, tokenize
from .tensor import AdamState, GRUParams, Parameter, Tape, Tensor

GROUPS = ("encoder", "decoder", "heads")
HEAD_CLIP = 30.0


class CheckpointError(ValueError):
    pass


@dataclass
class ModelConfig:
    vocab_size: int = 0
    max_length: int = 120
    embedding_dim: int = 48
    hidden_dim: int = 128
    latent_dim: int = 32
    noise_sigma: float = 0.1
    alpha: float = 0.5
    beta: float = 0.5
    learning_rate: float = 5e-5
    epochs: int = 30
    seed: int = 42
    batch_size: int = 32
    # "regression": heads regress onto the record's labels.
    # "minimize": heads are pushed toward zero toxicity instead.
    toxicity_target: str = "regression"
    cell: str = "gru"

    def check(self, mode: str = "pretrain") -> None:
        for name in ("vocab_size", "max_length", "embedding_dim", "hidden_dim", "latent_dim",
                     "epochs", "batch_size"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.noise_sigma < 0 or self.alpha < 0 or self.beta < 0:
            raise ValueError("noise_sigma, alpha and beta must be non-negative")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if mode == "finetune" and self.alpha + self.beta <= 0:
            raise ValueError("alpha + beta must be positive when fine-tuning")
        if self.toxicity_target not in ("regression", "minimize"):
            raise ValueError(f"unknown toxicity_target {self.toxicity_target!r}")
        if self.cell != "gru":
            raise ValueError(f"unsupported recurrent cell {self.cell!r}")

    def to_text(self) -> str:
        return "".join(f"{f.name} = {getattr(self, f.name)}\n" for f in dataclasses.fields(self))

    @classmethod
    def from_text(cls, text: str, **overrides) -> "ModelConfig":
        types = {f.name: f.type for f in dataclasses.fields(cls)}
        values: dict = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"config line {lineno}: expected 'key = value'")
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in types:
                raise ValueError(f"config line {lineno}: unknown key {key!r}")
            cast = {"int": int, "float": float, "str": str}[types[key]]
            values[key] = cast(value)
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)

    @classmethod
    def load(cls, path: str | Path, **overrides) -> "ModelConfig":
        return cls.from_text(Path(path).read_text(encoding="utf-8"), **overrides)


def _uniform(rng, shape, fan_in):
    k = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-k, k, size=shape)


class SmilesVAE:
    """Recurrent encoder/decoder over token ids plus two toxicity heads."""

    def __init__(self, config: ModelConfig, vocab: TokenVocabulary):
        if config.vocab_size != len(vocab) or config.max_length != vocab.max_length:
            config = dataclasses.replace(config, vocab_size=len(vocab), max_length=vocab.max_length)
        config.check()
        self.config = config
        self.vocab = vocab
        rng = np.random.default_rng(config.seed)
        V, E, H, Z = config.vocab_size, config.embedding_dim, config.hidden_dim, config.latent_dim

        def p(name, data):
            return Parameter(data, name)

        def gru(prefix, n_in):
            return GRUParams(
                p(f"{prefix}.w_ih", _uniform(rng, (n_in, 3 * H), H)),
                p(f"{prefix}.w_hh", _uniform(rng, (H, 3 * H), H)),
                p(f"{prefix}.b_ih", np.zeros(3 * H)),
                p(f"{prefix}.b_hh", np.zeros(3 * H)),
            )

        self.enc_embedding = p("encoder.embedding", rng.normal(0.0, 0.1, (V, E)))
        self.enc_gru = gru("encoder.gru", E)
        self.mu_w = p("encoder.mu.w", _uniform(rng, (H, Z), H))
        self.mu_b = p("encoder.mu.b", np.zeros(Z))
        self.logvar_w = p("encoder.logvar.w", _uniform(rng, (H, Z), H))
        self.logvar_b = p("encoder.logvar.b", np.zeros(Z))

        self.dec_embedding = p("decoder.embedding", rng.normal(0.0, 0.1, (V, E)))
        self.latent_w = p("decoder.latent.w", _uniform(rng, (Z, H), Z))
        self.latent_b = p("decoder.latent.b", np.zeros(H))
        self.dec_gru = gru("decoder.gru", E + Z)
        self.out_w = p("decoder.out.w", _uniform(rng, (H, V), H))
        self.out_b = p("decoder.out.b", np.zeros(V))

        self.livestock_w = p("heads.livestock.w", _uniform(rng, (Z, 1), Z))
        self.livestock_b = p("heads.livestock.b", np.zeros(1))
        self.aqua_w = p("heads.aqua.w", _uniform(rng, (Z, 1), Z))
        self.aqua_b = p("heads.aqua.b", np.zeros(1))

    # -- parameter bookkeeping -------------------------------------------

    def parameters(self, group: str | None = None) -> list[Parameter]:
        out = [
            self.enc_embedding, *self.enc_gru.parameters(), self.mu_w, self.mu_b,
            self.logvar_w, self.logvar_b,
            self.dec_embedding, self.latent_w, self.latent_b, *self.dec_gru.parameters(),
            self.out_w, self.out_b,
            self.livestock_w, self.livestock_b, self.aqua_w, self.aqua_b,
        ]
        if group is None:
            return out
        return [q for q in out if q.name.split(".", 1)[0] == group]

    def freeze(self, group: str, frozen: bool = True) -> None:
        for q in self.parameters(group):
            q.frozen = frozen

    def group_digest(self, group: str) -> str:
        h = hashlib.sha256()
        for q in self.parameters(group):
            h.update(q.name.encode())
            h.update(_param_digest(q.data))
        return h.hexdigest()

    # -- forward passes ---------------------------------------------------

    def encode_ids(self, ids: np.ndarray, lengths: np.ndarray) -> tuple[Tensor, Tensor]:
        batch, steps = ids.shape
        h = Tensor(np.zeros((batch, self.config.hidden_dim)))
        for t in range(steps):
            x = T.take_rows(self.enc_embedding, ids[:, t])
            h_new = T.gru_cell(x, h, self.enc_gru)
            h = h_new if (lengths > t).all() else T.mask_select(lengths > t, h_new, h)
        mu = T.dense(h, self.mu_w, self.mu_b)
        logvar = T.dense(h, self.logvar_w, self.logvar_b)
        return mu, logvar

    def encode(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Posterior mean and log-variance for one one-hot matrix ``[max_length, vocab]``."""
        if x.shape != (self.config.max_length, self.config.vocab_size):
            raise T.ShapeError(
                f"expected one-hot of shape {(self.config.max_length, self.config.vocab_size)}, got {x.shape}"
            )
        ids = np.argmax(x, axis=1)
        ends = np.flatnonzero(ids == self.vocab.end_id)
        length = int(ends[0]) + 1 if ends.size else len(ids)
        mu, logvar = self.encode_ids(ids[None, :length], np.array([length]))
        return mu.data[0].copy(), logvar.data[0].copy()

    def _initial_hidden(self, z: Tensor) -> Tensor:
        return T.tanh(T.dense(z, self.latent_w, self.latent_b))

    def decode_logits(self, z: Tensor, ids: np.ndarray) -> Tensor:
        """Teacher-forced logits, rows ordered time-major: row ``t*B + b``."""
        h = self._initial_hidden(z)
        hs = []
        for t in range(ids.shape[1] - 1):
            x = T.concat([T.take_rows(self.dec_embedding, ids[:, t]), z], axis=1)
            h = T.gru_cell(x, h, self.dec_gru)
            hs.append(h)
        return T.dense(T.concat(hs, axis=0), self.out_w, self.out_b)

    def toxicity(self, z: Tensor) -> tuple[Tensor, Tensor]:
        """Livestock and aqua predictions in (0, 1), each shaped ``[B, 1]``."""
        def head(w, b):
            return T.sigmoid(T.clip(T.dense(z, w, b), -HEAD_CLIP, HEAD_CLIP))
        return head(self.livestock_w, self.livestock_b), head(self.aqua_w, self.aqua_b)

    def decode(
        self,
        z: np.ndarray,
        mode: str = "greedy",
        temperature: float = 1.0,
        rng: np.random.Generator | None = None,
    ) -> list[list[int]]:
        """Autoregressive decoding from SOS until EOS or ``max_length``.

        ``z`` is ``[latent]`` or ``[B, latent]``.  Returned id lists exclude
        SOS and EOS.  PAD, SOS and UNK are never emitted.
        """
        z = np.atleast_2d(np.asarray(z, dtype=np.float64))
        if z.shape[1] != self.config.latent_dim:
            raise T.ShapeError(f"latent vectors must have {self.config.latent_dim} dims")
        if mode == "sample" and temperature > 0 and rng is None:
            raise ValueError("sampling needs an rng")
        vocab = self.vocab
        batch = z.shape[0]
        zt = Tensor(z)
        h = self._initial_hidden(zt)
        prev = np.full(batch, vocab.start_id)
        done = np.zeros(batch, dtype=bool)
        out: list[list[int]] = [[] for _ in range(batch)]
        banned = [vocab.pad_id, vocab.start_id, vocab.unknown_id]
        for _ in range(vocab.max_length - 1):
            x = T.concat([T.take_rows(self.dec_embedding, prev), zt], axis=1)
            h = T.gru_cell(x, h, self.dec_gru)
            logits = T.dense(h, self.out_w, self.out_b).data.copy()
            logits[:, banned] = -np.inf
            if mode == "greedy" or temperature == 0:
                nxt = logits.argmax(axis=1)
            elif mode == "sample":
                scaled = logits / temperature
                scaled -= scaled.max(axis=1, keepdims=True)
                p = np.exp(scaled)
                cdf = np.cumsum(p / p.sum(axis=1, keepdims=True), axis=1)
                u = rng.random(batch)[:, None]
                nxt = np.minimum((cdf < u).sum(axis=1), logits.shape[1] - 1)
            else:
                raise ValueError(f"unknown decode mode {mode!r}")
            for b in np.flatnonzero(~done):
                if nxt[b] == vocab.end_id:
                    done[b] = True
                elif len(out[b]) < vocab.max_length - 2:
                    out[b].append(int(nxt[b]))
                else:
                    done[b] = True
            if done.all():
                break
            prev = nxt
        return out

    def ids_to_smiles(self, ids: Sequence[int]) -> str:
        return "".join(self.vocab.token_text(i) for i in ids)

    def generate(self, n: int, rng: np.random.Generator, temperature: float = 1.0) -> list[str]:
        """Decode ``n`` draws from the N(0, I) prior into raw (unfiltered) SMILES."""
        return self.generate_with_latents(n, rng, temperature)[0]

    def generate_with_latents(self, n: int, rng: np.random.Generator, temperature: float = 1.0):
        if n == 0:
            return [], np.zeros((0, self.config.latent_dim))
        z = rng.standard_normal((n, self.config.latent_dim))
        seqs = self.decode(z, "sample", temperature, rng)
        return [self.ids_to_smiles(s) for s in seqs], z

    def predict_toxicity(self, z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        liv, aq = self.toxicity(Tensor(np.atleast_2d(z)))
        return liv.data[:, 0].copy(), aq.data[:, 0].copy()


# --------------------------------------------------------------------------
# batches and training


@dataclass
class Batch:
    ids: np.ndarray  # [B, L] SOS ... EOS PAD...
    lengths: np.ndarray  # [B]
    livestock: np.ndarray | None = None
    aqua: np.ndarray | None = None

    @property
    def targets(self) -> tuple[np.ndarray, np.ndarray]:
        tgt = self.ids[:, 1:].T.reshape(-1)
        return tgt, tgt != 0


def make_batch(smiles: Sequence[str], vocab: TokenVocabulary, labels=None) -> Batch:
    seqs = []
    for s in smiles:
        toks = tokenize(s)
        if len(toks) > vocab.max_length - 2:
            raise ValueError(f"{s!r} has {len(toks)} tokens, limit is {vocab.max_length - 2}")
        seqs.append(vocab.encode_ids(toks))
    lengths = np.array([len(s) for s in seqs])
    ids = np.full((len(seqs), lengths.max()), vocab.pad_id, dtype=np.int64)
    for i, s in enumerate(seqs):
        ids[i, : len(s)] = s
    liv = aqua = None
    if labels is not None:
        liv = np.array([lab.livestock_norm for lab in labels], dtype=np.float64)
        aqua = np.array([lab.aqua_norm for lab in labels], dtype=np.float64)
    return Batch(ids, lengths, liv, aqua)


class Trainer:
    """Owns the optimizer state for one training stage."""

    def __init__(self, model: SmilesVAE, stage: str = "pretrain", seed: int | None = None):
        if stage not in ("pretrain", "finetune"):
            raise ValueError(f"unknown stage {stage!r}")
        cfg = model.config
        cfg.check(stage)
        self.model = model
        self.stage = stage
        if stage == "pretrain":
            for g in GROUPS:
                model.freeze(g, False)
            self.params = model.parameters("encoder") + model.parameters("decoder")
        else:
            model.freeze("encoder", True)
            model.freeze("decoder", False)
            model.freeze("heads", False)
            self.params = model.parameters("decoder") + model.parameters("heads")
        self.state = AdamState.for_params(self.params, learning_rate=cfg.learning_rate)
        self.rng = np.random.default_rng([cfg.seed if seed is None else seed, 1])

    def pretrain_losses(self, batch: Batch, rng: np.random.Generator) -> dict[str, Tensor]:
        m = self.model
        mu, logvar = m.encode_ids(batch.ids, batch.lengths)
        z = T.reparameterize(mu, logvar, rng)
        targets, mask = batch.targets
        recon = T.softmax_cross_entropy(m.decode_logits(z, batch.ids), targets, mask)
        kl = T.kl_diag_gaussian(mu, logvar)
        return {"recon": recon, "kl": kl, "total": T.add(recon, kl)}

    def finetune_losses(self, batch: Batch, rng: np.random.Generator) -> dict[str, Tensor]:
        if batch.livestock is None or batch.aqua is None:
            raise ValueError("fine-tuning batch is missing toxicity labels")
        m, cfg = self.model, self.model.config
        mu, logvar = m.encode_ids(batch.ids, batch.lengths)
        z = T.reparameterize(mu, logvar, rng)
        z_noisy = T.inject_noise(z, cfg.noise_sigma, rng)
        targets, mask = batch.targets
        recon = T.softmax_cross_entropy(m.decode_logits(z_noisy, batch.ids), targets, mask)
        kl = T.kl_diag_gaussian(mu, logvar)
        liv, aqua = m.toxicity(z_noisy)
        if cfg.toxicity_target == "minimize":
            liv_target, aqua_target = np.zeros_like(batch.livestock), np.zeros_like(batch.aqua)
        else:
            liv_target, aqua_target = batch.livestock, batch.aqua
        tox_l = T.mse(liv, liv_target)
        tox_a = T.mse(aqua, aqua_target)
        total = T.add(T.add(T.add(kl, recon), T.mul(tox_l, cfg.alpha)), T.mul(tox_a, cfg.beta))
        return {"recon": recon, "kl": kl, "tox_livestock": tox_l, "tox_aqua": tox_a, "total": total}

    def step(self, batch: Batch) -> dict[str, float]:
        losses_fn = self.pretrain_losses if self.stage == "pretrain" else self.finetune_losses
        with Tape() as tape:
            losses = losses_fn(batch, self.rng)
        grads = tape.gradients(losses["total"], self.params)
        T.adam_update(self.params, grads, self.state)
        return {k: v.item() for k, v in losses.items()}

    pretrain_step = step
    finetune_step = step

    def batches(self, items: Sequence, batch_size: int) -> Iterable[list]:
        order = self.rng.permutation(len(items))
        for lo in range(0, len(items), batch_size):
            yield [items[i] for i in order[lo : lo + batch_size]]


# --------------------------------------------------------------------------
# checkpoint container

MAGIC = b"PGVK"
FORMAT_VERSION = 1


def _param_digest(arr: np.ndarray) -> bytes:
    return hashlib.sha256(np.ascontiguousarray(arr, dtype="<f8").tobytes()).digest()


def save_checkpoint(model: SmilesVAE, path: str | Path | None = None, stage: str = "pretrain") -> bytes:
    digests = {g: model.group_digest(g) for g in GROUPS}
    blob = json.dumps(
        {"config": dataclasses.asdict(model.config), "stage": stage, "digests": digests}, sort_keys=True
    ).encode()
    vocab = "\n".join(model.vocab.tokens).encode()
    parts = [MAGIC, struct.pack("<I", FORMAT_VERSION),
             struct.pack("<I", len(blob)), blob, struct.pack("<I", len(vocab)), vocab]
    params = model.parameters()
    parts.append(struct.pack("<I", len(params)))
    for q in params:
        name = q.name.encode()
        parts += [struct.pack("<I", len(name)), name, struct.pack("<I", q.data.ndim)]
        parts += [struct.pack("<I", d) for d in q.shape]
        parts += [np.ascontiguousarray(q.data, dtype="<f8").tobytes(), _param_digest(q.data)]
    body = b"".join(parts)
    data = body + hashlib.sha256(body).digest()
    if path is not None:
        from .data import atomic_write_bytes

        atomic_write_bytes(path, data)
    return data


class _Reader:
    def __init__(self, data: bytes):
        self.data, self.pos = data, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError("checkpoint truncated")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def load_checkpoint(source: str | Path | bytes, require_groups: Sequence[str] = ()) -> tuple[SmilesVAE, str]:
    """Return ``(model, stage)``; raises :class:`CheckpointError` on any inconsistency.

    ``require_groups`` names parameter groups whose digest must be recorded in
    the header (fine-tuning requires ``"encoder"``).
    """
    data = source if isinstance(source, bytes) else Path(source).read_bytes()
    if len(data) < 40 or data[:4] != MAGIC:
        if data[:4] == MAGIC:
            raise CheckpointError("digest mismatch: checkpoint truncated")
        raise CheckpointError("not a checkpoint file (bad magic)")
    body, digest = data[:-32], data[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError("digest mismatch: file corrupted or truncated")
    r = _Reader(body)
    r.take(4)
    version = r.u32()
    if version != FORMAT_VERSION:
        raise CheckpointError(f"version mismatch: file has {version}, reader supports {FORMAT_VERSION}")
    meta = json.loads(r.take(r.u32()).decode())
    recorded = meta.get("digests", {})
    unknown = sorted(set(recorded) - set(GROUPS))
    if unknown:
        raise CheckpointError(f"unknown parameter group(s) {', '.join(unknown)}")
    for g in require_groups:
        if g not in recorded:
            raise CheckpointError(f"checkpoint records no {g} digest")
    tokens = tuple(r.take(r.u32()).decode().split("\n"))
    config = ModelConfig(**meta["config"])
    model = SmilesVAE(config, TokenVocabulary(tokens, config.max_length))
    expected = {q.name: q for q in model.parameters()}
    count = r.u32()
    if count != len(expected):
        raise CheckpointError(f"shape mismatch: {count} parameters stored, model has {len(expected)}")
    for _ in range(count):
        name = r.take(r.u32()).decode()
        dims = tuple(r.u32() for _ in range(r.u32()))
        if name not in expected:
            raise CheckpointError(f"unexpected parameter {name!r}")
        q = expected[name]
        if dims != q.shape:
            raise CheckpointError(f"shape mismatch for {name}: stored {dims}, expected {q.shape}")
        arr = np.frombuffer(r.take(8 * int(np.prod(dims, dtype=np.int64))), dtype="<f8").reshape(dims)
        if _param_digest(arr) != r.take(32):
            raise CheckpointError(f"digest mismatch for parameter {name}")
        q.data = arr.astype(np.float64).copy()
    if r.pos != len(body):
        raise CheckpointError("trailing bytes after parameter records")
    for g, d in recorded.items():
        if model.group_digest(g) != d:
            raise CheckpointError(f"digest mismatch for parameter group {g}")
    return model, meta.get("stage", "pretrain")
