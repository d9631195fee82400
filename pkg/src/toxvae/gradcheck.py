"""Finite-difference checks for every differentiable primitive and a tiny model."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import tensor as T
from .data import ToxicityLabel
from .smiles import build_vocabulary
from .tensor import GRUParams, Tape, Tensor

PRIMITIVE_TOL = 1e-4
END_TO_END_TOL = 1e-3


@dataclass(frozen=True)
class CheckResult:
    name: str
    seed: int
    error: float
    tol: float

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.error) and self.error < self.tol)


def _away_from(x: np.ndarray, points, margin: float = 0.05) -> np.ndarray:
    # keep entries off kinks so central differences see a smooth function
    for p in points:
        close = np.abs(x - p) < margin
        x = np.where(close, p + np.sign(x - p + 1e-300) * margin, x)
    return x


def _cases(rng: np.random.Generator) -> dict[str, tuple[Callable[..., Tensor], list[np.ndarray]]]:
    def r(*shape):
        return rng.standard_normal(shape)

    ids = rng.integers(0, 5, size=7)
    targets = rng.integers(0, 4, size=6)
    tmask = np.array([1, 1, 0, 1, 1, 0], dtype=bool)
    mask = np.array([True, False, True])
    noise_seed = int(rng.integers(2**31))
    H = 3
    return {
        "add": (T.add, [r(3, 4), r(3, 4)]),
        "add_bias": (T.add, [r(3, 4), r(4)]),
        "sub": (T.sub, [r(3, 4), r(3, 4)]),
        "mul": (T.mul, [r(3, 4), r(3, 4)]),
        "mul_scalar": (lambda a: T.mul(a, 0.7), [r(3, 4)]),
        "matmul": (T.matmul, [r(3, 4), r(4, 2)]),
        "concat": (lambda a, b: T.concat([a, b], axis=1), [r(3, 2), r(3, 4)]),
        "slice": (lambda a: T.slice_(a, (slice(None), slice(1, 3))), [r(3, 4)]),
        "sigmoid": (T.sigmoid, [r(3, 4)]),
        "tanh": (T.tanh, [r(3, 4)]),
        "relu": (T.relu, [_away_from(r(3, 4), [0.0])]),
        "clip": (lambda a: T.clip(a, -0.5, 0.5), [_away_from(r(3, 4), [-0.5, 0.5])]),
        "exp": (T.exp, [r(3, 4)]),
        "square": (T.square, [r(3, 4)]),
        "softmax": (T.softmax, [r(3, 4)]),
        "sum": (T.sum_, [r(3, 4)]),
        "mean": (T.mean, [r(3, 4)]),
        "mask_select": (lambda a, b: T.mask_select(mask, a, b), [r(3, 4), r(3, 4)]),
        "take_rows": (lambda t: T.take_rows(t, ids), [r(5, 3)]),
        "softmax_cross_entropy": (lambda z: T.softmax_cross_entropy(z, targets, tmask), [r(6, 4)]),
        "kl_diag_gaussian": (T.kl_diag_gaussian, [r(3, 4), 0.5 * r(3, 4)]),
        "mse": (lambda p: T.mse(p, np.linspace(0, 1, 5)[:, None]), [r(5, 1)]),
        "reparameterize": (
            lambda m, lv: T.reparameterize(m, lv, np.random.default_rng(noise_seed)),
            [r(3, 4), 0.5 * r(3, 4)],
        ),
        "inject_noise": (
            lambda z: T.inject_noise(z, 0.3, np.random.default_rng(noise_seed)),
            [r(3, 4)],
        ),
        "dense": (T.dense, [r(3, 4), r(4, 2), r(2)]),
        "gru_cell": (
            lambda x, h, wi, wh, bi, bh: T.gru_cell(x, h, GRUParams(wi, wh, bi, bh)),
            [r(2, 4), r(2, H), 0.5 * r(4, 3 * H), 0.5 * r(H, 3 * H), r(3 * H), r(3 * H)],
        ),
    }


PRIMITIVES = tuple(_cases(np.random.default_rng(0)))


def check_primitive(name: str, seed: int, h: float = 1e-4) -> CheckResult:
    rng = np.random.default_rng(seed)
    fn, arrays = _cases(rng)[name]
    inputs = [Tensor(a, requires_grad=True, name=f"x{i}") for i, a in enumerate(arrays)]
    probe = {}

    def scalar() -> Tensor:
        out = fn(*inputs)
        if out.data.size == 1:
            return out
        if "w" not in probe:
            probe["w"] = Tensor(np.random.default_rng(seed + 1).standard_normal(out.shape))
        return T.sum_(T.mul(out, probe["w"]))

    errs = T.check_gradients(scalar, inputs, h)
    return CheckResult(name, seed, max(errs), PRIMITIVE_TOL)


TINY = dict(latent_dim=4, hidden_dim=8, embedding_dim=6)


def _tiny_setup(seed: int, stage: str, config=None):
    from .vae import ModelConfig, SmilesVAE, Trainer, make_batch

    vocab = build_vocabulary(["CCO", "c1ccccc1", "CN", "OC(=O)C"], max_length=12)
    if config is None:
        cfg = ModelConfig(max_length=12, seed=seed, **TINY)
    else:
        cfg = dataclasses.replace(config, max_length=12, seed=seed)
    model = SmilesVAE(cfg, vocab)
    trainer = Trainer(model, stage)
    labels = [ToxicityLabel(10, 1, 0.01, 0.0625), ToxicityLabel(1000, 16, 1.0, 1.0)]
    batch = make_batch(["CCO", "c1ccccc1"], vocab, labels)
    return trainer, batch


def check_end_to_end(
    seed: int, stage: str = "finetune", probes: int = 24, h: float = 1e-4, config=None
) -> CheckResult:
    """Compare tape gradients of a stage's total loss with central differences.

    Probes random entries of the stage's trainable parameters (encoder and
    decoder when pretraining, decoder and heads when fine-tuning).  Noise
    draws are fixed so the loss is a deterministic function of the weights.
    """
    trainer, batch = _tiny_setup(seed, stage, config)
    noise_seed = 1000 + seed
    losses = trainer.pretrain_losses if stage == "pretrain" else trainer.finetune_losses

    def loss() -> Tensor:
        return losses(batch, np.random.default_rng(noise_seed))["total"]

    with Tape() as tape:
        total = loss()
    params = trainer.params
    grads = tape.gradients(total, params)
    rng = np.random.default_rng(seed)
    analytic, numeric = [], []
    for _ in range(probes):
        k = int(rng.integers(len(params)))
        idx = int(rng.integers(params[k].data.size))
        analytic.append(grads[k].reshape(-1)[idx])
        numeric.append(T.numeric_gradient(loss, params[k], h, indices=[idx])[0])
    err = T.relative_error(np.array(analytic), np.array(numeric))
    label = f"end_to_end_{stage}" if config is None else f"configured_{stage}"
    return CheckResult(label, seed, err, END_TO_END_TOL)


def run_all(seeds=range(10), config=None) -> list[CheckResult]:
    """Every primitive and the tiny model per seed; ``config`` adds a model of that size."""
    out = []
    for seed in seeds:
        out += [check_primitive(name, seed) for name in PRIMITIVES]
        out += [check_end_to_end(seed, stage) for stage in ("pretrain", "finetune")]
        if config is not None:
            out += [check_end_to_end(seed, stage, probes=8, config=config) for stage in ("pretrain", "finetune")]
    return out
