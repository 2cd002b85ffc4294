"""The gradient-check suite run by ``delicate gradcheck`` and the tests.

Every primitive is checked on small random float64 inputs, then the tiny
model's pretraining loss and the triple distillation loss are checked with
respect to every parameter tensor.  The tiny model uses a wider init than
training does so that no gradient element drowns in finite-difference
round-off.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import tensor as T
from .chem.tokenizer import CLS_ID, PAD_ID, SEP_ID
from .distill import DistillConfig, distill_losses
from .gradcheck import grad_check
from .model import ModelConfig, encode, init_params, mlm_logits
from .pretrain import MaskedBatch, pretrain_losses
from .rng import fork
from .tensor import Tensor

TOLERANCE = 1e-5


@dataclass(frozen=True)
class CheckResult:
    name: str
    error: float

    @property
    def ok(self) -> bool:
        return self.error < TOLERANCE


def _leaf(rng, *shape, scale=1.0) -> Tensor:
    return Tensor(rng.standard_normal(shape) * scale, requires_grad=True, dtype=np.float64)


def _weights(rng, shape) -> np.ndarray:
    return rng.standard_normal(shape)


def primitive_checks(seed: int = 0) -> list[tuple[str, Callable[[], Tensor], list[Tensor]]]:
    """(name, loss closure, leaves) triples, one per primitive."""
    rng = fork(seed, "gradsuite", "primitives")
    a, b = _leaf(rng, 3, 4), _leaf(rng, 3, 4)
    bias = _leaf(rng, 4)
    w3 = _weights(rng, (3, 4))

    def weighted(t: Tensor) -> Tensor:
        # a fixed random projection so that every output element matters
        return T.sum(T.mul(t, Tensor(_weights(fork(seed, "proj", *t.shape), t.shape))))

    x3, x3b = _leaf(rng, 2, 3, 4), _leaf(rng, 2, 3, 4)
    m1, m2 = _leaf(rng, 3, 5), _leaf(rng, 5, 2)
    bm1, bm2 = _leaf(rng, 2, 3, 5), _leaf(rng, 2, 5, 4)
    lw, lb = _leaf(rng, 4, 6), _leaf(rng, 6)
    gamma, beta = _leaf(rng, 4), _leaf(rng, 4)
    table = _leaf(rng, 7, 4)
    ids = rng.integers(0, 7, size=(2, 5))
    pos = _leaf(rng, 4)
    logits = _leaf(rng, 2, 5, 6)
    targets = rng.integers(0, 6, size=(2, 5))
    tmask = rng.random((2, 5)) < 0.6
    tmask[0, 0] = True
    rowmask = rng.random((2, 3)) < 0.6
    rowmask[0, 0] = True
    z = _leaf(rng, 8)
    y01 = (rng.random(8) < 0.5).astype(float)
    const = rng.standard_normal((3, 4))

    return [
        ("add", lambda: weighted(T.add(a, b)), [a, b]),
        ("add_bias", lambda: weighted(T.add(a, bias)), [a, bias]),
        ("sub", lambda: weighted(T.sub(a, b)), [a, b]),
        ("mul", lambda: weighted(T.mul(a, b)), [a, b]),
        ("scale", lambda: weighted(T.scale(a, -1.7)), [a]),
        ("add_constant", lambda: weighted(T.add_constant(a, const)), [a]),
        ("tanh", lambda: weighted(T.tanh(a)), [a]),
        ("sigmoid", lambda: weighted(T.sigmoid(a)), [a]),
        ("gelu", lambda: weighted(T.gelu(a)), [a]),
        ("reshape", lambda: weighted(T.reshape(x3, (6, 4))), [x3]),
        ("transpose", lambda: weighted(T.transpose(x3, (2, 0, 1))), [x3]),
        ("take", lambda: weighted(T.take(x3, (slice(None), 0))), [x3]),
        ("take_repeat", lambda: weighted(T.take(a, np.array([0, 2, 0]))), [a]),
        ("concat", lambda: weighted(T.concat([a, b], axis=1)), [a, b]),
        ("embedding", lambda: weighted(T.embedding(table, ids)), [table]),
        ("sum_axis", lambda: weighted(T.sum(x3, axis=1)), [x3]),
        ("mean", lambda: T.mean(T.mul(a, Tensor(w3))), [a]),
        ("matmul", lambda: weighted(T.matmul(m1, m2)), [m1, m2]),
        ("matmul_batched", lambda: weighted(T.matmul(bm1, bm2)), [bm1, bm2]),
        ("linear", lambda: weighted(T.linear(x3, lw, lb)), [x3, lw, lb]),
        ("softmax", lambda: weighted(T.softmax(x3, axis=-1)), [x3]),
        ("layernorm", lambda: weighted(T.layernorm(x3, gamma, beta)), [x3, gamma, beta]),
        ("masked_cross_entropy", lambda: T.masked_cross_entropy(logits, targets, tmask), [logits]),
        ("mse", lambda: T.mse(a, b), [a, b]),
        ("masked_mse", lambda: T.masked_mse(x3, T.add(x3b, pos), rowmask), [x3, x3b, pos]),
        ("bce_with_logits", lambda: T.bce_with_logits(z, y01), [z]),
    ]


def tiny_config(vocab_size: int = 11, num_layers: int = 2, share_layers: bool = False) -> ModelConfig:
    return ModelConfig(vocab_size=vocab_size, hidden_size=8, num_layers=num_layers, num_heads=2,
                       ffn_size=12, max_seq_len=8, share_layers=share_layers, dropout_p=0.0)


def tiny_batch(cfg: ModelConfig, seed: int = 0, with_descriptors: bool = True) -> MaskedBatch:
    rng = fork(seed, "gradsuite", "batch")
    batch, seq = 2, 7
    ids = rng.integers(5, cfg.vocab_size, size=(batch, seq))
    ids[:, 0] = CLS_ID
    ids[0, -1] = SEP_ID
    ids[1, 4] = SEP_ID
    ids[1, 5:] = PAD_ID
    attention = ids != PAD_ID
    labels = np.full(ids.shape, -1)
    for (r, c) in [(0, 2), (0, 4), (1, 1), (1, 3)]:
        labels[r, c] = ids[r, c]
        ids[r, c] = 4  # [MASK]
    targets = rng.standard_normal((batch, cfg.n_descriptors)) if with_descriptors else None
    return MaskedBatch(ids, labels, attention, targets)


# A key bias adds the same q.b to every score in a query row, which softmax
# ignores, so its exact gradient is zero and a relative error would only
# compare round-off with round-off.  These tensors are checked for a
# vanishing gradient instead.
ZERO_GRAD_SUFFIX = "attn.key.bias"


def _split_zero(params) -> tuple[list[Tensor], list[Tensor]]:
    checked, zero = [], []
    for name, t in params:
        (zero if name.endswith(ZERO_GRAD_SUFFIX) else checked).append(t)
    return checked, zero


def zero_grad_magnitude(f: Callable[[], Tensor], tensors: list[Tensor]) -> float:
    """Largest |analytic gradient| over ``tensors``."""
    for t in tensors:
        t.grad = None
    T.backward(f())
    worst = max(float(np.abs(t.grad).max()) if t.grad is not None else 0.0 for t in tensors)
    for t in tensors:
        t.grad = None
    return worst


def model_param_check(cfg: ModelConfig, seed: int = 0, max_elements: int | None = None) -> tuple[float, float]:
    """(worst relative error over checked tensors, largest key-bias gradient)."""
    params = init_params(cfg, seed, dtype=np.float64, std=0.5)
    batch = tiny_batch(cfg, seed)
    f = lambda: pretrain_losses(params, cfg, batch)[0]  # noqa: E731
    checked, zero = _split_zero(params)
    return grad_check(f, checked, max_elements=max_elements), zero_grad_magnitude(f, zero)


def distill_param_check(seed: int = 0, max_elements: int | None = None) -> tuple[float, float]:
    t_cfg = tiny_config(num_layers=4)
    s_cfg = tiny_config(num_layers=2)
    teacher = init_params(t_cfg, seed + 1, dtype=np.float64, std=0.5)
    student = init_params(s_cfg, seed, dtype=np.float64, std=0.5, stream="student-init")
    batch = tiny_batch(s_cfg, seed, with_descriptors=False)
    # a small temperature keeps the softened-logits gradients well above round-off
    dcfg = DistillConfig(temperature=2.0)
    with T.no_grad():
        t_out = encode(teacher, t_cfg, batch.input_ids, batch.attention_mask)
        t_logits = mlm_logits(teacher, t_out.hidden_states[-1])

    def loss():
        s_out = encode(student, s_cfg, batch.input_ids, batch.attention_mask)
        return distill_losses(t_out, t_logits, s_out, mlm_logits(student, s_out.hidden_states[-1]), batch, dcfg)[1]

    checked, zero = _split_zero(student)
    return grad_check(loss, checked, max_elements=max_elements), zero_grad_magnitude(loss, zero)


def run_suite(seed: int = 0, max_elements: int | None = None) -> list[CheckResult]:
    results = [CheckResult(f"op:{name}", grad_check(f, leaves)) for name, f, leaves in primitive_checks(seed)]
    cases = [
        ("pretrain-untied", lambda: model_param_check(tiny_config(), seed, max_elements)),
        ("pretrain-tied", lambda: model_param_check(tiny_config(share_layers=True), seed, max_elements)),
        ("distill", lambda: distill_param_check(seed, max_elements)),
    ]
    for name, run in cases:
        rel, zero = run()
        results.append(CheckResult(f"model:{name}", rel))
        results.append(CheckResult(f"model:{name}:key-bias-zero", zero))
    return results
