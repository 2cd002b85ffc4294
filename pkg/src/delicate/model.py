"""BERT-style SMILES encoder with optional cross-layer parameter sharing.

Post-layernorm blocks, learned absolute positions, no token-type embeddings,
a tanh pooler on the CLS position, an affine MLM head to the vocabulary and
an affine PhysChemPred head to the 16 descriptors.

With ``share_layers`` the store holds a single physical copy of the block
tensors (named ``layer.0.*``) and every depth references that same object, so
the tape visits it once per depth and gradients add up across depths.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import tensor as T
from .chem.descriptors import N_DESCRIPTORS
from .chem.tokenizer import PAD_ID
from .rng import fork
from .tensor import Tensor

INIT_STD = 0.02


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    hidden_size: int = 64
    num_layers: int = 4
    num_heads: int = 4
    ffn_size: int = 256
    max_seq_len: int = 128
    share_layers: bool = False
    dropout_p: float = 0.1
    n_descriptors: int = N_DESCRIPTORS

    def __post_init__(self):
        if self.num_heads < 1 or self.hidden_size % self.num_heads:
            raise ConfigError(f"hidden_size {self.hidden_size} not divisible by num_heads {self.num_heads}")
        if self.num_layers < 1:
            raise ConfigError("num_layers must be >= 1")
        if self.vocab_size < 6:
            raise ConfigError("vocab_size must be >= 6 (5 specials + 1 content token)")
        if self.ffn_size < 1 or self.max_seq_len < 2:
            raise ConfigError("ffn_size must be >= 1 and max_seq_len >= 2")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ConfigError("dropout_p must be in [0, 1)")

    @property
    def head_dim(self) -> int:
        return self.hidden_size // self.num_heads

    def replace(self, **changes) -> "ModelConfig":
        return ModelConfig(**{**asdict(self), **changes})


BLOCK_TENSORS = (
    "attn.query.weight", "attn.query.bias", "attn.key.weight", "attn.key.bias",
    "attn.value.weight", "attn.value.bias", "attn.output.weight", "attn.output.bias",
    "attn.norm.gamma", "attn.norm.beta",
    "ffn.in.weight", "ffn.in.bias", "ffn.out.weight", "ffn.out.bias",
    "ffn.norm.gamma", "ffn.norm.beta",
)


def _block_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    h, f = cfg.hidden_size, cfg.ffn_size
    shapes = {}
    for proj in ("query", "key", "value", "output"):
        shapes[f"attn.{proj}.weight"] = (h, h)
        shapes[f"attn.{proj}.bias"] = (h,)
    shapes["attn.norm.gamma"] = shapes["attn.norm.beta"] = (h,)
    shapes["ffn.in.weight"], shapes["ffn.in.bias"] = (h, f), (f,)
    shapes["ffn.out.weight"], shapes["ffn.out.bias"] = (f, h), (h,)
    shapes["ffn.norm.gamma"] = shapes["ffn.norm.beta"] = (h,)
    return shapes


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Ordered name -> shape of every *unique* parameter tensor."""
    h = cfg.hidden_size
    shapes = {
        "embeddings.token.weight": (cfg.vocab_size, h),
        "embeddings.position.weight": (cfg.max_seq_len, h),
        "embeddings.norm.gamma": (h,),
        "embeddings.norm.beta": (h,),
    }
    block = _block_shapes(cfg)
    for i in range(1 if cfg.share_layers else cfg.num_layers):
        for name in BLOCK_TENSORS:
            shapes[f"layer.{i}.{name}"] = block[name]
    shapes.update({
        "pooler.weight": (h, h),
        "pooler.bias": (h,),
        "mlm_head.weight": (h, cfg.vocab_size),
        "mlm_head.bias": (cfg.vocab_size,),
        "physchem_head.weight": (h, cfg.n_descriptors),
        "physchem_head.bias": (cfg.n_descriptors,),
    })
    return shapes


def param_count(cfg: ModelConfig) -> int:
    """Exact number of unique scalar parameters (shared blocks counted once)."""
    return int(sum(math.prod(s) for s in param_shapes(cfg).values()))


class ParamStore:
    """Named parameter tensors plus the per-depth view used by the encoder."""

    def __init__(self, tensors: dict[str, Tensor], cfg: ModelConfig):
        expected = param_shapes(cfg)
        if list(tensors) != list(expected):
            missing = set(expected) - set(tensors)
            extra = set(tensors) - set(expected)
            raise ConfigError(f"parameter names do not match config (missing {sorted(missing)[:3]}, extra {sorted(extra)[:3]})")
        for name, shape in expected.items():
            if tensors[name].shape != shape:
                raise ConfigError(f"{name}: shape {tensors[name].shape} does not match config {shape}")
        self.tensors = tensors
        self.share_layers = cfg.share_layers
        if cfg.share_layers:
            shared = {n: tensors[f"layer.0.{n}"] for n in BLOCK_TENSORS}
            self.layers = [shared] * cfg.num_layers
        else:
            self.layers = [{n: tensors[f"layer.{i}.{n}"] for n in BLOCK_TENSORS} for i in range(cfg.num_layers)]

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __iter__(self):
        return iter(self.tensors.items())

    def unique(self) -> list[Tensor]:
        return list(self.tensors.values())

    @property
    def dtype(self):
        return next(iter(self.tensors.values())).dtype

    def zero_grad(self) -> None:
        for t in self.tensors.values():
            t.grad = None

    def state(self) -> dict[str, np.ndarray]:
        return {n: t.data.copy() for n, t in self.tensors.items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for n, t in self.tensors.items():
            t.data[...] = state[n]

    def copy(self, cfg: ModelConfig) -> "ParamStore":
        return ParamStore({n: Tensor(t.data.copy(), requires_grad=t.requires_grad, name=n)
                           for n, t in self.tensors.items()}, cfg)

    def freeze(self) -> None:
        for t in self.tensors.values():
            t.requires_grad = False
            t.grad = None


def _truncated_normal(rng: np.random.Generator, shape, std: float, dtype) -> np.ndarray:
    z = rng.standard_normal(shape)
    bad = np.abs(z) > 2.0
    while bad.any():
        z[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(z) > 2.0
    return (z * std).astype(dtype)


def init_params(cfg: ModelConfig, seed: int, dtype=T.DEFAULT_DTYPE, std: float = INIT_STD,
                stream: str = "init") -> ParamStore:
    """Truncated-normal weights, zero biases, unit layernorm gains.

    Each tensor draws from its own named sub-stream of ``seed``, so a tied
    store and layer 0 of an untied store with the same seed hold equal values.
    """
    tensors = {}
    for name, shape in param_shapes(cfg).items():
        if name.endswith(".gamma"):
            data = np.ones(shape, dtype=dtype)
        elif name.endswith((".bias", ".beta")):
            data = np.zeros(shape, dtype=dtype)
        else:
            data = _truncated_normal(fork(seed, stream, name), shape, std, dtype)
        tensors[name] = Tensor(data, requires_grad=True, name=name)
    return ParamStore(tensors, cfg)


def untie(params: ParamStore, cfg: ModelConfig) -> tuple[ParamStore, ModelConfig]:
    """An untied store whose every block is a copy of the shared block."""
    if not cfg.share_layers:
        raise ConfigError("store is already untied")
    ucfg = cfg.replace(share_layers=False)
    tensors = {}
    for name in param_shapes(ucfg):
        if name.startswith("layer."):
            _, _, short = name.split(".", 2)
            src = params[f"layer.0.{short}"]
        else:
            src = params[name]
        tensors[name] = Tensor(src.data.copy(), requires_grad=True, name=name)
    return ParamStore(tensors, ucfg), ucfg


@dataclass
class EncoderOutput:
    hidden_states: list[Tensor]     # num_layers + 1 entries, [batch, seq, hidden]
    pooled: Tensor                  # [batch, hidden]
    attention_probs: list[Tensor] | None = None


def attention_mask_from_ids(token_ids: np.ndarray) -> np.ndarray:
    return np.asarray(token_ids) != PAD_ID


def _block(x: Tensor, p: dict[str, Tensor], cfg: ModelConfig, key_bias: np.ndarray, rng, keep_probs: list | None) -> Tensor:
    b, s, h = x.shape
    nh, hd = cfg.num_heads, cfg.head_dim

    def heads(t: Tensor) -> Tensor:
        return T.transpose(T.reshape(t, (b, s, nh, hd)), (0, 2, 1, 3))

    q = heads(T.linear(x, p["attn.query.weight"], p["attn.query.bias"]))
    k = heads(T.linear(x, p["attn.key.weight"], p["attn.key.bias"]))
    v = heads(T.linear(x, p["attn.value.weight"], p["attn.value.bias"]))
    scores = T.scale(T.matmul(q, T.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(hd))
    probs = T.softmax(T.add_constant(scores, key_bias), axis=-1)
    if keep_probs is not None:
        keep_probs.append(probs)
    probs = T.dropout(probs, cfg.dropout_p, rng)
    ctx = T.reshape(T.transpose(T.matmul(probs, v), (0, 2, 1, 3)), (b, s, h))
    attn_out = T.dropout(T.linear(ctx, p["attn.output.weight"], p["attn.output.bias"]), cfg.dropout_p, rng)
    x = T.layernorm(T.add(x, attn_out), p["attn.norm.gamma"], p["attn.norm.beta"])
    ff = T.gelu(T.linear(x, p["ffn.in.weight"], p["ffn.in.bias"]))
    ff = T.dropout(T.linear(ff, p["ffn.out.weight"], p["ffn.out.bias"]), cfg.dropout_p, rng)
    return T.layernorm(T.add(x, ff), p["ffn.norm.gamma"], p["ffn.norm.beta"])


def encode(
    params: ParamStore,
    cfg: ModelConfig,
    token_ids: np.ndarray,
    attention_mask: np.ndarray | None = None,
    rng: np.random.Generator | None = None,
    return_attention: bool = False,
) -> EncoderOutput:
    """Run the encoder.

    ``attention_mask`` is true at real tokens and false at PAD; it defaults to
    ``token_ids != PAD``.  Passing ``rng`` enables dropout (training mode);
    ``rng=None`` is evaluation mode.
    """
    ids = np.asarray(token_ids)
    if ids.ndim != 2:
        raise T.DimensionError(f"token_ids must be [batch, seq], got shape {ids.shape}")
    b, s = ids.shape
    if s > cfg.max_seq_len:
        raise ValueError(f"sequence length {s} exceeds max_seq_len {cfg.max_seq_len}")
    if attention_mask is None:
        attention_mask = attention_mask_from_ids(ids)
    attention_mask = np.asarray(attention_mask, dtype=bool)
    if attention_mask.shape != ids.shape:
        raise T.DimensionError(f"attention_mask {attention_mask.shape} vs token_ids {ids.shape}")
    dtype = params.dtype
    key_bias = np.where(attention_mask, 0.0, T.MASK_VALUE).astype(dtype)[:, None, None, :]

    x = T.add(T.embedding(params["embeddings.token.weight"], ids),
              T.take(params["embeddings.position.weight"], slice(0, s)))
    x = T.layernorm(x, params["embeddings.norm.gamma"], params["embeddings.norm.beta"])
    x = T.dropout(x, cfg.dropout_p, rng)
    states = [x]
    probs: list | None = [] if return_attention else None
    for layer in params.layers:
        x = _block(x, layer, cfg, key_bias, rng, probs)
        states.append(x)
    cls = T.take(x, (slice(None), 0))
    pooled = T.tanh(T.linear(cls, params["pooler.weight"], params["pooler.bias"]))
    return EncoderOutput(states, pooled, probs)


def mlm_logits(params: ParamStore, hidden: Tensor) -> Tensor:
    return T.linear(hidden, params["mlm_head.weight"], params["mlm_head.bias"])


def physchem_pred(params: ParamStore, pooled: Tensor) -> Tensor:
    return T.linear(pooled, params["physchem_head.weight"], params["physchem_head.bias"])


def config_fields() -> list[str]:
    return [f.name for f in fields(ModelConfig)]
