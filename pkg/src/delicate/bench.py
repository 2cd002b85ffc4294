"""Throughput measurement for encoder forward passes and training steps."""

from __future__ import annotations

import statistics
import time
from dataclasses import asdict, dataclass

import numpy as np

from . import tensor as T
from .model import ModelConfig, ParamStore, encode, mlm_logits
from .rng import fork


@dataclass(frozen=True)
class ThroughputReport:
    model: str
    batch_size: int
    seq_len: int
    forward_tokens_per_s: float
    train_tokens_per_s: float

    def as_dict(self) -> dict:
        return asdict(self)

    def line(self) -> str:
        return (f"{self.model}: forward {self.forward_tokens_per_s:,.0f} tok/s, "
                f"train {self.train_tokens_per_s:,.0f} tok/s (batch {self.batch_size}, seq {self.seq_len})")


def _rate(fn, tokens: int, windows: int, reps: int) -> float:
    """Median tokens/s over ``windows`` timed windows after one warm-up window."""
    for _ in range(reps):
        fn()
    rates = []
    for _ in range(windows):
        t0 = time.perf_counter()
        for _ in range(reps):
            fn()
        rates.append(tokens * reps / (time.perf_counter() - t0))
    return statistics.median(rates)


def benchmark(params: ParamStore, cfg: ModelConfig, batch_size: int = 32, seq_len: int = 64,
              windows: int = 5, reps: int = 3, name: str | None = None, seed: int = 0,
              train: bool = True) -> ThroughputReport:
    """Time eval-mode forward passes and forward+backward steps on random token ids."""
    if seq_len > cfg.max_seq_len:
        raise ValueError(f"seq_len {seq_len} exceeds max_seq_len {cfg.max_seq_len}")
    rng = fork(seed, "bench")
    ids = rng.integers(5, cfg.vocab_size, size=(batch_size, seq_len))
    mask = np.ones_like(ids, dtype=bool)
    tokens = batch_size * seq_len

    def forward():
        with T.no_grad():
            encode(params, cfg, ids, mask)

    def step():
        params.zero_grad()
        out = encode(params, cfg, ids, mask)
        T.backward(T.mean(mlm_logits(params, out.hidden_states[-1])))

    fwd = _rate(forward, tokens, windows, reps)
    trn = _rate(step, tokens, windows, reps) if train else float("nan")
    params.zero_grad()
    label = name or f"L{cfg.num_layers}-H{cfg.hidden_size}{'-tied' if cfg.share_layers else ''}"
    return ThroughputReport(label, batch_size, seq_len, fwd, trn)


def compare_forward(models: dict[str, tuple[ParamStore, ModelConfig]], batch_size: int = 32, seq_len: int = 64,
                    rounds: int = 7, reps: int = 3, seed: int = 0) -> dict[str, float]:
    """Median forward tokens/s per model, timing one window of each model per round.

    Interleaving the windows (and rotating their order each round) keeps slow
    drift in machine load from landing on one model only.
    """
    rng = fork(seed, "bench")
    tokens = batch_size * seq_len
    fns = {}
    for name, (params, cfg) in models.items():
        if seq_len > cfg.max_seq_len:
            raise ValueError(f"{name}: seq_len {seq_len} exceeds max_seq_len {cfg.max_seq_len}")
        ids = rng.integers(5, cfg.vocab_size, size=(batch_size, seq_len))
        mask = np.ones_like(ids, dtype=bool)

        def forward(params=params, cfg=cfg, ids=ids, mask=mask):
            with T.no_grad():
                encode(params, cfg, ids, mask)
        fns[name] = forward
    names = list(fns)
    for name in names:
        for _ in range(reps):
            fns[name]()
    rates: dict[str, list[float]] = {name: [] for name in names}
    for r in range(rounds):
        for name in names[r % len(names):] + names[: r % len(names)]:
            t0 = time.perf_counter()
            for _ in range(reps):
                fns[name]()
            rates[name].append(tokens * reps / (time.perf_counter() - t0))
    return {name: statistics.median(v) for name, v in rates.items()}
