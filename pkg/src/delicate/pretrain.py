"""Self-supervised pretraining: masked-token prediction plus descriptor regression."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import tensor as T
from .checkpoint import save_checkpoint
from .chem import N_DESCRIPTORS, Vocab, apply_norm, descriptors, fit_norm, parse_smiles, tokenize
from .chem.descriptors import NormStats
from .chem.tokenizer import MASK_ID, N_SPECIAL, PAD_ID
from .model import ModelConfig, ParamStore, encode, init_params, mlm_logits, physchem_pred
from .optim import Adam
from .rng import fork

log = logging.getLogger(__name__)

MASK_RATE = 0.15
VAL_RATIO = 17          # 16 train : 1 validation


class DataError(ValueError):
    pass


def tokenize_corpus(smiles: Sequence[str], vocab: Vocab, max_len: int) -> list[list[int]]:
    return [tokenize(s, vocab, max_len) for s in smiles]


def pad_batch(seqs: Sequence[Sequence[int]], length: int | None = None) -> np.ndarray:
    length = length or max(len(s) for s in seqs)
    out = np.full((len(seqs), length), PAD_ID, dtype=np.int64)
    for i, s in enumerate(seqs):
        out[i, : len(s)] = s
    return out


def corpus_descriptors(smiles: Sequence[str]) -> np.ndarray:
    return np.stack([descriptors(parse_smiles(s)) for s in smiles])


def split_train_val(n: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Seeded shuffle, then 1/17 of the records (rounded down) for validation."""
    order = fork(seed, "pretrain-split").permutation(n)
    n_val = max(1, n // VAL_RATIO)
    return np.sort(order[n_val:]), np.sort(order[:n_val])


@dataclass
class MaskedBatch:
    input_ids: np.ndarray           # [batch, seq]
    mlm_labels: np.ndarray          # [batch, seq], -1 where not a target
    attention_mask: np.ndarray      # [batch, seq], True at real tokens
    descriptor_targets: np.ndarray | None = None   # [batch, 16], normalised

    @property
    def label_mask(self) -> np.ndarray:
        return self.mlm_labels >= 0


def mask_batch(ids: np.ndarray, vocab: Vocab, rng: np.random.Generator, rate: float = MASK_RATE,
               descriptor_targets: np.ndarray | None = None) -> MaskedBatch:
    """BERT-style corruption of a padded id batch.

    Each content position is picked with probability ``rate``; picked tokens
    become MASK (80%), a random content token (10%) or stay (10%).  A row with
    no pick gets one forced pick so every row contributes to the loss.
    """
    ids = np.asarray(ids)
    candidates = ids >= N_SPECIAL
    draw = rng.random(ids.shape)
    action = rng.random(ids.shape)
    random_tok = rng.integers(N_SPECIAL, len(vocab), size=ids.shape)
    forced = rng.random(ids.shape[0])

    selected = candidates & (draw < rate)
    for row in np.flatnonzero(~selected.any(axis=1) & candidates.any(axis=1)):
        cols = np.flatnonzero(candidates[row])
        selected[row, cols[int(forced[row] * len(cols))]] = True

    inputs = ids.copy()
    to_mask = selected & (action < 0.8)
    to_random = selected & (action >= 0.8) & (action < 0.9)
    inputs[to_mask] = MASK_ID
    inputs[to_random] = random_tok[to_random]
    labels = np.where(selected, ids, -1)
    return MaskedBatch(inputs, labels, ids != PAD_ID, descriptor_targets)


def pretrain_losses(params: ParamStore, cfg: ModelConfig, batch: MaskedBatch, rng=None):
    """(total, l_mlm, l_physchem) as tensors on the tape."""
    out = encode(params, cfg, batch.input_ids, batch.attention_mask, rng=rng)
    logits = mlm_logits(params, out.hidden_states[-1])
    l_mlm = T.masked_cross_entropy(logits, np.maximum(batch.mlm_labels, 0), batch.label_mask)
    pred = physchem_pred(params, out.pooled)
    l_phys = T.mse(pred, batch.descriptor_targets.astype(pred.dtype))
    return T.add(l_mlm, l_phys), l_mlm, l_phys


def _check(total: T.Tensor, where: str) -> None:
    if not np.isfinite(total.data).all():
        raise T.NonFiniteError(f"non-finite loss during {where}: {total.item()}")


def pretrain_step(params: ParamStore, cfg: ModelConfig, batch: MaskedBatch, optimizer: Adam, rng=None) -> dict:
    optimizer.zero_grad()
    total, l_mlm, l_phys = pretrain_losses(params, cfg, batch, rng)
    _check(total, "pretraining")
    T.backward(total)
    optimizer.step()
    return {"l_mlm": l_mlm.item(), "l_physchem": l_phys.item(), "total": total.item()}


def warmup_lr(step: int, total_steps: int, base_lr: float, warmup_frac: float = 0.05) -> float:
    """Linear warm-up over the first ``warmup_frac`` of steps, then constant."""
    warm = max(1, int(round(total_steps * warmup_frac)))
    return base_lr * min(1.0, (step + 1) / warm)


@dataclass
class PretrainReport:
    l_mlm: list[float] = field(default_factory=list)
    l_physchem: list[float] = field(default_factory=list)
    total: list[float] = field(default_factory=list)
    val_total: list[float] = field(default_factory=list)
    seconds: list[float] = field(default_factory=list)
    steps: int = 0
    best_epoch: int = 0

    def rows(self):
        for e in range(len(self.total)):
            yield (e + 1, self.l_mlm[e], self.l_physchem[e], self.total[e], self.val_total[e], self.seconds[e])


class PretrainData:
    """Tokenised corpus, normalised descriptors and the train/validation split."""

    def __init__(self, smiles: Sequence[str], vocab: Vocab, max_len: int, seed: int,
                 norm: NormStats | None = None, with_descriptors: bool = True, split: bool = True):
        self.smiles = list(smiles)
        self.vocab = vocab
        self.seqs = tokenize_corpus(self.smiles, vocab, max_len)
        if split:
            self.train_idx, self.val_idx = split_train_val(len(self.smiles), seed)
        else:
            self.train_idx, self.val_idx = np.arange(len(self.smiles)), np.arange(0)
        self.norm = norm
        self.targets = None
        if with_descriptors:
            raw = corpus_descriptors(self.smiles)
            self.norm = norm or fit_norm(raw[self.train_idx])
            self.targets = apply_norm(raw, self.norm)

    def batch(self, idx: np.ndarray, rng: np.random.Generator) -> MaskedBatch:
        ids = pad_batch([self.seqs[i] for i in idx])
        targets = None if self.targets is None else self.targets[idx]
        return mask_batch(ids, self.vocab, rng, descriptor_targets=targets)

    def batches(self, idx: np.ndarray, batch_size: int, order_rng: np.random.Generator | None):
        return length_bucketed_batches([len(s) for s in self.seqs], idx, batch_size, order_rng)


def length_bucketed_batches(lengths: Sequence[int], idx, batch_size: int,
                            order_rng: np.random.Generator | None, window: int = 16):
    """Shuffle, sort by length inside windows of ``window`` batches, shuffle batch order.

    Keeps padding low while every epoch still sees a fresh random grouping.
    With ``order_rng=None`` batches are consecutive slices of ``idx``.
    """
    idx = np.asarray(idx)
    if order_rng is None:
        return [idx[s : s + batch_size] for s in range(0, len(idx), batch_size)]
    idx = idx[order_rng.permutation(len(idx))]
    lengths = np.asarray(lengths)
    span = batch_size * window
    chunks = []
    for start in range(0, len(idx), span):
        part = idx[start : start + span]
        part = part[np.argsort(lengths[part], kind="stable")]
        chunks.extend(part[s : s + batch_size] for s in range(0, len(part), batch_size))
    return [chunks[i] for i in order_rng.permutation(len(chunks))]


def evaluate_pretrain(params: ParamStore, cfg: ModelConfig, data: PretrainData, idx, batch_size: int, seed: int) -> dict:
    """Example-weighted mean validation losses under a fixed masking stream."""
    rng = fork(seed, "val-mask")
    sums = np.zeros(3)
    count = 0
    with T.no_grad():
        for chunk in data.batches(idx, batch_size, None):
            total, l_mlm, l_phys = pretrain_losses(params, cfg, data.batch(chunk, rng))
            sums += len(chunk) * np.array([l_mlm.item(), l_phys.item(), total.item()])
            count += len(chunk)
    l_mlm, l_phys, total = sums / count
    return {"l_mlm": l_mlm, "l_physchem": l_phys, "total": total}


def pretrain_run(
    cfg: ModelConfig,
    corpus: Sequence[str],
    epochs: int,
    seed: int,
    vocab: Vocab,
    run_dir: str | Path | None = None,
    batch_size: int = 32,
    lr: float = 1e-3,
    warmup_frac: float = 0.05,
    dtype=T.DEFAULT_DTYPE,
    params: ParamStore | None = None,
    max_steps: int | None = None,
) -> tuple[ParamStore, PretrainReport]:
    """Pretrain from scratch (or continue ``params``) for ``epochs`` passes.

    With ``run_dir`` set, writes ``metrics/pretrain.csv`` (one line per epoch)
    and ``checkpoints/final.ckpt`` / ``checkpoints/best.ckpt``.  ``max_steps``
    caps the number of optimiser steps (used for equal-budget comparisons).
    """
    if len(vocab) != cfg.vocab_size:
        raise DataError(f"vocabulary has {len(vocab)} tokens but the model expects {cfg.vocab_size}")
    data = PretrainData(corpus, vocab, cfg.max_seq_len, seed)
    if len(data.train_idx) < batch_size:
        raise DataError(f"training split of {len(data.train_idx)} molecules is smaller than one batch ({batch_size})")

    params = params or init_params(cfg, seed, dtype=dtype)
    opt = Adam(params.unique(), lr=lr)
    steps_per_epoch = -(-len(data.train_idx) // batch_size)
    total_steps = steps_per_epoch * epochs if max_steps is None else min(max_steps, steps_per_epoch * epochs)

    metrics = ckpt_dir = None
    if run_dir is not None:
        run_dir = Path(run_dir)
        (run_dir / "metrics").mkdir(parents=True, exist_ok=True)
        ckpt_dir = run_dir / "checkpoints"
        ckpt_dir.mkdir(exist_ok=True)
        metrics = open(run_dir / "metrics" / "pretrain.csv", "w")
        metrics.write("epoch,l_mlm,l_physchem,total,val_total,seconds\n")

    report = PretrainReport()
    best = np.inf
    step = 0
    try:
        for epoch in range(epochs):
            if step >= total_steps:
                break
            t0 = time.perf_counter()
            mask_rng = fork(seed, "mask", epoch)
            drop_rng = fork(seed, "dropout", epoch)
            sums = np.zeros(3)
            seen = 0
            for chunk in data.batches(data.train_idx, batch_size, fork(seed, "shuffle", epoch)):
                if step >= total_steps:
                    break
                opt.lr = warmup_lr(step, total_steps, lr, warmup_frac)
                batch = data.batch(chunk, mask_rng)
                losses = pretrain_step(params, cfg, batch, opt, drop_rng if cfg.dropout_p > 0 else None)
                sums += len(chunk) * np.array([losses["l_mlm"], losses["l_physchem"], losses["total"]])
                seen += len(chunk)
                step += 1
            val = evaluate_pretrain(params, cfg, data, data.val_idx, batch_size, seed)
            elapsed = time.perf_counter() - t0
            l_mlm, l_phys, total = sums / max(seen, 1)
            report.l_mlm.append(l_mlm)
            report.l_physchem.append(l_phys)
            report.total.append(total)
            report.val_total.append(val["total"])
            report.seconds.append(elapsed)
            log.info("epoch %d: train %.4f (mlm %.4f, physchem %.4f) val %.4f [%.1fs]",
                     epoch + 1, total, l_mlm, l_phys, val["total"], elapsed)
            if metrics is not None:
                metrics.write(f"{epoch + 1},{l_mlm!r},{l_phys!r},{total!r},{val['total']!r},{elapsed:.3f}\n")
                metrics.flush()
            if val["total"] < best:
                best = val["total"]
                report.best_epoch = epoch + 1
                if ckpt_dir is not None:
                    save_checkpoint(params, cfg, ckpt_dir / "best.ckpt")
        report.steps = step
        if ckpt_dir is not None:
            save_checkpoint(params, cfg, ckpt_dir / "final.ckpt")
    finally:
        if metrics is not None:
            metrics.close()
    return params, report
