"""General distillation from a frozen teacher into a shallower student.

The objective is the plain sum of up to three terms, each switchable:

* ``l_mlm``    masked cross-entropy of the student's token logits,
* ``l_hidn``   MSE between student hidden states and the mapped teacher
               states, over non-PAD positions, averaged over mapped pairs,
* ``l_logits`` MSE between temperature-softened probabilities of student and
               teacher (same temperature on both sides) at masked positions.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import tensor as T
from .checkpoint import load_checkpoint, save_checkpoint
from .chem import Vocab
from .model import EncoderOutput, ModelConfig, ParamStore, encode, init_params, mlm_logits
from .optim import Adam
from .pretrain import DataError, MaskedBatch, PretrainData, warmup_lr
from .rng import fork

log = logging.getLogger(__name__)


class DistillConfigError(ValueError):
    pass


def uniform_layer_map(teacher_layers: int, student_layers: int) -> dict[int, int]:
    """Student state s -> teacher state s * stride (state 0 is the embedding output)."""
    if student_layers < 1 or teacher_layers < 1:
        raise DistillConfigError("layer counts must be positive")
    if teacher_layers % student_layers:
        raise DistillConfigError(f"teacher depth {teacher_layers} is not a multiple of student depth {student_layers}")
    stride = teacher_layers // student_layers
    return {s: s * stride for s in range(student_layers + 1)}


def validate_layer_map(layer_map: dict[int, int], student_layers: int, teacher_layers: int) -> None:
    keys = sorted(layer_map)
    if not keys or keys[0] != 0 or keys[-1] != student_layers:
        raise DistillConfigError("layer map must cover student states 0 and last")
    if layer_map[0] != 0 or layer_map[student_layers] != teacher_layers:
        raise DistillConfigError("layer map must send 0 -> 0 and last -> last")
    values = [layer_map[k] for k in keys]
    if any(b <= a for a, b in zip(values, values[1:])):
        raise DistillConfigError("layer map must be injective and order-preserving")
    if any(not 0 <= k <= student_layers for k in keys) or any(not 0 <= v <= teacher_layers for v in values):
        raise DistillConfigError("layer map index out of range")


@dataclass
class DistillConfig:
    temperature: float = 8.0
    layer_map: dict[int, int] | None = None       # None: uniform stride
    use_mlm: bool = True
    use_hidn: bool = True
    use_logits: bool = True
    logits_positions: str = "masked"              # or "all" (every non-PAD position)
    lr: float = 1e-3
    batch_size: int = 32
    warmup_frac: float = 0.05

    def __post_init__(self):
        if not self.temperature > 0:
            raise DistillConfigError("temperature must be positive")
        if self.logits_positions not in ("masked", "all"):
            raise DistillConfigError("logits_positions must be 'masked' or 'all'")

    def resolved_map(self, teacher_layers: int, student_layers: int) -> dict[int, int]:
        layer_map = self.layer_map or uniform_layer_map(teacher_layers, student_layers)
        validate_layer_map(layer_map, student_layers, teacher_layers)
        return layer_map


@dataclass
class DistillLossReport:
    l_mlm: float
    l_hidn: float
    l_logits: float
    total: float


def softened(logits: T.Tensor, temperature: float) -> T.Tensor:
    return T.softmax(T.scale(logits, 1.0 / temperature), axis=-1)


def logits_loss(student_logits: T.Tensor, teacher_logits, temperature: float) -> T.Tensor:
    """MSE between softened distributions; inputs are [n, vocab]."""
    target = T.as_tensor(teacher_logits, dtype=student_logits.dtype)
    return T.mse(softened(student_logits, temperature), softened(target, temperature))


def distill_losses(
    teacher_out: EncoderOutput,
    teacher_logits: T.Tensor | None,
    student_out: EncoderOutput,
    student_logits: T.Tensor,
    batch: MaskedBatch,
    cfg: DistillConfig,
) -> tuple[DistillLossReport, T.Tensor]:
    """Return the per-term report and the total loss tensor.

    Disabled terms are not computed and report exactly 0.0; with
    ``use_logits`` off, ``teacher_logits`` is never touched.
    """
    n_student = len(student_out.hidden_states) - 1
    n_teacher = len(teacher_out.hidden_states) - 1
    s_h = student_out.hidden_states[0].shape[-1]
    t_h = teacher_out.hidden_states[0].shape[-1]
    if s_h != t_h:
        raise DistillConfigError(f"student hidden size {s_h} differs from teacher hidden size {t_h}")
    labels = batch.label_mask
    if not labels.any():
        raise ValueError("batch has no masked positions")

    terms: list[T.Tensor] = []
    values = {"l_mlm": 0.0, "l_hidn": 0.0, "l_logits": 0.0}

    if cfg.use_mlm:
        l_mlm = T.masked_cross_entropy(student_logits, np.maximum(batch.mlm_labels, 0), labels)
        terms.append(l_mlm)
        values["l_mlm"] = l_mlm.item()

    if cfg.use_hidn:
        layer_map = cfg.resolved_map(n_teacher, n_student)
        pair_losses = [
            T.masked_mse(student_out.hidden_states[s], teacher_out.hidden_states[t].data, batch.attention_mask)
            for s, t in sorted(layer_map.items())
        ]
        l_hidn = pair_losses[0]
        for extra in pair_losses[1:]:
            l_hidn = T.add(l_hidn, extra)
        l_hidn = T.scale(l_hidn, 1.0 / len(pair_losses))
        terms.append(l_hidn)
        values["l_hidn"] = l_hidn.item()

    if cfg.use_logits:
        positions = labels if cfg.logits_positions == "masked" else batch.attention_mask
        where = np.nonzero(positions)
        l_logits = logits_loss(T.take(student_logits, where), teacher_logits.data[where], cfg.temperature)
        terms.append(l_logits)
        values["l_logits"] = l_logits.item()

    if not terms:
        raise DistillConfigError("all distillation terms are disabled")
    total = terms[0]
    for t in terms[1:]:
        total = T.add(total, t)
    return DistillLossReport(total=total.item(), **values), total


@dataclass
class DistillResult:
    params: ParamStore
    config: ModelConfig
    trace: list[DistillLossReport] = field(default_factory=list)


def _load_teacher(teacher) -> tuple[ParamStore, ModelConfig]:
    if isinstance(teacher, (str, Path)):
        return load_checkpoint(teacher)
    params, cfg = teacher
    return params, cfg


def distill_run(
    teacher,
    student_config: ModelConfig,
    corpus: Sequence[str],
    cfg: DistillConfig,
    steps: int,
    seed: int,
    vocab: Vocab,
    run_dir: str | Path | None = None,
    dtype=T.DEFAULT_DTYPE,
) -> DistillResult:
    """Distil ``teacher`` (a checkpoint path or ``(params, config)``) into a fresh student.

    Writes ``metrics/distill.csv`` and ``checkpoints/student.ckpt`` under
    ``run_dir`` when given.  The teacher runs in evaluation mode with the tape
    disabled and is never modified.
    """
    t_params, t_cfg = _load_teacher(teacher)
    if t_cfg.hidden_size != student_config.hidden_size:
        raise DistillConfigError(
            f"student hidden size {student_config.hidden_size} differs from teacher {t_cfg.hidden_size}"
        )
    if t_cfg.vocab_size != student_config.vocab_size or len(vocab) != student_config.vocab_size:
        raise DistillConfigError("teacher, student and vocabulary sizes must agree")
    cfg.resolved_map(t_cfg.num_layers, student_config.num_layers)
    if t_params.dtype != np.dtype(dtype):
        t_params = _cast(t_params, t_cfg, dtype)

    max_len = min(t_cfg.max_seq_len, student_config.max_seq_len)
    data = PretrainData(corpus, vocab, max_len, seed, with_descriptors=False, split=False)
    if len(data.train_idx) < cfg.batch_size:
        raise DataError(f"corpus of {len(data.train_idx)} molecules is smaller than one batch ({cfg.batch_size})")

    student = init_params(student_config, seed, dtype=dtype, stream="student-init")
    opt = Adam(student.unique(), lr=cfg.lr)
    trace: list[DistillLossReport] = []

    metrics = None
    if run_dir is not None:
        run_dir = Path(run_dir)
        (run_dir / "metrics").mkdir(parents=True, exist_ok=True)
        (run_dir / "checkpoints").mkdir(exist_ok=True)
        metrics = open(run_dir / "metrics" / "distill.csv", "w")
        metrics.write("step,l_mlm,l_hidn,l_logits,total\n")

    step = epoch = 0
    try:
        while step < steps:
            mask_rng = fork(seed, "distill-mask", epoch)
            drop_rng = fork(seed, "distill-dropout", epoch) if student_config.dropout_p > 0 else None
            for chunk in data.batches(data.train_idx, cfg.batch_size, fork(seed, "distill-shuffle", epoch)):
                if step >= steps:
                    break
                batch = data.batch(chunk, mask_rng)
                with T.no_grad():
                    t_out = encode(t_params, t_cfg, batch.input_ids, batch.attention_mask)
                    t_logits = mlm_logits(t_params, t_out.hidden_states[-1]) if cfg.use_logits else None
                opt.lr = warmup_lr(step, steps, cfg.lr, cfg.warmup_frac)
                opt.zero_grad()
                s_out = encode(student, student_config, batch.input_ids, batch.attention_mask, rng=drop_rng)
                s_logits = mlm_logits(student, s_out.hidden_states[-1])
                report, total = distill_losses(t_out, t_logits, s_out, s_logits, batch, cfg)
                if not np.isfinite(report.total):
                    raise T.NonFiniteError(f"non-finite distillation loss at step {step + 1}")
                T.backward(total)
                opt.step()
                step += 1
                trace.append(report)
                if metrics is not None:
                    metrics.write(f"{step},{report.l_mlm!r},{report.l_hidn!r},{report.l_logits!r},{report.total!r}\n")
                if step % 100 == 0:
                    log.info("distill step %d: total %.5f (mlm %.4f hidn %.5f logits %.3g)",
                             step, report.total, report.l_mlm, report.l_hidn, report.l_logits)
            epoch += 1
        if run_dir is not None:
            save_checkpoint(student, student_config, run_dir / "checkpoints" / "student.ckpt")
    finally:
        if metrics is not None:
            metrics.close()
    return DistillResult(student, student_config, trace)


def _cast(params: ParamStore, cfg: ModelConfig, dtype) -> ParamStore:
    out = params.copy(cfg)
    for t in out.tensors.values():
        t.data = t.data.astype(dtype)
    return out
