"""Downstream evaluation: splits, metrics, fine-tuning, embeddings and screening."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .checkpoint import load_checkpoint
from .chem import (
    DESCRIPTOR_NAMES,
    SmilesSyntaxError,
    Vocab,
    apply_norm,
    descriptors,
    ecfp,
    fit_norm,
    parse_smiles,
    tanimoto_matrix,
    tokenize,
)
from .corpus import gen_corpus
from .model import ModelConfig, ParamStore, encode
from .optim import Adam
from .pretrain import pad_batch
from .rng import fork
from .tensor import Tensor

log = logging.getLogger(__name__)

CLASSIFICATION = "classification"
REGRESSION = "regression"
N_FOLDS = 3
MIN_RECORDS = 20
MIN_PER_CLASS = 10


class TaskError(ValueError):
    """Labels that do not fit the task kind, or a dataset too small to split."""


# ----------------------------------------------------------------------------
# datasets and splits


@dataclass
class TaskDataset:
    smiles: list[str]
    labels: np.ndarray
    kind: str = CLASSIFICATION
    name: str = "task"

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.float64)
        if self.kind not in (CLASSIFICATION, REGRESSION):
            raise TaskError(f"unknown task kind {self.kind!r}")
        if len(self.smiles) != len(self.labels):
            raise TaskError(f"{len(self.smiles)} SMILES but {len(self.labels)} labels")
        if not np.all(np.isfinite(self.labels)):
            raise TaskError("labels must be finite")
        if self.kind == CLASSIFICATION:
            if not np.isin(self.labels, (0.0, 1.0)).all():
                raise TaskError("classification labels must be 0 or 1")
            counts = np.bincount(self.labels.astype(int), minlength=2)
            if counts.min() < MIN_PER_CLASS:
                raise TaskError(f"need at least {MIN_PER_CLASS} records per class, got {counts.tolist()}")

    def __len__(self) -> int:
        return len(self.smiles)

    def subset(self, idx) -> tuple[list[str], np.ndarray]:
        return [self.smiles[i] for i in idx], self.labels[idx]

    @classmethod
    def from_csv(cls, path: str | Path, kind: str = CLASSIFICATION, name: str | None = None) -> "TaskDataset":
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or not {"smiles", "label"} <= set(reader.fieldnames):
                raise TaskError(f"{path}: expected a header with 'smiles' and 'label' columns")
            rows = [(r["smiles"].strip(), r["label"]) for r in reader]
        try:
            labels = [float(v) for _, v in rows]
        except ValueError as exc:
            raise TaskError(f"{path}: non-numeric label ({exc})") from exc
        return cls([s for s, _ in rows], np.array(labels), kind, name or Path(path).stem)

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["smiles", "label"])
            for s, y in zip(self.smiles, self.labels):
                w.writerow([s, int(y) if self.kind == CLASSIFICATION else repr(float(y))])


@dataclass(frozen=True)
class SplitPlan:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray
    seed: int
    fold: int


def split(dataset: TaskDataset | int, seed: int, fold: int = 0) -> SplitPlan:
    """Seeded shuffle, then a contiguous 80/10/10 cut; fold ``k`` reshuffles with ``seed + k``."""
    n = dataset if isinstance(dataset, int) else len(dataset)
    if n < MIN_RECORDS:
        raise TaskError(f"dataset of {n} records is too small to split (need {MIN_RECORDS})")
    order = np.random.default_rng(np.random.SeedSequence(seed + fold)).permutation(n)
    n_train = int(round(0.8 * n))
    n_val = int(round(0.1 * n))
    return SplitPlan(order[:n_train], order[n_train : n_train + n_val], order[n_train + n_val :], seed, fold)


# ----------------------------------------------------------------------------
# metrics


def roc_auc(scores, labels) -> float:
    """Mann-Whitney AUC with half credit for ties, from midranks."""
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel().astype(bool)
    if s.shape != y.shape:
        raise ValueError(f"{s.size} scores but {y.size} labels")
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("roc_auc needs at least one positive and one negative")
    order = np.argsort(s, kind="mergesort")
    sorted_s = s[order]
    # doubled midranks keep everything in integers
    starts = np.flatnonzero(np.r_[True, sorted_s[1:] != sorted_s[:-1]])
    ends = np.r_[starts[1:], s.size]
    twice_mid = np.repeat(starts + ends + 1, ends - starts)
    ranks2 = np.empty(s.size, dtype=np.int64)
    ranks2[order] = twice_mid
    u2 = int(ranks2[y].sum()) - n_pos * (n_pos + 1)
    return u2 / (2 * n_pos * n_neg)


def r2(predictions, targets) -> float:
    p = np.asarray(predictions, dtype=np.float64).ravel()
    t = np.asarray(targets, dtype=np.float64).ravel()
    if p.shape != t.shape:
        raise ValueError(f"{p.size} predictions but {t.size} targets")
    if t.size < 2:
        raise ValueError("r2 needs at least 2 targets")
    ss_tot = float(((t - t.mean()) ** 2).sum())
    if ss_tot == 0.0:
        raise ValueError("r2 undefined: targets have zero variance")
    return 1.0 - float(((t - p) ** 2).sum()) / ss_tot


def task_metric(kind: str, scores, labels) -> float:
    return roc_auc(scores, labels) if kind == CLASSIFICATION else r2(scores, labels)


@dataclass
class MetricsReport:
    metric: str
    folds: list[float]
    name: str = ""

    @property
    def mean(self) -> float:
        return float(np.mean(self.folds))

    @property
    def sem(self) -> float:
        # population std over folds
        return float(np.std(self.folds) / math.sqrt(len(self.folds)))

    def write_csv(self, path: str | Path) -> None:
        lines = ["fold,metric"] + [f"{i},{v!r}" for i, v in enumerate(self.folds)]
        lines.append(f"# {self.name} {self.metric} mean {self.mean:.6f} sem {self.sem:.6f}")
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


# ----------------------------------------------------------------------------
# model plumbing


def load_model(model) -> tuple[ParamStore, ModelConfig]:
    """Accept a checkpoint path or a ``(params, config)`` pair."""
    if isinstance(model, (str, Path)):
        return load_checkpoint(model)
    params, cfg = model
    return params, cfg


def tokenize_all(smiles: Sequence[str], vocab: Vocab, max_len: int) -> list[list[int]]:
    out = []
    for i, s in enumerate(smiles):
        try:
            out.append(tokenize(s, vocab, max_len))
        except (SmilesSyntaxError, ValueError) as exc:
            raise TaskError(f"molecule {i} ({s!r}) failed to tokenize: {exc}") from exc
    return out


def _pooled(params, cfg, seqs, rng=None) -> Tensor:
    ids = pad_batch(seqs)
    return encode(params, cfg, ids, rng=rng).pooled


def embed(model, smiles: Sequence[str], vocab: Vocab, batch_size: int = 64) -> np.ndarray:
    """Pooled outputs in evaluation mode, one row per input molecule."""
    params, cfg = load_model(model)
    if len(vocab) != cfg.vocab_size:
        raise TaskError(f"vocabulary has {len(vocab)} tokens but the checkpoint expects {cfg.vocab_size}")
    seqs = tokenize_all(smiles, vocab, cfg.max_seq_len)
    rows = []
    with T.no_grad():
        for start in range(0, len(seqs), batch_size):
            rows.append(_pooled(params, cfg, seqs[start : start + batch_size]).data)
    if not rows:
        return np.zeros((0, cfg.hidden_size), dtype=params.dtype)
    return np.concatenate(rows)


def _unit_rows(matrix: np.ndarray) -> np.ndarray:
    m = np.asarray(matrix, dtype=np.float64)
    norms = np.linalg.norm(m, axis=1)
    zero = np.flatnonzero(norms == 0)
    if zero.size:
        raise ValueError(f"row {int(zero[0])} is a zero vector; cosine similarity is undefined")
    return m / norms[:, None]


def cosine_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return _unit_rows(a) @ _unit_rows(b).T


def mean_pairwise_cosine(matrix: np.ndarray) -> float:
    """Mean cosine similarity over unordered pairs of distinct rows."""
    u = _unit_rows(matrix)
    n = u.shape[0]
    if n < 2:
        raise ValueError("need at least 2 rows")
    sim = u @ u.T
    iu = np.triu_indices(n, k=1)
    return float(sim[iu].mean())


# ----------------------------------------------------------------------------
# fine-tuning


@dataclass
class FinetuneSettings:
    lr: float = 3e-5
    batch_size: int = 16
    patience: int = 5
    max_epochs: int = 50
    n_folds: int = N_FOLDS


def _head(hidden: int, seed: int, fold: int, dtype) -> tuple[Tensor, Tensor]:
    rng = fork(seed, "head", fold)
    w = np.clip(rng.standard_normal((hidden, 1)), -2, 2) * 0.02
    return Tensor(w.astype(dtype), requires_grad=True, name="head.weight"), \
        Tensor(np.zeros(1, dtype=dtype), requires_grad=True, name="head.bias")


def _predict(params, cfg, head, seqs, batch_size=64) -> np.ndarray:
    out = []
    with T.no_grad():
        for start in range(0, len(seqs), batch_size):
            pooled = _pooled(params, cfg, seqs[start : start + batch_size])
            out.append(T.linear(pooled, *head).data[:, 0])
    return np.concatenate(out).astype(np.float64)


def _loss(kind: str, pred: Tensor, y: np.ndarray) -> Tensor:
    if kind == CLASSIFICATION:
        return T.bce_with_logits(pred, y)
    return T.mse(pred, y)


def _selection_score(kind: str, scores: np.ndarray, labels: np.ndarray) -> float:
    """Validation metric; falls back to negative loss when the metric is undefined."""
    try:
        return task_metric(kind, scores, labels)
    except ValueError:
        if kind == CLASSIFICATION:
            p = 1.0 / (1.0 + np.exp(-scores))
            return float(np.mean(labels * np.log(p + 1e-12) + (1 - labels) * np.log(1 - p + 1e-12)))
        return -float(np.mean((scores - labels) ** 2))


def finetune_fold(params: ParamStore, cfg: ModelConfig, dataset: TaskDataset, seqs, plan: SplitPlan,
                  seed: int, settings: FinetuneSettings) -> float:
    """Fine-tune a copy of ``params`` plus a fresh head on one fold; return the test metric."""
    fold = plan.fold
    model = params.copy(cfg)
    head = _head(cfg.hidden_size, seed, fold, model.dtype)
    labels = dataset.labels
    if dataset.kind == REGRESSION:
        mu, sd = labels[plan.train].mean(), labels[plan.train].std()
        labels = (labels - mu) / (sd if sd > 0 else 1.0)
    opt = Adam(model.unique() + list(head), lr=settings.lr)
    sub = lambda idx: [seqs[i] for i in idx]  # noqa: E731
    val_seqs, test_seqs = sub(plan.val), sub(plan.test)

    best_score, best_state, stale = -np.inf, None, 0
    for epoch in range(settings.max_epochs):
        order = plan.train[fork(seed, "finetune-shuffle", fold, epoch).permutation(len(plan.train))]
        drop_rng = fork(seed, "finetune-dropout", fold, epoch) if cfg.dropout_p > 0 else None
        for start in range(0, len(order), settings.batch_size):
            idx = order[start : start + settings.batch_size]
            opt.zero_grad()
            pred = T.reshape(T.linear(_pooled(model, cfg, sub(idx), drop_rng), *head), (len(idx),))
            loss = _loss(dataset.kind, pred, labels[idx])
            if not np.isfinite(loss.item()):
                raise T.NonFiniteError(f"non-finite fine-tuning loss (fold {fold}, epoch {epoch})")
            T.backward(loss)
            opt.step()
        score = _selection_score(dataset.kind, _predict(model, cfg, head, val_seqs), labels[plan.val])
        if score > best_score:
            best_score, stale = score, 0
            best_state = (model.state(), [h.data.copy() for h in head])
        else:
            stale += 1
            if stale >= settings.patience:
                break
    model.load_state(best_state[0])
    for h, saved in zip(head, best_state[1]):
        h.data[...] = saved
    return task_metric(dataset.kind, _predict(model, cfg, head, test_seqs), labels[plan.test])


def finetune(model, dataset: TaskDataset, seed: int, vocab: Vocab,
             settings: FinetuneSettings | None = None) -> MetricsReport:
    """Full-model fine-tuning with a fresh affine head on the pooled output, 3-fold CV."""
    settings = settings or FinetuneSettings()
    params, cfg = load_model(model)
    if len(vocab) != cfg.vocab_size:
        raise TaskError(f"vocabulary has {len(vocab)} tokens but the checkpoint expects {cfg.vocab_size}")
    seqs = tokenize_all(dataset.smiles, vocab, cfg.max_seq_len)
    folds = []
    for fold in range(settings.n_folds):
        plan = split(dataset, seed, fold)
        folds.append(finetune_fold(params, cfg, dataset, seqs, plan, seed, settings))
        log.info("%s fold %d: %.4f", dataset.name, fold, folds[-1])
    return MetricsReport("roc_auc" if dataset.kind == CLASSIFICATION else "r2", folds, dataset.name)


# ----------------------------------------------------------------------------
# descriptor baseline


def descriptor_matrix(smiles: Sequence[str]) -> np.ndarray:
    rows = []
    for i, s in enumerate(smiles):
        try:
            rows.append(descriptors(parse_smiles(s)))
        except SmilesSyntaxError as exc:
            raise TaskError(f"molecule {i} ({s!r}) failed to parse: {exc}") from exc
    return np.array(rows)


def baseline_descriptor_model(dataset: TaskDataset, seed: int, lr: float = 1e-2, max_epochs: int = 500,
                              patience: int = 20, n_folds: int = N_FOLDS) -> MetricsReport:
    """Single affine unit over normalised descriptors, full-batch Adam, same CV protocol."""
    raw = descriptor_matrix(dataset.smiles)
    folds = []
    for fold in range(n_folds):
        plan = split(dataset, seed, fold)
        x = apply_norm(raw, fit_norm(raw[plan.train]))
        y = dataset.labels
        if dataset.kind == REGRESSION:
            mu, sd = y[plan.train].mean(), y[plan.train].std()
            y = (y - mu) / (sd if sd > 0 else 1.0)
        rng = fork(seed, "baseline", fold)
        w = Tensor(rng.standard_normal((x.shape[1], 1)) * 0.01, requires_grad=True)
        b = Tensor(np.zeros(1), requires_grad=True)
        opt = Adam([w, b], lr=lr)
        xt = Tensor(x[plan.train])
        predict = lambda idx: (x[idx] @ w.data + b.data)[:, 0]  # noqa: E731
        best, best_state, stale = -np.inf, None, 0
        for _ in range(max_epochs):
            opt.zero_grad()
            loss = _loss(dataset.kind, T.reshape(T.linear(xt, w, b), (len(plan.train),)), y[plan.train])
            T.backward(loss)
            opt.step()
            score = _selection_score(dataset.kind, predict(plan.val), y[plan.val])
            if score > best:
                best, best_state, stale = score, (w.data.copy(), b.data.copy()), 0
            else:
                stale += 1
                if stale >= patience:
                    break
        w.data[...], b.data[...] = best_state
        folds.append(task_metric(dataset.kind, predict(plan.test), y[plan.test]))
    return MetricsReport("roc_auc" if dataset.kind == CLASSIFICATION else "r2", folds, f"{dataset.name}-descriptors")


# ----------------------------------------------------------------------------
# virtual screening

Scorer = Callable[[Sequence[str], Sequence[str]], np.ndarray]


def tanimoto_scorer(radius: int = 2, width: int = 2048) -> Scorer:
    def score(queries, library):
        fq = [ecfp(parse_smiles(s), radius, width) for s in queries]
        fl = [ecfp(parse_smiles(s), radius, width) for s in library]
        return tanimoto_matrix(fq, fl)

    return score


def embedding_scorer(model, vocab: Vocab) -> Scorer:
    def score(queries, library):
        return cosine_matrix(embed(model, queries, vocab), embed(model, library, vocab))

    return score


def vs_rank(queries: Sequence[str], library: Sequence[str], active, scorer: Scorer) -> float:
    """ROC-AUC of ranking ``library`` by maximum similarity to any query active."""
    if set(queries) & set(library):
        raise TaskError("query actives must not appear in the library")
    active = np.asarray(active).astype(bool)
    if len(active) != len(library):
        raise TaskError(f"{len(library)} library molecules but {len(active)} activity flags")
    if len(queries) == 0:
        raise TaskError("no query actives")
    sim = np.asarray(scorer(queries, library), dtype=np.float64)
    return roc_auc(sim.max(axis=0), active)


# ----------------------------------------------------------------------------
# synthetic tasks


def heldout_molecules(n: int, seed: int, exclude: Sequence[str] = ()) -> list[str]:
    """``n`` generated molecules not in ``exclude``, from a stream unrelated to the corpus seed."""
    skip = set(exclude)
    pool = gen_corpus(seed * 7919 + 104729, n + len(skip) + 64)
    out = [s for s in pool if s not in skip][:n]
    if len(out) < n:
        raise TaskError(f"could only find {len(out)} held-out molecules")
    return out


def toy_regression_task(descriptor: str, n: int = 300, seed: int = 0, exclude: Sequence[str] = ()) -> TaskDataset:
    """Label each held-out molecule with one of the PhysChemPred descriptors."""
    if descriptor not in DESCRIPTOR_NAMES:
        raise TaskError(f"unknown descriptor {descriptor!r}")
    smiles = heldout_molecules(n, seed, exclude)
    y = descriptor_matrix(smiles)[:, DESCRIPTOR_NAMES.index(descriptor)]
    return TaskDataset(smiles, y, REGRESSION, f"toy-{descriptor}")


def has_ring_heteroatom(mol) -> bool:
    """True when some N, O or S atom sits in a ring."""
    ring_atoms = {a for b in mol.bonds if b.in_ring for a in (b.begin, b.end)}
    return any(mol.atoms[i].element in ("N", "O", "S") for i in ring_atoms)


def polar_fraction_high(smiles: Sequence[str]) -> np.ndarray:
    d = descriptor_matrix(smiles)
    frac = d[:, DESCRIPTOR_NAMES.index("heteroatoms")] / d[:, DESCRIPTOR_NAMES.index("heavy_atoms")]
    return (frac > np.median(frac)).astype(float)


def toy_classification_task(n: int = 600, seed: int = 0, exclude: Sequence[str] = (),
                            rule: str = "ring_heteroatom") -> TaskDataset:
    """Held-out molecules with a structural label.

    ``ring_heteroatom`` (default) marks molecules with a heteroatom inside a
    ring, which is not a function of the pretraining descriptors and needs
    ring-closure context to detect.  ``polar_fraction`` thresholds the share
    of heteroatoms among heavy atoms at its median.
    """
    smiles = heldout_molecules(n, seed, exclude)
    if rule == "ring_heteroatom":
        y = np.array([has_ring_heteroatom(parse_smiles(s)) for s in smiles], dtype=float)
    elif rule == "polar_fraction":
        y = polar_fraction_high(smiles)
    else:
        raise TaskError(f"unknown rule {rule!r}")
    return TaskDataset(smiles, y, CLASSIFICATION, f"toy-{rule}")


def shuffled(dataset: TaskDataset, seed: int) -> TaskDataset:
    perm = fork(seed, "label-shuffle").permutation(len(dataset))
    return TaskDataset(list(dataset.smiles), dataset.labels[perm], dataset.kind, f"{dataset.name}-shuffled")


PLANTED_SCAFFOLD = "c%90ccc(cc%90)S(=O)(=O)N%91CCOCC%91"


@dataclass
class VSSet:
    queries: list[str]
    library: list[str]
    active: np.ndarray
    scaffold: str = PLANTED_SCAFFOLD


def planted_vs_set(seed: int = 0, n_queries: int = 5, n_actives: int = 40, n_decoys: int = 360,
                   scaffold: str = PLANTED_SCAFFOLD) -> VSSet:
    """Actives carry a shared scaffold attached to a generated decoration; decoys do not."""
    pool = gen_corpus(seed * 104729 + 7, 4 * (n_queries + n_actives + n_decoys))
    rng = fork(seed, "vs-set")
    pool = [pool[i] for i in rng.permutation(len(pool))]
    actives, decoys = [], []
    for s in pool:
        if "." in s:
            continue
        if len(actives) < n_queries + n_actives:
            cand = s + scaffold
            try:
                parse_smiles(cand)
            except SmilesSyntaxError:
                continue
            actives.append(cand)
        elif len(decoys) < n_decoys:
            decoys.append(s)
        else:
            break
    if len(actives) < n_queries + n_actives or len(decoys) < n_decoys:
        raise TaskError("generator could not fill the screening set")
    queries, act_lib = actives[:n_queries], actives[n_queries:]
    library = act_lib + decoys
    flags = np.r_[np.ones(len(act_lib)), np.zeros(len(decoys))]
    order = rng.permutation(len(library))
    return VSSet(queries, [library[i] for i in order], flags[order], scaffold)
