import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from delicate.chem.tokenizer import build_vocab
from delicate.evaluate import (
    CLASSIFICATION, REGRESSION, FinetuneSettings, MetricsReport, TaskDataset, TaskError,
    baseline_descriptor_model, cosine_matrix, embed, finetune, mean_pairwise_cosine,
    planted_vs_set, r2, roc_auc, shuffled, split, tanimoto_scorer, toy_classification_task,
    toy_regression_task, vs_rank,
)
from delicate.model import ModelConfig, init_params


def brute_auc(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y]
    neg = [s for s, y in zip(scores, labels) if not y]
    wins = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p, n in itertools.product(pos, neg))
    return wins / (len(pos) * len(neg))


def test_auc_examples():
    assert roc_auc([0.9, 0.8, 0.1], [1, 1, 0]) == 1.0
    assert roc_auc([0.5, 0.5], [1, 0]) == 0.5
    assert roc_auc([0.1, 0.9], [1, 0]) == 0.0


def test_auc_matches_pair_count_oracle():
    rng = np.random.default_rng(0)
    for _ in range(200):
        n = int(rng.integers(2, 60))
        labels = rng.random(n) < rng.uniform(0.1, 0.9)
        labels[:2] = [True, False]
        scores = rng.integers(0, 8, size=n) / 4.0     # coarse grid forces ties
        assert roc_auc(scores, labels) == brute_auc(scores, labels)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(-20, 20), min_size=4, max_size=40), st.randoms(use_true_random=False))
def test_auc_invariances(scores, rnd):
    labels = [i % 2 for i in range(len(scores))]
    rnd.shuffle(labels)
    s = np.asarray(scores, dtype=float)
    a = roc_auc(s, labels)
    assert 0.0 <= a <= 1.0
    assert roc_auc(np.exp(s / 3), labels) == a   # strictly monotone on this grid
    assert roc_auc(-s, labels) == pytest.approx(1.0 - a, abs=1e-15)


def test_auc_requires_both_classes():
    with pytest.raises(ValueError):
        roc_auc([0.1, 0.2], [1, 1])


def test_r2_examples():
    t = np.array([1.0, 2.0, 3.0])
    assert r2(t, t) == 1.0
    assert r2(np.full(3, t.mean()), t) == 0.0
    assert r2([1.0, 2.0, 4.0], t) == 0.5


def test_r2_matches_direct_formula():
    rng = np.random.default_rng(1)
    for _ in range(50):
        t, p = rng.normal(size=20), rng.normal(size=20)
        direct = 1 - np.sum((t - p) ** 2) / np.sum((t - t.mean()) ** 2)
        assert abs(r2(p, t) - direct) <= 1e-12
        # a constant offset c costs n c^2 / SS_tot
        c = rng.normal()
        assert r2(t + c, t) == pytest.approx(1 - 20 * c * c / np.sum((t - t.mean()) ** 2), abs=1e-12)


def test_r2_constant_targets():
    with pytest.raises(ValueError):
        r2([1.0, 2.0], [3.0, 3.0])


def test_split_sizes_and_determinism():
    plan = split(100, 0, 0)
    assert (len(plan.train), len(plan.val), len(plan.test)) == (80, 10, 10)
    again = split(100, 0, 0)
    assert all(np.array_equal(getattr(plan, k), getattr(again, k)) for k in ("train", "val", "test"))
    assert not np.array_equal(split(100, 0, 1).test, plan.test)


@pytest.mark.parametrize("n", [20, 37, 100, 601])
def test_split_disjoint_and_exhaustive(n):
    for seed in range(50):
        plan = split(n, seed, seed % 3)
        parts = np.concatenate([plan.train, plan.val, plan.test])
        assert np.array_equal(np.sort(parts), np.arange(n))


def test_split_too_small():
    with pytest.raises(TaskError):
        split(19, 0)


def test_task_dataset_validation(tmp_path):
    smiles = ["C" * (i + 1) for i in range(30)]
    with pytest.raises(TaskError):
        TaskDataset(smiles, [0.5] * 30)
    with pytest.raises(TaskError):
        TaskDataset(smiles, [0] * 25 + [1] * 5)
    with pytest.raises(TaskError):
        TaskDataset(smiles, [np.nan] + [1.0] * 29, REGRESSION)
    ds = TaskDataset(smiles, [0, 1] * 15, name="t")
    ds.to_csv(tmp_path / "t.csv")
    back = TaskDataset.from_csv(tmp_path / "t.csv")
    assert back.smiles == ds.smiles and np.array_equal(back.labels, ds.labels)
    (tmp_path / "bad.csv").write_text("mol,y\nC,1\n")
    with pytest.raises(TaskError):
        TaskDataset.from_csv(tmp_path / "bad.csv")


def test_metrics_report():
    rep = MetricsReport("roc_auc", [0.6, 0.8, 0.7])
    assert rep.mean == pytest.approx(0.7)
    assert rep.sem == pytest.approx(np.std([0.6, 0.8, 0.7]) / np.sqrt(3))


def test_cosine_examples():
    assert mean_pairwise_cosine(np.ones((4, 3))) == pytest.approx(1.0)
    assert mean_pairwise_cosine(np.eye(4)) == 0.0
    np.testing.assert_allclose(cosine_matrix(np.eye(2), np.array([[1.0, 1.0]])), [[2 ** -0.5], [2 ** -0.5]])


def test_zero_row_named():
    with pytest.raises(ValueError, match="row 1"):
        mean_pairwise_cosine(np.array([[1.0, 0.0], [0.0, 0.0]]))


def test_embed_duplicates_identical():
    smiles = ["CCO", "c1ccccc1", "CCO"]
    vocab = build_vocab(smiles)
    cfg = ModelConfig(vocab_size=len(vocab), hidden_size=8, num_layers=1, num_heads=2, ffn_size=8)
    e = embed((init_params(cfg, 0), cfg), smiles, vocab, batch_size=2)
    assert e.shape == (3, 8)
    np.testing.assert_array_equal(e[0], e[2])


def test_planted_vs_set_ecfp():
    vs = planted_vs_set(0)
    assert not set(vs.queries) & set(vs.library)
    assert all(vs.scaffold in s for s, a in zip(vs.library, vs.active) if a)
    assert vs_rank(vs.queries, vs.library, vs.active, tanimoto_scorer()) >= 0.9


def test_vs_rank_ignores_library_order():
    vs = planted_vs_set(1, n_actives=10, n_decoys=60)
    perm = np.random.default_rng(0).permutation(len(vs.library))
    a = vs_rank(vs.queries, vs.library, vs.active, tanimoto_scorer())
    b = vs_rank(vs.queries, [vs.library[i] for i in perm], vs.active[perm], tanimoto_scorer())
    assert a == b


def test_vs_rank_rejects_overlap():
    vs = planted_vs_set(0, n_actives=10, n_decoys=40)
    with pytest.raises(TaskError):
        vs_rank(vs.library[:2], vs.library, vs.active, tanimoto_scorer())


def test_toy_tasks_are_balanced_enough():
    ds = toy_classification_task(600, 0)
    assert 0.2 < ds.labels.mean() < 0.8
    assert toy_classification_task(600, 0).smiles == ds.smiles
    reg = toy_regression_task("mol_weight", 100, 0)
    assert reg.kind == REGRESSION and reg.labels.std() > 0


def test_descriptor_baseline_recovers_mw():
    rep = baseline_descriptor_model(toy_regression_task("mol_weight", 300, 0), 0)
    assert rep.mean > 0.99


def test_finetune_smoke():
    ds = toy_classification_task(60, 3)
    vocab = build_vocab(ds.smiles)
    cfg = ModelConfig(vocab_size=len(vocab), hidden_size=8, num_layers=1, num_heads=2, ffn_size=8)
    rep = finetune((init_params(cfg, 0), cfg), ds, 0, vocab, FinetuneSettings(max_epochs=2, n_folds=2))
    assert rep.metric == "roc_auc" and len(rep.folds) == 2
    assert all(0.0 <= f <= 1.0 for f in rep.folds)


def test_finetune_vocab_mismatch():
    ds = toy_classification_task(60, 3)
    vocab = build_vocab(ds.smiles)
    cfg = ModelConfig(vocab_size=len(vocab) + 1, hidden_size=8, num_layers=1, num_heads=2, ffn_size=8)
    with pytest.raises(TaskError):
        finetune((init_params(cfg, 0), cfg), ds, 0, vocab)


@pytest.mark.slow
def test_teacher_learns_pretrained_descriptor(teacher):
    ds = toy_regression_task("heavy_atoms", 300, 0, exclude=teacher.corpus)
    rep = finetune(teacher.model, ds, 0, teacher.vocab)
    assert rep.mean > 0.5


@pytest.mark.slow
def test_shuffled_labels_null_signal(teacher):
    ds = shuffled(toy_classification_task(600, 0, exclude=teacher.corpus), 0)
    rep = finetune(teacher.model, ds, 0, teacher.vocab)
    assert 0.35 <= rep.mean <= 0.65
