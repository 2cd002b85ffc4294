import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from delicate import tensor as T
from delicate.checkpoint import load_checkpoint, save_checkpoint
from delicate.chem.tokenizer import build_vocab
from delicate.corpus import gen_corpus
from delicate.distill import (
    DistillConfig, DistillConfigError, distill_losses, distill_run, logits_loss, softened,
    uniform_layer_map, validate_layer_map,
)
from delicate.gradsuite import tiny_batch, tiny_config
from delicate.model import ModelConfig, encode, init_params, mlm_logits


def outputs(params, cfg, batch):
    out = encode(params, cfg, batch.input_ids, batch.attention_mask)
    return out, mlm_logits(params, out.hidden_states[-1])


def plus_in_order(values, dtype):
    """Left-to-right sum in the run's precision, the order the loss tensors are added."""
    acc = dtype(values[0])
    for v in values[1:]:
        acc = dtype(acc + dtype(v))
    return float(acc)


def test_layer_map_examples():
    assert uniform_layer_map(12, 3) == {0: 0, 1: 4, 2: 8, 3: 12}
    assert uniform_layer_map(4, 2) == {0: 0, 1: 2, 2: 4}
    assert uniform_layer_map(5, 5) == {i: i for i in range(6)}


def test_layer_map_errors():
    with pytest.raises(DistillConfigError):
        uniform_layer_map(12, 5)
    with pytest.raises(DistillConfigError):
        validate_layer_map({0: 0, 1: 3, 2: 2}, 2, 4)    # last not mapped to last
    with pytest.raises(DistillConfigError):
        validate_layer_map({0: 0, 1: 3, 2: 1, 3: 4}, 3, 4)   # not order preserving
    with pytest.raises(DistillConfigError):
        DistillConfig(temperature=0.0)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 6), st.integers(1, 4))
def test_layer_map_endpoints_and_order(student, factor):
    m = uniform_layer_map(student * factor, student)
    assert m[0] == 0 and m[student] == student * factor
    assert list(m.values()) == sorted(set(m.values()))


def test_two_class_softened_oracle():
    t = T.Tensor(np.array([[2.0, 0.0]]))
    s = T.Tensor(np.array([[0.0, 0.0]]))
    np.testing.assert_allclose(softened(t, 8.0).data, [[0.5622, 0.4378]], atol=5e-5)
    p = 1 / (1 + np.exp(-0.25))
    expected = ((p - 0.5) ** 2 + (0.5 - p) ** 2) / 2
    assert logits_loss(s, t, 8.0).item() == pytest.approx(expected, rel=1e-12)
    assert logits_loss(s, t, 8.0).item() == pytest.approx(3.87e-3, rel=2e-3)


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (3, 6), elements=st.floats(-10, 10)), arrays(np.float64, (3, 6), elements=st.floats(-10, 10)),
       st.floats(0.5, 20))
def test_logits_loss_symmetric(a, b, temp):
    assert logits_loss(T.Tensor(a), T.Tensor(b), temp).item() == pytest.approx(
        logits_loss(T.Tensor(b), T.Tensor(a), temp).item(), rel=1e-12, abs=1e-300)


def test_large_temperature_vanishes():
    rng = np.random.default_rng(0)
    a, b = T.Tensor(rng.normal(size=(4, 9)) * 5), T.Tensor(rng.normal(size=(4, 9)) * 5)
    assert logits_loss(a, b, 1e6).item() < 1e-12
    assert logits_loss(a, b, 1e6).item() < logits_loss(a, b, 8.0).item()


def test_identity_student_zero_loss():
    cfg = tiny_config(num_layers=2)
    p = init_params(cfg, 0, dtype=np.float64)
    batch = tiny_batch(cfg, 0, with_descriptors=False)
    out, logits = outputs(p, cfg, batch)
    report, _ = distill_losses(out, logits, out, logits, batch, DistillConfig(use_mlm=False))
    assert report.l_hidn == 0.0 and report.l_logits == 0.0 and report.total == 0.0


@pytest.mark.parametrize("flags", [
    dict(), dict(use_mlm=False), dict(use_hidn=False), dict(use_logits=False),
    dict(use_mlm=False, use_logits=False), dict(logits_positions="all"),
])
def test_flags_zero_their_term_and_total_is_sum(flags):
    t_cfg, s_cfg = tiny_config(num_layers=4), tiny_config(num_layers=2)
    teacher, student = init_params(t_cfg, 1), init_params(s_cfg, 2)
    batch = tiny_batch(s_cfg, 0, with_descriptors=False)
    cfg = DistillConfig(**flags)
    t_out, t_logits = outputs(teacher, t_cfg, batch)
    s_out, s_logits = outputs(student, s_cfg, batch)
    report, total = distill_losses(t_out, None if not cfg.use_logits else t_logits, s_out, s_logits, batch, cfg)
    terms = {"l_mlm": cfg.use_mlm, "l_hidn": cfg.use_hidn, "l_logits": cfg.use_logits}
    for name, on in terms.items():
        assert (getattr(report, name) > 0) if on else (getattr(report, name) == 0.0)
    enabled = [getattr(report, n) for n, on in terms.items() if on]
    assert report.total == total.item() == plus_in_order(enabled, np.float32)


def test_all_terms_disabled_raises():
    cfg = tiny_config()
    p = init_params(cfg, 0)
    batch = tiny_batch(cfg, with_descriptors=False)
    out, logits = outputs(p, cfg, batch)
    with pytest.raises(DistillConfigError):
        distill_losses(out, logits, out, logits, batch, DistillConfig(use_mlm=False, use_hidn=False, use_logits=False))


def test_empty_label_set_raises():
    cfg = tiny_config()
    p = init_params(cfg, 0)
    batch = tiny_batch(cfg, with_descriptors=False)
    batch.mlm_labels[...] = -1
    out, logits = outputs(p, cfg, batch)
    with pytest.raises(ValueError):
        distill_losses(out, logits, out, logits, batch, DistillConfig())


def test_hidden_size_mismatch():
    t_cfg = tiny_config()
    s_cfg = ModelConfig(vocab_size=11, hidden_size=4, num_layers=2, num_heads=2, ffn_size=8, max_seq_len=8)
    batch = tiny_batch(t_cfg, with_descriptors=False)
    t_out, t_logits = outputs(init_params(t_cfg, 0), t_cfg, batch)
    s_out, s_logits = outputs(init_params(s_cfg, 0), s_cfg, batch)
    with pytest.raises(DistillConfigError):
        distill_losses(t_out, t_logits, s_out, s_logits, batch, DistillConfig())


@pytest.fixture(scope="module")
def toy():
    corpus = gen_corpus(7, 80)
    return corpus, build_vocab(corpus)


def small(vocab, layers, share=False):
    return ModelConfig(vocab_size=len(vocab), hidden_size=16, num_layers=layers, num_heads=2, ffn_size=24,
                       max_seq_len=64, share_layers=share)


def test_delicate_path_tied_to_tied(tmp_path, toy):
    corpus, vocab = toy
    t_cfg = small(vocab, 4, share=True)
    save_checkpoint(init_params(t_cfg, 0), t_cfg, tmp_path / "teacher.ckpt")
    before = (tmp_path / "teacher.ckpt").read_bytes()
    s_cfg = small(vocab, 2, share=True)
    result = distill_run(tmp_path / "teacher.ckpt", s_cfg, corpus, DistillConfig(batch_size=16), 12, 0, vocab,
                         run_dir=tmp_path / "run")
    assert (tmp_path / "teacher.ckpt").read_bytes() == before
    params, cfg = load_checkpoint(tmp_path / "run/checkpoints/student.ckpt")
    assert cfg == s_cfg and len(params.unique()) == len(result.params.unique())
    with open(tmp_path / "run/metrics/distill.csv") as f:
        rows = list(csv.DictReader(f))
    assert len(rows) == 12 and list(rows[0]) == ["step", "l_mlm", "l_hidn", "l_logits", "total"]
    for row in rows:
        parts = [float(row[k]) for k in ("l_mlm", "l_hidn", "l_logits")]
        assert float(row["total"]) == plus_in_order(parts, np.float32)


def test_untied_teacher_tied_student_and_no_logits(toy):
    corpus, vocab = toy
    t_cfg = small(vocab, 4)
    teacher = init_params(t_cfg, 0)
    result = distill_run((teacher, t_cfg), small(vocab, 2, share=True), corpus,
                         DistillConfig(batch_size=16, use_logits=False), 5, 1, vocab)
    assert all(r.l_logits == 0.0 and r.total == plus_in_order([r.l_mlm, r.l_hidn], np.float32) for r in result.trace)


def test_distill_run_is_deterministic(toy):
    corpus, vocab = toy
    t_cfg = small(vocab, 2)
    teacher = (init_params(t_cfg, 0, dtype=np.float64), t_cfg)
    a = distill_run(teacher, small(vocab, 1), corpus, DistillConfig(batch_size=16), 6, 3, vocab, dtype=np.float64)
    b = distill_run(teacher, small(vocab, 1), corpus, DistillConfig(batch_size=16), 6, 3, vocab, dtype=np.float64)
    assert a.trace == b.trace


def test_distill_run_checks_sizes(toy):
    corpus, vocab = toy
    t_cfg = small(vocab, 4)
    teacher = (init_params(t_cfg, 0), t_cfg)
    wide = ModelConfig(vocab_size=len(vocab), hidden_size=32, num_layers=2, num_heads=2, ffn_size=24, max_seq_len=64)
    with pytest.raises(DistillConfigError):
        distill_run(teacher, wide, corpus, DistillConfig(batch_size=16), 2, 0, vocab)
    with pytest.raises(DistillConfigError):
        distill_run(teacher, small(vocab, 3), corpus, DistillConfig(batch_size=16), 2, 0, vocab)


def test_corrupt_teacher_checkpoint(tmp_path, toy):
    from delicate.checkpoint import CheckpointError
    corpus, vocab = toy
    (tmp_path / "bad.ckpt").write_bytes(b"DLCT\x01\x00")
    with pytest.raises(CheckpointError):
        distill_run(tmp_path / "bad.ckpt", small(vocab, 2), corpus, DistillConfig(batch_size=16), 2, 0, vocab)
