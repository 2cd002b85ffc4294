import pytest

from delicate.bench import benchmark, compare_forward
from delicate.model import ModelConfig, init_params


def cfg(**kw):
    args = dict(vocab_size=20, hidden_size=16, num_layers=1, num_heads=2, ffn_size=32, max_seq_len=16)
    args.update(kw)
    return ModelConfig(**args)


def test_report_fields():
    c = cfg()
    rep = benchmark(init_params(c, 0), c, batch_size=2, seq_len=8, windows=2, reps=1)
    assert rep.forward_tokens_per_s > 0 and rep.train_tokens_per_s > 0
    assert (rep.batch_size, rep.seq_len, rep.model) == (2, 8, "L1-H16")
    assert "tok/s" in rep.line()


def test_leaves_no_gradients():
    c = cfg()
    p = init_params(c, 0)
    benchmark(p, c, batch_size=2, seq_len=8, windows=1, reps=1)
    assert all(t.grad is None for t in p.unique())


def test_seq_len_bound():
    c = cfg()
    with pytest.raises(ValueError):
        benchmark(init_params(c, 0), c, seq_len=17)


def test_compare_forward_reports_every_model():
    a, b = cfg(), cfg(num_layers=2)
    rates = compare_forward({"a": (init_params(a, 0), a), "b": (init_params(b, 0), b)},
                            batch_size=2, seq_len=8, rounds=3, reps=1)
    assert set(rates) == {"a", "b"} and all(r > 0 for r in rates.values())
    with pytest.raises(ValueError):
        compare_forward({"a": (init_params(a, 0), a)}, seq_len=17)
