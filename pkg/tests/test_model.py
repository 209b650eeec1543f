import math

import numpy as np
import pytest

from trams import memory as memsel
from trams import model as M
from trams.errors import DivergenceError, UsageError
from trams.numerics import Rng


def tiny_cfg(**kw):
    base = dict(vocab_size=11, num_layers=2, num_heads=2, d_model=16, d_ffn=32,
                segment_len=8, pool_capacity=16, selected_m=16)
    base.update(kw)
    return M.ModelConfig(**base)


def test_config_validate_lists_all_offenders():
    cfg = M.ModelConfig(vocab_size=1, num_layers=0, num_heads=3, d_model=16,
                        d_ffn=0, segment_len=0, pool_capacity=8, selected_m=9,
                        strategy="psychic", dropout=1.5)
    with pytest.raises(UsageError) as exc:
        cfg.validate()
    msg = str(exc.value)
    for frag in ("vocab_size", "num_layers", "divisible", "d_ffn", "segment_len",
                 "selected_m", "strategy", "dropout"):
        assert frag in msg


def test_config_m_bigger_than_pool_rejected():
    with pytest.raises(UsageError, match="selected_m"):
        tiny_cfg(selected_m=300, pool_capacity=200).validate()


def _ln(x, gain, bias, eps=1e-5):
    mu = x.mean()
    var = x.var()
    return gain * (x - mu) / np.sqrt(var + eps) + bias


def test_forward_matches_hand_expansion():
    # single layer, one head, d=2, n=1, V=2, empty pool
    cfg = M.ModelConfig(vocab_size=2, num_layers=1, num_heads=1, d_model=2,
                        d_ffn=2, segment_len=1, pool_capacity=0, selected_m=1)
    ck = M.init_checkpoint(cfg, Rng(0))
    p = ck.params
    p["embed"][:] = [[0.5, -1.0], [2.0, 1.0]]
    p["relpos_proj"][:] = np.eye(2)
    p["layers.0.attn.wq"][0] = [[1.0, 0.0], [0.0, 1.0]]
    p["layers.0.attn.wk"][0] = [[0.0, 1.0], [1.0, 0.0]]
    p["layers.0.attn.wkp"][0] = [[0.5, -0.5], [0.25, 1.0]]
    p["layers.0.attn.wv"][0] = [[1.0, 2.0], [3.0, -1.0]]
    p["layers.0.attn.u"][0] = [0.1, -0.2]
    p["layers.0.attn.v"][0] = [0.3, 0.0]
    p["layers.0.ffn.w1"][:] = [[1.0, -1.0], [0.5, 0.5]]
    p["layers.0.ffn.b1"][:] = [0.1, -0.1]
    p["layers.0.ffn.w2"][:] = [[2.0, 0.0], [0.0, 2.0]]
    p["layers.0.ffn.b2"][:] = [0.05, 0.05]
    p["out_proj.w"][:] = [[1.0, -1.0], [0.5, 2.0]]
    p["out_proj.b"][:] = [0.0, 0.25]

    tok = 1
    pool = memsel.empty_pool(1, 2, 0)
    logits, _, _ = M.forward_segment(ck, np.array([tok]), pool, strategy="none",
                                     seg_start=0)

    x = p["embed"][tok].astype(np.float64)
    n1 = _ln(x, 1.0, 0.0)
    q = n1 @ np.asarray(p["layers.0.attn.wq"][0], np.float64)
    k = n1 @ np.asarray(p["layers.0.attn.wk"][0], np.float64)
    # distance-0 sinusoid row is [sin 0, cos 0] = [0, 1]
    kp0 = np.array([0.0, 1.0]) @ np.asarray(p["relpos_proj"], np.float64) \
        @ np.asarray(p["layers.0.attn.wkp"][0], np.float64)
    u = np.asarray(p["layers.0.attn.u"][0], np.float64)
    v = np.asarray(p["layers.0.attn.v"][0], np.float64)
    _ = (q + u) @ k + (q + v) @ kp0  # single visible column: softmax prob is 1
    attn = n1 @ np.asarray(p["layers.0.attn.wv"][0], np.float64)
    x1 = x + attn
    n2 = _ln(x1, 1.0, 0.0)
    act = np.maximum(n2 @ np.asarray(p["layers.0.ffn.w1"], np.float64)
                     + np.asarray(p["layers.0.ffn.b1"], np.float64), 0.0)
    x2 = x1 + act @ np.asarray(p["layers.0.ffn.w2"], np.float64) \
        + np.asarray(p["layers.0.ffn.b2"], np.float64)
    nf = _ln(x2, 1.0, 0.0)
    want = nf @ np.asarray(p["out_proj.w"], np.float64) \
        + np.asarray(p["out_proj.b"], np.float64)
    np.testing.assert_allclose(logits[0], want, atol=1e-5)


def uniform_ckpt(vocab_size=7, **kw):
    cfg = tiny_cfg(vocab_size=vocab_size, **kw)
    ck = M.init_checkpoint(cfg, Rng(3))
    ck.params["out_proj.w"][:] = 0.0
    ck.params["out_proj.b"][:] = 0.0
    return ck


def test_eval_uniform_logits_gives_vocab_perplexity():
    ck = uniform_ckpt()
    stream = Rng(4).integers(0, 7, size=37).astype(np.int64)
    rep = M.eval_corpus(ck, stream, strategy="none", timestamps=False)
    assert rep.token_count == 36
    assert rep.perplexity == pytest.approx(7.0, abs=1e-9)
    assert rep.bpc == pytest.approx(math.log2(7.0), abs=1e-9)
    assert rep.total_nll_nats == pytest.approx(36 * math.log(7.0), abs=1e-9)


def test_eval_three_token_hand_nll():
    ck = uniform_ckpt()
    rep = M.eval_corpus(ck, np.array([0, 1, 2]), strategy="none", timestamps=False)
    assert rep.total_nll_nats == pytest.approx(2 * math.log(7.0), abs=1e-12)


def test_eval_perfect_predictor_reaches_ppl_one():
    cfg = M.ModelConfig(vocab_size=2, num_layers=1, num_heads=1, d_model=2,
                        d_ffn=2, segment_len=8, pool_capacity=8, selected_m=8)
    ck = M.init_checkpoint(cfg, Rng(0))
    ck.params["embed"][:] = [[1.0, -1.0], [-1.0, 1.0]]
    ck.params["layers.0.attn.wv"][:] = 0.0
    ck.params["layers.0.ffn.w2"][:] = 0.0
    a = 10.0
    ck.params["out_proj.w"][:] = [[-a, a], [a, -a]]
    ck.params["out_proj.b"][:] = 0.0
    stream = np.tile([0, 1], 33).astype(np.int64)
    rep = M.eval_corpus(ck, stream, strategy="none", timestamps=False)
    assert rep.perplexity == pytest.approx(1.0, abs=1e-6)


def test_eval_rejects_short_stream():
    ck = uniform_ckpt()
    with pytest.raises(UsageError):
        M.eval_corpus(ck, np.array([3]))


def test_nll_to_metrics_hand_values():
    assert M.nll_to_metrics(math.log(2.0), 1) == pytest.approx((2.0, 1.0))
    assert M.nll_to_metrics(0.0, 5) == (1.0, 0.0)
    ppl, _ = M.nll_to_metrics(3 * math.log(7.0), 3)
    assert ppl == pytest.approx(7.0)
    with pytest.raises(UsageError):
        M.nll_to_metrics(1.0, 0)


def test_forward_recency_full_equals_none():
    ck = M.init_checkpoint(tiny_cfg(), Rng(5))
    pool = memsel.empty_pool(2, 16, 16)
    rng = Rng(6)
    toks = rng.integers(0, 11, size=8).astype(np.int64)
    _, pool, _ = M.forward_segment(ck, toks, pool, strategy="none", seg_start=0)
    nxt = rng.integers(0, 11, size=8).astype(np.int64)
    la, _, _ = M.forward_segment(ck, nxt, pool, strategy="recency", m=16)
    lb, _, _ = M.forward_segment(ck, nxt, pool, strategy="none")
    np.testing.assert_allclose(la, lb, atol=1e-9)


def test_eval_m_equals_M_strategy_equivalence():
    ck = M.init_checkpoint(tiny_cfg(), Rng(7))
    stream = Rng(8).integers(0, 11, size=300).astype(np.int64)
    base = M.eval_corpus(ck, stream, strategy="recency", timestamps=False)
    for strat in ("trams", "oracle", "random", "none"):
        rep = M.eval_corpus(ck, stream, strategy=strat, seed=1, timestamps=False)
        assert abs(rep.total_nll_nats - base.total_nll_nats) <= 1e-9


def test_eval_deterministic_given_seed():
    ck = M.init_checkpoint(tiny_cfg(selected_m=4), Rng(9))
    stream = Rng(10).integers(0, 11, size=400).astype(np.int64)
    a = M.eval_corpus(ck, stream, strategy="random", seed=11, timestamps=False)
    b = M.eval_corpus(ck, stream, strategy="random", seed=11, timestamps=False)
    assert a == b
    c = M.eval_corpus(ck, stream, strategy="random", seed=12, timestamps=False)
    assert c.total_nll_nats != a.total_nll_nats


def test_selection_strategies_all_run_when_selecting():
    ck = M.init_checkpoint(tiny_cfg(selected_m=4), Rng(13))
    stream = Rng(14).integers(0, 11, size=200).astype(np.int64)
    for strat in ("trams", "oracle", "random", "recency"):
        rep = M.eval_corpus(ck, stream, strategy=strat, seed=2, timestamps=False)
        assert math.isfinite(rep.total_nll_nats)
        assert 0.0 <= rep.utilization <= 1.0


def test_forward_pool_stores_layer_inputs():
    ck = M.init_checkpoint(tiny_cfg(), Rng(15))
    pool = memsel.empty_pool(2, 16, 16)
    toks = Rng(16).integers(0, 11, size=8).astype(np.int64)
    _, pool, _ = M.forward_segment(ck, toks, pool, strategy="none", seg_start=0)
    assert pool.rows == 8
    np.testing.assert_array_equal(pool.layer_states[0], ck.params["embed"][toks])
    np.testing.assert_array_equal(pool.token_ids, toks)


def test_forward_argument_errors():
    ck = M.init_checkpoint(tiny_cfg(), Rng(17))
    pool = memsel.empty_pool(2, 16, 16)
    with pytest.raises(UsageError, match="vocabulary"):
        M.forward_segment(ck, np.array([99]), pool, seg_start=0)
    with pytest.raises(UsageError, match="length"):
        M.forward_segment(ck, np.zeros(9, np.int64), pool, seg_start=0)
    with pytest.raises(UsageError, match="strategy"):
        M.forward_segment(ck, np.zeros(2, np.int64), pool, strategy="psychic",
                          seg_start=0)


def test_random_strategy_without_rng_fails_when_selecting():
    ck = M.init_checkpoint(tiny_cfg(selected_m=2), Rng(18))
    pool = memsel.empty_pool(2, 16, 16)
    toks = Rng(19).integers(0, 11, size=8).astype(np.int64)
    _, pool, _ = M.forward_segment(ck, toks, pool, strategy="none", seg_start=0)
    with pytest.raises(UsageError, match="rng"):
        M.forward_segment(ck, toks[:4], pool, strategy="random")


def test_selection_layers_restricts_selection():
    ck = M.init_checkpoint(tiny_cfg(selected_m=2), Rng(20))
    pool = memsel.empty_pool(2, 16, 16)
    rng = Rng(21)
    toks = rng.integers(0, 11, size=8).astype(np.int64)
    _, pool, _ = M.forward_segment(ck, toks, pool, strategy="none", seg_start=0)
    _, _, stats = M.forward_segment(
        ck, toks[:4], pool, strategy="trams", selection_layers=[1],
        collect_selections=True,
    )
    assert stats.selections and all(s.layer == 1 for s in stats.selections)


def test_empty_pool_is_rpe_baseline():
    ck = M.init_checkpoint(tiny_cfg(), Rng(22))
    stream = Rng(23).integers(0, 11, size=100).astype(np.int64)
    rep = M.eval_corpus(ck, stream, strategy="none", pool_capacity=0,
                        timestamps=False)
    assert rep.utilization == 0.0
    assert math.isfinite(rep.total_nll_nats)


def test_train_zero_steps_keeps_init():
    cfg = tiny_cfg()
    stream = Rng(24).integers(0, 11, size=500).astype(np.int64)
    res = M.train_toy(cfg, stream, M.TrainParams(steps=0, batch=2, seed=1))
    ref = M.init_checkpoint(cfg, Rng(1).split(2)[0])
    for name in ref.params:
        np.testing.assert_array_equal(res.checkpoint.params[name], ref.params[name])
    assert res.loss_curve == []


def test_train_zero_lr_keeps_weights():
    cfg = tiny_cfg()
    stream = Rng(25).integers(0, 11, size=500).astype(np.int64)
    res = M.train_toy(cfg, stream, M.TrainParams(lr=0.0, steps=3, batch=2, seed=1))
    ref = M.init_checkpoint(cfg, Rng(1).split(2)[0])
    for name in ref.params:
        np.testing.assert_array_equal(res.checkpoint.params[name], ref.params[name])
    assert len(res.loss_curve) == 3


def test_train_overfits_repeated_pattern():
    text = "abcdefghij" * 40
    from trams.corpus import tokenize_corpus

    vocab, stream = tokenize_corpus(text, kind="char")
    cfg = M.ModelConfig(vocab_size=vocab.size, num_layers=2, num_heads=2,
                        d_model=16, d_ffn=32, segment_len=10, pool_capacity=20,
                        selected_m=20)
    res = M.train_toy(cfg, stream, M.TrainParams(lr=3e-3, steps=220, batch=2, seed=0))
    rep = M.eval_corpus(res.checkpoint, stream, strategy="none", timestamps=False)
    assert rep.bpc < 0.5 * math.log2(vocab.size)


def test_train_divergence_detected():
    cfg = tiny_cfg()
    stream = Rng(26).integers(0, 11, size=500).astype(np.int64)
    ck = M.init_checkpoint(cfg, Rng(2))
    ck.params["out_proj.b"][0] = np.nan
    with pytest.raises(DivergenceError):
        M.train_toy(cfg, stream, M.TrainParams(steps=2, batch=2), init=ck)


def test_train_stream_too_short():
    cfg = tiny_cfg()
    with pytest.raises(UsageError, match="too short"):
        M.train_toy(cfg, np.zeros(10, np.int64), M.TrainParams(steps=1, batch=4))


def test_train_loss_decreases_on_structured_text():
    text = ("the cat sat. " * 60)
    from trams.corpus import tokenize_corpus

    vocab, stream = tokenize_corpus(text, kind="char")
    cfg = M.ModelConfig(vocab_size=vocab.size, num_layers=1, num_heads=2,
                        d_model=16, d_ffn=32, segment_len=13, pool_capacity=26,
                        selected_m=26)
    res = M.train_toy(cfg, stream, M.TrainParams(lr=2e-3, steps=80, batch=2, seed=3))
    head = sum(res.loss_curve[:5]) / 5
    tail = sum(res.loss_curve[-5:]) / 5
    assert tail < head


def test_gradcheck_two_layer_model():
    from tests import gradtools

    ck, warm, toks, targets = gradtools.build_case(num_layers=2, d_model=8)
    coords = gradtools.sample_coords(ck.params, per_tensor=2, rng=Rng(99))
    worst = gradtools.max_rel_error(ck, warm, toks, targets, coords)
    assert worst < 1e-3


def test_gradcheck_covers_selection_free_memory_path():
    from tests import gradtools

    ck, warm, toks, targets = gradtools.build_case(num_layers=1, d_model=8, seed=4)
    # memory-sensitive tensors only: LN1, content/value keys, position keys
    names = [n for n in ck.params
             if any(t in n for t in ("ln1", "wk", "wv", "wkp", "attn.u", "attn.v"))]
    coords = []
    for name in names:
        flat = ck.params[name].reshape(-1)
        coords.extend((name, i) for i in range(min(4, flat.size)))
    worst = gradtools.max_rel_error(ck, warm, toks, targets, coords)
    assert worst < 1e-3
