import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.special import expit

from sclstm.numkit import make_rng
from sclstm.sclstm_net import (
    ETA, XI, NetConfig, NumericError, State, backprop_sentence, block_shapes, check_instance,
    forward_sentence, gradcheck, heuristic_gate, init_params, load_model, reverse_for_reranker,
    sample_masks, save_model, sentence_cost, step, tie,
)


def small_cfg(**kw):
    base = dict(vocab_size=12, da_dim=9, hidden_size=6,
                heuristic_slots=((1, 1, (5,)), (2, 2, ()), (3, 3, ())))
    base.update(kw)
    return NetConfig(**base)


def random_instance(seed, **kw):
    rng = make_rng(seed)
    cfg = small_cfg(**kw)
    params = init_params(cfg, rng, scale=0.5)
    tokens = np.concatenate([[0], rng.integers(1, cfg.vocab_size, size=6)])
    d0 = (rng.random(cfg.da_dim) < 0.6).astype(float)
    return params, tokens, d0, rng


def test_block_shapes_deep():
    cfg = small_cfg(num_layers=2, dropout=0.5, embedding_dim=4)
    shapes = block_shapes(cfg)
    assert shapes["W_x.0"] == (24, 4)
    assert shapes["W_x.1"] == (24, 4 + 6)
    assert shapes["W_out"] == (12, 12)
    assert shapes["W_dc"] == (6, 9)
    assert "W_hr.1" in shapes


def test_config_round_trip_and_validation():
    cfg = small_cfg(num_layers=2, alpha=(0.5, 0.25))
    assert NetConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ValueError):
        small_cfg(gating_mode="sometimes")
    with pytest.raises(ValueError):
        small_cfg(dropout=1.0)


def test_reading_gate_forced_values():
    params, _, d0, _ = random_instance(0)
    s = State.zeros(params.config)
    _, d_one, _ = step(params, 4, s, d0, r_override=np.ones(9))
    _, d_zero, _ = step(params, 4, s, d0, r_override=np.zeros(9))
    assert np.array_equal(d_one, d0)
    assert np.array_equal(d_zero, np.zeros(9))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from(["learned", "heuristic", "none"]), st.sampled_from([1, 2]))
def test_da_vector_non_increasing(seed, mode, layers):
    params, tokens, d0, rng = random_instance(seed, gating_mode=mode, num_layers=layers,
                                              dropout=0.5 if layers > 1 else 0.0)
    trace = forward_sentence(params, tokens, d0, rng=rng, train=True)
    assert np.all(np.diff(trace.d, axis=0) <= 0)
    assert np.all((trace.d >= 0) & (trace.d <= 1))


def test_none_mode_keeps_d_and_still_uses_it():
    params, tokens, d0, _ = random_instance(1, gating_mode="none")
    trace = forward_sentence(params, tokens, d0)
    assert np.array_equal(trace.d, np.tile(d0, (len(tokens) + 1, 1)))
    assert trace.r is None
    other = forward_sentence(params, tokens, np.zeros(9))
    assert not np.allclose(trace.p, other.p)


def test_heuristic_gate_rule():
    cfg = small_cfg(gating_mode="heuristic")
    d = np.ones(9)
    d[5] = 0.0
    r = heuristic_gate(cfg, 1, d)
    assert r[1] == 0.0 and r.sum() == 8
    d[5] = 1.0
    # a set special bit blocks the rule
    assert np.all(heuristic_gate(cfg, 1, d) == 1.0)
    assert np.all(heuristic_gate(cfg, 7, d) == 1.0)


def _plain_lstm(blocks, tokens, hidden):
    """Textbook LSTM language model written out gate by gate."""
    n = hidden
    Wx, Wh, Wout, E = blocks["W_x.0"], blocks["W_h.0"], blocks["W_out"], blocks["E"]
    h, c = np.zeros(n), np.zeros(n)
    out = []
    for x in tokens:
        e = E[x]
        i = expit(Wx[:n] @ e + Wh[:n] @ h)
        f = expit(Wx[n:2 * n] @ e + Wh[n:2 * n] @ h)
        o = expit(Wx[2 * n:3 * n] @ e + Wh[2 * n:3 * n] @ h)
        g = np.tanh(Wx[3 * n:] @ e + Wh[3 * n:] @ h)
        c = f * c + i * g
        h = o * np.tanh(c)
        logits = Wout @ h
        p = np.exp(logits - logits.max())
        out.append((h, c, p / p.sum()))
    return out


def test_none_mode_with_zero_da_is_plain_lstm():
    params, _, _, rng = random_instance(2, gating_mode="none")
    tokens = rng.integers(0, 12, size=50)
    oracle = _plain_lstm(params.blocks, tokens, 6)
    state, d = State.zeros(params.config), np.zeros(9)
    for x, (h, c, p) in zip(tokens, oracle):
        state, d, p_net = step(params, int(x), state, d)
        assert np.max(np.abs(state.h[0] - h)) <= 1e-12
        assert np.max(np.abs(state.c[0] - c)) <= 1e-12
        assert np.max(np.abs(p_net - p)) <= 1e-12


def test_step_matches_forward_sentence():
    params, tokens, d0, _ = random_instance(3, num_layers=2, dropout=0.5)
    trace = forward_sentence(params, tokens, d0)
    state, d = State.zeros(params.config), d0
    for t, x in enumerate(tokens):
        state, d, p = step(params, int(x), state, d)
        assert np.allclose(p, trace.p[t], atol=1e-14)
        assert np.allclose(d, trace.d[t + 1], atol=1e-15)


def test_eval_mode_is_deterministic_and_train_needs_rng():
    params, tokens, d0, _ = random_instance(4, num_layers=2, dropout=0.5)
    a = forward_sentence(params, tokens, d0)
    b = forward_sentence(params, tokens, d0)
    assert np.array_equal(a.p, b.p)
    with pytest.raises(ValueError):
        forward_sentence(params, tokens, d0, train=True)
    t1 = forward_sentence(params, tokens, d0, rng=make_rng(1), train=True)
    t2 = forward_sentence(params, tokens, d0, rng=make_rng(1), train=True)
    assert np.array_equal(t1.p, t2.p)
    assert not np.allclose(t1.p, a.p)


def test_bad_inputs():
    params, tokens, d0, _ = random_instance(5)
    with pytest.raises(IndexError):
        forward_sentence(params, [0, 12], d0)
    with pytest.raises(ValueError):
        forward_sentence(params, tokens, np.zeros(3))
    params.blocks["W_out"][:] = np.inf
    with np.errstate(invalid="ignore"), pytest.raises(NumericError, match="timestep"):
        forward_sentence(params, tokens, d0)


def test_cross_entropy_term_is_negative_log_likelihood():
    params, tokens, d0, _ = random_instance(6)
    targets = np.roll(tokens, -1)
    trace = forward_sentence(params, tokens, d0)
    total, parts = sentence_cost(trace, targets)
    assert np.isclose(parts.cross_entropy, -np.sum(np.log(trace.p[np.arange(len(tokens)), targets])))
    assert abs(parts.total - total) <= 1e-12
    assert parts.transition_penalty > 0


def _fake_trace(trace, d):
    # near one-hot predictions on the targets
    T = len(trace)
    logits = np.full((T, trace.logits.shape[1]), -1e4)
    logits[np.arange(T), np.arange(T)] = 0.0
    return dataclasses.replace(trace, d=d, logits=logits), np.arange(T)


def test_cost_worked_examples():
    params, tokens, d0, _ = random_instance(7)
    trace = forward_sentence(params, tokens, d0)
    T = len(trace)
    fake, targets = _fake_trace(trace, np.zeros((T + 1, 9)))
    assert sentence_cost(fake, targets)[0] == pytest.approx(T * ETA, abs=1e-12)

    d = np.zeros((T + 1, 9))
    d[:, 0] = 1.0
    fake, targets = _fake_trace(trace, d)
    assert sentence_cost(fake, targets)[1].final_da_norm == 1.0

    both = np.zeros((T + 1, 9))
    both[:2, :2] = 1.0
    fake, targets = _fake_trace(trace, both)
    double = sentence_cost(fake, targets)[1].transition_penalty - (T - 1) * ETA
    assert double == pytest.approx(ETA * XI ** np.sqrt(2), rel=1e-12)
    assert double == pytest.approx(0.0672, abs=5e-4)
    apart = np.zeros((T + 1, 9))
    apart[:2, 0] = 1.0
    apart[:3, 1] = 1.0
    fake, targets = _fake_trace(trace, apart)
    single = sentence_cost(fake, targets)[1].transition_penalty - (T - 2) * ETA
    assert single == pytest.approx(2 * ETA * XI, rel=1e-12)
    assert double > single


@pytest.mark.parametrize("mode", ["learned", "heuristic", "none"])
@pytest.mark.parametrize("layers", [1, 2])
def test_gradcheck_single_instance(mode, layers):
    params, tokens, d0, rng = random_instance(8, gating_mode=mode, num_layers=layers,
                                              dropout=0.5 if layers > 1 else 0.0)
    masks = sample_masks(params.config, len(tokens), rng)
    report = check_instance(params, tokens, np.roll(tokens, -1), d0, masks)
    assert report.passed(1e-4), report.worst


def test_gradcheck_helper_labels():
    reports = gradcheck(0, modes=("learned",), layers=(1,))
    assert [r.label for r in reports] == ["learned/1-layer"]
    assert reports[0].max_error < 1e-4


def test_shared_reading_weights_get_both_gradients():
    rng = make_rng(9)
    cfg = small_cfg()
    fwd, bwd = init_params(cfg, rng, 0.5), init_params(cfg, rng, 0.5)
    tie(fwd, bwd)
    assert fwd.blocks["W_wr"] is bwd.blocks["W_wr"]
    tokens = np.array([0, 3, 5, 2, 7])
    back = np.array([0, 2, 5, 3, 7])
    d0 = np.ones(9)

    def joint():
        return (sentence_cost(forward_sentence(fwd, tokens, d0), np.roll(tokens, -1))[0]
                + sentence_cost(forward_sentence(bwd, back, d0), np.roll(back, -1))[0])

    gf, _ = backprop_sentence(fwd, forward_sentence(fwd, tokens, d0), np.roll(tokens, -1))
    gb, _ = backprop_sentence(bwd, forward_sentence(bwd, back, d0), np.roll(back, -1))
    W = fwd.blocks["W_wr"]
    for idx in [(0, 0), (3, 2), (8, 5)]:
        old = W[idx]
        W[idx] = old + 1e-5
        up = joint()
        W[idx] = old - 1e-5
        down = joint()
        W[idx] = old
        numeric = (up - down) / 2e-5
        assert numeric == pytest.approx(gf["W_wr"][idx] + gb["W_wr"][idx], rel=1e-4, abs=1e-8)


def test_reverse_for_reranker():
    assert reverse_for_reranker(["BOS", "a", "b", "EOS"]) == ["BOS", "b", "a", "EOS"]
    assert reverse_for_reranker(["BOS", "EOS"]) == ["BOS", "EOS"]


def test_save_load_is_exact(tmp_path):
    params, tokens, d0, _ = random_instance(10, num_layers=2, dropout=0.5)
    save_model(tmp_path / "a.npz", params, {"note": "x"})
    save_model(tmp_path / "b.npz", params, {"note": "x"})
    assert (tmp_path / "a.npz").read_bytes() == (tmp_path / "b.npz").read_bytes()
    loaded, extra = load_model(tmp_path / "a.npz")
    assert extra == {"note": "x"}
    assert loaded.config == params.config
    for k, v in params.blocks.items():
        assert np.array_equal(loaded.blocks[k], v)
    assert np.array_equal(forward_sentence(loaded, tokens, d0).p, forward_sentence(params, tokens, d0).p)
