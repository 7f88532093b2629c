import math

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from causalcast.chronoslite import (ForecastBundle, TokenPredictor, build_quantizer,
                                    cross_entropy, dequantize, forecast_quantiles, mean_scale,
                                    quantize, rolling_forecast, rolling_origins,
                                    sample_forecast, tokenize, train_count_model,
                                    window_sequences)
from causalcast.errors import (ConfigurationError, PanelError, SampleSizeError,
                               SpecialTokenError)

from synth import ar1, quarterly_index

Q4 = build_quantizer(4, -1, 1)


# ---- scaling and quantisation

def test_mean_scale_example():
    sc = mean_scale([2, -2, 4])
    assert sc.scale == pytest.approx(8 / 3)
    np.testing.assert_allclose(sc.values, [0.75, -0.75, 1.5])


def test_mean_scale_zero_and_errors():
    assert mean_scale([0.0, 3.0, -1.0]).values[0] == 0.0
    with pytest.raises(PanelError):
        mean_scale([0.0, 0.0])


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.integers(1, 40), elements=st.floats(-1e3, 1e3)),
       st.floats(0.01, 100))
def test_mean_scale_cancels_constant(x, c):
    assume(np.mean(np.abs(x)) > 1e-6)
    np.testing.assert_allclose(mean_scale(c * x).values, mean_scale(x).values,
                               rtol=1e-12, atol=1e-12)


def test_quantizer_construction():
    np.testing.assert_allclose(Q4.centers, [-0.75, -0.25, 0.25, 0.75])
    np.testing.assert_allclose(Q4.edges, [-0.5, 0, 0.5])
    q2 = build_quantizer(2, 0, 2)
    np.testing.assert_allclose(q2.centers, [0.5, 1.5])
    np.testing.assert_allclose(q2.edges, [1.0])
    assert (Q4.pad, Q4.eos, Q4.vocab_size) == (5, 6, 6)
    with pytest.raises(ConfigurationError):
        build_quantizer(1, 0, 1)
    with pytest.raises(ConfigurationError):
        build_quantizer(4, 1, 1)


def test_quantize_lookup():
    assert quantize(0.3, Q4) == 3
    assert dequantize(3, Q4) == 0.25
    assert quantize(99, Q4) == 4
    assert quantize(-99, Q4) == 1
    assert quantize(0.0, Q4) == 3  # edge goes up
    for j, c in enumerate(Q4.centers, start=1):
        assert quantize(c, Q4) == j and dequantize(j, Q4) == c
    with pytest.raises(SpecialTokenError):
        dequantize(Q4.pad, Q4)
    with pytest.raises(SpecialTokenError):
        dequantize([1, Q4.eos], Q4)


@settings(max_examples=200, deadline=None)
@given(st.floats(-15, 15), st.integers(2, 200))
def test_round_trip_property(v, B):
    q = build_quantizer(B, -15, 15)
    assert abs(dequantize(quantize(v, q), q) - v) <= q.width / 2 + 1e-12


def test_tokenize_examples():
    np.testing.assert_array_equal(tokenize([0.75, -0.75], Q4), [4, 1])
    np.testing.assert_array_equal(tokenize([], Q4, window=3), [Q4.pad] * 3)
    enc = tokenize([0.1, 0.2], Q4, append_eos=True)
    assert enc.size == 3 and enc[-1] == Q4.eos
    np.testing.assert_array_equal(tokenize([0.75, -0.75], Q4, window=3), [Q4.pad, 4, 1])


# ---- count model

def test_constant_corpus_mass():
    gamma = 0.5
    V = Q4.vocab_size
    pred = train_count_model([[2] * 20], order=2, gamma=gamma, vocab_size=V)
    for ctx in ([2], [2, 2], [3, 2]):
        assert pred.distribution(ctx)[1] >= (1 + gamma) / (1 + gamma * V)


def test_large_gamma_uniform():
    pred = train_count_model([[1, 2, 3, 1, 2, 3]], order=2, gamma=1e12, vocab_size=6)
    np.testing.assert_allclose(pred.distribution([1, 2]), 1 / 6, atol=1e-9)


def test_alternation():
    pred = train_count_model([[1, 2] * 10], order=1, gamma=0.5, vocab_size=6)
    assert np.argmax(pred.distribution([1])) + 1 == 2
    assert np.argmax(pred.distribution([2])) + 1 == 1


def test_back_off_to_shorter_context():
    pred = train_count_model([[1, 2, 3]], order=2, gamma=1.0, vocab_size=6)
    # [4, 2] unseen at order 2, [2] seen at order 1: (1 + 1) / (1 + 6)
    assert pred.distribution([4, 2])[2] == pytest.approx(2 / 7)
    # nothing of [5] seen: order 0 counts all three tokens
    assert pred.distribution([5])[0] == pytest.approx(2 / 9)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.lists(st.integers(1, 6), min_size=1, max_size=20), min_size=1, max_size=5),
       st.lists(st.integers(1, 6), max_size=4), st.floats(0.01, 5), st.integers(1, 3))
def test_distributions_normalised_positive(corpus, ctx, gamma, order):
    pred = train_count_model(corpus, order=order, gamma=gamma, vocab_size=6)
    p = pred.distribution(ctx)
    assert abs(p.sum() - 1) <= 1e-12
    assert np.all(p > 0)


def test_update_removal_restores():
    a = train_count_model([[1, 2, 3, 4]], order=2, vocab_size=6)
    b = train_count_model([[1, 2, 3, 4]], order=2, vocab_size=6)
    b.update([[4, 4, 1]])
    b.update([[4, 4, 1]], weight=-1.0)
    for ctx in ([4], [4, 4], [1, 2], [3]):
        np.testing.assert_allclose(a.distribution(ctx), b.distribution(ctx))


def test_empty_corpus():
    with pytest.raises(ConfigurationError):
        train_count_model([])


# ---- cross entropy

def test_cross_entropy_uniform():
    B, H, C = 64, 4, 40
    pred = TokenPredictor(3, 0.5, B + 2)
    toks = np.random.default_rng(0).integers(1, B + 1, size=C + H + 1)
    assert abs(cross_entropy(pred, toks, C) - (H + 1) * math.log(B + 2)) <= 1e-12


def test_cross_entropy_point_mass_limit():
    seq = [1, 2, 3, 4, 1, 6]  # every order-2 context has a single successor
    pred = train_count_model([seq], order=2, gamma=1e-12, vocab_size=6)
    assert cross_entropy(pred, seq, 2) == pytest.approx(0, abs=1e-9)


def test_cross_entropy_hand_computed():
    # |V| = 4, order 1, gamma 1: counts after 1 -> {2: 2}, after 2 -> {1: 1, 4: 1}
    pred = train_count_model([[1, 2, 1, 2, 4]], order=1, gamma=1.0, vocab_size=4)
    tokens = [1, 2, 1, 4]
    p2_1 = (2 + 1) / (2 + 4)
    p1_2 = (1 + 1) / (2 + 4)
    p4_1 = (0 + 1) / (2 + 4)
    expected = -(math.log(p2_1) + math.log(p1_2) + math.log(p4_1))
    assert cross_entropy(pred, tokens, 1) == pytest.approx(expected, abs=1e-12)
    with pytest.raises(ConfigurationError):
        cross_entropy(pred, tokens, 3)


# ---- sampling and quantiles

def test_point_mass_sampling():
    q = build_quantizer(8, -2, 2)
    pred = train_count_model([[5] * 50], order=2, gamma=1e-14, vocab_size=q.vocab_size)
    b = sample_forecast(pred, [5, 5, 5], 4, 50, 0, q, scale=3.0)
    np.testing.assert_allclose(b.samples, q.centers[4] * 3.0)


def test_sampling_never_emits_special_tokens():
    q = build_quantizer(4, -1, 1)
    pred = train_count_model([[1, 6, 5, 6, 6]], order=1, gamma=0.1, vocab_size=6)
    b = sample_forecast(pred, [6], 5, 200, 1, q, keep_tokens=True)
    assert b.tokens.max() <= 4 and b.tokens.min() >= 1


def test_sampling_deterministic():
    q = build_quantizer(16, -3, 3)
    toks = tokenize(mean_scale(ar1(60, seed=1)).values, q)
    pred = train_count_model(window_sequences(ar1(400, seed=2), q, 40, 4), vocab_size=q.vocab_size)
    a = sample_forecast(pred, toks, 4, 100, 7, q)
    b = sample_forecast(pred, toks, 4, 100, 7, q)
    assert a.samples.tobytes() == b.samples.tobytes()
    c = sample_forecast(pred, toks, 4, 100, 8, q)
    assert a.samples.tobytes() != c.samples.tobytes()


def test_quantile_examples():
    const = np.full((30, 3), 7.0)
    for v in forecast_quantiles(const).values():
        np.testing.assert_array_equal(v, 7.0)
    qs = forecast_quantiles(np.arange(1, 101, dtype=float)[:, None])
    assert (qs["0.05"][0], qs["0.5"][0], qs["0.95"][0]) == (5, 50, 95)
    with pytest.raises(ConfigurationError):
        forecast_quantiles(np.ones((10, 2)))


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(20, 60), st.integers(1, 5)),
              elements=st.floats(-1e3, 1e3)))
def test_quantiles_monotone(samples):
    qs = forecast_quantiles(samples)
    assert np.all(qs["0.05"] <= qs["0.5"]) and np.all(qs["0.5"] <= qs["0.95"])


def test_bundle_dict_round_trip():
    b = ForecastBundle("1980Q1", 2, np.arange(40.0).reshape(20, 2),
                       forecast_quantiles(np.arange(40.0).reshape(20, 2)), 2.5,
                       ["1980Q1", "1980Q2"])
    d = b.to_dict()
    assert set(d["quantiles"]) == {"0.05", "0.5", "0.95"} and d["s"] == 2.5
    back = ForecastBundle.from_dict(d)
    assert back.to_dict() == d
    assert "samples" not in b.to_dict(include_samples=False)


# ---- rolling protocol

def test_rolling_origins():
    origins = rolling_origins(208, 40, 4, 4)
    assert len(origins) == 42
    idx = quarterly_index(208)
    assert idx[origins[0]] == "1980Q1" and idx[origins[-1]] == "2021Q1"
    assert rolling_origins(44) == [40]
    with pytest.raises(SampleSizeError):
        rolling_origins(43)


def test_rolling_forecast_windows():
    x = 10 + ar1(208, seed=3)
    idx = quarterly_index(208)
    bundles = rolling_forecast(x, index=idx, n_samples=50, quantizer=build_quantizer(32, -5, 5))
    assert len(bundles) == 42
    first = bundles[0]
    assert first.origin_position == 40
    assert first.step_index == idx[40:44]
    assert first.scale == pytest.approx(np.mean(np.abs(x[:40])))
    assert [b.origin[:4] for b in bundles[:3]] == ["1980", "1981", "1982"]


def test_rolling_uses_only_past():
    # changing values after an origin must not alter that origin's forecast
    x = 5 + ar1(120, seed=4)
    y = x.copy()
    y[60:] += 3.0
    kw = dict(n_samples=40, quantizer=build_quantizer(16, -4, 4))
    a = rolling_forecast(x, **kw)
    b = rolling_forecast(y, **kw)
    for ba, bb in zip(a, b):
        if ba.origin_position <= 60:
            assert ba.samples.tobytes() == bb.samples.tobytes()
        else:
            break


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, st.integers(2, 30), elements=st.floats(0.05, 10)),
       st.sampled_from([0.5, 2.0, 10.0]))
def test_token_scale_invariance_property(x, c):
    q = build_quantizer(64, -15, 15)
    sx = mean_scale(x).values
    dist = np.min(np.abs(sx[:, None] - q.edges[None, :]))
    assume(dist > 1e-9)
    np.testing.assert_array_equal(tokenize(mean_scale(c * x).values, q), tokenize(sx, q))
