import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from attreval import explainers as ex
from attreval import nn
from attreval.explainers import AttributionMap, Baseline, ExplainerConfig


def linear_net(w):
    w = np.asarray(w, dtype=np.float32)
    return nn.Network([nn.Dense(np.stack([w, np.zeros_like(w)]), [0.0, 0.0])], (len(w),))


def quadratic_net():
    # logit_0 ~= x^2 on [-3, 3] through the cancellation net fed (x, 0)
    base = nn.cancellation_net(step=0.01)
    first = base.layers[0]
    w = np.asarray(first.weights)[:, :1]
    return nn.Network([nn.Dense(w, first.bias), nn.ReLU(), base.layers[2]], (1,))


W = np.array([0.5, -1.5, 2.0, 0.25])
X = np.array([0.2, 0.7, -0.4, 1.0])


def test_vg_linear():
    np.testing.assert_array_equal(ex.explain_vg(linear_net(W), X, 0, ExplainerConfig("VG", k=1, head="logit")).values, W)


@pytest.mark.parametrize("sigma,k", [(0.1, 1), (0.5, 7), (2.0, 20)])
def test_sg_linear_exact(sigma, k):
    att = ex.explain_sg(linear_net(W), X, 0, ExplainerConfig("SG", k=k, sigma=sigma, head="logit"))
    np.testing.assert_allclose(att.values, W, rtol=1e-12)


@pytest.mark.parametrize("k", [1, 4, 32])
def test_ig_linear_exact_right_rule(k):
    cfg = ExplainerConfig("IG", k=k, head="logit", rule="right")
    np.testing.assert_allclose(ex.explain_ig(linear_net(W), X, 0, cfg).values, W * X, rtol=1e-12)


@pytest.mark.parametrize("k", [1, 4, 32])
def test_ig_inclusive_rule_counts_both_endpoints(k):
    # k+1 constant gradients summed and divided by k
    cfg = ExplainerConfig("IG", k=k, head="logit")
    np.testing.assert_allclose(ex.explain_ig(linear_net(W), X, 0, cfg).values, (k + 1) / k * W * X, rtol=1e-12)


def test_gxi_linear_and_zero():
    net = linear_net(W)
    cfg = ExplainerConfig("GxI", k=1, head="logit")
    np.testing.assert_allclose(ex.explain_gxi(net, X, 0, cfg).values, W * X, rtol=1e-12)
    assert not ex.explain_gxi(net, np.zeros(4), 0, cfg).values.any()


@pytest.mark.parametrize("kind,k", [("VG", 1), ("IG", 8), ("GxI", 1)])
def test_cancellation_pair_zero(kind, k):
    net = nn.cancellation_net()
    cfg = ExplainerConfig(kind, k=k, head="logit")
    vals = ex.explain(net, np.array([1.0, 1.0]), 0, cfg).values
    np.testing.assert_array_equal(vals, [0.0, 0.0])


def test_sig_breaks_cancellation():
    net = nn.cancellation_net()
    vals = ex.explain_sig(net, np.array([1.0, 1.0]), 0, ExplainerConfig("SIG", k=32, sigma=0.3, head="logit")).values
    assert np.abs(vals).sum() > 0.05
    # the noisy path points see x1 - x2 = eps1 - eps2, so the two scores are exact opposites
    assert vals[0] == pytest.approx(-vals[1])


def test_sg_quadratic_expectation():
    net = quadratic_net()
    k, sigma = 10_000, 0.1
    att = ex.explain_sg(net, np.array([1.0]), 0, ExplainerConfig("SG", k=k, sigma=sigma, head="logit"))
    # E[2(x + eps)] = 2, per-draw std 2 sigma
    assert abs(att.values[0] - 2.0) <= 3 * 2 * sigma / np.sqrt(k) + 0.01


def test_sg_small_sigma_is_vg(planted_net, planted):
    x, y = planted[1].inputs[0], int(planted[1].labels[0])
    vg = ex.explain_vg(planted_net, x, y).values
    sg = ex.explain_sg(planted_net, x, y, ExplainerConfig("SG", k=1, sigma=1e-8)).values
    np.testing.assert_allclose(sg, vg, atol=1e-4)


def test_sig_small_sigma_is_ig(planted_net, planted):
    x, y = planted[1].inputs[1], int(planted[1].labels[1])
    ig = ex.explain_ig(planted_net, x, y, ExplainerConfig("IG", k=16)).values
    sig = ex.explain_sig(planted_net, x, y, ExplainerConfig("SIG", k=16, sigma=1e-9)).values
    np.testing.assert_allclose(sig, ig, atol=1e-4)


def test_gxi_is_single_endpoint_ig(planted_net, planted):
    x, y = planted[1].inputs[2], int(planted[1].labels[2])
    gxi = ex.explain_gxi(planted_net, x, y).values
    ig = ex.explain_ig(planted_net, x, y, ExplainerConfig("IG", k=1, rule="right")).values
    np.testing.assert_allclose(gxi, ig, atol=1e-12)


def _completeness_gap(net, x, y, k):
    xi = ex.explain_ig(net, x, y, ExplainerConfig("IG", k=k)).values
    f = nn.predict(net, x)[y] - nn.predict(net, np.zeros_like(x))[y]
    return abs(xi.sum() - f)


def test_completeness_improves_with_k():
    net = nn.mlp(10, (16,), 3, seed=4)
    rng = np.random.default_rng(0)
    for _ in range(5):
        x = rng.uniform(0, 1, 10)
        gaps = [_completeness_gap(net, x, 1, k) for k in (8, 32, 128, 512)]
        assert gaps[-1] < gaps[0]
        assert all(b <= a * 1.05 + 1e-9 for a, b in zip(gaps, gaps[1:]))
        assert gaps[-1] <= 5e-3


def test_ig_dataset_mean_baseline(planted_net, planted):
    train, test = planted
    x, y = test.inputs[0], int(test.labels[0])
    cfg = ExplainerConfig("IG", k=64, baseline=Baseline("dataset_mean"), rule="right")
    xi = ex.explain_ig(planted_net, x, y, cfg, reference=train.inputs).values
    mean = train.inputs.astype(float).mean(axis=0)
    f = nn.predict(planted_net, x)[y] - nn.predict(planted_net, mean)[y]
    assert abs(xi.sum() - f) < 0.05
    with pytest.raises(ValueError, match="reference"):
        ex.explain_ig(planted_net, x, y, cfg)


def test_baseline_shape_mismatch(planted_net, planted):
    cfg = ExplainerConfig("IG", k=4, baseline=Baseline("dataset_mean"))
    with pytest.raises(ValueError, match="shape"):
        ex.explain_ig(planted_net, planted[1].inputs[0], 0, cfg, reference=np.zeros((3, 5)))


# -- EG --------------------------------------------------------------------------


def test_eg_pool_of_explicand_is_zero(planted_net, planted):
    x = planted[1].inputs[0]
    att = ex.explain_eg(planted_net, x, 0, baseline_pool=x[None])
    assert not np.any(att.values)


def test_eg_zero_pool_matches_ig(planted_net, planted):
    x, y = planted[1].inputs[3], int(planted[1].labels[3])
    k = 4000
    eg = ex.explain_eg(planted_net, x, y, ExplainerConfig("EG", k=k, baseline=Baseline("training_samples")),
                       baseline_pool=np.zeros((1, x.size)))
    ig = ex.explain_ig(planted_net, x, y, ExplainerConfig("IG", k=256, rule="right")).values
    # uniform path positions: Monte-Carlo estimate of the same integral
    assert np.abs(eg.values - ig).max() < 0.02
    assert abs(eg.values.sum() - ig.sum()) < 0.02


def test_eg_linear_expectation():
    rng = np.random.default_rng(0)
    pool = rng.uniform(0, 1, (50, 4))
    k = 10_000
    att = ex.explain_eg(linear_net(W), X, 0, ExplainerConfig("EG", k=k, head="logit",
                                                              baseline=Baseline("training_samples")), pool)
    expected = W * (X - pool.mean(axis=0))
    se = np.abs(W) * pool.std(axis=0) / np.sqrt(k)
    assert np.all(np.abs(att.values - expected) <= 3 * se + 1e-12)


def test_eg_nested_mode_linear():
    pool = np.random.default_rng(1).uniform(0, 1, (3, 4))
    cfg = ExplainerConfig("EG", k=8, head="logit", baseline=Baseline("training_samples"), eg_mode="nested")
    att = ex.explain_eg(linear_net(W), X, 0, cfg, pool)
    picks = np.random.default_rng([0, 0]).integers(0, 3, size=8)
    expected = np.mean([(9 / 8) * W * (X - pool[p]) for p in picks], axis=0)
    np.testing.assert_allclose(att.values, expected, rtol=1e-12)


def test_eg_empty_pool():
    with pytest.raises(ValueError):
        ex.explain_eg(linear_net(W), X, 0, baseline_pool=np.zeros((0, 4)))


# -- random -----------------------------------------------------------------------


def test_random_explainer():
    x = np.zeros(784)
    a, b = ex.explain_random(x, 3, seed=1), ex.explain_random(x, 7, seed=1)
    np.testing.assert_array_equal(a.values, b.values)
    assert np.any(ex.explain_random(x, 3, seed=2).values != a.values)
    assert a.values.min() > -1 and a.values.max() < 1


def _spearman(a, b):
    ra, rb = np.argsort(np.argsort(a)), np.argsort(np.argsort(b))
    return np.corrcoef(ra, rb)[0, 1]


def test_random_uncorrelated_with_gradients(planted_net, planted):
    test = planted[1]
    grads = ex.explain_batch(planted_net, test.inputs[:100], test.labels[:100], ex.default_config("VG"))
    rand = ex.explain_batch(None, test.inputs[:100], test.labels[:100], ex.default_config("Random"))
    rho = _spearman(grads.ravel(), rand.ravel())
    assert abs(rho) < 0.1


# -- budgets, determinism, batching --------------------------------------------------


@pytest.mark.parametrize("kind,k,expected", [("VG", 1, 1), ("SG", 12, 12), ("IG", 12, 13), ("SIG", 12, 13),
                                             ("GxI", 1, 1), ("Random", 1, 0)])
def test_query_budget(planted_net, planted, kind, k, expected):
    att = ex.explain(planted_net, planted[1].inputs[0], 0, ExplainerConfig(kind, k=k))
    assert att.meta["queries"] == expected


def test_right_rule_budget(planted_net, planted):
    att = ex.explain(planted_net, planted[1].inputs[0], 0, ExplainerConfig("IG", k=12, rule="right"))
    assert att.meta["queries"] == 12


@pytest.mark.parametrize("kind", ["SG", "SIG", "EG", "Random"])
def test_seeded_determinism(planted_net, planted, kind):
    train, test = planted
    cfg = ex.default_config(kind, k=6, seed=11)
    a = ex.explain_batch(planted_net, test.inputs[:5], test.labels[:5], cfg, reference=train.inputs)
    b = ex.explain_batch(planted_net, test.inputs[:5], test.labels[:5], cfg, reference=train.inputs)
    np.testing.assert_array_equal(a, b)
    c = ex.explain_batch(planted_net, test.inputs[:5], test.labels[:5], cfg.with_(seed=12), reference=train.inputs)
    assert np.any(a != c)


@pytest.mark.parametrize("kind", ["VG", "SG", "IG", "SIG", "GxI", "EG", "Random"])
def test_batch_matches_single(planted_net, planted, kind):
    train, test = planted
    cfg = ex.default_config(kind, k=4)
    ids = np.array([5, 9, 40])
    batch = ex.explain_batch(planted_net, test.inputs[ids], test.labels[ids], cfg, sample_ids=ids,
                             reference=train.inputs)
    for row, i in zip(batch, ids):
        single = ex.explain(planted_net, test.inputs[i], int(test.labels[i]), cfg, sample_id=int(i),
                            reference=train.inputs)
        np.testing.assert_allclose(row, single.values, rtol=1e-12, atol=1e-15)


def test_chunking_is_invisible(planted_net, planted, monkeypatch):
    test = planted[1]
    cfg = ex.default_config("SG", k=3)
    full = ex.explain_batch(planted_net, test.inputs[:10], test.labels[:10], cfg)
    monkeypatch.setattr(ex, "EXPLAIN_CHUNK", 3)
    chunked = ex.explain_batch(planted_net, test.inputs[:10], test.labels[:10], cfg)
    # same noise draws; only the summation order of the batched matmuls changes
    np.testing.assert_allclose(chunked, full, rtol=1e-9, atol=1e-15)


@pytest.mark.parametrize(
    "kw",
    [{"kind": "LRP"}, {"k": 0}, {"kind": "SG", "sigma": 0.0}, {"kind": "IG", "baseline": Baseline("training_samples")},
     {"head": "loss"}, {"rule": "left"}, {"eg_mode": "grid"}],
)
def test_config_validation(kw):
    with pytest.raises(ValueError):
        ExplainerConfig(**kw)


def test_target_out_of_range(planted_net, planted):
    with pytest.raises(ValueError):
        ex.explain_vg(planted_net, planted[1].inputs[0], 9)


def test_attribution_map_rejects_nonfinite():
    with pytest.raises(ValueError):
        AttributionMap(np.array([np.nan]), 0, "vg")


# -- dump format -------------------------------------------------------------------


@settings(max_examples=50, deadline=None)
@given(
    st.integers(0, 2**64 - 1),
    st.text(min_size=1, max_size=20),
    st.integers(0, 2**32 - 1),
    st.lists(st.integers(1, 4), min_size=1, max_size=3),
)
def test_dump_roundtrip(sid, name, target, shape):
    vals = np.random.default_rng(0).normal(size=shape).astype(np.float32)
    raw = ex.dump_attribution(AttributionMap(vals, target, name), sid)
    sid2, att, end = ex.load_attribution(raw)
    assert (sid2, att.target, att.explainer_id, end) == (sid, target, name, len(raw))
    assert att.values.tobytes() == vals.tobytes()


def test_dump_layout():
    raw = ex.dump_attribution(AttributionMap(np.array([[1.0, -2.0]], np.float32), 3, "ig"), 7)
    assert raw[:7] == b"AEVATT1"
    assert raw[7:15] == (7).to_bytes(8, "little")
    assert raw[15:17] == (2).to_bytes(2, "little") and raw[17:19] == b"ig"
    assert np.frombuffer(raw[-8:], "<f4").tolist() == [1.0, -2.0]


def test_dump_stream_and_errors():
    recs = [AttributionMap(np.full(3, i, np.float32), i, "sg") for i in range(3)]
    raw = b"".join(ex.dump_attribution(r, 10 + i) for i, r in enumerate(recs))
    back = ex.load_attributions(raw)
    assert [s for s, _ in back] == [10, 11, 12]
    with pytest.raises(ex.AttributionFormatError, match="truncated"):
        ex.load_attributions(raw[:-1])
    with pytest.raises(ex.AttributionFormatError, match="magic"):
        ex.load_attributions(b"XEVATT1" + raw[7:])
