import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from intnn import network as nw
from intnn.network import INSURANCE_NAMES, NetworkParams, WindowSample
from intnn.training import gradient_check, make_rng

REFERENCE_W = [-1.73, 1.84, -4.0, 0.64, 0.62, -0.66, 4.19]
LOGISTIC_NPC = dict(zip(INSURANCE_NAMES, [2.02, -0.61, 0.32, -0.52, -1.16, 1.53, -0.12]))


def reference_params():
    return NetworkParams.from_smoothing(c=2.60, d=-41.46, w=[REFERENCE_W], b=[3.67], k=[0.999999], u=[1.06], v=-2.18)


def random_params(rng, C=None, m=7, s=6):
    C = C or int(rng.integers(1, 4))
    return NetworkParams(c=rng.uniform(0.05, 0.3), d=rng.uniform(-3, 0), w=rng.normal(0, 1.5, (C, m)),
                         b=rng.normal(0, 1, C), kappa=rng.normal(0, 2, C), u=rng.normal(0, 1, C),
                         v=rng.normal(), s=s)


def random_batch(rng, n=16, m=7, s=6):
    X = np.where(rng.random((n, m, s)) < 0.6, rng.uniform(5, 40, (n, m, s)), 0.0)
    return X, rng.integers(0, 2, n)


def sigmoid(a):
    return 1.0 / (1.0 + math.exp(-a))


def reference_loss(params, X, y, lam):
    """Penalised cross-entropy written out loop by loop."""
    total = 0.0
    for n in range(X.shape[0]):
        logit = params.v
        for f in range(params.channels):
            k = sigmoid(params.kappa[f])
            p = q = 0.0
            for t in range(params.s):
                h = [sigmoid(params.c * X[n, j, t] + params.d) for j in range(params.m)]
                r = sigmoid(sum(params.w[f, j] * h[j] for j in range(params.m)) + params.b[f])
                if t == 0:
                    p, q = r, 1 - r
                else:
                    p = (1 + k * (r - 1)) * p + r
                    q = (1 - k * r) * q + (1 - r)
            logit += params.u[f] * (p - q)
        prob = min(max(sigmoid(logit), 1e-12), 1 - 1e-12)
        total += -(y[n] * math.log(prob) + (1 - y[n]) * math.log(1 - prob))
    return total / X.shape[0] + lam * sum(abs(u) for u in params.u)


class TestForward:
    def test_reference_splitting_layer(self):
        assert 1 / (1 + math.exp(41.46)) < 1e-15
        h_big = 1 / (1 + math.exp(-(2.60 * 100 - 41.46)))
        assert h_big > 1 - 1e-15

    def test_zero_head_is_half(self):
        rng = make_rng(0)
        params = random_params(rng)
        params.u[:] = 0.0
        params.v = 0.0
        X, _ = random_batch(rng)
        np.testing.assert_array_equal(nw.forward_batch(params, X), 0.5)

    def test_hand_unrolled(self):
        # C=1, m=1, s=2; kappa=40 makes k == 1.0 in double precision
        params = NetworkParams(c=1.0, d=-20.0, w=[[10.0]], b=[-5.0], kappa=[40.0], u=[1.0], v=0.0, s=2)
        assert params.k[0] == 1.0
        pay = np.array([[0.0, 50.0]])
        h = [sigmoid(-20.0), sigmoid(30.0)]
        r = [sigmoid(10 * hi - 5) for hi in h]
        p = r[0] * r[1] + r[1]
        q = (1 - r[0]) * (1 - r[1]) + (1 - r[1])
        expected = sigmoid(p - q)
        assert r[0] < 0.01 and r[1] > 0.99
        assert nw.forward(params, WindowSample(pay, 1)) == pytest.approx(expected, rel=1e-14)

    def test_dimension_mismatch(self):
        params = random_params(make_rng(1), m=7, s=6)
        with pytest.raises(ValueError, match="do not match"):
            nw.forward(params, WindowSample(np.zeros((7, 5))))

    def test_deterministic(self):
        rng = make_rng(2)
        params = random_params(rng)
        X, _ = random_batch(rng)
        a = nw.forward_batch(params, X)
        b = nw.forward_batch(params, X)
        assert a.tobytes() == b.tobytes()

    def test_batch_matches_single(self):
        rng = make_rng(3)
        params = random_params(rng)
        X, _ = random_batch(rng, n=5)
        batch = nw.forward_batch(params, X)
        single = [nw.forward(params, WindowSample(x)) for x in X]
        np.testing.assert_array_equal(batch, single)

    @settings(max_examples=50)
    @given(st.integers(0, 2**32 - 1))
    def test_probability_in_open_interval(self, seed):
        rng = make_rng(seed)
        params = random_params(rng)
        X, y = random_batch(rng)
        prob = nw.forward_batch(params, X)
        assert np.all((prob > 0) & (prob < 1))
        assert np.isfinite(nw.loss(params, (X, y), 0.1))

    @settings(max_examples=50)
    @given(st.integers(0, 2**32 - 1))
    def test_channel_permutation(self, seed):
        rng = make_rng(seed)
        params = random_params(rng, C=4)
        X, _ = random_batch(rng)
        perm = rng.permutation(4)
        np.testing.assert_array_equal(nw.forward_batch(params, X), nw.forward_batch(params.permute_channels(perm), X))

    @settings(max_examples=50)
    @given(st.integers(0, 2**32 - 1))
    def test_sign_flip_gauge(self, seed):
        rng = make_rng(seed)
        params = random_params(rng, C=3)
        X, _ = random_batch(rng)
        f = int(rng.integers(0, 3))
        np.testing.assert_array_equal(nw.forward_batch(params, X), nw.forward_batch(params.flip_channel(f), X))


class TestLoss:
    def test_zero_head(self):
        rng = make_rng(4)
        params = random_params(rng)
        params.u[:] = 0.0
        params.v = 0.0
        X, y = random_batch(rng)
        assert nw.loss(params, (X, y), lam=5.0) == pytest.approx(math.log(2), rel=1e-15)

    def test_confident_and_correct(self):
        params = NetworkParams(c=1.0, d=0.0, w=[[0.0] * 7], b=[0.0], kappa=[0.0], u=[0.0], v=60.0)
        X = np.ones((3, 7, 6))
        assert nw.loss(params, (X, np.ones(3)), 0.0) <= -math.log(1 - 1e-12)

    def test_matches_reference(self):
        rng = make_rng(5)
        for _ in range(5):
            params = random_params(rng)
            X, y = random_batch(rng, n=8)
            lam = float(rng.uniform(0, 0.5))
            assert nw.loss(params, (X, y), lam) == pytest.approx(reference_loss(params, X, y, lam), rel=1e-12)

    def test_list_of_samples(self):
        rng = make_rng(6)
        params = random_params(rng)
        X, y = random_batch(rng, n=4)
        samples = [WindowSample(x, int(t)) for x, t in zip(X, y)]
        assert nw.loss(params, samples, 0.2) == nw.loss(params, (X, y), 0.2)

    def test_empty_batch(self):
        with pytest.raises(ValueError, match="empty"):
            nw.loss(random_params(make_rng(7)), [], 0.0)


class TestGradient:
    def test_matches_finite_differences(self):
        worst = 0.0
        for seed in range(10):
            rng = make_rng(seed)
            params = random_params(rng)
            X, y = random_batch(rng)
            worst = max(worst, max(gradient_check("intnn", params, X, y, 0.0, 1e-6).values()))
        assert worst <= 1e-4

    def test_l1_subgradient_at_zero(self):
        rng = make_rng(8)
        params = random_params(rng, C=3)
        params.u[1] = 0.0
        X, y = random_batch(rng)
        g0 = nw.gradient(params, (X, y), 0.0)
        g1 = nw.gradient(params, (X, y), 1.0)
        assert g1.u[1] == g0.u[1]
        np.testing.assert_allclose(g1.u[[0, 2]], g0.u[[0, 2]] + np.sign(params.u[[0, 2]]), rtol=1e-14)

    def test_saturated_head(self):
        rng = make_rng(9)
        params = random_params(rng)
        params.u[:] = 0.0
        params.v = 40.0
        X, _ = random_batch(rng)
        y = nw.predict_batch(params, X)
        g = nw.gradient(params, (X, y), 0.0)
        # cross-entropy slope is |p - y| <= 1 - sigmoid(40) per sample
        bound = 1 - sigmoid(40.0)
        assert abs(g.v) <= bound
        assert np.all(np.abs(g.u) <= bound * np.abs(nw._forward_cache(params, X)[3]).max())


class TestPredict:
    def test_constant_heads(self):
        rng = make_rng(10)
        params = random_params(rng)
        X, _ = random_batch(rng)
        params.u[:] = 0.0
        params.v = 10.0
        assert np.all(nw.predict_batch(params, X) == 1)
        params.v = -10.0
        assert np.all(nw.predict_batch(params, X) == 0)


class TestInterpret:
    def test_reference_parameters(self):
        rep = nw.interpret(reference_params(), INSURANCE_NAMES)
        assert rep.splitting_threshold == pytest.approx(15.95, abs=0.005)
        ch = rep.channels[0]
        assert set(ch.positive) == {"working medical", "injury", "maternity", "HPF"}
        assert set(ch.negative) == {"endowment", "unemployment", "non-working medical"}
        assert ch.k == pytest.approx(0.999999, rel=1e-12)
        assert ch.head_weight == pytest.approx(1.06)
        assert rep.head_intercept == pytest.approx(-2.18)
        assert [n for n, _ in ch.weights][:2] == ["HPF", "unemployment"]
        assert rep.active_channels == [0]
        text = rep.format()
        assert "15.9462" in text and "HPF" in text

    def test_zero_weights(self):
        params = NetworkParams(c=1.0, d=-2.0, w=[[0.0] * 7], b=[0.0], kappa=[0.0], u=[0.0], v=0.0)
        rep = nw.interpret(params, INSURANCE_NAMES)
        assert all(w == 0 for _, w in rep.channels[0].weights)
        assert rep.channels[0].positive == [] and rep.channels[0].negative == []
        assert rep.active_channels == []

    def test_zero_slope(self):
        params = NetworkParams(c=0.0, d=-2.0, w=[[1.0] * 7], b=[0.0], kappa=[0.0], u=[1.0], v=0.0)
        rep = nw.interpret(params, INSURANCE_NAMES)
        assert rep.splitting_threshold is None
        assert "undefined" in rep.format()

    def test_name_count(self):
        with pytest.raises(ValueError):
            nw.interpret(reference_params(), INSURANCE_NAMES[:3])


class TestCompareInterpretations:
    def test_reference_sign_table(self):
        cmp = nw.compare_interpretations(reference_params(), INSURANCE_NAMES, LOGISTIC_NPC)
        assert cmp.agreements == 7
        assert "7/7" in cmp.format()

    def test_identical(self):
        same = dict(zip(INSURANCE_NAMES, REFERENCE_W))
        assert nw.compare_interpretations(reference_params(), INSURANCE_NAMES, same).agreements == 0

    def test_name_mismatch(self):
        coef = dict(LOGISTIC_NPC)
        coef["dental"] = coef.pop("HPF")
        with pytest.raises(ValueError, match="do not match"):
            nw.compare_interpretations(reference_params(), INSURANCE_NAMES, coef)


class TestSerialization:
    def test_round_trip(self, tmp_path):
        params = random_params(make_rng(11), C=3)
        path = tmp_path / "model.json"
        nw.save_model(params, path)
        back = nw.load_model(path)
        for key, arr in params.to_dict().items():
            assert np.array_equal(arr, back.to_dict()[key])
        assert back.s == params.s

    def test_field_order(self, tmp_path):
        path = tmp_path / "model.json"
        nw.save_model(reference_params(), path)
        doc = path.read_text()
        keys = ["version", '"m"', '"s"', '"C"', '"c"', '"d"', '"channels"', '"u"', '"v"']
        positions = [doc.index(k) for k in keys]
        assert positions == sorted(positions)

    def test_bad_version(self):
        doc = nw.params_document(reference_params())
        doc["version"] = 99
        with pytest.raises(ValueError, match="version"):
            nw.params_from_document(doc)
