import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cascadeplace.cascade import GeneratorConfig, generate_corpus
from cascadeplace.errors import ShapeError, ValidationError
from cascadeplace.features import WindowSpec, extract_all
from cascadeplace.predictor import (FIRST_PRIOR, BurstTrainConfig, GeoPredictor, GeoTrainConfig, Priori,
                                    BurstModel, burst_windows, chained_probabilities, geo_mse, geo_windows,
                                    predict_geo, predict_window, rolling_predict, train_burst, train_geo,
                                    window_accuracy)

SPEC = WindowSpec()


@pytest.fixture(scope="module")
def small_fs():
    cfg = GeneratorConfig(seed=0, n_regions=4, burst_threshold=100)
    return extract_all(generate_corpus(cfg, 600), SPEC, 4, 100)


@pytest.fixture(scope="module")
def balanced_fs():
    cfg = GeneratorConfig(seed=0, n_regions=4, burst_threshold=100,
                          ctype_burst_prob={"Political": 0.5, "Advertising": 0.5, "Other": 0.5})
    return extract_all(generate_corpus(cfg, 2400), SPEC, 4, 100, with_geo=False)


def constant_model(p, hidden=4):
    m = BurstModel(hidden=hidden, fc=(3, 2))
    for v in m.params().values():
        v[:] = 0.0
    m.params()["fc.2.b"][:] = math.log(p / (1 - p))
    return m


class TestPredictWindow:
    def test_all_zero_model_is_half(self, small_fs):
        m = constant_model(0.5)
        for i in range(5):
            assert predict_window(m, small_fs.window_observation(i, 2), 0.3) == 0.5

    def test_deterministic(self, small_fs):
        m = BurstModel(hidden=8, seed=3)
        obs = small_fs.window_observation(7, 1)
        assert predict_window(m, obs, 0.5) == predict_window(m, obs, 0.5)

    def test_prior_sensitivity_matches_finite_difference(self, small_fs):
        m = BurstModel(hidden=8, seed=1)
        obs = small_fs.window_observation(3, 2)
        w = m.params()["fc.0.W"]
        assert np.any(w[-1] != 0)  # prior is the last input of R
        eps = 1e-6
        num = (predict_window(m, obs, 0.4 + eps) - predict_window(m, obs, 0.4 - eps)) / (2 * eps)
        z, cache = m.forward(obs.macro.vector()[None], np.array(obs.macro.ctype_onehot)[None], obs.micro[None], 0.4)
        # dp/dprior through the first layer only: chain rule on the fc stack
        p = 1 / (1 + np.exp(-z[0]))
        dR, _ = m.fc.backward(cache[2], np.array([[p * (1 - p)]]))
        assert num == pytest.approx(dR[0, -1], rel=1e-4, abs=1e-9)
        assert abs(num) > 0
        w[-1] = 0.0
        assert predict_window(m, obs, 0.1) == predict_window(m, obs, 0.9)

    def test_micro_shape_mismatch(self, small_fs):
        m = BurstModel(hidden=4)
        obs = small_fs.window_observation(0, 1)
        bad = type(obs)(obs.k, obs.macro, obs.micro[:, :2], obs.region_hist)
        with pytest.raises(ShapeError):
            predict_window(m, bad, 0.5)

    def test_invalid_prior(self):
        with pytest.raises(ValidationError):
            Priori(1.5)


class TestRolling:
    def test_confident_model_bursts_first_window(self, small_fs):
        v = rolling_predict(constant_model(0.9), [small_fs.window_observation(0, k) for k in range(1, 6)])
        assert v.burst_window == 1
        assert v.priors == [FIRST_PRIOR]

    def test_quiet_model_never_bursts(self, small_fs):
        v = rolling_predict(constant_model(0.1), [small_fs.window_observation(0, k) for k in range(1, 6)])
        assert v.burst_window is None
        assert len(v.probabilities) == 5
        assert v.predicted_geo is None

    def test_prior_chaining(self, small_fs):
        m = BurstModel(hidden=8, seed=2)
        v = rolling_predict(m, [small_fs.window_observation(4, k) for k in range(1, 6)], threshold=1.0)
        assert v.priors[0] == 0.5
        for k in range(1, 5):
            assert v.priors[k] == v.probabilities[k - 1]

    def test_chained_matches_rolling(self, small_fs):
        m = BurstModel(hidden=8, seed=2)
        probs = chained_probabilities(m, small_fs.subset(np.arange(6)))
        for i in range(6):
            v = rolling_predict(m, [small_fs.window_observation(i, k) for k in range(1, 6)], threshold=1.0)
            assert np.allclose(probs[i], v.probabilities, rtol=0, atol=1e-12)

    def test_geo_attached_on_burst(self, small_fs):
        g = GeoPredictor(4, hidden=4, fc=(4,))
        v = rolling_predict(constant_model(0.9), [small_fs.window_observation(0, k) for k in range(1, 6)],
                            geo_model=g, geo_seqs=small_fs.geo_seq[0])
        assert v.predicted_geo.sum() == pytest.approx(1.0)

    def test_burst_windows(self):
        p = np.array([[0.1, 0.6, 0.9], [0.2, 0.3, 0.4], [0.5, 0.1, 0.1]])
        assert burst_windows(p).tolist() == [2, 0, 1]

    def test_window_accuracy(self):
        p = np.array([[0.9, 0.1], [0.2, 0.2]])
        assert window_accuracy(p, [True, False]).tolist() == [1.0, 0.5]


class TestTrainBurst:
    def test_single_class_refused(self, small_fs):
        fs = small_fs.subset(np.flatnonzero(~small_fs.explosive))
        with pytest.raises(ValidationError, match="single-class"):
            train_burst(fs, BurstTrainConfig(epochs=1, hidden=4))

    def test_loss_decreases(self, small_fs):
        hist = []
        train_burst(small_fs, BurstTrainConfig(seed=0, epochs=5, hidden=16), hist)
        assert hist[4] < hist[0]

    def test_deterministic(self, small_fs):
        fs = small_fs.subset(np.arange(150))
        a = train_burst(fs, BurstTrainConfig(seed=5, epochs=2, hidden=8))
        b = train_burst(fs, BurstTrainConfig(seed=5, epochs=2, hidden=8))
        for k, v in a.tensors().items():
            assert np.array_equal(v, b.tensors()[k]), k

    def test_checkpoint_round_trip(self, small_fs, tmp_path):
        fs = small_fs.subset(np.arange(100))
        m = train_burst(fs, BurstTrainConfig(seed=1, epochs=1, hidden=8, use_ctype=False))
        m.save(tmp_path / "b.ckpt")
        back = BurstModel.load(tmp_path / "b.ckpt")
        assert not back.use_ctype
        assert np.array_equal(chained_probabilities(m, fs), chained_probabilities(back, fs))

    @pytest.mark.parametrize("use_ctype,use_prior,width", [(True, True, 10 + 3 + 8 + 1), (False, True, 10 + 8 + 1),
                                                           (False, False, 10 + 8)])
    def test_ablations_remove_inputs(self, use_ctype, use_prior, width):
        assert BurstModel(hidden=8, use_ctype=use_ctype, use_prior=use_prior).n_inputs == width

    def test_shuffled_labels_no_signal(self, balanced_fs):
        # labels permuted over the whole corpus, so held-out labels carry no signal either
        fs = balanced_fs.subset(np.arange(len(balanced_fs)))
        fs.explosive = np.random.default_rng(10).permutation(fs.explosive)
        tr, te = fs.subset(np.arange(1200)), fs.subset(np.arange(1200, 2400))
        m = train_burst(tr, BurstTrainConfig(seed=0, epochs=4, hidden=16))
        acc = window_accuracy(chained_probabilities(m, te), te.explosive)
        assert np.all((acc >= 0.45) & (acc <= 0.55)), acc


class TestGeo:
    def test_mse_identity(self):
        assert geo_mse([0.2, 0.8], [0.2, 0.8]) == 0.0

    def test_mse_arithmetic(self):
        assert geo_mse([0.5, 0.5], [1.0, 0.0]) == 0.25

    def test_mse_shape(self):
        with pytest.raises(ShapeError):
            geo_mse([0.5, 0.5], [1.0, 0.0, 0.0])

    def test_planted_corpus(self):
        rng = np.random.default_rng(0)
        x = rng.dirichlet(np.ones(5), 800)
        seqs = np.repeat(x[:, None, :], 24, axis=1)
        hist = []
        g = train_geo(seqs[:600], x[:600], GeoTrainConfig(seed=0, epochs=40, hidden=16), hist)
        assert geo_mse(g.predict(seqs[600:]), x[600:]) <= 1e-3
        assert hist[4] < hist[0]

    def test_deterministic(self):
        rng = np.random.default_rng(1)
        x = rng.dirichlet(np.ones(3), 40)
        seqs = np.repeat(x[:, None, :], 6, axis=1)
        a = train_geo(seqs, x, GeoTrainConfig(seed=2, epochs=2, hidden=4))
        b = train_geo(seqs, x, GeoTrainConfig(seed=2, epochs=2, hidden=4))
        assert all(np.array_equal(v, b.tensors()[k]) for k, v in a.tensors().items())

    def test_checkpoint_round_trip(self, tmp_path):
        g = GeoPredictor(3, hidden=4, fc=(5,), seed=3)
        g.scaler.mean[:] = [0.1, 0.2, 0.3]
        g.save(tmp_path / "g.ckpt")
        seq = np.random.default_rng(0).dirichlet(np.ones(3), 6)
        assert np.array_equal(predict_geo(GeoPredictor.load(tmp_path / "g.ckpt"), seq), predict_geo(g, seq))

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            predict_geo(GeoPredictor(3, hidden=4), np.ones((6, 4)))

    def test_geo_windows(self):
        assert geo_windows([0, 2, 5], 5).tolist() == [5, 2, 5]


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), scale=st.floats(0, 1e4), prior=st.floats(0, 1))
def test_probability_open_interval(seed, scale, prior):
    rng = np.random.default_rng(seed)
    m = BurstModel(hidden=6, seed=seed)
    p = m.predict_proba(rng.random((3, 10)) * scale, np.eye(3), rng.random((3, 24, 3)) * scale, prior)
    assert np.all((p > 0) & (p < 1))


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_geo_on_simplex(seed):
    rng = np.random.default_rng(seed)
    g = GeoPredictor(6, hidden=5, fc=(7,), seed=seed)
    x = g.predict(rng.dirichlet(np.ones(6), (4, 10)))
    assert np.all(x >= 0)
    assert np.allclose(x.sum(1), 1.0, atol=1e-9)
