"""Network core: losses, layers, optimizer, training loop, checkpoints."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from wsdetect import tensornet as tn
from wsdetect.tensornet.layers import ShapeError


class TestSoftmax:
    def test_symmetry(self):
        assert np.allclose(tn.softmax(np.array([[0.0, 0.0]])), [[0.5, 0.5]])

    def test_hand_arithmetic(self):
        probs = tn.softmax(np.array([[math.log(3), math.log(1)]]))
        assert np.allclose(probs, [[0.75, 0.25]], atol=1e-12)

    def test_no_overflow_on_huge_logits(self):
        probs = tn.softmax(np.array([[1000.0, 0.0]]))
        assert np.all(np.isfinite(probs))
        assert probs[0, 0] == pytest.approx(1.0)
        assert probs[0, 1] == pytest.approx(0.0, abs=1e-300)

    def test_rejects_nonfinite(self):
        with pytest.raises(ValueError):
            tn.softmax(np.array([[np.inf, 0.0]]))

    @given(arrays(np.float64, (5, 3), elements=st.floats(-50, 50)))
    @settings(max_examples=100, deadline=None)
    def test_rows_sum_to_one(self, logits):
        probs = tn.softmax(logits)
        assert np.all(probs >= 0)
        assert np.allclose(probs.sum(axis=1), 1.0, atol=1e-12)

    @given(arrays(np.float64, (4, 3), elements=st.floats(-30, 30)),
           st.floats(-100, 100))
    @settings(max_examples=100, deadline=None)
    def test_argmax_invariant_to_row_shift(self, logits, shift):
        # keep rows tie-free so argmax is well defined
        logits = logits + np.arange(3) * 1e-3
        before = tn.softmax(logits).argmax(axis=1)
        after = tn.softmax(logits + shift).argmax(axis=1)
        assert np.array_equal(before, after)


class TestCrossEntropy:
    def test_perfect_prediction_zero_loss(self):
        assert tn.cross_entropy(np.array([[0.0, 1.0]]), [1]) == pytest.approx(0.0)

    def test_half_probability(self):
        loss = tn.cross_entropy(np.array([[0.5, 0.5]]), [1])
        assert loss == pytest.approx(math.log(2), rel=1e-12)

    def test_weighted_mean_expansion(self):
        probs = np.array([[0.8, 0.2], [0.3, 0.7]])
        a = -math.log(0.8)  # y=0 sample
        b = -math.log(0.7)  # y=1 sample
        weights = tn.ClassWeights(benign=2.0, webshell=1.0)
        loss = tn.cross_entropy(probs, [0, 1], weights)
        assert loss == pytest.approx((2 * a + b) / 2, rel=1e-12)

    def test_zero_probability_clamped(self):
        loss = tn.cross_entropy(np.array([[1.0, 0.0]]), [1])
        assert np.isfinite(loss)
        assert loss == pytest.approx(-math.log(1e-12))

    def test_unit_weights_bit_identical(self):
        rng = np.random.default_rng(0)
        probs = tn.softmax(rng.normal(size=(16, 2)))
        labels = rng.integers(0, 2, size=16)
        plain = tn.cross_entropy(probs, labels)
        weighted = tn.cross_entropy(probs, labels, tn.ClassWeights(1.0, 1.0))
        assert plain == weighted  # bit-for-bit

    def test_fused_head_gradient_closed_form(self):
        rng = np.random.default_rng(2)
        logits = rng.normal(size=(6, 2))
        labels = rng.integers(0, 2, size=6)
        head = tn.SoftmaxCrossEntropy()
        _, probs = head.forward(logits, labels)
        onehot = np.eye(2)[labels]
        assert np.allclose(head.backward(), (probs - onehot) / 6, atol=1e-15)


class TestClassWeights:
    def test_balanced(self):
        w = tn.class_weights(100, 100)
        assert (w.benign, w.webshell) == (1.0, 1.0)

    def test_large_imbalance_case(self):
        w = tn.class_weights(180079, 7210)
        assert w.benign == pytest.approx(0.520019, abs=1e-5)
        assert w.webshell == pytest.approx(12.98814, abs=1e-5)

    def test_small_hand_case(self):
        w = tn.class_weights(3, 1)
        assert w.benign == pytest.approx(2 / 3)
        assert w.webshell == pytest.approx(2.0)

    def test_zero_class_rejected(self):
        with pytest.raises(ValueError):
            tn.class_weights(0, 5)

    @given(st.integers(1, 10**6), st.integers(1, 10**6))
    @settings(max_examples=200, deadline=None)
    def test_mass_conservation(self, nb, nw):
        w = tn.class_weights(nb, nw)
        total = nb + nw
        assert nb * w.benign + nw * w.webshell == pytest.approx(
            total, rel=1e-9)


class TestConv1d:
    def _layer(self, c_in, c_out, k, seed=0):
        return tn.Conv1d(c_in, c_out, k, np.random.default_rng(seed))

    def test_all_ones_kernel_sums_window(self):
        layer = self._layer(1, 1, 3)
        layer.params["w"][:] = 1.0
        layer.params["b"][:] = 0.0
        out = tn.conv1d_forward(np.array([[1.0], [2.0], [3.0]]), layer)
        assert out.shape == (1, 1)
        assert out[0, 0] == pytest.approx(6.0)

    def test_kernel_one_identity(self):
        layer = self._layer(1, 1, 1)
        layer.params["w"][:] = 1.0
        layer.params["b"][:] = 0.0
        x = np.array([[3.0], [1.0], [4.0]])
        assert np.allclose(tn.conv1d_forward(x, layer), x)

    def test_zero_weights_bias_everywhere(self):
        layer = self._layer(2, 3, 2)
        layer.params["w"][:] = 0.0
        layer.params["b"][:] = 5.0
        out = tn.conv1d_forward(np.ones((4, 2)), layer)
        assert out.shape == (3, 3)
        assert np.all(out == 5.0)

    def test_too_short_input(self):
        layer = self._layer(1, 1, 3)
        with pytest.raises(ShapeError):
            tn.conv1d_forward(np.ones((2, 1)), layer)


class TestGlobalMaxPool:
    def test_columnwise_max(self):
        out = tn.global_max_pool(np.array([[1.0, 5.0], [3.0, 2.0]]))
        assert np.allclose(out, [3.0, 5.0])

    def test_single_row_identity(self):
        row = np.array([[7.0, -2.0, 0.5]])
        assert np.allclose(tn.global_max_pool(row), row[0])

    def test_empty_rejected(self):
        with pytest.raises(ShapeError):
            tn.global_max_pool(np.ones((0, 2)))

    def test_tie_routes_gradient_to_first(self):
        layer = tn.GlobalMaxPool()
        x = np.array([[[2.0], [2.0], [1.0]]])  # tie between rows 0 and 1
        layer.forward(x)
        dx = layer.backward(np.array([[1.0]]))
        assert np.allclose(dx[0, :, 0], [1.0, 0.0, 0.0])


class TestBatchNorm:
    def test_train_normalizes(self):
        layer = tn.BatchNorm1d(1)
        out = layer.forward(np.array([[0.0], [2.0]]), mode="train")
        assert np.allclose(out, [[-1.0], [1.0]], atol=1e-4)

    def test_eval_identity_with_unit_stats(self):
        layer = tn.BatchNorm1d(2)
        x = np.array([[0.3, -0.7], [1.2, 0.0]])
        out = layer.forward(x, mode="eval")
        assert np.allclose(out, x, atol=1e-5)

    def test_gamma_zero_gives_beta(self):
        layer = tn.BatchNorm1d(2)
        layer.params["gamma"][:] = 0.0
        layer.params["beta"][:] = 3.0
        out = layer.forward(np.random.default_rng(0).normal(size=(4, 2)),
                            mode="train")
        assert np.all(out == 3.0)

    def test_batch_of_one_rejected_in_train(self):
        layer = tn.BatchNorm1d(2)
        with pytest.raises(ShapeError):
            layer.forward(np.ones((1, 2)), mode="train")

    def test_running_stats_update_only_in_train(self):
        layer = tn.BatchNorm1d(1)
        x = np.array([[10.0], [20.0]])
        layer.forward(x, mode="gradcheck")
        assert layer.buffers["running_mean"][0] == 0.0
        layer.forward(x, mode="train")
        assert layer.buffers["running_mean"][0] == pytest.approx(1.5)  # 0.9*0 + 0.1*15


class TestDropout:
    def test_eval_is_identity(self):
        layer = tn.Dropout(0.5)
        x = np.random.default_rng(0).normal(size=(8, 4))
        assert np.array_equal(layer.forward(x, mode="eval"), x)

    def test_train_scales_survivors(self):
        layer = tn.Dropout(0.5)
        rng = np.random.default_rng(0)
        x = np.ones((1000, 1))
        out = layer.forward(x, mode="train", rng=rng)
        kept = out[out != 0]
        assert np.allclose(kept, 2.0)  # inverted dropout scale 1/(1-0.5)
        assert 400 < len(kept) < 600

    def test_bad_rate(self):
        with pytest.raises(ValueError):
            tn.Dropout(1.0)


class TestAdam:
    def test_first_step_delta(self):
        params = {"w": np.zeros(1)}
        state = tn.AdamState(lr=0.001)
        tn.adam_step(state, params, {"w": np.ones(1)})
        assert params["w"][0] == pytest.approx(-0.000999999, abs=1e-9)

    def test_zero_gradient_no_move(self):
        params = {"w": np.full(3, 7.0)}
        state = tn.AdamState(lr=0.01)
        tn.adam_step(state, params, {"w": np.zeros(3)})
        assert np.all(params["w"] == 7.0)

    def test_constant_gradient_step_sizes_non_increasing(self):
        params = {"w": np.zeros(1)}
        state = tn.AdamState(lr=0.001)
        tn.adam_step(state, params, {"w": np.ones(1)})
        first = abs(params["w"][0])
        before = params["w"][0]
        tn.adam_step(state, params, {"w": np.ones(1)})
        second = abs(params["w"][0] - before)
        assert second <= first * (1 + 1e-6)

    def test_nonfinite_gradient_fails_fast(self):
        with pytest.raises(ValueError, match="non-finite"):
            tn.adam_step(tn.AdamState(), {"w": np.zeros(1)},
                         {"w": np.array([np.nan])})


class _DenseNet(tn.ModelGraph):
    kind = "test_dense_net"

    def __init__(self, seed=0, hidden=16):
        super().__init__()
        rng = np.random.default_rng(seed)
        self.d1 = self.add_layer("d1", tn.Dense(2, hidden, rng))
        self.act = self.add_layer("act", tn.ReLU())
        self.d2 = self.add_layer("d2", tn.Dense(hidden, 2, rng))

    def forward(self, x, mode="eval", rng=None):
        h = self.act.forward(self.d1.forward(x, mode, rng), mode, rng)
        return self.d2.forward(h, mode, rng)

    def backward(self, dlogits):
        self.d1.backward(self.act.backward(self.d2.backward(dlogits)))


def _separable_blobs(n=200, seed=11):
    rng = np.random.default_rng(seed)
    x0 = rng.normal([-2.0, -2.0], 0.4, size=(n // 2, 2))
    x1 = rng.normal([2.0, 2.0], 0.4, size=(n // 2, 2))
    x = np.vstack([x0, x1])
    y = np.array([0] * (n // 2) + [1] * (n // 2))
    return x, y


class TestFit:
    def test_zero_epochs_leaves_parameters_untouched(self):
        model = _DenseNet()
        before = {k: v.copy() for k, v in model.parameters().items()}
        x, y = _separable_blobs()
        history = tn.fit(model, x, y, epochs=0, batch_size=16,
                         learning_rate=0.01)
        assert len(history) == 0
        for name, value in model.parameters().items():
            assert np.array_equal(before[name], value)

    def test_learns_separable_data(self):
        x, y = _separable_blobs()
        # linear-separability oracle: one hyperplane already classifies all
        assert np.all((x.sum(axis=1) > 0).astype(int) == y)
        model = _DenseNet()
        history = tn.fit(model, x, y, epochs=20, batch_size=16,
                         learning_rate=0.01, seed=0)
        assert len(history) == 20
        assert history.epochs[-1].accuracy >= 0.99

    def test_same_seed_identical_history(self):
        x, y = _separable_blobs()
        h1 = tn.fit(_DenseNet(), x, y, epochs=5, batch_size=32,
                    learning_rate=0.01, seed=42)
        h2 = tn.fit(_DenseNet(), x, y, epochs=5, batch_size=32,
                    learning_rate=0.01, seed=42)
        assert [(e.loss, e.accuracy) for e in h1.epochs] == \
            [(e.loss, e.accuracy) for e in h2.epochs]

    def test_empty_dataset_rejected(self):
        with pytest.raises(ValueError):
            tn.fit(_DenseNet(), np.zeros((0, 2)), np.zeros(0, dtype=int),
                   epochs=1, batch_size=4, learning_rate=0.01)

    def test_bad_batch_size(self):
        x, y = _separable_blobs(20)
        with pytest.raises(ValueError):
            tn.fit(_DenseNet(), x, y, epochs=1, batch_size=0, learning_rate=0.01)

    def test_weighted_with_unit_weights_matches_unweighted(self):
        x, y = _separable_blobs(80)
        m1 = _DenseNet(seed=3)
        m2 = _DenseNet(seed=3)
        tn.fit(m1, x, y, epochs=3, batch_size=16, learning_rate=0.01, seed=7)
        tn.fit(m2, x, y, epochs=3, batch_size=16, learning_rate=0.01, seed=7,
               weights=tn.ClassWeights(1.0, 1.0))
        for name in m1.parameters():
            assert np.array_equal(m1.parameters()[name], m2.parameters()[name])


class TestCheckpoint:
    def test_roundtrip_preserves_parameters(self, tmp_path):
        from wsdetect.srcmodel import CnnConfig, build_cnn

        config = CnnConfig(vocab_size=7, max_length=12, embedding_dim=4,
                           kernel_sizes=(2, 3, 4), num_filters=3, seed=5)
        model = build_cnn(config, language="php")
        path = tmp_path / "model.bin"
        tn.save_model(model, path)
        loaded = tn.load_model(path)
        assert loaded.config == config
        assert loaded.language == "php"
        for name, value in model.parameters().items():
            assert np.array_equal(value, loaded.parameters()[name])
        x = np.random.default_rng(0).integers(0, 8, size=(3, 12))
        assert np.array_equal(model.forward(x), loaded.forward(x))

    def test_magic_check(self, tmp_path):
        path = tmp_path / "bogus.bin"
        path.write_bytes(b"NOTAMODEL")
        with pytest.raises(Exception, match="WSNET1"):
            tn.load_model(path)
