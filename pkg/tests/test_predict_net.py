"""Next-distance estimate and output readout"""

import numpy as np
import pytest

from errors import ShapeError
from predict_net import PredictNetwork
from reading_net import MemoryTapes
from tensor_core import Tensor, zeros

F64 = np.float64


def t(values):
    return Tensor(np.asarray(values, dtype=F64), dtype=F64)


def make(hidden=3, vocab=5, residual_blocks=1, **kwargs):
    return PredictNetwork(hidden, vocab, hidden, residual_blocks, 10.0, np.random.default_rng(0), dtype=F64, **kwargs)


def filled_tape(rng, n, batch=1, hidden=3):
    tapes = MemoryTapes(n)
    for _ in range(n):
        tapes.append(t(rng.normal(size=(batch, hidden))), t(rng.normal(size=(batch, hidden))))
    return tapes


class TestNextDistance:
    def test_zero_weights(self):
        net = make()
        net.W_dist.data[...] = 0.0
        np.testing.assert_array_equal(net.estimate_next_distance(t(np.ones((2, 3)))).data, [0.0, 0.0])

    def test_negative_affine_clamps(self):
        net = make()
        net.W_dist.data[...] = 0.0
        net.b_dist.data[...] = -2.0
        assert net.estimate_next_distance(t(np.ones((1, 3)))).data[0] == 0.0

    def test_matches_affine_relu(self):
        net = make()
        h = np.random.default_rng(1).normal(size=(4, 3))
        expected = np.maximum(h @ net.W_dist.data + net.b_dist.data, 0.0).reshape(4)
        np.testing.assert_allclose(net.estimate_next_distance(t(h)).data, expected)


class TestReadout:
    def test_closed_gates_depend_on_current_state_only(self):
        rng = np.random.default_rng(2)
        net = make()
        h_t = t(rng.normal(size=(1, 3)))
        closed = t(np.zeros((1, 4)))
        a = net.readout(net.summary(filled_tape(rng, 4), h_t, closed), h_t)
        b = net.readout(net.summary(filled_tape(rng, 4), h_t, closed), h_t)
        np.testing.assert_array_equal(a.data, b.data)

    def test_hand_checked_two_word_vocab(self):
        net = PredictNetwork(1, 2, 2, 0, 10.0, np.random.default_rng(0), dtype=F64)
        # input projection passes [summary; h_t] through unchanged
        net.W_in.data[...] = np.eye(2)
        net.W_out.data[...] = np.eye(2)
        net.ln_gain.data[...] = 1.0
        logits = net.readout(t([[3.0]]), t([[1.0]]))
        # layer norm of [3, 1] is [1, -1] up to eps; relu keeps [1, 0]
        np.testing.assert_allclose(logits.data, [[1.0, 0.0]], atol=1e-5)

    def test_residual_block_adds(self):
        net = make(residual_blocks=1)
        for name, p in net.parameters().items():
            if ".block0." in name:
                p.data[...] = 0.0
        plain = make(residual_blocks=0)
        shared = net.parameters()
        for name, p in plain.parameters().items():
            p.data[...] = shared[name].data
        h_sum, h_t = t(np.ones((1, 3))), t(np.full((1, 3), 0.5))
        np.testing.assert_allclose(net.readout(h_sum, h_t).data, plain.readout(h_sum, h_t).data)

    def test_tied_embedding_shape_checked(self):
        with pytest.raises(ShapeError):
            make(tied_embedding=zeros((7, 3), dtype=F64))

    def test_tied_embedding_shares_weights(self):
        embedding = Tensor(np.random.default_rng(3).normal(size=(5, 3)), requires_grad=True, dtype=F64)
        net = make(tied_embedding=embedding)
        assert "predict.W_out" not in net.parameters()
        assert net.readout(t(np.ones((1, 3))), t(np.ones((1, 3)))).shape == (1, 5)


class TestNextGates:
    def test_next_gates_cover_current_token(self):
        net = make()
        d_hist = t([[0.1, 0.9]])
        # current token is a taller wall than the estimate: everything closes
        gates = net.next_gates(t([0.5]), d_hist, t([0.95]))
        np.testing.assert_array_equal(gates.data, [[0.0, 0.0]])

    def test_disable_parsing_opens_everything(self):
        net = make(disable_parsing=True)
        gates = net.next_gates(t([0.0]), t([[0.1, 0.9, 0.3]]), t([0.95]))
        np.testing.assert_array_equal(gates.data, np.ones((1, 3)))

    def test_predict_logits_shape(self):
        rng = np.random.default_rng(4)
        net = make()
        tapes = filled_tape(rng, 3, batch=2)
        logits = net.predict_logits(tapes, t(rng.normal(size=(2, 3))), t(rng.uniform(size=(2, 3))),
                                    t([0.2, 0.4]), t([0.1, 0.3]))
        assert logits.shape == (2, 5)

    def test_empty_tape_rejected(self):
        net = make()
        with pytest.raises(ShapeError):
            net.predict_logits(MemoryTapes(2), t(np.ones((1, 3))), t(np.ones((1, 0))), t([0.1]), t([0.1]))
