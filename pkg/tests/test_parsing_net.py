"""Distances, alphas and stick-breaking gates"""

import numpy as np
import pytest

from errors import ShapeError
from parsing_net import (
    ParsingNetwork,
    alpha_tensor,
    gate_row,
    gate_vector,
    gates_from_alphas,
    hard_alpha,
    soft_alpha,
    structure_probs,
)
from tensor_core import Tensor, backward, numerical_grad, recording, sum_, mul, zeros


class TestAlphas:
    def test_equal_distances_give_half(self):
        assert soft_alpha(0.4, 0.4, 10.0) == pytest.approx(0.5)

    def test_saturates_at_unit_gap(self):
        assert soft_alpha(1.5, 0.5, 10.0) == pytest.approx(1.0)

    def test_worked_value(self):
        assert soft_alpha(0.30, 0.32, 10.0) == pytest.approx(0.40)

    def test_temperature_must_be_positive(self):
        with pytest.raises(ValueError):
            soft_alpha(0.1, 0.2, 0.0)

    @pytest.mark.parametrize("d_t, d_j, expected", [(0.9, 0.1, 1.0), (0.1, 0.9, 0.0), (0.5, 0.5, 0.5)])
    def test_hard_alpha(self, d_t, d_j, expected):
        assert hard_alpha(d_t, d_j) == expected

    def test_alpha_tensor_matches_scalar_form(self):
        d_t = Tensor(np.array([0.30, 0.7]), dtype=np.float64)
        d_hist = Tensor(np.array([[0.32, 0.1], [0.65, 0.9]]), dtype=np.float64)
        expected = soft_alpha(d_t.data[:, None], d_hist.data, 10.0)
        np.testing.assert_allclose(alpha_tensor(d_t, d_hist, 10.0).data, expected)


class TestGates:
    def test_worked_gates(self):
        np.testing.assert_allclose(gate_vector([0.5, 1.0, 1.0]), [0.5, 1.0, 1.0, 1.0])

    def test_all_open(self):
        np.testing.assert_array_equal(gate_vector(np.ones(6)), np.ones(7))

    def test_zero_alpha_closes_everything_before_it(self):
        gates = gate_vector([0.9, 0.8, 0.0, 0.7])
        np.testing.assert_array_equal(gates[:3], [0.0, 0.0, 0.0])
        assert gates[3] == pytest.approx(0.7)

    def test_first_timestep_has_single_gate(self):
        np.testing.assert_array_equal(gate_vector([]), [1.0])

    def test_alphas_outside_unit_interval_rejected(self):
        with pytest.raises(ValueError):
            gate_vector([1.5])

    def test_gate_matrix_respects_window(self):
        alphas = np.full((6, 6), 0.5)
        matrix = gates_from_alphas(alphas, window=2)
        assert np.all(np.triu(matrix.g) == 0.0)
        np.testing.assert_allclose(matrix.row(5), [0.0, 0.0, 0.0, 0.5, 1.0])

    def test_gate_row_matches_vector_form(self):
        alphas = np.random.default_rng(0).uniform(size=(3, 5))
        out = gate_row(Tensor(alphas, dtype=np.float64)).data
        for row, a in zip(out, alphas):
            np.testing.assert_allclose(row, gate_vector(a[1:]))

    def test_gate_row_gradient_with_zero_alpha(self):
        alphas = Tensor(np.array([[0.3, 0.0, 0.6, 0.8]]), requires_grad=True, dtype=np.float64)
        direction = Tensor(np.array([[1.0, -2.0, 0.5, 3.0]]), dtype=np.float64)

        def loss_value():
            return sum_(mul(gate_row(alphas), direction))

        with recording():
            backward(loss_value())
        numeric = numerical_grad(lambda: loss_value().item(), alphas)
        np.testing.assert_allclose(alphas.grad, numeric, atol=1e-8)


class TestStructureProbs:
    def test_worked_distribution(self):
        probs = structure_probs([0.2, 0.6])
        np.testing.assert_allclose(probs, [0.12, 0.48, 0.40])
        assert probs.sum() == pytest.approx(1.0)

    def test_degenerate_stick(self):
        np.testing.assert_allclose(structure_probs([1.0, 1.0, 1.0]), [1.0, 0.0, 0.0, 0.0])

    def test_cdf_equals_gates(self):
        alphas = np.random.default_rng(1).uniform(size=12)
        np.testing.assert_allclose(np.cumsum(structure_probs(alphas)), gate_vector(alphas), atol=1e-12)


class TestParsingNetwork:
    def make(self, look_back=3, dtype=np.float64):
        return ParsingNetwork(4, 6, look_back, 10.0, np.random.default_rng(0), dtype)

    def test_zero_weights_give_zero_distances(self):
        net = self.make()
        for p in net.parameters().values():
            p.data[...] = 0.0
        emb = Tensor(np.random.default_rng(1).normal(size=(2, 5, 4)), dtype=np.float64)
        np.testing.assert_array_equal(net.compute_distances(emb).data, np.zeros((2, 5)))

    def test_distances_are_non_negative(self):
        emb = Tensor(np.random.default_rng(2).normal(size=(3, 7, 4)), dtype=np.float64)
        assert np.all(self.make().compute_distances(emb).data >= 0.0)

    def test_single_step_uses_padding(self):
        net = self.make()
        emb = Tensor(np.random.default_rng(3).normal(size=(1, 1, 4)), dtype=np.float64)
        explicit = net.compute_distances(emb, history=zeros((1, 2, 4), dtype=np.float64))
        np.testing.assert_array_equal(net.compute_distances(emb).data, explicit.data)

    def test_distances_are_causal(self):
        net = self.make()
        data = np.random.default_rng(4).normal(size=(1, 6, 4))
        changed = data.copy()
        changed[0, 4:] += 1.0
        a = net.compute_distances(Tensor(data, dtype=np.float64)).data
        b = net.compute_distances(Tensor(changed, dtype=np.float64)).data
        np.testing.assert_array_equal(a[0, :4], b[0, :4])

    def test_history_shape_checked(self):
        emb = Tensor(np.zeros((1, 2, 4)), dtype=np.float64)
        with pytest.raises(ShapeError):
            self.make().compute_distances(emb, history=zeros((1, 5, 4), dtype=np.float64))

    def test_wrong_embedding_width(self):
        with pytest.raises(ShapeError):
            self.make().compute_distances(Tensor(np.zeros((1, 2, 3)), dtype=np.float64))

    def test_gates_follow_distances(self):
        net = self.make()
        d_t = Tensor(np.array([0.5]), dtype=np.float64)
        d_hist = Tensor(np.array([[0.0, 0.9, 0.1]]), dtype=np.float64)
        gates = net.gates(d_t, d_hist).data[0]
        # position 1 blocks everything older than itself
        np.testing.assert_allclose(gates, [0.0, 1.0, 1.0])
