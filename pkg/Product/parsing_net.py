"""
Parsing network: syntactic distances and stick-breaking gates

Distances come from a causal two-layer convolution over the L most recent
token embeddings. Gates are the CDF of a stick-breaking distribution over the
left attention boundary: an entry stays open only if every newer position
between it and the current token has a smaller distance.
"""

from dataclasses import dataclass
from typing import Dict, Optional, Sequence

import numpy as np

from errors import ShapeError
from tensor_core import (
    Tensor,
    concat,
    hardtanh,
    make_op,
    matmul,
    relu,
    reshape,
    uniform_param,
    zeros,
    zeros_param,
)


@dataclass
class GateMatrix:
    """Square matrix with g[t, i] = gate from timestep t onto memory position i"""

    g: np.ndarray
    window: int

    def row(self, t: int) -> np.ndarray:
        return self.g[t, :t]


# ============================================================================
# Scalar / numpy forms
# ============================================================================

def soft_alpha(d_t, d_j, temperature: float):
    """(hardtanh((d_t - d_j) * tau) + 1) / 2, elementwise over arrays"""
    if temperature <= 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    diff = (np.asarray(d_t, dtype=np.float64) - np.asarray(d_j, dtype=np.float64)) * temperature
    return (np.clip(diff, -1.0, 1.0) + 1.0) / 2.0


def hard_alpha(d_t, d_j):
    """Infinite-temperature alpha: 1 if d_t > d_j, 0 if d_t < d_j, 0.5 on ties"""
    return (np.sign(np.asarray(d_t, dtype=np.float64) - np.asarray(d_j, dtype=np.float64)) + 1.0) / 2.0


def _check_alphas(alphas: np.ndarray):
    if alphas.size and (np.min(alphas) < 0.0 or np.max(alphas) > 1.0):
        raise ValueError("alpha values must lie in [0, 1]")


def gate_vector(alphas: Sequence[float]) -> np.ndarray:
    """
    Gates of one timestep from its alphas.

    Args:
        alphas: [alpha_1, ..., alpha_{t-1}] for a timestep t

    Returns:
        Array of length t with g_i = prod_{j=i+1}^{t-1} alpha_j
    """
    alphas = np.asarray(alphas, dtype=np.float64)
    _check_alphas(alphas)
    # suffix products, g_{t-1} is the empty product
    suffix = np.cumprod(alphas[::-1])[::-1]
    return np.concatenate([suffix, [1.0]])


def gates_from_alphas(alphas: np.ndarray, window: int) -> GateMatrix:
    """
    Full gate matrix from a matrix of alphas.

    Args:
        alphas: (T, T) array; alphas[t, j] holds alpha_j^t for 1 <= j <= t-1,
            other entries are ignored
        window: memory span; gates onto positions i < t - window are 0

    Returns:
        GateMatrix with a strictly lower triangular g
    """
    alphas = np.asarray(alphas, dtype=np.float64)
    if alphas.ndim != 2 or alphas.shape[0] != alphas.shape[1]:
        raise ShapeError("gates_from_alphas", alphas.shape, reason="expected a square matrix")
    steps = alphas.shape[0]
    g = np.zeros((steps, steps), dtype=np.float64)
    for t in range(1, steps):
        lo = max(0, t - window)
        row = gate_vector(alphas[t, lo + 1 : t])
        g[t, lo:t] = row
    return GateMatrix(g=g, window=window)


def structure_probs(alphas: Sequence[float]) -> np.ndarray:
    """
    Stick-breaking distribution over the left boundary l_t.

    Args:
        alphas: [alpha_1, ..., alpha_{t-1}]

    Returns:
        p of length t: p_0 = prod alpha, p_i = (1 - alpha_i) prod_{j>i} alpha_j
    """
    alphas = np.asarray(alphas, dtype=np.float64)
    gates = gate_vector(alphas)
    probs = gates.copy()
    probs[1:] *= 1.0 - alphas
    return probs


# ============================================================================
# Differentiable forms
# ============================================================================

def alpha_tensor(d_t: Tensor, d_hist: Tensor, temperature: float) -> Tensor:
    """Soft alphas of the current distance (B,) against a history (B, n)"""
    diff = d_t.reshape(d_t.shape[0], 1) - d_hist
    return (hardtanh(diff * float(temperature)) + 1.0) * 0.5


def gate_row(alphas: Tensor) -> Tensor:
    """
    Exclusive suffix product over the last axis: y_k = prod_{m>k} a_m.

    The last entry is always 1. The VJP is computed by a forward recursion so
    zero alphas do not divide.
    """
    a = alphas.data
    n = a.shape[-1]
    y = np.ones_like(a)
    for k in range(n - 2, -1, -1):
        y[..., k] = y[..., k + 1] * a[..., k + 1]

    def vjp(g):
        grad = np.zeros_like(a)
        acc = np.zeros_like(a[..., 0])
        for m in range(n):
            grad[..., m] = y[..., m] * acc
            acc = acc * a[..., m] + g[..., m]
        return (grad,)

    return make_op("gate_row", y, (alphas,), vjp)


class ParsingNetwork:
    """Convolutional distance estimator plus gate construction"""

    def __init__(
        self,
        embedding_size: int,
        conv_hidden: int,
        look_back: int,
        temperature: float,
        rng: np.random.Generator,
        dtype=np.float32,
    ):
        if look_back < 1:
            raise ValueError(f"look_back must be >= 1, got {look_back}")
        if temperature <= 0:
            raise ValueError(f"temperature must be positive, got {temperature}")
        self.embedding_size = embedding_size
        self.look_back = look_back
        self.temperature = temperature
        self.dtype = dtype

        self.W_c = uniform_param(rng, (look_back * embedding_size, conv_hidden), dtype, "parse.W_c")
        self.b_c = zeros_param((conv_hidden,), dtype, "parse.b_c")
        self.W_d = uniform_param(rng, (conv_hidden, 1), dtype, "parse.W_d")
        self.b_d = zeros_param((1,), dtype, "parse.b_d")

    def parameters(self) -> Dict[str, Tensor]:
        return {
            "parse.W_c": self.W_c,
            "parse.b_c": self.b_c,
            "parse.W_d": self.W_d,
            "parse.b_d": self.b_d,
        }

    def compute_distances(self, embeddings: Tensor, history: Optional[Tensor] = None) -> Tensor:
        """
        Distances for every position of a (B, T, E) embedding block.

        Args:
            embeddings: token embeddings, oldest first
            history: (B, L-1, E) embeddings preceding the block; zero padding if None

        Returns:
            (B, T) non-negative distances
        """
        if embeddings.ndim != 3 or embeddings.shape[-1] != self.embedding_size:
            raise ShapeError("compute_distances", embeddings.shape, (None, None, self.embedding_size))
        batch, steps, _ = embeddings.shape
        if steps == 0:
            raise ShapeError("compute_distances", embeddings.shape, reason="empty sequence")

        pad = self.look_back - 1
        if pad > 0:
            if history is None:
                history = zeros((batch, pad, self.embedding_size), dtype=embeddings.dtype)
            elif history.shape != (batch, pad, self.embedding_size):
                raise ShapeError("compute_distances", history.shape, (batch, pad, self.embedding_size))
            padded = concat([history, embeddings], axis=1)
        else:
            padded = embeddings

        # window k covers positions i-L+1+k, oldest slice first
        windows = concat([padded[:, k : k + steps, :] for k in range(self.look_back)], axis=-1)
        hidden = relu(matmul(windows, self.W_c) + self.b_c)
        distances = relu(matmul(hidden, self.W_d) + self.b_d)
        return reshape(distances, (batch, steps))

    def alphas(self, d_t: Tensor, d_hist: Tensor) -> Tensor:
        return alpha_tensor(d_t, d_hist, self.temperature)

    def gates(self, d_t: Tensor, d_hist: Tensor) -> Tensor:
        """Gate row of the current step over the tape positions in d_hist"""
        return gate_row(self.alphas(d_t, d_hist))
