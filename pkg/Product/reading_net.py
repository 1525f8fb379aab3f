"""
Reading network: memory tapes, structured attention and the LSTM update
"""

from typing import Dict, List, Optional, Tuple

import numpy as np

from errors import ShapeError
from tensor_core import (
    Tensor,
    concat,
    dropout,
    layer_norm,
    matmul,
    ones_param,
    reshape,
    sigmoid,
    softmax,
    stack,
    tanh,
    uniform_param,
    weighted_normalize,
    zeros,
    zeros_param,
)


class MemoryTapes:
    """Sliding window of (h, c) pairs, oldest first, at most `capacity` long"""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError(f"memory span must be >= 1, got {capacity}")
        self.capacity = capacity
        self.hidden: List[Tensor] = []
        self.cells: List[Tensor] = []
        self.offset = 0
        self._stacked: Optional[Tuple[Tensor, Tensor]] = None

    @classmethod
    def seeded(cls, capacity: int, batch: int, hidden_size: int, dtype=np.float32) -> "MemoryTapes":
        """Tapes holding a single zero state at position -1"""
        tapes = cls(capacity)
        tapes.offset = -1
        tapes.hidden.append(zeros((batch, hidden_size), dtype))
        tapes.cells.append(zeros((batch, hidden_size), dtype))
        return tapes

    def __len__(self) -> int:
        return len(self.hidden)

    @property
    def positions(self) -> List[int]:
        return list(range(self.offset, self.offset + len(self)))

    def append(self, h: Tensor, c: Tensor) -> int:
        """Write a new pair; returns how many old entries were evicted"""
        self.hidden.append(h)
        self.cells.append(c)
        evicted = 0
        while len(self.hidden) > self.capacity:
            self.hidden.pop(0)
            self.cells.pop(0)
            self.offset += 1
            evicted += 1
        self._stacked = None
        return evicted

    def last(self) -> Tuple[Tensor, Tensor]:
        return self.hidden[-1], self.cells[-1]

    def stacked(self) -> Tuple[Tensor, Tensor]:
        """(B, n, H) views of the hidden and memory tapes"""
        if not self.hidden:
            raise ShapeError("memory_tapes", reason="empty tape")
        if self._stacked is None:
            self._stacked = (stack(self.hidden, axis=1), stack(self.cells, axis=1))
        return self._stacked

    def detach(self) -> "MemoryTapes":
        copy = MemoryTapes(self.capacity)
        copy.offset = self.offset
        copy.hidden = [h.detach() for h in self.hidden]
        copy.cells = [c.detach() for c in self.cells]
        return copy


# ============================================================================
# Attention pieces
# ============================================================================

def attention_scores(tape_hidden: Tensor, query: Tensor) -> Tensor:
    """softmax(H k / sqrt(d)) for tape hiddens (B, n, d) and queries (B, d)"""
    batch, n, size = tape_hidden.shape
    if n == 0:
        raise ShapeError("attention_scores", tape_hidden.shape, reason="empty tape")
    if query.shape != (batch, size):
        raise ShapeError("attention_scores", tape_hidden.shape, query.shape)
    logits = reshape(matmul(tape_hidden, reshape(query, (batch, size, 1))), (batch, n))
    return softmax(logits * (1.0 / np.sqrt(size)))


def structured_weights(scores: Tensor, gates: Tensor) -> Tensor:
    """s_i = g_i * s~_i / max(sum(g), eps)"""
    return weighted_normalize(scores, gates)


def adaptive_summary(tape_hidden: Tensor, tape_cells: Tensor, weights: Tensor) -> Tuple[Tensor, Tensor]:
    """Weighted sums of the hidden and memory tapes"""
    batch, n, size = tape_hidden.shape
    if weights.shape != (batch, n):
        raise ShapeError("adaptive_summary", tape_hidden.shape, weights.shape)
    w = reshape(weights, (batch, 1, n))
    h_sum = reshape(matmul(w, tape_hidden), (batch, size))
    c_sum = reshape(matmul(w, tape_cells), (batch, size))
    return h_sum, c_sum


class ReadingLayer:
    """One recurrent layer: structured attention over its tape, then an LSTM cell"""

    def __init__(
        self,
        input_size: int,
        hidden_size: int,
        rng: np.random.Generator,
        index: int,
        use_layer_norm: bool = True,
        dtype=np.float32,
    ):
        self.input_size = input_size
        self.hidden_size = hidden_size
        self.use_layer_norm = use_layer_norm
        prefix = f"read{index}"
        self.prefix = prefix

        self.W_h = uniform_param(rng, (hidden_size, hidden_size), dtype, f"{prefix}.W_h")
        self.W_x = uniform_param(rng, (input_size, hidden_size), dtype, f"{prefix}.W_x")
        # gate order in the 4H block: input, forget, output, candidate
        self.W = uniform_param(rng, (input_size + hidden_size, 4 * hidden_size), dtype, f"{prefix}.W")
        self.b = zeros_param((4 * hidden_size,), dtype, f"{prefix}.b")
        self.ln_gain = ones_param((4 * hidden_size,), dtype, f"{prefix}.ln_gain")
        self.ln_bias = zeros_param((4 * hidden_size,), dtype, f"{prefix}.ln_bias")

    def parameters(self) -> Dict[str, Tensor]:
        params = {
            f"{self.prefix}.W_h": self.W_h,
            f"{self.prefix}.W_x": self.W_x,
            f"{self.prefix}.W": self.W,
            f"{self.prefix}.b": self.b,
        }
        if self.use_layer_norm:
            params[f"{self.prefix}.ln_gain"] = self.ln_gain
            params[f"{self.prefix}.ln_bias"] = self.ln_bias
        return params

    def summarize(self, x: Tensor, tapes: MemoryTapes, gates: Tensor) -> Tuple[Tensor, Tensor]:
        h_prev, _ = tapes.last()
        tape_hidden, tape_cells = tapes.stacked()
        if gates.shape != tape_hidden.shape[:2]:
            raise ShapeError("reading_step", gates.shape, tape_hidden.shape)
        query = matmul(h_prev, self.W_h) + matmul(x, self.W_x)
        scores = attention_scores(tape_hidden, query)
        weights = structured_weights(scores, gates)
        return adaptive_summary(tape_hidden, tape_cells, weights)

    def cell(self, x: Tensor, h_sum: Tensor, c_sum: Tensor) -> Tuple[Tensor, Tensor]:
        if x.shape[-1] != self.input_size:
            raise ShapeError("reading_step", x.shape, (x.shape[0], self.input_size))
        pre = matmul(concat([x, h_sum], axis=-1), self.W) + self.b
        if self.use_layer_norm:
            pre = layer_norm(pre, self.ln_gain, self.ln_bias)
        size = self.hidden_size
        i_gate = sigmoid(pre[:, :size])
        f_gate = sigmoid(pre[:, size : 2 * size])
        o_gate = sigmoid(pre[:, 2 * size : 3 * size])
        candidate = tanh(pre[:, 3 * size :])
        c = f_gate * c_sum + i_gate * candidate
        h = o_gate * tanh(c)
        return h, c


class ReadingNetwork:
    """Stack of reading layers sharing one gate row per timestep"""

    def __init__(
        self,
        input_size: int,
        hidden_size: int,
        num_layers: int,
        rng: np.random.Generator,
        use_layer_norm: bool = True,
        disable_attention: bool = False,
        dtype=np.float32,
    ):
        self.hidden_size = hidden_size
        self.disable_attention = disable_attention
        self.layers = [
            ReadingLayer(
                input_size if index == 0 else hidden_size,
                hidden_size,
                rng,
                index,
                use_layer_norm=use_layer_norm,
                dtype=dtype,
            )
            for index in range(num_layers)
        ]

    def parameters(self) -> Dict[str, Tensor]:
        params: Dict[str, Tensor] = {}
        for layer in self.layers:
            params.update(layer.parameters())
        return params

    def step(
        self,
        x: Tensor,
        tapes: List[MemoryTapes],
        gates: Tensor,
        train: bool = False,
        rng: Optional[np.random.Generator] = None,
        layer_dropout: float = 0.0,
        recurrent_dropout: float = 0.0,
        write: bool = True,
    ) -> List[Tuple[Tensor, Tensor]]:
        """
        Advance every layer by one token.

        Args:
            x: (B, E) input embedding
            tapes: one MemoryTapes per layer, aligned with `gates`
            gates: (B, n) gate row over the tape positions
            write: append the new states to the tapes before returning

        Returns:
            [(h_t, c_t)] per layer, bottom first
        """
        if len(tapes) != len(self.layers):
            raise ShapeError("reading_step", (len(tapes),), (len(self.layers),), reason="tape count")
        states = []
        layer_input = x
        for index, (layer, tape) in enumerate(zip(self.layers, tapes)):
            if index > 0:
                layer_input = dropout(layer_input, layer_dropout, rng, train)
            if self.disable_attention:
                h_sum, c_sum = tape.last()
            else:
                h_sum, c_sum = layer.summarize(layer_input, tape, gates)
            h_sum = dropout(h_sum, recurrent_dropout, rng, train)
            h, c = layer.cell(layer_input, h_sum, c_sum)
            states.append((h, c))
            layer_input = h
        if write:
            write_states(tapes, states)
        return states


def write_states(tapes: List[MemoryTapes], states: List[Tuple[Tensor, Tensor]]) -> int:
    evicted = 0
    for tape, (h, c) in zip(tapes, states):
        evicted = tape.append(h, c)
    return evicted
