"""
Predict network: next-distance estimate, syntactic summary and output logits
"""

from typing import Dict, List, Optional

import numpy as np

from errors import ShapeError
from parsing_net import alpha_tensor, gate_row
from reading_net import MemoryTapes, adaptive_summary, attention_scores, structured_weights
from tensor_core import (
    Tensor,
    concat,
    dropout,
    layer_norm,
    matmul,
    ones,
    ones_param,
    relu,
    reshape,
    transpose,
    uniform_param,
    zeros,
    zeros_param,
)


class PredictNetwork:
    """Readout f^([h_{l:t-1}; h_t]) with its own gated attention over the top tape"""

    def __init__(
        self,
        hidden_size: int,
        vocab_size: int,
        readout_size: int,
        residual_blocks: int,
        temperature: float,
        rng: np.random.Generator,
        tied_embedding: Optional[Tensor] = None,
        disable_attention: bool = False,
        disable_parsing: bool = False,
        dtype=np.float32,
    ):
        if tied_embedding is not None and tied_embedding.shape != (vocab_size, readout_size):
            raise ShapeError("predict_net", tied_embedding.shape, (vocab_size, readout_size),
                             reason="tied embedding must match the readout width")
        self.hidden_size = hidden_size
        self.vocab_size = vocab_size
        self.temperature = temperature
        self.tied_embedding = tied_embedding
        self.disable_attention = disable_attention
        self.disable_parsing = disable_parsing

        self.W_dist = uniform_param(rng, (hidden_size, 1), dtype, "predict.W_dist")
        self.b_dist = zeros_param((1,), dtype, "predict.b_dist")
        self.W_q = uniform_param(rng, (hidden_size, hidden_size), dtype, "predict.W_q")

        self.W_in = uniform_param(rng, (2 * hidden_size, readout_size), dtype, "predict.W_in")
        self.b_in = zeros_param((readout_size,), dtype, "predict.b_in")
        self.ln_gain = ones_param((readout_size,), dtype, "predict.ln_gain")
        self.ln_bias = zeros_param((readout_size,), dtype, "predict.ln_bias")

        self.blocks: List[Dict[str, Tensor]] = []
        for index in range(residual_blocks):
            name = f"predict.block{index}"
            self.blocks.append({
                f"{name}.W1": uniform_param(rng, (readout_size, readout_size), dtype, f"{name}.W1"),
                f"{name}.b1": zeros_param((readout_size,), dtype, f"{name}.b1"),
                f"{name}.W2": uniform_param(rng, (readout_size, readout_size), dtype, f"{name}.W2"),
                f"{name}.b2": zeros_param((readout_size,), dtype, f"{name}.b2"),
            })

        self.W_out = None if tied_embedding is not None else uniform_param(
            rng, (readout_size, vocab_size), dtype, "predict.W_out", bound=0.1
        )
        self.b_out = zeros_param((vocab_size,), dtype, "predict.b_out")

    def parameters(self) -> Dict[str, Tensor]:
        params = {
            "predict.W_dist": self.W_dist,
            "predict.b_dist": self.b_dist,
            "predict.W_q": self.W_q,
            "predict.W_in": self.W_in,
            "predict.b_in": self.b_in,
            "predict.ln_gain": self.ln_gain,
            "predict.ln_bias": self.ln_bias,
        }
        for block in self.blocks:
            params.update(block)
        if self.W_out is not None:
            params["predict.W_out"] = self.W_out
        params["predict.b_out"] = self.b_out
        return params

    def estimate_next_distance(self, h_t: Tensor) -> Tensor:
        """d'_{t+1} = relu(h_t W + b), shape (B,)"""
        return reshape(relu(matmul(h_t, self.W_dist) + self.b_dist), (h_t.shape[0],))

    def next_gates(self, d_next: Tensor, d_hist: Tensor, d_t: Tensor) -> Tensor:
        """
        Gates of step t+1 over the tape positions (everything before t).

        The product for an entry also runs over position t itself, whose
        distance d_t is not yet on the tape.
        """
        batch, n = d_hist.shape
        if self.disable_parsing:
            return ones((batch, n), dtype=d_hist.dtype)
        extended = concat([d_hist, reshape(d_t, (batch, 1))], axis=-1)
        gates = gate_row(alpha_tensor(d_next, extended, self.temperature))
        return gates[:, :n]

    def summary(self, tapes: MemoryTapes, h_t: Tensor, gates: Tensor) -> Tensor:
        """Structured-attention summary h_{l:t-1} of the top hidden tape"""
        tape_hidden, tape_cells = tapes.stacked()
        if self.disable_attention:
            return zeros(h_t.shape, dtype=h_t.dtype)
        if gates.shape != tape_hidden.shape[:2]:
            raise ShapeError("predict_logits", gates.shape, tape_hidden.shape)
        scores = attention_scores(tape_hidden, matmul(h_t, self.W_q))
        weights = structured_weights(scores, gates)
        h_sum, _ = adaptive_summary(tape_hidden, tape_cells, weights)
        return h_sum

    def readout(
        self,
        h_sum: Tensor,
        h_t: Tensor,
        train: bool = False,
        rng: Optional[np.random.Generator] = None,
        output_dropout: float = 0.0,
    ) -> Tensor:
        x = matmul(concat([h_sum, h_t], axis=-1), self.W_in) + self.b_in
        x = relu(layer_norm(x, self.ln_gain, self.ln_bias))
        for block in self.blocks:
            W1, b1, W2, b2 = block.values()
            x = x + relu(matmul(relu(matmul(x, W1) + b1), W2) + b2)
        x = dropout(x, output_dropout, rng, train)
        if self.tied_embedding is not None:
            return matmul(x, transpose(self.tied_embedding)) + self.b_out
        return matmul(x, self.W_out) + self.b_out

    def predict_logits(
        self,
        tapes: MemoryTapes,
        h_t: Tensor,
        d_hist: Tensor,
        d_next: Tensor,
        d_t: Tensor,
        train: bool = False,
        rng: Optional[np.random.Generator] = None,
        output_dropout: float = 0.0,
    ) -> Tensor:
        """(B, V) next-token logits from the pre-write top tape and h_t"""
        if len(tapes) == 0:
            raise ShapeError("predict_logits", reason="empty tape")
        gates = self.next_gates(d_next, d_hist, d_t)
        h_sum = self.summary(tapes, h_t, gates)
        return self.readout(h_sum, h_t, train=train, rng=rng, output_dropout=output_dropout)
