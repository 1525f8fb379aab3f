"""
Language model assembling embedding, parsing, reading and predict networks

One forward call consumes a (B, T) block of token ids. State that survives the
block (tapes, in-window distances and the embedding tail the convolution needs)
is returned as a detached CarryState for truncated back-propagation.
"""

import logging
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from errors import CheckpointError, ConfigError, CorpusError, ShapeError
from parsing_net import ParsingNetwork
from predict_net import PredictNetwork
from reading_net import MemoryTapes, ReadingNetwork, write_states
from run_config import ModelConfig
from tensor_core import (
    Tensor,
    cross_entropy,
    dropout,
    embedding,
    no_recording,
    ones,
    reshape,
    resolve_dtype,
    stack,
    uniform_param,
    zeros,
)

logger = logging.getLogger(__name__)

PAD_ID = 0
EMBEDDING_INIT_RANGE = 0.1


def rng_streams(seed: int) -> Dict[str, np.random.Generator]:
    """Independent generators for initialization, dropout and batch order"""
    init_seq, dropout_seq, batch_seq = np.random.SeedSequence(seed).spawn(3)
    return {
        "init": np.random.default_rng(init_seq),
        "dropout": np.random.default_rng(dropout_seq),
        "batches": np.random.default_rng(batch_seq),
    }


@dataclass
class CarryState:
    """Recurrent state handed from one block to the next"""

    tapes: List[MemoryTapes]
    # one (B,) distance per tape position, aligned with every layer's tape
    distances: List[Tensor]
    # (B, L-1, E) embeddings preceding the next block, None when L == 1
    embeddings: Optional[Tensor] = None
    position: int = 0

    @property
    def batch_size(self) -> int:
        return self.tapes[0].hidden[0].shape[0]

    def clone(self) -> "CarryState":
        tapes = []
        for tape in self.tapes:
            copy = MemoryTapes(tape.capacity)
            copy.offset = tape.offset
            copy.hidden = list(tape.hidden)
            copy.cells = list(tape.cells)
            tapes.append(copy)
        return CarryState(tapes, list(self.distances), self.embeddings, self.position)

    def detach(self) -> "CarryState":
        return CarryState(
            tapes=[tape.detach() for tape in self.tapes],
            distances=[d.detach() for d in self.distances],
            embeddings=None if self.embeddings is None else self.embeddings.detach(),
            position=self.position,
        )


@dataclass
class ForwardResult:
    loss: Optional[Tensor]
    carry: CarryState
    logits: Tensor
    diagnostics: Dict[str, np.ndarray] = field(default_factory=dict)
    token_count: int = 0


class PRPNLanguageModel:
    """Parsing-reading-predict language model"""

    def __init__(self, config: ModelConfig, vocab_size: Optional[int] = None, seed: int = 1111):
        vocab_size = vocab_size or config.vocab_size
        if not vocab_size:
            raise ConfigError("model.vocab_size is unknown; load a corpus or set it explicitly")
        if config.tie_embeddings and config.readout_size != config.embedding_size:
            raise ConfigError("tied embeddings need readout width == embedding_size")
        self.config = config.model_copy(update={"vocab_size": vocab_size})
        self.vocab_size = vocab_size
        self.dtype = resolve_dtype(config.precision)
        self.seed = seed

        streams = rng_streams(seed)
        init_rng = streams["init"]
        self.dropout_rng = streams["dropout"]

        cfg = self.config
        self.embedding = uniform_param(
            init_rng, (vocab_size, cfg.embedding_size), self.dtype, "embedding", bound=EMBEDDING_INIT_RANGE
        )
        self.parsing = ParsingNetwork(
            cfg.embedding_size,
            cfg.parser_hidden or cfg.hidden_size,
            cfg.look_back,
            cfg.temperature,
            init_rng,
            self.dtype,
        )
        self.reading = ReadingNetwork(
            cfg.embedding_size,
            cfg.hidden_size,
            cfg.num_layers,
            init_rng,
            use_layer_norm=cfg.layer_norm,
            disable_attention=cfg.disable_reading_attention,
            dtype=self.dtype,
        )
        self.predict = PredictNetwork(
            cfg.hidden_size,
            vocab_size,
            cfg.readout_size,
            cfg.residual_blocks,
            cfg.temperature,
            init_rng,
            tied_embedding=self.embedding if cfg.tie_embeddings else None,
            disable_attention=cfg.disable_predict_attention,
            disable_parsing=cfg.disable_parsing,
            dtype=self.dtype,
        )
        logger.debug("Built model with %d parameters", self.num_parameters())

    # ------------------------------------------------------------------
    # Parameters
    # ------------------------------------------------------------------

    def named_parameters(self) -> "OrderedDict[str, Tensor]":
        params = OrderedDict(embedding=self.embedding)
        params.update(self.parsing.parameters())
        params.update(self.reading.parameters())
        params.update(self.predict.parameters())
        return params

    def num_parameters(self) -> int:
        return int(sum(p.data.size for p in self.named_parameters().values()))

    def zero_grad(self):
        for param in self.named_parameters().values():
            param.zero_grad()

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((name, p.data.copy()) for name, p in self.named_parameters().items())

    def load_state_dict(self, state: Dict[str, np.ndarray]):
        params = self.named_parameters()
        missing = [name for name in params if name not in state]
        if missing:
            raise CheckpointError(f"Checkpoint lacks parameters: {', '.join(missing)}", missing=missing)
        for name, param in params.items():
            value = np.asarray(state[name])
            if value.shape != param.shape:
                raise CheckpointError(
                    f"Parameter '{name}' has shape {value.shape}, model expects {param.shape}",
                    name=name,
                )
            param.data[...] = value.astype(param.dtype, copy=False)

    # ------------------------------------------------------------------
    # Forward
    # ------------------------------------------------------------------

    def init_carry(self, batch: int) -> CarryState:
        cfg = self.config
        tapes = [
            MemoryTapes.seeded(cfg.memory_span, batch, cfg.hidden_size, self.dtype)
            for _ in range(cfg.num_layers)
        ]
        # the seed entry's distance never enters a product, any value works
        distances = [zeros((batch,), self.dtype)]
        return CarryState(tapes=tapes, distances=distances, embeddings=None, position=0)

    def forward(
        self,
        inputs,
        targets=None,
        carry: Optional[CarryState] = None,
        train: bool = False,
        loss_mask=None,
    ) -> ForwardResult:
        """
        Run the model over a block of token ids.

        Args:
            inputs: (B, T) integer ids
            targets: (B, T) next-token ids; the loss is skipped when None
            carry: state from the previous block; fresh zero state when None
            train: enables dropout
            loss_mask: (B, T) 0/1 weights over targets (padding positions)

        Returns:
            ForwardResult with the mean token cross-entropy and a detached carry
        """
        inputs = np.asarray(inputs)
        if inputs.ndim == 1:
            inputs = inputs[None, :]
        if inputs.ndim != 2:
            raise ShapeError("forward", inputs.shape, reason="expected a (batch, time) id matrix")
        batch, steps = inputs.shape
        if steps == 0:
            raise ShapeError("forward", inputs.shape, reason="empty sequence")
        if inputs.min() < 0 or inputs.max() >= self.vocab_size:
            raise CorpusError(
                f"Token id outside [0, {self.vocab_size})",
                min_id=int(inputs.min()),
                max_id=int(inputs.max()),
            )

        cfg = self.config
        if carry is None:
            carry = self.init_carry(batch)
        elif carry.batch_size != batch:
            raise ShapeError("forward", (carry.batch_size,), (batch,), reason="carry batch size")
        state = carry.clone()
        tapes = state.tapes

        p_emb, p_layer, p_rec = cfg.dropout
        rng = self.dropout_rng if train else None

        emb = dropout(embedding(self.embedding, inputs), p_emb, rng, train)
        distances = self.parsing.compute_distances(emb, history=state.embeddings)

        logits_steps, openness, hidden, next_distances = [], [], [], []
        for t in range(steps):
            x = emb[:, t, :]
            d_t = distances[:, t]
            d_hist = stack(state.distances, axis=1)
            if cfg.disable_parsing:
                gates = ones(d_hist.shape, dtype=self.dtype)
            else:
                gates = self.parsing.gates(d_t, d_hist)

            states = self.reading.step(
                x, tapes, gates,
                train=train, rng=rng,
                layer_dropout=p_layer, recurrent_dropout=p_rec,
                write=False,
            )
            h_top = states[-1][0]
            d_next = self.predict.estimate_next_distance(h_top)
            logits_steps.append(
                self.predict.predict_logits(
                    tapes[-1], h_top, d_hist, d_next, d_t,
                    train=train, rng=rng, output_dropout=p_emb,
                )
            )

            write_states(tapes, states)
            state.distances.append(d_t)
            # evicted tape positions leave the distance history too
            del state.distances[: len(state.distances) - len(tapes[0])]

            openness.append(float(gates.data.mean()))
            hidden.append(h_top.data)
            next_distances.append(d_next.data)

        logits = stack(logits_steps, axis=1)

        loss = None
        token_count = batch * steps
        if targets is not None:
            targets = np.asarray(targets).reshape(batch, steps)
            mask = None if loss_mask is None else np.asarray(loss_mask).reshape(-1)
            if mask is not None:
                token_count = int(mask.sum())
            loss = cross_entropy(reshape(logits, (batch * steps, self.vocab_size)), targets.reshape(-1), mask)

        state.embeddings = self._embedding_tail(state.embeddings, emb, batch)
        state.position += steps

        diagnostics = {
            "distances": distances.data.copy(),
            "gate_openness": np.asarray(openness),
            "hidden": np.stack(hidden, axis=1),
            "next_distances": np.stack(next_distances, axis=1),
        }
        return ForwardResult(
            loss=loss,
            carry=state.detach(),
            logits=logits,
            diagnostics=diagnostics,
            token_count=token_count,
        )

    __call__ = forward

    def _embedding_tail(self, previous: Optional[Tensor], emb: Tensor, batch: int) -> Optional[Tensor]:
        pad = self.config.look_back - 1
        if pad == 0:
            return None
        if previous is None:
            previous = zeros((batch, pad, self.config.embedding_size), self.dtype)
        joined = np.concatenate([previous.data, emb.data], axis=1)
        return Tensor(joined[:, -pad:, :], dtype=self.dtype)

    # ------------------------------------------------------------------
    # Sentence mode
    # ------------------------------------------------------------------

    def sentence_distances(self, sentences: Sequence[Sequence[int]]) -> List[np.ndarray]:
        """
        Distances of independent sentences from a fresh zero state.

        Sentences are padded with id 0 into one batch; the convolution is
        causal, so padding never reaches the unpadded prefix.
        """
        if not sentences:
            return []
        lengths = [len(s) for s in sentences]
        if min(lengths) == 0:
            raise CorpusError("Cannot compute distances of an empty sentence")
        padded = np.full((len(sentences), max(lengths)), PAD_ID, dtype=np.int64)
        for row, sentence in enumerate(sentences):
            padded[row, : len(sentence)] = sentence
        if padded.max() >= self.vocab_size:
            raise CorpusError(f"Token id outside [0, {self.vocab_size})", max_id=int(padded.max()))

        with no_recording():
            emb = embedding(self.embedding, padded)
            distances = self.parsing.compute_distances(emb)
        return [distances.data[row, :length].copy() for row, length in enumerate(lengths)]

    def sentence_forward(self, sentence: Sequence[int]) -> np.ndarray:
        return self.sentence_distances([sentence])[0]
