"""
Training loop: Adam with decoupled weight decay, gradient clipping,
learning-rate decay on validation plateaus and end-of-epoch checkpoints.
"""

import json
import logging
import math
import os
import queue
import sys
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import Any, Dict, Iterable, Iterator, List, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

# Add parent directory to path to import config.py from project root
parent_dir = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
if parent_dir not in sys.path:
    sys.path.insert(0, parent_dir)

from checkpoint import CheckpointWriter, load_checkpoint
from config import Config
from corpus import Vocab
from errors import CheckpointError, CorpusError, NumericalError
from lm_model import PAD_ID, PRPNLanguageModel, rng_streams
from run_config import ExperimentConfig
from tensor_core import Tensor, backward, no_recording, recording

logger = logging.getLogger(__name__)


# ============================================================================
# Optimizer
# ============================================================================

class AdamOptimizer:
    """Adam with bias correction and additive weight decay: p -= lr * (m^/(sqrt(v^)+eps) + wd * p)"""

    def __init__(
        self,
        params: Dict[str, Tensor],
        lr: float = 0.003,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
        weight_decay: float = 1e-6,
    ):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self.m = {name: np.zeros_like(p.data) for name, p in params.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in params.items()}

    def step(self, grads: Optional[Dict[str, np.ndarray]] = None):
        if grads is None:
            grads = {name: p.grad for name, p in self.params.items()}
        for name, grad in grads.items():
            if grad is not None and not np.all(np.isfinite(grad)):
                raise NumericalError(
                    f"Non-finite gradient for '{name}', step aborted",
                    parameter=name,
                    step=self.step_count + 1,
                )

        self.step_count += 1
        correction1 = 1.0 - self.beta1 ** self.step_count
        correction2 = 1.0 - self.beta2 ** self.step_count
        for name, param in self.params.items():
            grad = grads.get(name)
            if grad is None:
                continue
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * grad
            v *= self.beta2
            v += (1.0 - self.beta2) * grad * grad
            m_hat = m / correction1
            v_hat = v / correction2
            param.data -= (self.lr * (m_hat / (np.sqrt(v_hat) + self.eps) + self.weight_decay * param.data)).astype(
                param.dtype, copy=False
            )

    def moment_tensors(self) -> Dict[str, np.ndarray]:
        tensors = {}
        for name in self.params:
            tensors[f"adam.m.{name}"] = self.m[name].copy()
            tensors[f"adam.v.{name}"] = self.v[name].copy()
        return tensors

    def state_dict(self) -> Dict[str, Any]:
        return {"step": self.step_count, "lr": self.lr}

    def load_state(self, state: Dict[str, Any], tensors: Dict[str, np.ndarray]):
        self.step_count = int(state["step"])
        self.lr = float(state["lr"])
        for name in self.params:
            try:
                self.m[name][...] = tensors[f"adam.m.{name}"]
                self.v[name][...] = tensors[f"adam.v.{name}"]
            except KeyError:
                raise CheckpointError(f"Checkpoint lacks optimizer moments for '{name}'") from None


def clip_gradients(grads: Sequence[np.ndarray], max_norm: float = 1.0) -> Tuple[List[np.ndarray], float]:
    """
    Scale all gradients by max_norm / norm when their global L2 norm exceeds max_norm.

    Returns:
        (clipped gradients, global norm before clipping)
    """
    total = math.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads))
    if total > max_norm:
        factor = max_norm / total
        return [g * g.dtype.type(factor) for g in grads], total
    return list(grads), total


@dataclass
class PlateauSchedule:
    """Multiply lr by `factor` after `patience` checkpoints without improvement"""

    lr: float
    factor: float = 0.1
    patience: int = 2
    best: float = math.inf
    bad_checkpoints: int = 0

    def observe(self, metric: float) -> bool:
        if metric < self.best:
            self.best = metric
            self.bad_checkpoints = 0
            return True
        self.bad_checkpoints += 1
        if self.bad_checkpoints >= self.patience:
            self.lr *= self.factor
            self.bad_checkpoints = 0
            logger.info("📉 No improvement for %d checkpoints, lr -> %g", self.patience, self.lr)
        return False

    def state_dict(self) -> Dict[str, Any]:
        state = asdict(self)
        state["best"] = None if math.isinf(self.best) else self.best
        return state

    @classmethod
    def from_state(cls, state: Dict[str, Any]) -> "PlateauSchedule":
        state = dict(state)
        if state.get("best") is None:
            state["best"] = math.inf
        return cls(**state)


# ============================================================================
# Batching
# ============================================================================

def batchify(ids: np.ndarray, batch_size: int) -> np.ndarray:
    """Split a token stream into batch_size contiguous rows; the remainder is dropped"""
    ids = np.asarray(ids)
    length = ids.size // batch_size
    if length < 2:
        raise CorpusError(
            f"Corpus of {ids.size} tokens is too small for one batch of {batch_size} streams",
            tokens=int(ids.size),
            batch_size=batch_size,
        )
    return ids[: length * batch_size].reshape(batch_size, length)


def stream_windows(streams: np.ndarray, bptt: int) -> Iterator[Tuple[np.ndarray, np.ndarray]]:
    """(inputs, targets) windows of at most bptt steps"""
    length = streams.shape[1]
    for start in range(0, length - 1, bptt):
        size = min(bptt, length - 1 - start)
        yield streams[:, start : start + size], streams[:, start + 1 : start + 1 + size]


def sentence_batches(
    sentences: Sequence[Sequence[int]],
    batch_size: int,
    rng: Optional[np.random.Generator] = None,
) -> Iterator[Tuple[np.ndarray, np.ndarray, np.ndarray]]:
    """Padded (inputs, targets, mask) batches of independent sentences"""
    usable = [s for s in sentences if len(s) >= 2]
    if not usable:
        raise CorpusError("No sentence has two or more tokens")
    order = rng.permutation(len(usable)) if rng is not None else np.arange(len(usable))
    for start in range(0, len(order), batch_size):
        chunk = [usable[i] for i in order[start : start + batch_size]]
        width = max(len(s) for s in chunk) - 1
        inputs = np.full((len(chunk), width), PAD_ID, dtype=np.int64)
        targets = np.full((len(chunk), width), PAD_ID, dtype=np.int64)
        mask = np.zeros((len(chunk), width), dtype=np.float64)
        for row, sentence in enumerate(chunk):
            size = len(sentence) - 1
            inputs[row, :size] = sentence[:-1]
            targets[row, :size] = sentence[1:]
            mask[row, :size] = 1.0
        yield inputs, targets, mask


class Prefetcher:
    """Produce batches on a worker thread through a bounded queue"""

    _DONE = object()

    def __init__(self, iterable: Iterable, depth: int = 2):
        self._iterable = iterable
        self._queue: "queue.Queue" = queue.Queue(maxsize=max(depth, 1))
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._produce, name="batch-prefetch", daemon=True)

    def _put(self, item) -> bool:
        while not self._stop.is_set():
            try:
                self._queue.put(item, timeout=0.1)
                return True
            except queue.Full:
                continue
        return False

    def _produce(self):
        try:
            for item in self._iterable:
                if not self._put(item):
                    return
        except BaseException as exc:
            self._put(exc)
            return
        self._put(self._DONE)

    def __enter__(self) -> "Prefetcher":
        self._thread.start()
        return self

    def __exit__(self, *exc_info):
        self._stop.set()
        self._thread.join()

    def __iter__(self):
        while True:
            item = self._queue.get()
            if item is self._DONE:
                return
            if isinstance(item, BaseException):
                raise item
            yield item


# ============================================================================
# Metrics
# ============================================================================

def metric_name_for(mode: str) -> str:
    return "bpc" if mode == "char" else "ppl"


def nll_to_metric(nll: float, mode: str) -> float:
    """BPC = NLL / ln 2 for characters, PPL = exp(NLL) for words"""
    if mode == "char":
        return nll / math.log(2.0)
    return math.exp(nll)


def evaluate_stream(
    model: PRPNLanguageModel,
    ids: np.ndarray,
    batch_size: int,
    bptt: int,
    workers: int = 1,
) -> float:
    """
    Mean per-token NLL of a stream in eval mode.

    Rows of the batchified stream are sharded across worker threads; each shard
    carries its own state, so the result does not depend on the worker count.
    """
    streams = batchify(ids, batch_size)
    shards = [shard for shard in np.array_split(streams, min(max(workers, 1), batch_size), axis=0) if shard.size]

    def run(shard: np.ndarray) -> Tuple[float, int]:
        total, count, carry = 0.0, 0, None
        with no_recording():
            for inputs, targets in stream_windows(shard, bptt):
                result = model.forward(inputs, targets, carry=carry, train=False)
                carry = result.carry
                total += result.loss.item() * result.token_count
                count += result.token_count
        return total, count

    if len(shards) == 1:
        results = [run(shards[0])]
    else:
        with ThreadPoolExecutor(max_workers=len(shards)) as pool:
            results = list(pool.map(run, shards))
    total = sum(r[0] for r in results)
    count = sum(r[1] for r in results)
    return total / count


def evaluate_sentences(model: PRPNLanguageModel, sentences: Sequence[Sequence[int]], batch_size: int) -> float:
    total, count = 0.0, 0
    with no_recording():
        for inputs, targets, mask in sentence_batches(sentences, batch_size):
            result = model.forward(inputs, targets, train=False, loss_mask=mask)
            total += result.loss.item() * result.token_count
            count += result.token_count
    return total / count


# ============================================================================
# Trainer
# ============================================================================

@dataclass
class TrainResult:
    metric_name: str
    best_metric: float
    epochs: int
    steps: int
    lr: float
    metric_log: str
    best_checkpoint: str
    last_checkpoint: str


class Trainer:
    """Owns the model, optimizer, schedule and RNG streams of one run"""

    def __init__(
        self,
        config: ExperimentConfig,
        model: PRPNLanguageModel,
        vocab: Vocab,
        train_data,
        valid_data,
        output_dir: str,
        workers: int = Config.NUM_WORKERS,
    ):
        self.config = config
        self.model = model
        self.vocab = vocab
        self.train_data = train_data
        self.valid_data = valid_data
        self.output_dir = output_dir
        self.workers = workers

        tcfg = config.trainer
        self.params = model.named_parameters()
        self.optimizer = AdamOptimizer(
            self.params,
            lr=tcfg.lr,
            beta1=tcfg.beta1,
            beta2=tcfg.beta2,
            eps=tcfg.eps,
            weight_decay=tcfg.weight_decay,
        )
        self.schedule = PlateauSchedule(lr=tcfg.lr, factor=tcfg.lr_decay, patience=tcfg.patience)
        self.batch_rng = rng_streams(config.seed)["batches"]
        self.metric_name = metric_name_for(model.config.mode)

        self.epoch = 0
        self.global_step = 0
        os.makedirs(output_dir, exist_ok=True)
        self.metric_log_path = os.path.join(output_dir, "metrics.jsonl")
        self.best_path = os.path.join(output_dir, "best.ckpt")
        self.last_path = os.path.join(output_dir, "last.ckpt")

    # ------------------------------------------------------------------

    def _log_metric(self, epoch: int, split: str, metric_name: str, value: float, lr: float):
        record = {
            "epoch": epoch,
            "step": self.global_step,
            "split": split,
            "metric_name": metric_name,
            "value": value,
            "lr": lr,
        }
        with open(self.metric_log_path, "a", encoding="utf-8") as f:
            f.write(json.dumps(record) + "\n")

    def _trainer_state(self) -> Dict[str, Any]:
        return {
            "epoch": self.epoch,
            "global_step": self.global_step,
            "optimizer": self.optimizer.state_dict(),
            "schedule": self.schedule.state_dict(),
            "rng": {
                "dropout": self.model.dropout_rng.bit_generator.state,
                "batches": self.batch_rng.bit_generator.state,
            },
            "metric_name": self.metric_name,
        }

    def _snapshot(self) -> Dict[str, Any]:
        tensors = dict(self.model.state_dict())
        tensors.update(self.optimizer.moment_tensors())
        return {
            "config": self.config.model_dump(mode="json") | {"model": self.model.config.model_dump(mode="json")},
            "tensors": tensors,
            "vocab": self.vocab.to_dict(),
            "trainer_state": self._trainer_state(),
        }

    def resume(self, path: str):
        """Restore parameters, optimizer moments, schedule and RNG streams"""
        ckpt = load_checkpoint(path)
        state = ckpt.trainer_state
        if not state:
            raise CheckpointError(f"Checkpoint '{path}' holds no trainer state", path=path)
        self.model.load_state_dict(ckpt.tensors)
        self.optimizer.load_state(state["optimizer"], ckpt.tensors)
        self.schedule = PlateauSchedule.from_state(state["schedule"])
        self.model.dropout_rng.bit_generator.state = state["rng"]["dropout"]
        self.batch_rng.bit_generator.state = state["rng"]["batches"]
        self.epoch = int(state["epoch"])
        self.global_step = int(state["global_step"])
        self._trim_metric_log(self.epoch)
        logger.info("🔁 Resumed from %s at epoch %d, step %d", path, self.epoch, self.global_step)

    def _trim_metric_log(self, epoch: int):
        """Drop log records written after the checkpoint being resumed"""
        if not os.path.exists(self.metric_log_path):
            return
        with open(self.metric_log_path, "r", encoding="utf-8") as f:
            kept = [line for line in f if line.strip() and json.loads(line)["epoch"] <= epoch]
        with open(self.metric_log_path, "w", encoding="utf-8") as f:
            f.writelines(kept)

    # ------------------------------------------------------------------

    def _batches(self) -> Iterator:
        tcfg = self.config.trainer
        if tcfg.unit == "stream":
            return stream_windows(batchify(self.train_data, tcfg.batch_size), tcfg.bptt)
        return sentence_batches(self.train_data, tcfg.batch_size, self.batch_rng)

    def _out_of_steps(self) -> bool:
        max_steps = self.config.trainer.max_steps
        return max_steps is not None and self.global_step >= max_steps

    def train_epoch(self, epoch: int) -> float:
        """One pass over the training data; returns the mean training NLL"""
        tcfg = self.config.trainer
        names = list(self.params)
        carry = None
        interval_loss, interval_steps = 0.0, 0
        epoch_loss, epoch_steps = 0.0, 0
        show = sys.stderr.isatty()

        with Prefetcher(self._batches(), tcfg.prefetch) as batches:
            for batch in tqdm(batches, desc=f"epoch {epoch}", disable=not show, leave=False):
                if tcfg.unit == "stream":
                    inputs, targets = batch
                    mask = None
                else:
                    inputs, targets, mask = batch
                    carry = None

                self.model.zero_grad()
                with recording():
                    result = self.model.forward(inputs, targets, carry=carry, train=True, loss_mask=mask)
                    backward(result.loss)
                if tcfg.unit == "stream":
                    carry = result.carry

                grads, _ = clip_gradients([self.params[name].grad for name in names], tcfg.clip_norm)
                self.optimizer.lr = self.schedule.lr
                self.optimizer.step(dict(zip(names, grads)))
                self.global_step += 1

                loss = result.loss.item()
                interval_loss += loss
                interval_steps += 1
                epoch_loss += loss
                epoch_steps += 1
                if self.global_step % tcfg.log_interval == 0:
                    self._log_metric(epoch, "train", "loss", interval_loss / interval_steps, self.schedule.lr)
                    interval_loss, interval_steps = 0.0, 0

                if tcfg.max_steps_per_epoch is not None and epoch_steps >= tcfg.max_steps_per_epoch:
                    break
                if self._out_of_steps():
                    break

        return epoch_loss / max(epoch_steps, 1)

    def evaluate(self, data) -> float:
        tcfg = self.config.trainer
        if tcfg.unit == "stream":
            nll = evaluate_stream(self.model, data, tcfg.eval_batch_size, tcfg.bptt, self.workers)
        else:
            nll = evaluate_sentences(self.model, data, tcfg.eval_batch_size)
        return nll_to_metric(nll, self.model.config.mode)

    def train(self) -> TrainResult:
        tcfg = self.config.trainer
        if self.epoch == 0 and self.global_step == 0:
            open(self.metric_log_path, "w", encoding="utf-8").close()
        writer = CheckpointWriter()
        try:
            while self.epoch < tcfg.epochs and not self._out_of_steps():
                epoch = self.epoch + 1
                train_nll = self.train_epoch(epoch)
                metric = self.evaluate(self.valid_data)
                lr_used = self.schedule.lr
                improved = self.schedule.observe(metric)
                self.epoch = epoch

                self._log_metric(epoch, "valid", self.metric_name, metric, lr_used)
                self._log_metric(epoch, "valid", f"best_{self.metric_name}", self.schedule.best, lr_used)
                logger.info(
                    "✅ Epoch %d complete: train nll %.4f, valid %s %.4f%s",
                    epoch, train_nll, self.metric_name, metric, " (best)" if improved else "",
                )

                snapshot = self._snapshot()
                writer.submit(self.last_path, **snapshot)
                if improved:
                    writer.submit(self.best_path, **snapshot)
            writer.flush()
        finally:
            writer.close()

        return TrainResult(
            metric_name=self.metric_name,
            best_metric=self.schedule.best,
            epochs=self.epoch,
            steps=self.global_step,
            lr=self.schedule.lr,
            metric_log=self.metric_log_path,
            best_checkpoint=self.best_path,
            last_checkpoint=self.last_path,
        )
