"""
Checkpoint files

Layout: the magic line "PRPN1\\n", one UTF-8 JSON header line, then the raw
little-endian payload of every tensor in manifest order.
"""

import json
import logging
import os
import queue
import threading
from collections import OrderedDict
from dataclasses import dataclass
from typing import Any, Dict, Optional

import numpy as np

from errors import CheckpointError

logger = logging.getLogger(__name__)

MAGIC = b"PRPN1\n"
FORMAT_VERSION = 1

_DTYPE_CODES = {"f32": np.dtype("<f4"), "f64": np.dtype("<f8")}
_CODE_OF = {np.dtype("float32"): "f32", np.dtype("float64"): "f64"}


@dataclass
class Checkpoint:
    config: Dict[str, Any]
    tensors: "OrderedDict[str, np.ndarray]"
    vocab: Optional[Dict[str, Any]] = None
    trainer_state: Optional[Dict[str, Any]] = None
    format_version: int = FORMAT_VERSION


def save_checkpoint(
    path: str,
    config: Dict[str, Any],
    tensors: Dict[str, np.ndarray],
    vocab: Optional[Dict[str, Any]] = None,
    trainer_state: Optional[Dict[str, Any]] = None,
):
    """Write a checkpoint atomically (temp file + rename)"""
    manifest = []
    payloads = []
    for name, value in tensors.items():
        value = np.asarray(value)
        code = _CODE_OF.get(value.dtype, "f32")
        payloads.append(np.ascontiguousarray(value, dtype=_DTYPE_CODES[code]))
        manifest.append({"name": name, "shape": list(value.shape), "dtype": code})

    header = {
        "format_version": FORMAT_VERSION,
        "config": config,
        "tensors": manifest,
        "vocab": vocab,
        "trainer_state": trainer_state,
    }
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    tmp_path = f"{path}.tmp"
    with open(tmp_path, "wb") as f:
        f.write(MAGIC)
        f.write(json.dumps(header, separators=(",", ":")).encode("utf-8"))
        f.write(b"\n")
        for payload in payloads:
            f.write(payload.tobytes(order="C"))
    os.replace(tmp_path, path)


def load_checkpoint(path: str) -> Checkpoint:
    if not os.path.exists(path):
        raise CheckpointError(f"Checkpoint '{path}' does not exist", path=path)
    with open(path, "rb") as f:
        magic = f.read(len(MAGIC))
        if magic != MAGIC:
            raise CheckpointError(f"'{path}' is not a PRPN checkpoint (bad magic)", path=path)
        try:
            header = json.loads(f.readline().decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CheckpointError(f"Unreadable checkpoint header in '{path}': {exc}", path=path) from None
        if header.get("format_version") != FORMAT_VERSION:
            raise CheckpointError(
                f"Unsupported checkpoint version {header.get('format_version')}", path=path
            )

        tensors: "OrderedDict[str, np.ndarray]" = OrderedDict()
        for entry in header["tensors"]:
            dtype = _DTYPE_CODES.get(entry["dtype"])
            if dtype is None:
                raise CheckpointError(f"Unknown tensor dtype '{entry['dtype']}'", path=path)
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            raw = f.read(count * dtype.itemsize)
            if len(raw) != count * dtype.itemsize:
                raise CheckpointError(f"Truncated payload for tensor '{entry['name']}'", path=path)
            tensors[entry["name"]] = np.frombuffer(raw, dtype=dtype).reshape(shape).astype(dtype.newbyteorder("="))
        if f.read(1):
            raise CheckpointError(f"Trailing bytes after the last tensor in '{path}'", path=path)

    return Checkpoint(
        config=header["config"],
        tensors=tensors,
        vocab=header.get("vocab"),
        trainer_state=header.get("trainer_state"),
        format_version=header["format_version"],
    )


class CheckpointWriter:
    """Background thread writing snapshot copies while training continues"""

    def __init__(self, max_pending: int = 2):
        self._queue: "queue.Queue" = queue.Queue(maxsize=max_pending)
        self._error: Optional[BaseException] = None
        self._thread = threading.Thread(target=self._run, name="checkpoint-writer", daemon=True)
        self._thread.start()

    def _run(self):
        while True:
            job = self._queue.get()
            if job is None:
                self._queue.task_done()
                return
            path, kwargs = job
            try:
                save_checkpoint(path, **kwargs)
                logger.info("💾 Saved checkpoint %s", path)
            except BaseException as exc:
                self._error = exc
            finally:
                self._queue.task_done()

    def submit(self, path: str, **kwargs):
        """Queue a write; tensors must already be copies the caller won't mutate"""
        self._raise_pending()
        self._queue.put((path, kwargs))

    def flush(self):
        self._queue.join()
        self._raise_pending()

    def close(self):
        self._queue.put(None)
        self._thread.join()
        self._raise_pending()

    def _raise_pending(self):
        if self._error is not None:
            error, self._error = self._error, None
            raise CheckpointError(f"Background checkpoint write failed: {error}") from error
