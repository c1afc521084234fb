"""Black-box model handles: batch instance-to-logits evaluation.

Models expose logits rather than probabilities because temperature scaling is
defined on logits. Built-in handles are immutable and safe for concurrent
batch calls; the external client serializes requests per worker process.
"""

from __future__ import annotations

import json
import os
import select
import shlex
import subprocess
import threading
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import ModelTransportError, ProtocolError, as_batch, softmax


class ModelHandle:
    """Batch mapping from instances to logit vectors.

    Subclasses implement :meth:`_logits` on validated (n, d) input and must be
    deterministic and order-preserving.
    """

    name: str = "model"
    feature_count: int
    class_count: int

    def eval_logits(self, batch: np.ndarray) -> np.ndarray:
        X = as_batch(batch, self.feature_count)
        Z = np.asarray(self._logits(X), dtype=np.float64)
        if Z.shape != (X.shape[0], self.class_count):
            raise ValueError(
                f"model '{self.name}' returned shape {Z.shape}, "
                f"expected {(X.shape[0], self.class_count)}"
            )
        if not np.all(np.isfinite(Z)):
            raise ValueError(f"model '{self.name}' returned non-finite logits")
        return Z

    def eval_probs(self, batch: np.ndarray) -> np.ndarray:
        return softmax(self.eval_logits(batch))

    def _logits(self, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class LinearSoftmaxModel(ModelHandle):
    """Logits = W x + b with W of shape (K, d)."""

    def __init__(self, weights: np.ndarray, bias: np.ndarray, name: str = "linear"):
        W = np.asarray(weights, dtype=np.float64)
        b = np.asarray(bias, dtype=np.float64)
        if W.ndim != 2 or b.ndim != 1 or b.shape[0] != W.shape[0]:
            raise ValueError("weights must be (K, d) and bias (K,)")
        if not (np.all(np.isfinite(W)) and np.all(np.isfinite(b))):
            raise ValueError("weights and bias must be finite")
        self.weights = W
        self.bias = b
        self.name = name
        self.class_count, self.feature_count = W.shape

    def _logits(self, X: np.ndarray) -> np.ndarray:
        return X @ self.weights.T + self.bias

    @classmethod
    def from_json_file(cls, path: str | Path, name: str | None = None) -> "LinearSoftmaxModel":
        obj = json.loads(Path(path).read_text())
        return cls(np.asarray(obj["weights"]), np.asarray(obj["bias"]),
                   name=name or Path(path).stem)

    def to_json_file(self, path: str | Path) -> None:
        obj = {
            "weights": [[float(v) for v in row] for row in self.weights],
            "bias": [float(v) for v in self.bias],
        }
        Path(path).write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n")


class TableModel(ModelHandle):
    """Exact lookup from instance value-tuples to logits.

    Unseen tuples fall back to ``default_logits`` (all zeros unless given:
    a uniform prediction).
    """

    def __init__(
        self,
        feature_count: int,
        class_count: int,
        table: dict[tuple[float, ...], np.ndarray],
        default_logits: np.ndarray | None = None,
        name: str = "table",
    ):
        self.feature_count = feature_count
        self.class_count = class_count
        self.name = name
        if default_logits is None:
            default_logits = np.zeros(class_count)
        self.default_logits = np.asarray(default_logits, dtype=np.float64)
        if self.default_logits.shape != (class_count,) or not np.all(np.isfinite(self.default_logits)):
            raise ValueError("default logits must be K finite reals")
        self.table: dict[tuple[float, ...], np.ndarray] = {}
        for key, logits in table.items():
            z = np.asarray(logits, dtype=np.float64)
            if z.shape != (class_count,) or not np.all(np.isfinite(z)):
                raise ValueError(f"stored logits for {key} must be K finite reals")
            self.table[tuple(float(v) for v in key)] = z

    def _logits(self, X: np.ndarray) -> np.ndarray:
        out = np.empty((X.shape[0], self.class_count))
        for i, row in enumerate(X):
            out[i] = self.table.get(tuple(float(v) for v in row), self.default_logits)
        return out

    def to_json_file(self, path: str | Path) -> None:
        entries = [
            [list(key), [float(v) for v in logits]]
            for key, logits in sorted(self.table.items())
        ]
        obj = {
            "features": self.feature_count,
            "classes": self.class_count,
            "default": [float(v) for v in self.default_logits],
            "entries": entries,
        }
        Path(path).write_text(json.dumps(obj, sort_keys=True) + "\n")

    @classmethod
    def from_json_file(cls, path: str | Path, name: str | None = None) -> "TableModel":
        obj = json.loads(Path(path).read_text())
        table = {tuple(float(v) for v in key): np.asarray(logits, dtype=np.float64)
                 for key, logits in obj["entries"]}
        return cls(
            feature_count=int(obj["features"]),
            class_count=int(obj["classes"]),
            table=table,
            default_logits=np.asarray(obj.get("default", [0.0] * int(obj["classes"]))),
            name=name or Path(path).stem,
        )


class MiscalibrationWrapper(ModelHandle):
    """Scales and offsets an inner model's logits: z -> c * z + offset.

    With offset zero this sharpens (c > 1) or flattens (c < 1) predictions
    while preserving the argmax, manufacturing a controlled calibration error.
    """

    def __init__(self, inner: ModelHandle, scale: float, offset: np.ndarray | None = None):
        if not scale > 0:
            raise ValueError("scale must be positive")
        self.inner = inner
        self.scale = float(scale)
        if offset is None:
            offset = np.zeros(inner.class_count)
        self.offset = np.asarray(offset, dtype=np.float64)
        if self.offset.shape != (inner.class_count,) or not np.all(np.isfinite(self.offset)):
            raise ValueError("offset must be K finite reals")
        self.name = f"{inner.name}*{self.scale:g}"
        self.feature_count = inner.feature_count
        self.class_count = inner.class_count

    def _logits(self, X: np.ndarray) -> np.ndarray:
        return self.scale * self.inner.eval_logits(X) + self.offset


class LevelMiscalibrationWrapper(ModelHandle):
    """Sharpens logits in proportion to how perturbed the input looks.

    The scale interpolates linearly from 1 on an input with no baseline-valued
    (zero) features up to ``max_scale`` on a fully zeroed input. This mimics
    predictors that stay confident while their evidence is occluded: the
    calibration error grows with the perturbation level, which is exactly the
    failure mode bin-wise temperatures correct.
    """

    def __init__(self, inner: ModelHandle, max_scale: float):
        if not max_scale > 0:
            raise ValueError("max scale must be positive")
        self.inner = inner
        self.max_scale = float(max_scale)
        self.name = f"{inner.name}^level{self.max_scale:g}"
        self.feature_count = inner.feature_count
        self.class_count = inner.class_count

    def _logits(self, X: np.ndarray) -> np.ndarray:
        zero_share = (np.abs(X) <= 1e-9).mean(axis=1)
        scale = 1.0 + (self.max_scale - 1.0) * zero_share
        return scale[:, None] * self.inner.eval_logits(X)


class _LineChannel:
    """Newline-delimited JSON over a child process's stdin/stdout.

    Reads with an explicit timeout via select on the raw pipe, keeping an
    internal buffer so partial lines survive across calls.
    """

    def __init__(self, command: str, timeout: float):
        self.command = command
        self.timeout = timeout
        try:
            self.proc = subprocess.Popen(
                shlex.split(command),
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                bufsize=0,
            )
        except OSError as exc:
            raise ModelTransportError(f"cannot launch model process: {exc}") from exc
        self._buf = bytearray()
        self.lines_read = 0
        self.lock = threading.Lock()

    def send(self, obj: dict) -> None:
        self.send_raw((json.dumps(obj) + "\n").encode("utf-8"))

    def send_raw(self, data: bytes) -> None:
        try:
            self.proc.stdin.write(data)
            self.proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise ModelTransportError(f"model process closed stdin pipe: {exc}") from exc

    def recv_line(self) -> tuple[str, int]:
        """Next reply line and its 1-based line number in the reply stream."""
        deadline = time.monotonic() + self.timeout
        fd = self.proc.stdout.fileno()
        while True:
            newline = self._buf.find(b"\n")
            if newline >= 0:
                line = self._buf[:newline].decode("utf-8")
                del self._buf[: newline + 1]
                self.lines_read += 1
                return line, self.lines_read
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise ModelTransportError(
                    f"timeout after {self.timeout}s waiting for model reply"
                )
            ready, _, _ = select.select([fd], [], [], remaining)
            if not ready:
                continue
            chunk = os.read(fd, 65536)
            if not chunk:
                code = self.proc.poll()
                raise ModelTransportError(
                    f"model process closed its output (exit code {code})"
                )
            self._buf.extend(chunk)

    def recv_json(self) -> tuple[dict, int]:
        line, line_no = self.recv_line()
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ProtocolError(f"reply line {line_no} is not valid JSON: {exc}") from exc
        if not isinstance(obj, dict):
            raise ProtocolError(f"reply line {line_no} is not a JSON object")
        return obj, line_no

    def close(self, graceful: bool = True) -> int | None:
        try:
            if graceful and self.proc.poll() is None:
                self.send({"op": "shutdown"})
        except ModelTransportError:
            pass
        try:
            self.proc.stdin.close()
        except OSError:
            pass
        try:
            self.proc.wait(timeout=5.0)
        except subprocess.TimeoutExpired:
            self.proc.kill()
            self.proc.wait()
        return self.proc.returncode


@dataclass(frozen=True)
class ModelInfo:
    name: str
    feature_count: int
    class_count: int


def _validate_hello(obj: dict, line_no: int) -> ModelInfo:
    for field_name in ("name", "features", "classes"):
        if field_name not in obj:
            raise ProtocolError(f"hello reply (line {line_no}) missing field '{field_name}'")
    name, d, k = obj["name"], obj["features"], obj["classes"]
    if not isinstance(name, str):
        raise ProtocolError(f"hello reply (line {line_no}): 'name' must be a string")
    if not isinstance(d, int) or isinstance(d, bool) or d < 1:
        raise ProtocolError(f"hello reply (line {line_no}): 'features' must be a positive integer")
    if not isinstance(k, int) or isinstance(k, bool) or k < 2:
        raise ProtocolError(f"hello reply (line {line_no}): 'classes' must be an integer >= 2")
    return ModelInfo(name, d, k)


class ExternalModelClient(ModelHandle):
    """Model hosted by an external process speaking the NDJSON protocol.

    One request is in flight per worker process; batches are split across
    workers and reassembled in input order. Use as a context manager or call
    :meth:`close` to shut the workers down.
    """

    def __init__(self, command: str, timeout: float = 30.0, workers: int = 1):
        if workers < 1:
            raise ValueError("need at least one worker")
        self.command = command
        self.timeout = timeout
        self._channels: list[_LineChannel] = []
        self._id_lock = threading.Lock()
        self._next_id = 0
        info = None
        try:
            for _ in range(workers):
                chan = _LineChannel(command, timeout)
                chan.send({"op": "hello"})
                obj, line_no = chan.recv_json()
                worker_info = _validate_hello(obj, line_no)
                if info is None:
                    info = worker_info
                elif worker_info != info:
                    raise ProtocolError("workers disagree on hello metadata")
                self._channels.append(chan)
        except Exception:
            self.close()
            raise
        self.info = info
        self.name = info.name
        self.feature_count = info.feature_count
        self.class_count = info.class_count

    def __enter__(self) -> "ExternalModelClient":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def close(self) -> None:
        for chan in self._channels:
            chan.close()
        self._channels = []

    def _take_id(self) -> int:
        with self._id_lock:
            rid = self._next_id
            self._next_id += 1
            return rid

    def _request_chunk(self, chan: _LineChannel, chunk: np.ndarray) -> np.ndarray:
        rid = self._take_id()
        with chan.lock:
            chan.send({"op": "logits", "id": rid, "batch": [[float(v) for v in row] for row in chunk]})
            obj, line_no = chan.recv_json()
        if "error" in obj:
            raise ProtocolError(f"model error reply (line {line_no}): {obj['error']}", rid)
        if obj.get("id") != rid:
            raise ProtocolError(
                f"reply line {line_no} carries id {obj.get('id')!r}, expected {rid}", rid
            )
        logits = obj.get("logits")
        if not isinstance(logits, list) or len(logits) != len(chunk):
            raise ProtocolError(
                f"reply line {line_no}: 'logits' must list one row per batch instance", rid
            )
        out = np.empty((len(chunk), self.class_count))
        for i, row in enumerate(logits):
            if not isinstance(row, list) or len(row) != self.class_count:
                raise ProtocolError(f"reply line {line_no}: logits row {i} has wrong length", rid)
            for j, v in enumerate(row):
                if isinstance(v, bool) or not isinstance(v, (int, float)) or not np.isfinite(v):
                    raise ProtocolError(
                        f"reply line {line_no}: logits entry ({i},{j}) is not a finite number", rid
                    )
                out[i, j] = float(v)
        return out

    def _logits(self, X: np.ndarray) -> np.ndarray:
        if not self._channels:
            raise ModelTransportError("client is closed")
        n = X.shape[0]
        if n == 0:
            return np.empty((0, self.class_count))
        workers = min(len(self._channels), n)
        bounds = np.linspace(0, n, workers + 1).astype(int)
        chunks = [(w, X[bounds[w]:bounds[w + 1]]) for w in range(workers) if bounds[w] < bounds[w + 1]]
        if len(chunks) == 1:
            w, chunk = chunks[0]
            return self._request_chunk(self._channels[w], chunk)
        results: list[np.ndarray | None] = [None] * len(chunks)
        errors: list[Exception] = []

        def run(slot: int, worker: int, chunk: np.ndarray) -> None:
            try:
                results[slot] = self._request_chunk(self._channels[worker], chunk)
            except Exception as exc:
                errors.append(exc)

        threads = [
            threading.Thread(target=run, args=(slot, w, chunk))
            for slot, (w, chunk) in enumerate(chunks)
        ]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        if errors:
            raise errors[0]
        return np.concatenate([r for r in results if r is not None], axis=0)


def handshake(command: str, timeout: float = 30.0) -> ModelInfo:
    """Launch an external model, exchange hello, and shut it down again."""
    chan = _LineChannel(command, timeout)
    try:
        chan.send({"op": "hello"})
        obj, line_no = chan.recv_json()
        return _validate_hello(obj, line_no)
    finally:
        chan.close()
