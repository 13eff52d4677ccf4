"""Parameter registry, bias-corrected Adam, and checkpoint serialization.

Checkpoint format FUSN1 (little-endian):

    magic   b"FUSN1"
    count   u64                           number of records
    record  u64 name_len | name utf-8 | u64 ndim | u64 dims[ndim] | f64 payload

Trainable parameters use plain names. Optimizer state and auxiliary
constants live under reserved "!" prefixes ("!adam.m.<name>",
"!adam.v.<name>", "!adam.t.<name>", "!extra.<key>") so a reload restores
training bit-exactly. Payloads are raw float64 bytes, hence the round
trip preserves every bit including negative zero.
"""

from __future__ import annotations

import struct

import numpy as np

from ..errors import CheckpointParseError, ShapeError
from .tensor import Tensor

CHECKPOINT_MAGIC = b"FUSN1"
_U64 = struct.Struct("<Q")


class ParamStore:
    """Ordered name -> Tensor registry plus per-parameter Adam state."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self._adam_m: dict[str, np.ndarray] = {}
        self._adam_v: dict[str, np.ndarray] = {}
        self._adam_t: dict[str, int] = {}

    def add(self, name: str, data) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter name {name!r}")
        if name.startswith("!"):
            raise ValueError(f"parameter name {name!r} uses the reserved prefix '!'")
        t = data if isinstance(data, Tensor) else Tensor(data)
        t.requires_grad = True
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def tensors(self) -> list[Tensor]:
        return list(self._params.values())

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.zero_grad()

    def scale_grads(self, factor: float) -> None:
        for t in self._params.values():
            if t.grad is not None:
                t.grad *= factor

    def param_count(self) -> int:
        return sum(t.data.size for t in self._params.values())

    def copy_values(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self._params.items()}

    def load_values(self, values: dict[str, np.ndarray]) -> None:
        for name, arr in values.items():
            t = self._params[name]
            if t.data.shape != arr.shape:
                raise ShapeError(f"parameter {name!r}: shape {arr.shape} != {t.data.shape}")
            t.data = arr.copy()


def adam_step(store: ParamStore, lr: float, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> None:
    """One bias-corrected Adam update on every parameter that has a gradient.

    From a fresh state the first update is lr * g / (|g| + eps), i.e. close
    to a signed step of size lr per coordinate.
    """
    if lr < 0:
        raise ValueError(f"learning rate must be >= 0, got {lr}")
    for name, p in store._params.items():
        if p.grad is None:
            continue
        g = p.grad
        m = store._adam_m.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            store._adam_m[name] = m
            store._adam_v[name] = np.zeros_like(p.data)
            store._adam_t[name] = 0
        v = store._adam_v[name]
        t = store._adam_t[name] + 1
        store._adam_t[name] = t
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1 ** t)
        v_hat = v / (1.0 - beta2 ** t)
        p.data = p.data - lr * m_hat / (np.sqrt(v_hat) + eps)


def _write_record(f, name: str, arr: np.ndarray) -> None:
    payload = np.ascontiguousarray(arr, dtype="<f8")
    encoded = name.encode("utf-8")
    f.write(_U64.pack(len(encoded)))
    f.write(encoded)
    f.write(_U64.pack(payload.ndim))
    for d in payload.shape:
        f.write(_U64.pack(d))
    f.write(payload.tobytes())


def save_checkpoint(store: ParamStore, path, extras: dict[str, np.ndarray] | None = None) -> None:
    """Write parameters, Adam state, and extra constant arrays to one file."""
    records: list[tuple[str, np.ndarray]] = []
    for name, p in store._params.items():
        records.append((name, p.data))
    for name in store._adam_m:
        records.append((f"!adam.m.{name}", store._adam_m[name]))
        records.append((f"!adam.v.{name}", store._adam_v[name]))
        records.append((f"!adam.t.{name}", np.array(float(store._adam_t[name]))))
    for key, arr in (extras or {}).items():
        records.append((f"!extra.{key}", np.asarray(arr, dtype=np.float64)))
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(_U64.pack(len(records)))
        for name, arr in records:
            _write_record(f, name, arr)


class _Reader:
    def __init__(self, blob: bytes, path):
        self.blob = blob
        self.pos = 0
        self.path = path

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.blob):
            raise CheckpointParseError(f"{self.path}: truncated {what} "
                                       f"(needed {n} bytes at offset {self.pos})")
        out = self.blob[self.pos:self.pos + n]
        self.pos += n
        return out

    def u64(self, what: str) -> int:
        return _U64.unpack(self.take(8, what))[0]


def load_checkpoint(path) -> tuple[ParamStore, dict[str, np.ndarray]]:
    """Rebuild a ParamStore (with optimizer state) and the extras mapping."""
    with open(path, "rb") as f:
        blob = f.read()
    r = _Reader(blob, path)
    magic = r.take(len(CHECKPOINT_MAGIC), "magic")
    if magic != CHECKPOINT_MAGIC:
        raise CheckpointParseError(f"{path}: bad magic {magic!r}, expected {CHECKPOINT_MAGIC!r}")
    count = r.u64("record count")
    store = ParamStore()
    adam: dict[str, dict[str, np.ndarray]] = {"m": {}, "v": {}, "t": {}}
    extras: dict[str, np.ndarray] = {}
    for idx in range(count):
        name_len = r.u64(f"record {idx} name length")
        name = r.take(name_len, f"record {idx} name").decode("utf-8")
        ndim = r.u64(f"record {idx} ndim")
        if ndim > 8:
            raise CheckpointParseError(f"{path}: record {name!r} has implausible ndim {ndim}")
        shape = tuple(r.u64(f"record {idx} dim") for _ in range(ndim))
        n_items = 1
        for d in shape:
            n_items *= d
        raw = r.take(8 * n_items, f"record {name!r} payload")
        arr = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
        if name.startswith("!adam."):
            kind, pname = name[6:].split(".", 1)
            adam[kind][pname] = arr
        elif name.startswith("!extra."):
            extras[name[7:]] = arr
        elif name.startswith("!"):
            raise CheckpointParseError(f"{path}: unknown reserved record {name!r}")
        else:
            store.add(name, arr)
    if r.pos != len(blob):
        raise CheckpointParseError(f"{path}: {len(blob) - r.pos} trailing bytes after records")
    for pname, arr in adam["m"].items():
        if pname not in store:
            raise CheckpointParseError(f"{path}: optimizer state for unknown parameter {pname!r}")
        store._adam_m[pname] = arr
        store._adam_v[pname] = adam["v"][pname]
        store._adam_t[pname] = int(adam["t"][pname].reshape(-1)[0])
    return store, extras
