"""A small dense-network core: layers, embeddings, losses, reverse-mode gradients, Adam, checkpoints.

Networks are fixed stacks of dense layers. An optional set of embedding tables
is looked up and concatenated to the input before the first layer. Arrays are
float32 by default; every routine works in the dtype of the parameters, which
lets the gradient checks run a float64 copy.
"""
from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

ACTIVATIONS = ("silu", "relu", "none")


@dataclass(frozen=True)
class Dense:
    n_in: int
    n_out: int
    activation: str = "none"


@dataclass(frozen=True)
class Embedding:
    name: str
    n_rows: int
    dim: int


@dataclass(frozen=True)
class NetSpec:
    layers: tuple[Dense, ...]
    embeddings: tuple[Embedding, ...] = ()

    def __post_init__(self):
        if not self.layers:
            raise ValueError("NetSpec needs at least one layer")
        for a, b in zip(self.layers, self.layers[1:]):
            if a.n_out != b.n_in:
                raise ValueError(f"layer dims do not chain: {a.n_out} -> {b.n_in}")
        for layer in self.layers:
            if layer.activation not in ACTIVATIONS:
                raise ValueError(f"unknown activation {layer.activation!r}")
        if self.input_dim <= 0:
            raise ValueError("embeddings leave no room for the plain input")

    @property
    def input_dim(self) -> int:
        return self.layers[0].n_in - sum(e.dim for e in self.embeddings)

    @property
    def output_dim(self) -> int:
        return self.layers[-1].n_out

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        shapes = {}
        for e in self.embeddings:
            shapes[f"emb.{e.name}"] = (e.n_rows, e.dim)
        for i, layer in enumerate(self.layers):
            shapes[f"l{i}.W"] = (layer.n_in, layer.n_out)
            shapes[f"l{i}.b"] = (layer.n_out,)
        return shapes


def mlp(sizes, hidden: str, out: str = "none", embeddings=()) -> NetSpec:
    layers = [Dense(a, b, hidden) for a, b in zip(sizes[:-2], sizes[1:-1])]
    layers.append(Dense(sizes[-2], sizes[-1], out))
    return NetSpec(tuple(layers), tuple(embeddings))


class ParamStore:
    """Named parameter arrays with a shape registry and a mutation counter."""

    def __init__(self, arrays: dict[str, np.ndarray] | None = None, shapes=None):
        self.arrays: dict[str, np.ndarray] = {}
        self.shapes: dict[str, tuple[int, ...]] = {}
        self.version = 0
        for name, arr in (arrays or {}).items():
            self.add(name, arr, (shapes or {}).get(name))

    def add(self, name: str, arr, shape=None) -> None:
        arr = np.asarray(arr)
        shape = tuple(shape) if shape is not None else arr.shape
        if arr.shape != shape:
            raise ValueError(f"{name}: array shape {arr.shape} != registered {shape}")
        self.arrays[name] = arr
        self.shapes[name] = shape

    def __getitem__(self, name):
        return self.arrays[name]

    def __contains__(self, name):
        return name in self.arrays

    def names(self):
        return list(self.arrays)

    @property
    def n_params(self) -> int:
        return int(sum(int(np.prod(s)) for s in self.shapes.values()))

    def copy(self, dtype=None) -> "ParamStore":
        return ParamStore({k: np.array(v, dtype=dtype or v.dtype) for k, v in self.arrays.items()}, self.shapes)

    def subset(self, prefix: str) -> "ParamStore":
        return ParamStore({k[len(prefix):]: v for k, v in self.arrays.items() if k.startswith(prefix)})

    def bit_equal(self, other: "ParamStore") -> bool:
        return self.names() == other.names() and all(
            self.arrays[k].dtype == other.arrays[k].dtype and np.array_equal(self.arrays[k], other.arrays[k])
            for k in self.arrays)


def _rng_for(seed: int, name: str) -> np.random.Generator:
    return np.random.default_rng([seed, zlib.crc32(name.encode())])


def init_params(spec: NetSpec, seed: int) -> ParamStore:
    """Glorot-uniform weights and embedding rows, zero biases; one RNG stream per array name."""
    store = ParamStore()
    for name, shape in spec.param_shapes().items():
        if name.endswith(".b"):
            arr = np.zeros(shape, dtype=np.float32)
        else:
            limit = np.sqrt(6.0 / (shape[0] + shape[1]))
            arr = _rng_for(seed, name).uniform(-limit, limit, shape).astype(np.float32)
        store.add(name, arr)
    return store


# -- forward / backward ----------------------------------------------------------

class ShapeError(ValueError):
    pass


class StaleTraceError(RuntimeError):
    pass


@dataclass
class Trace:
    inputs: list  # input to each layer
    pre: list  # pre-activation of each layer
    aux: dict
    params_id: int
    version: int


def _act(name, z):
    if name == "relu":
        return np.maximum(z, 0)
    if name == "silu":
        return z / (1 + np.exp(-z))
    return z


def _act_grad(name, z, g):
    if name == "relu":
        return g * (z > 0)
    if name == "silu":
        s = 1 / (1 + np.exp(-z))
        return g * (s * (1 + z * (1 - s)))
    return g


def forward(spec: NetSpec, params: ParamStore, x, aux: dict | None = None):
    """Run the net on a batch ``x`` of shape (N, input_dim).

    ``aux`` maps embedding names to integer row indices (N,); the looked-up rows
    are appended to the input. Returns (output, trace).
    """
    x = np.asarray(x)
    if x.ndim != 2 or x.shape[1] != spec.input_dim:
        raise ShapeError(f"expected input (N, {spec.input_dim}), got {x.shape}")
    aux = aux or {}
    parts = [x]
    for e in spec.embeddings:
        if e.name not in aux:
            raise ShapeError(f"missing embedding indices for {e.name!r}")
        idx = np.asarray(aux[e.name])
        if idx.shape != (x.shape[0],):
            raise ShapeError(f"embedding indices for {e.name!r} must have shape ({x.shape[0]},)")
        parts.append(params[f"emb.{e.name}"][idx])
    h = np.concatenate(parts, axis=1) if len(parts) > 1 else x
    inputs, pre = [], []
    for i, layer in enumerate(spec.layers):
        inputs.append(h)
        z = h @ params[f"l{i}.W"] + params[f"l{i}.b"]
        pre.append(z)
        h = _act(layer.activation, z)
    return h, Trace(inputs, pre, dict(aux), id(params), params.version)


def backward(spec: NetSpec, params: ParamStore, trace: Trace, grad_out, return_input_grad: bool = False):
    """Reverse-mode gradients of sum(grad_out * output) w.r.t. every parameter."""
    if trace.params_id != id(params) or trace.version != params.version:
        raise StaleTraceError("trace was produced by a different or since-updated parameter set")
    g = np.asarray(grad_out)
    grads = {}
    for i in reversed(range(len(spec.layers))):
        g = _act_grad(spec.layers[i].activation, trace.pre[i], g)
        grads[f"l{i}.W"] = trace.inputs[i].T @ g
        grads[f"l{i}.b"] = g.sum(axis=0)
        g = g @ params[f"l{i}.W"].T
    col = spec.input_dim
    for e in spec.embeddings:
        table_grad = np.zeros(params[f"emb.{e.name}"].shape, dtype=g.dtype)
        np.add.at(table_grad, np.asarray(trace.aux[e.name]), g[:, col:col + e.dim])
        grads[f"emb.{e.name}"] = table_grad
        col += e.dim
    if return_input_grad:
        return grads, g[:, :spec.input_dim]
    return grads


# -- losses -----------------------------------------------------------------------

def mse(pred, target):
    """Mean over all elements; returns (value, d value / d pred)."""
    pred = np.asarray(pred)
    diff = pred - np.asarray(target, dtype=pred.dtype)
    return float(np.mean(diff * diff)), (2.0 / diff.size) * diff


def softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(logits, labels):
    """Mean cross-entropy over the batch with a log-sum-exp formulation."""
    logits = np.atleast_2d(np.asarray(logits))
    labels = np.atleast_1d(np.asarray(labels))
    z = logits - logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    n = len(labels)
    value = float(np.mean(lse - z[np.arange(n), labels]))
    grad = softmax(logits)
    grad[np.arange(n), labels] -= 1
    return value, grad / n


def cosine_loss(a, b):
    """Mean of 1 - cos(a_i, b_i) over rows; gradient is w.r.t. ``a``."""
    a = np.atleast_2d(np.asarray(a))
    b = np.atleast_2d(np.asarray(b, dtype=a.dtype))
    na = np.linalg.norm(a, axis=1, keepdims=True)
    nb = np.linalg.norm(b, axis=1, keepdims=True)
    if np.any(na == 0) or np.any(nb == 0):
        raise ValueError("cosine loss is undefined for a zero vector")
    cos = np.sum(a * b, axis=1, keepdims=True) / (na * nb)
    n = a.shape[0]
    grad = -(b / (na * nb) - cos * a / na ** 2) / n
    return float(np.mean(1 - cos)), grad


# -- Adam -------------------------------------------------------------------------

@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: ParamStore, lr: float = 1e-3, **kw) -> "AdamState":
        state = cls(lr=lr, **kw)
        for k, arr in params.arrays.items():
            state.m[k] = np.zeros_like(arr)
            state.v[k] = np.zeros_like(arr)
        return state


class NonFiniteGradient(FloatingPointError):
    pass


def adam_step(params: ParamStore, grads: dict, state: AdamState) -> None:
    """Bias-corrected Adam update of the parameters named in ``grads`` (in place)."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient(f"non-finite gradient for parameter {name!r}")
        if g.shape != params.shapes[name]:
            raise ShapeError(f"{name}: gradient shape {g.shape} != {params.shapes[name]}")
    state.step += 1
    dt = next(iter(params.arrays.values())).dtype
    b1, b2 = dt.type(state.beta1), dt.type(state.beta2)
    c1 = dt.type(1 - state.beta1 ** state.step)
    c2 = dt.type(1 - state.beta2 ** state.step)
    lr, eps = dt.type(state.lr), dt.type(state.eps)
    for name, g in grads.items():
        g = g.astype(dt, copy=False)
        m = state.m[name] = b1 * state.m[name] + (1 - b1) * g
        v = state.v[name] = b2 * state.v[name] + (1 - b2) * g * g
        params.arrays[name] = params.arrays[name] - lr * (m / c1) / (np.sqrt(v / c2) + eps)
    params.version += 1


# -- checkpoints ------------------------------------------------------------------

MAGIC = b"DTNE1"
FORMAT_VERSION = 1


class CheckpointError(Exception):
    pass


class BadMagic(CheckpointError):
    pass


class BadVersion(CheckpointError):
    pass


class Truncated(CheckpointError):
    pass


def save_checkpoint(path, params: ParamStore, state: AdamState | None = None, meta: dict | None = None) -> None:
    """Write params (and optionally Adam moments) as little-endian float32 records.

    Layout: magic, u16 version, u32 meta length, UTF-8 JSON meta, u32 array
    count, then per array: u16 name length, name, u8 ndim, u32 dims, payload.
    """
    arrays = dict(params.arrays)
    meta = dict(meta or {})
    if state is not None:
        for k in params.arrays:
            arrays[f"adam.m.{k}"] = state.m[k]
            arrays[f"adam.v.{k}"] = state.v[k]
        meta["adam"] = {"step": state.step, "lr": state.lr, "beta1": state.beta1,
                        "beta2": state.beta2, "eps": state.eps}
    meta_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")
    out = [MAGIC, struct.pack("<HI", FORMAT_VERSION, len(meta_bytes)), meta_bytes, struct.pack("<I", len(arrays))]
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr, dtype="<f4")
        nb = name.encode("utf-8")
        out.append(struct.pack("<H", len(nb)) + nb + struct.pack("<B", arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(arr.tobytes())
    Path(path).write_bytes(b"".join(out))


class _Reader:
    def __init__(self, data: bytes):
        self.data, self.pos = data, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise Truncated(f"checkpoint truncated at byte {len(self.data)} (needed {self.pos + n})")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path):
    """Returns (params, adam_state_or_None, meta)."""
    r = _Reader(Path(path).read_bytes())
    if r.take(len(MAGIC)) != MAGIC:
        raise BadMagic(f"{path}: not a DTNE1 checkpoint")
    version, meta_len = r.unpack("<HI")
    if version != FORMAT_VERSION:
        raise BadVersion(f"{path}: unsupported checkpoint version {version}")
    meta = json.loads(r.take(meta_len).decode("utf-8"))
    (n_arrays,) = r.unpack("<I")
    arrays = {}
    for _ in range(n_arrays):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode("utf-8")
        (ndim,) = r.unpack("<B")
        shape = r.unpack(f"<{ndim}I")
        count = int(np.prod(shape)) if ndim else 1
        arrays[name] = np.frombuffer(r.take(4 * count), dtype="<f4").reshape(shape).astype(np.float32)
    if r.pos != len(r.data):
        raise CheckpointError(f"{path}: {len(r.data) - r.pos} trailing bytes")
    params = ParamStore({k: v for k, v in arrays.items() if not k.startswith("adam.")})
    state = None
    if "adam" in meta:
        a = meta.pop("adam")
        state = AdamState(lr=a["lr"], beta1=a["beta1"], beta2=a["beta2"], eps=a["eps"], step=a["step"])
        for k in params.names():
            state.m[k] = arrays[f"adam.m.{k}"]
            state.v[k] = arrays[f"adam.v.{k}"]
    return params, state, meta
