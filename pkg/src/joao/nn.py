"""GIN encoder, projection heads, gradients and checkpoints.

Parameters live in plain numpy arrays. A forward pass wraps them in
:class:`~joao.autodiff.Tensor` objects only when gradients are wanted.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterator

import numpy as np

from . import autodiff as ad
from .errors import JoaoError, NumericalAbort
from .graph import Batch
from .rng import substream

MLP_KEYS = ("W1", "b1", "W2", "b2")


class CheckpointError(JoaoError, ValueError):
    """Unreadable or inconsistent checkpoint file."""


@dataclass
class MLP:
    """``relu(x @ W1 + b1) @ W2 + b2``."""

    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray

    @property
    def in_dim(self) -> int:
        return self.W1.shape[0]

    @property
    def out_dim(self) -> int:
        return self.W2.shape[1]

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: getattr(self, k) for k in MLP_KEYS}

    def check(self):
        if self.W1.shape[1] != self.b1.shape[0] or self.W1.shape[1] != self.W2.shape[0] or self.W2.shape[1] != self.b2.shape[0]:
            raise ValueError(f"MLP dimension chain broken: {[a.shape for a in self.arrays().values()]}")
        if not all(np.all(np.isfinite(a)) for a in self.arrays().values()):
            raise ValueError("non-finite parameter")


HeadParams = MLP


@dataclass
class EncoderParams:
    layers: list[MLP]
    eps: tuple[float, ...]

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    def check(self):
        if len(self.eps) != len(self.layers):
            raise ValueError("one epsilon per GIN layer required")
        prev = self.in_dim
        for mlp in self.layers:
            mlp.check()
            if mlp.in_dim != prev:
                raise ValueError(f"GIN layer expects width {mlp.in_dim}, previous layer gives {prev}")
            prev = mlp.out_dim


@dataclass
class ModelState:
    encoder: EncoderParams
    heads: list[MLP]
    step: int = 0

    def __post_init__(self):
        self.encoder.check()
        if not self.heads:
            raise ValueError("model needs at least one projection head")
        shapes = {tuple(a.shape for a in h.arrays().values()) for h in self.heads}
        if len(shapes) != 1:
            raise ValueError("projection heads must share dimensions")
        for h in self.heads:
            h.check()
            if h.in_dim != self.encoder.out_dim:
                raise ValueError(f"head input width {h.in_dim} != encoder output width {self.encoder.out_dim}")

    @property
    def dims(self) -> dict:
        return {
            "in_dim": self.encoder.in_dim,
            "hidden": self.encoder.out_dim,
            "num_layers": len(self.encoder.layers),
            "proj_dim": self.heads[0].out_dim,
            "num_heads": len(self.heads),
        }

    def named_arrays(self) -> Iterator[tuple[str, np.ndarray]]:
        for li, mlp in enumerate(self.encoder.layers):
            for k, a in mlp.arrays().items():
                yield f"encoder.{li}.{k}", a
        for hi, mlp in enumerate(self.heads):
            for k, a in mlp.arrays().items():
                yield f"head.{hi}.{k}", a

    def copy(self) -> "ModelState":
        return ModelState(
            EncoderParams([MLP(*(a.copy() for a in m.arrays().values())) for m in self.encoder.layers], tuple(self.encoder.eps)),
            [MLP(*(a.copy() for a in m.arrays().values())) for m in self.heads],
            self.step,
        )

    @classmethod
    def from_arrays(cls, dims: dict, eps, arrays: dict[str, np.ndarray], step: int = 0) -> "ModelState":
        layers = [MLP(*(arrays[f"encoder.{li}.{k}"] for k in MLP_KEYS)) for li in range(dims["num_layers"])]
        heads = [MLP(*(arrays[f"head.{hi}.{k}"] for k in MLP_KEYS)) for hi in range(dims["num_heads"])]
        return cls(EncoderParams(layers, tuple(float(e) for e in eps)), heads, step)


@dataclass
class GradientBundle:
    """``d loss / d parameter`` keyed like :meth:`ModelState.named_arrays`."""

    arrays: dict[str, np.ndarray] = field(default_factory=dict)

    def __getitem__(self, name):
        return self.arrays[name]

    def scaled(self, c: float) -> "GradientBundle":
        return GradientBundle({k: v * c for k, v in self.arrays.items()})


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape) -> np.ndarray:
    s = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-s, s, size=shape)


def _init_mlp(seed: int, name: str, d_in: int, d_hidden: int, d_out: int) -> MLP:
    # biases use the same bound as their layer's weights; zero biases make the
    # network positively homogeneous and collapse constant-feature graphs
    return MLP(
        _glorot(substream(seed, "init", name, "W1"), d_in, d_hidden, (d_in, d_hidden)),
        _glorot(substream(seed, "init", name, "b1"), d_in, d_hidden, (d_hidden,)),
        _glorot(substream(seed, "init", name, "W2"), d_hidden, d_out, (d_hidden, d_out)),
        _glorot(substream(seed, "init", name, "b2"), d_hidden, d_out, (d_out,)),
    )


def init_state(in_dim: int, hidden: int = 32, num_layers: int = 3, proj_dim: int = 32,
               num_heads: int = 1, seed: int = 0) -> ModelState:
    """Glorot-uniform weights and biases, epsilon fixed at 0."""
    layers = [
        _init_mlp(seed, f"encoder.{li}", in_dim if li == 0 else hidden, hidden, hidden)
        for li in range(num_layers)
    ]
    heads = [_init_mlp(seed, f"head.{hi}", hidden, hidden, proj_dim) for hi in range(num_heads)]
    return ModelState(EncoderParams(layers, (0.0,) * num_layers), heads)


# --- forward -----------------------------------------------------------------

def _mlp(x: ad.Tensor, t: dict, prefix: str) -> ad.Tensor:
    h = ad.relu(x @ t[prefix + "W1"] + t[prefix + "b1"])
    return h @ t[prefix + "W2"] + t[prefix + "b2"]


class Forward:
    """Forward operations bound to one set of (possibly gradient-tracked) parameters."""

    def __init__(self, state: ModelState, requires_grad: bool = False):
        self.state = state
        self.tensors = {name: ad.Tensor(a, requires_grad) for name, a in state.named_arrays()}

    def encode(self, batch: Batch) -> ad.Tensor:
        enc = self.state.encoder
        feats = batch.graph.features
        if feats.shape[1] != enc.in_dim:
            raise ValueError(f"batch feature width {feats.shape[1]} != encoder input width {enc.in_dim}")
        adj = batch.adjacency()
        h = ad.Tensor(feats)
        for li, eps in enumerate(enc.eps):
            agg = ad.const_matmul(adj, h)
            agg = agg + (h * (1.0 + eps) if eps else h)
            h = ad.relu(_mlp(agg, self.tensors, f"encoder.{li}."))
        return ad.const_matmul(batch.pooling(), h)

    def project(self, emb: ad.Tensor, head: int = 0) -> ad.Tensor:
        if emb.shape[1] != self.state.heads[head].in_dim:
            raise ValueError(f"embedding width {emb.shape[1]} != head input width {self.state.heads[head].in_dim}")
        return _mlp(emb, self.tensors, f"head.{head}.")

    def gradients(self) -> GradientBundle:
        return GradientBundle({
            name: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data))
            for name, t in self.tensors.items()
        })


def gin_encode(state: ModelState, batch: Batch) -> np.ndarray:
    """Sum-pooled GIN embeddings, one row per graph of the batch."""
    return Forward(state).encode(batch).data


def project(state: ModelState, emb, head: int = 0) -> np.ndarray:
    return Forward(state).project(ad.Tensor(emb), head).data


def loss_and_grad(state: ModelState, loss_fn: Callable[[Forward], ad.Tensor]) -> tuple[float, GradientBundle]:
    """Evaluate ``loss_fn`` on a gradient-tracking :class:`Forward` and backpropagate."""
    fwd = Forward(state, requires_grad=True)
    loss = loss_fn(fwd)
    value = loss.item()
    if not np.isfinite(value):
        raise NumericalAbort(f"non-finite loss {value}", {"loss": repr(value), "step": state.step})
    if loss.requires_grad:
        loss.backward()
    return value, fwd.gradients()


def sgd_step(state: ModelState, grads: GradientBundle, lr: float) -> ModelState:
    """``theta - lr * grad`` for every parameter that has a gradient."""
    arrays = {}
    for name, a in state.named_arrays():
        g = grads.arrays.get(name)
        if g is None:
            arrays[name] = a.copy()
            continue
        if g.shape != a.shape:
            raise ValueError(f"gradient for {name} has shape {g.shape}, parameter has {a.shape}")
        arrays[name] = a - lr * g
    return ModelState.from_arrays(state.dims, state.encoder.eps, arrays, state.step + 1)


# --- checkpoints ---------------------------------------------------------------

CKPT_MAGIC = b"JOAOCKPT"
CKPT_VERSION = 1


def save_checkpoint(path, state: ModelState, **meta) -> Path:
    """Write magic, header length (u64 LE), JSON header, then float64 LE arrays."""
    names, blobs = [], []
    for name, a in state.named_arrays():
        names.append({"name": name, "shape": list(a.shape)})
        blobs.append(np.ascontiguousarray(a, dtype="<f8").tobytes())
    extra = meta.pop("arrays", {}) or {}
    for name, a in extra.items():
        a = np.asarray(a, dtype=np.float64)
        names.append({"name": name, "shape": list(a.shape)})
        blobs.append(np.ascontiguousarray(a, dtype="<f8").tobytes())
    header = {
        "format": "joao-checkpoint",
        "version": CKPT_VERSION,
        "dims": state.dims,
        "eps": list(state.encoder.eps),
        "head_count": len(state.heads),
        "step": state.step,
        "arrays": names,
        **meta,
    }
    hb = json.dumps(header, sort_keys=True).encode("utf-8")
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<Q", len(hb)))
        fh.write(hb)
        for b in blobs:
            fh.write(b)
    return path


def load_checkpoint(path) -> tuple[ModelState, dict, dict[str, np.ndarray]]:
    """Returns the model, the header and any extra (non-model) arrays."""
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from None
    if raw[:8] != CKPT_MAGIC or len(raw) < 16:
        raise CheckpointError(f"{path}: not a checkpoint file")
    (hlen,) = struct.unpack("<Q", raw[8:16])
    try:
        header = json.loads(raw[16:16 + hlen].decode("utf-8"))
        specs = header["arrays"]
        dims = header["dims"]
        eps = header["eps"]
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError) as exc:
        raise CheckpointError(f"{path}: corrupted header ({exc})") from None
    if header.get("format") != "joao-checkpoint" or header.get("version") != CKPT_VERSION:
        raise CheckpointError(f"{path}: unsupported format {header.get('format')!r} v{header.get('version')!r}")
    offset = 16 + hlen
    arrays = {}
    for spec in specs:
        shape = tuple(spec["shape"])
        n = int(np.prod(shape)) if shape else 1
        chunk = raw[offset:offset + 8 * n]
        if len(chunk) != 8 * n:
            raise CheckpointError(f"{path}: truncated while reading {spec['name']}")
        arrays[spec["name"]] = np.frombuffer(chunk, dtype="<f8").astype(np.float64).reshape(shape)
        offset += 8 * n
    if offset != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - offset} trailing bytes")
    try:
        state = ModelState.from_arrays(dims, eps, arrays, int(header.get("step", 0)))
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f"{path}: inconsistent parameters ({exc})") from None
    model_names = {name for name, _ in state.named_arrays()}
    extra = {k: v for k, v in arrays.items() if k not in model_names}
    return state, header, extra
