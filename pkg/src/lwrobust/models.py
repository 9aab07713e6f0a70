"""Differentiable multi-label classifiers and their checkpoint format."""
from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import diffcore as dc
from . import kernels
from .diffcore import Layout, Params, Var


class IncompatibleObjective(ValueError):
    """The objective needs something this model does not provide."""


def _uniform_init(layout: Layout, fan_in: dict[str, int], seed: int) -> Params:
    rng = np.random.default_rng(seed)
    arrays = {}
    for name, shape in layout.entries:
        bound = 1.0 / np.sqrt(fan_in[name])
        arrays[name] = rng.uniform(-bound, bound, size=shape)
    return Params(layout.pack(arrays), layout)


@dataclass(frozen=True)
class LinearModel:
    """Dense sigmoid head over document features, with an optional ReLU hidden layer."""

    d: int
    L: int
    h: int = 0
    kind = "linear"

    @property
    def layout(self) -> Layout:
        if self.h == 0:
            return Layout((("W2", (self.d, self.L)), ("b2", (self.L,))))
        return Layout((("W1", (self.d, self.h)), ("b1", (self.h,)),
                       ("W2", (self.h, self.L)), ("b2", (self.L,))))

    def init_params(self, seed: int) -> Params:
        fan = {"W1": self.d, "b1": self.d, "W2": self.h or self.d, "b2": self.h or self.d}
        return _uniform_init(self.layout, fan, seed)

    def _check(self, x) -> None:
        if x.shape[-1] != self.d:
            raise ValueError(f"expected feature dimension {self.d}, got {x.shape[-1]}")

    def representation(self, theta, x: np.ndarray):
        """Penultimate activations: the raw features when h = 0, else the hidden layer."""
        self._check(x)
        if self.h == 0:
            return x
        p = self.layout.unpack(theta)
        if isinstance(theta, Var):
            return dc.relu(dc.matmul(x, p["W1"]) + p["b1"])
        return np.maximum(x @ p["W1"] + p["b1"], 0.0)

    def logits(self, theta, x: np.ndarray):
        rep = self.representation(theta, x)
        p = self.layout.unpack(theta)
        if isinstance(theta, Var):
            return dc.matmul(rep, p["W2"]) + p["b2"]
        return rep @ p["W2"] + p["b2"]

    def spec(self) -> dict:
        return {"kind": self.kind, **asdict(self)}


@dataclass(frozen=True)
class LwanModel:
    """Label-wise attention over a bare embedding encoder: one attention head per label."""

    V: int
    L: int
    e: int = 16
    k: int = 16
    kind = "lwan"

    @property
    def layout(self) -> Layout:
        return Layout((("emb", (self.V, self.e)), ("K", (self.e, self.k)), ("Vmap", (self.e, self.k)),
                       ("Q", (self.L, self.k)), ("o", (self.L, self.k))))

    def init_params(self, seed: int) -> Params:
        fan = {"emb": self.e, "K": self.e, "Vmap": self.e, "Q": self.k, "o": self.k}
        return _uniform_init(self.layout, fan, seed)

    def representation(self, theta, inputs):
        raise IncompatibleObjective("LWAN has no single document representation; CORAL is not applicable")

    def _check(self, tokens: np.ndarray, lengths: np.ndarray) -> None:
        if np.any(lengths < 1):
            raise ValueError("token sequences must be nonempty")
        if tokens.size and (tokens.min() < 0 or tokens.max() >= self.V):
            raise ValueError(f"token index outside [0, {self.V})")

    def logits(self, theta, inputs):
        tokens, lengths = inputs
        tokens = np.asarray(tokens, dtype=np.int64)
        lengths = np.asarray(lengths, dtype=np.int64)
        self._check(tokens, lengths)
        kern = kernels.get_backend()
        if not isinstance(theta, Var):
            p = self.layout.unpack(theta)
            return kern.lwan_forward(p["emb"], p["K"], p["Vmap"], p["Q"], p["o"], tokens, lengths)[0]
        p = self.layout.unpack(theta)
        names = ("emb", "K", "Vmap", "Q", "o")
        vals = [p[n].value for n in names]
        logits, attn = kern.lwan_forward(*vals, tokens, lengths)

        def vjp(g):
            return kern.lwan_backward(*vals, tokens, lengths, attn, g)

        return dc.custom("lwan_logits", logits, [p[n] for n in names], vjp)

    def spec(self) -> dict:
        return {"kind": self.kind, **asdict(self)}


def model_from_spec(spec: dict):
    spec = dict(spec)
    kind = spec.pop("kind")
    if kind == "linear":
        return LinearModel(**spec)
    if kind == "lwan":
        return LwanModel(**spec)
    raise ValueError(f"unknown model kind {kind!r}")


def probabilities(model, params: Params | np.ndarray, inputs) -> np.ndarray:
    values = params.values if isinstance(params, Params) else params
    return dc._sigmoid(model.logits(values, inputs))


def linear_forward(model: LinearModel, params: Params, x: np.ndarray) -> np.ndarray:
    """Per-label logits for one feature vector (or a row batch)."""
    x = np.asarray(x, dtype=np.float64)
    return model.logits(params.values, x)


def lwan_forward(model: LwanModel, params: Params, tokens) -> np.ndarray:
    """Per-label probabilities for a single token sequence."""
    tokens = np.asarray(tokens, dtype=np.int64)
    if tokens.ndim != 1 or tokens.size == 0:
        raise ValueError("lwan_forward expects one nonempty token sequence")
    logits = model.logits(params.values, (tokens[None, :], np.array([tokens.size])))
    return dc._sigmoid(logits[0])


def lwan_attention(model: LwanModel, params: Params, tokens) -> np.ndarray:
    """Attention weights (L, T) for a single token sequence."""
    tokens = np.asarray(tokens, dtype=np.int64)
    p = params.named()
    _, attn = kernels.get_backend().lwan_forward(p["emb"], p["K"], p["Vmap"], p["Q"], p["o"],
                                                 tokens[None, :], np.array([tokens.size]))
    return attn[0]


# -- checkpoints --------------------------------------------------------------
#
# magic "LWRBCKPT" | u32 version | u64 manifest byte length | manifest (UTF-8 JSON)
# | u64 value count | float64 values, all little-endian.

CHECKPOINT_MAGIC = b"LWRBCKPT"
CHECKPOINT_VERSION = 1


def save_checkpoint(path: str | Path, model, params: Params, extra: dict | None = None) -> None:
    manifest = {
        "model": model.spec(),
        "layout": [[name, list(shape)] for name, shape in params.layout.entries],
        "extra": extra or {},
    }
    blob = json.dumps(manifest, sort_keys=True).encode("utf-8")
    values = np.ascontiguousarray(params.values, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<IQ", CHECKPOINT_VERSION, len(blob)))
        fh.write(blob)
        fh.write(struct.pack("<Q", values.size))
        fh.write(values.tobytes())


def load_checkpoint(path: str | Path):
    """Returns ``(model, params, extra)``."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:8] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    version, n_manifest = struct.unpack_from("<IQ", data, 8)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    pos = 8 + 12
    manifest = json.loads(data[pos:pos + n_manifest].decode("utf-8"))
    pos += n_manifest
    (count,) = struct.unpack_from("<Q", data, pos)
    pos += 8
    if len(data) - pos != 8 * count:
        raise ValueError(f"{path}: truncated parameter block")
    values = np.frombuffer(data, dtype="<f8", count=count, offset=pos).astype(np.float64)
    layout = Layout(tuple((name, tuple(shape)) for name, shape in manifest["layout"]))
    model = model_from_spec(manifest["model"])
    if model.layout != layout:
        raise ValueError(f"{path}: layout does not match the stored model")
    return model, Params(values, layout), manifest.get("extra", {})
