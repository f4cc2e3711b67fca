"""Small fully connected classifiers with hand-written backpropagation.

Hidden layers use ReLU. The output head is either affine (``W h + b``) or a
cosine head ``s * <w_c, h> / (|w_c| |h|)`` without bias.
"""

from __future__ import annotations

import copy
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ContractError, ParseError

AFFINE = "affine"
COSINE = "cosine"
_NORM_FLOOR = 1e-12


@dataclass
class MlpClassifier:
    """Parameters of a ReLU MLP.

    ``weights[k]`` has shape ``(out, in)``. ``biases`` holds one vector per
    layer; the cosine head has ``None`` in the last slot.
    """

    weights: list
    biases: list
    head: str = AFFINE
    scale: float = 16.0
    seed: int = 0
    step: int = 0
    frozen: bool = field(default=False, compare=False)

    def __post_init__(self):
        if self.head not in (AFFINE, COSINE):
            raise ContractError(f"unknown head {self.head!r}")
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ContractError("need one bias slot per weight matrix")
        for prev, nxt in zip(self.weights, self.weights[1:]):
            if nxt.shape[1] != prev.shape[0]:
                raise ContractError("layer shapes do not chain")
        if self.head == COSINE and self.biases[-1] is not None:
            raise ContractError("cosine head has no bias")

    @property
    def dims(self) -> list[int]:
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def class_count(self) -> int:
        return self.weights[-1].shape[0]

    def parameters(self) -> list[np.ndarray]:
        """All trainable arrays in a fixed order (weight, bias per layer)."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            if b is not None:
                out.append(b)
        return out

    def decay_mask(self) -> list[bool]:
        """Which entries of :meth:`parameters` receive weight decay."""
        out = []
        for b in self.biases:
            out.append(True)
            if b is not None:
                out.append(False)
        return out

    def frozen_copy(self) -> MlpClassifier:
        snap = copy.deepcopy(self)
        for arr in snap.parameters():
            arr.setflags(write=False)
        snap.frozen = True
        return snap


def init_params(dims, head: str = AFFINE, seed: int = 0, scale: float = 16.0) -> MlpClassifier:
    """Seeded uniform fan-in initialisation, ``U(-1/sqrt(fan_in), 1/sqrt(fan_in))``."""
    dims = [int(d) for d in dims]
    if len(dims) < 2 or min(dims) < 1:
        raise ContractError(f"invalid layer dims {dims}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for k, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        last = k == len(dims) - 2
        if last and head == COSINE:
            biases.append(None)
        else:
            biases.append(rng.uniform(-bound, bound, size=fan_out))
    return MlpClassifier(weights, biases, head=head, scale=scale, seed=seed)


def expand_classes(model: MlpClassifier, new_classes: int, seed: int) -> MlpClassifier:
    """Append output rows for ``new_classes`` fresh classes (returns a new model)."""
    if new_classes < 0:
        raise ContractError("cannot add a negative number of classes")
    out = copy.deepcopy(model)
    out.frozen = False
    for arr in out.parameters():
        arr.setflags(write=True)
    if new_classes == 0:
        return out
    rng = np.random.default_rng(seed)
    fan_in = out.weights[-1].shape[1]
    bound = 1.0 / np.sqrt(fan_in)
    out.weights[-1] = np.vstack([out.weights[-1], rng.uniform(-bound, bound, (new_classes, fan_in))])
    if out.biases[-1] is not None:
        out.biases[-1] = np.concatenate([out.biases[-1], np.zeros(new_classes)])
    return out


def _check_input(model: MlpClassifier, x) -> tuple[np.ndarray, bool]:
    arr = np.asarray(x, dtype=np.float64)
    single = arr.ndim == 1
    if single:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != model.input_dim:
        raise ContractError(f"expected inputs of dimension {model.input_dim}, got shape {np.shape(x)}")
    if not np.isfinite(arr).all():
        raise ContractError("inputs must be finite")
    return arr, single


def _forward(model: MlpClassifier, x: np.ndarray):
    acts = [x]
    h = x
    for w, b in zip(model.weights[:-1], model.biases[:-1]):
        h = np.maximum(h @ w.T + b, 0.0)
        acts.append(h)
    w = model.weights[-1]
    if model.head == AFFINE:
        logits = h @ w.T + model.biases[-1]
        return logits, acts, None
    wn = np.maximum(np.linalg.norm(w, axis=1), _NORM_FLOOR)
    hn = np.maximum(np.linalg.norm(h, axis=1), _NORM_FLOOR)
    dots = h @ w.T
    logits = model.scale * dots / (hn[:, None] * wn[None, :])
    return logits, acts, (dots, wn, hn)


def forward_logits(model: MlpClassifier, x) -> np.ndarray:
    """Logits for one input vector (shape ``(D,)``) or a batch (``(N, D)``)."""
    arr, single = _check_input(model, x)
    logits, _, _ = _forward(model, arr)
    return logits[0] if single else logits


def backward(model: MlpClassifier, x, upstream) -> list[np.ndarray]:
    """Gradients of ``sum(upstream * logits)`` w.r.t. :meth:`MlpClassifier.parameters`.

    ``upstream`` is dL/dlogits with the same leading shape as ``x``.
    """
    arr, single = _check_input(model, x)
    g = np.asarray(upstream, dtype=np.float64)
    if single:
        g = g[None, :]
    if g.shape != (arr.shape[0], model.class_count):
        raise ContractError(f"upstream gradient shape {g.shape} does not match logits")
    _, acts, cache = _forward(model, arr)
    h = acts[-1]
    w = model.weights[-1]
    grads_rev = []
    if model.head == AFFINE:
        grads_rev.append(g.sum(axis=0))
        grads_rev.append(g.T @ h)
        dh = g @ w
    else:
        dots, wn, hn = cache
        s = model.scale
        denom = hn[:, None] * wn[None, :]
        coef = s * g / denom  # (N, C)
        # d logit_nc / d w_c = s (h_n / (|w_c||h_n|) - dot_nc w_c / (|w_c|^3 |h_n|))
        dw = coef.T @ h - ((coef * dots).sum(axis=0) / wn**2)[:, None] * w
        dh = coef @ w - ((coef * dots).sum(axis=1) / hn**2)[:, None] * h
        grads_rev.append(dw)
    for k in range(len(model.weights) - 2, -1, -1):
        dz = dh * (acts[k + 1] > 0)
        grads_rev.append(dz.sum(axis=0))
        grads_rev.append(dz.T @ acts[k])
        dh = dz @ model.weights[k]
    return grads_rev[::-1]


# --- checkpoint ------------------------------------------------------------

_CKPT_MAGIC = b"EACK"


def checkpoint_bytes(model: MlpClassifier) -> bytes:
    """Serialise as magic, u64 header length, JSON header, float64 LE blob."""
    header = {
        "dims": model.dims,
        "head": model.head,
        "scale": model.scale,
        "seed": model.seed,
        "step": model.step,
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    blob = b"".join(np.ascontiguousarray(p, dtype="<f8").tobytes() for p in model.parameters())
    return _CKPT_MAGIC + struct.pack("<Q", len(head)) + head + blob


def save_checkpoint(model: MlpClassifier, path) -> None:
    Path(path).write_bytes(checkpoint_bytes(model))


def load_checkpoint(path) -> MlpClassifier:
    data = Path(path).read_bytes()
    if data[:4] != _CKPT_MAGIC or len(data) < 12:
        raise ParseError(f"{path}: not a checkpoint file")
    (hlen,) = struct.unpack("<Q", data[4:12])
    try:
        header = json.loads(data[12 : 12 + hlen])
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: corrupt checkpoint header") from exc
    blob = np.frombuffer(data[12 + hlen :], dtype="<f8")
    model = init_params(header["dims"], head=header["head"], seed=0, scale=header["scale"])
    params = model.parameters()
    need = sum(p.size for p in params)
    if blob.size != need:
        raise ParseError(f"{path}: expected {need} parameters, found {blob.size}")
    off = 0
    for p in params:
        p[...] = blob[off : off + p.size].reshape(p.shape)
        off += p.size
    model.seed = header["seed"]
    model.step = header["step"]
    return model
