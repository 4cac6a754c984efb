"""Small feedforward forecaster with manual forward/backward passes.

The network maps a flattened lookback window to a flattened forecast horizon.
Parameters live in one flat float64 buffer; each layer's weight-and-bias block
is a contiguous (out, fan_in+1) view into it (bias in the last column), so
in-place updates through either view stay consistent and the layerwise
curvature code can treat a flat gradient as a list of matrices at zero cost.

Besides the dense stack an optional dilated causal convolution can run in
front, sharing one (channels, kernel*channels + 1) block with zero padding on
the left; it echoes temporal-convolution backbones at desk scale.

forward() returns a cache holding per-layer inputs and pre-activations;
backward() consumes it to produce the flat parameter gradient and fills in the
per-layer pre-activation gradients that the curvature factors need. Caches are
versioned: applying a parameter update invalidates every cache created before
it.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericError, ShapeError, StateError
from .seeding import as_generator

ACTIVATIONS = ("relu", "tanh")


@dataclass(frozen=True)
class ConvFrontSpec:
    kernel: int
    dilation: int


@dataclass(frozen=True)
class NetworkSpec:
    input_dim: int
    hidden_dims: tuple[int, ...]
    output_dim: int
    activation: str = "relu"
    dilated_conv_front: ConvFrontSpec | None = None
    window_len: int | None = None  # required when the conv front is present
    features: int | None = None

    def __post_init__(self) -> None:
        if self.input_dim < 1 or self.output_dim < 1:
            raise ShapeError("input_dim and output_dim must be >= 1")
        if any(h < 1 for h in self.hidden_dims):
            raise ShapeError("hidden dims must be >= 1")
        if self.activation not in ACTIVATIONS:
            raise ShapeError(f"unknown activation {self.activation!r}")
        conv = self.dilated_conv_front
        if conv is not None:
            if conv.kernel < 1 or conv.dilation < 1:
                raise ShapeError("conv kernel and dilation must be >= 1")
            if self.window_len is None or self.features is None:
                raise ShapeError("conv front requires window_len and features")
            if self.window_len * self.features != self.input_dim:
                raise ShapeError("window_len * features must equal input_dim")
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))

    def canonical_json(self) -> str:
        conv = self.dilated_conv_front
        payload = {
            "input_dim": self.input_dim,
            "hidden_dims": list(self.hidden_dims),
            "output_dim": self.output_dim,
            "activation": self.activation,
            "conv": None if conv is None else {"kernel": conv.kernel, "dilation": conv.dilation},
            "window_len": self.window_len,
            "features": self.features,
        }
        return json.dumps(payload, sort_keys=True, separators=(",", ":"))

    def spec_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()


@dataclass(frozen=True)
class _Dense:
    fin: int
    fout: int
    activated: bool

    @property
    def block_shape(self) -> tuple[int, int]:
        return (self.fout, self.fin + 1)


@dataclass(frozen=True)
class _Conv:
    window: int
    channels: int
    kernel: int
    dilation: int

    @property
    def patch_dim(self) -> int:
        return self.kernel * self.channels

    @property
    def block_shape(self) -> tuple[int, int]:
        return (self.channels, self.patch_dim + 1)


def _act(name: str, z: np.ndarray) -> np.ndarray:
    return np.maximum(z, 0.0) if name == "relu" else np.tanh(z)


def _act_grad(name: str, z: np.ndarray) -> np.ndarray:
    return (z > 0.0).astype(float) if name == "relu" else 1.0 - np.tanh(z) ** 2


@dataclass
class LayerCache:
    """Per-layer inputs / pre-activations from a forward pass.

    `g` holds the per-sample gradients w.r.t. pre-activations and is populated
    by backward(); factor estimation reads it afterwards. For the conv layer
    `inputs` holds the extracted patches with the position axis kept.
    """

    version: int
    batch: int
    single: bool
    inputs: list[np.ndarray]
    preacts: list[np.ndarray]
    g: list[np.ndarray] | None = None


@dataclass(frozen=True)
class FactorRows:
    """Bias-augmented inputs and pre-activation gradients for one layer.

    `a` is (n, fan_in+1) or, for the conv layer, (n, positions, fan_in+1);
    `g` follows the same leading shape with the layer's output width.
    """

    a: np.ndarray
    g: np.ndarray
    spatial: bool


class Network:
    """Parameter state plus forward/backward for one NetworkSpec."""

    def __init__(self, spec: NetworkSpec, flat: np.ndarray):
        self.spec = spec
        self.layers = self._build_layers(spec)
        p = sum(o * i for (o, i) in (l.block_shape for l in self.layers))
        flat = np.asarray(flat, dtype=float)
        if flat.shape != (p,):
            raise ShapeError(f"flat parameter vector must have length {p}, got {flat.shape}")
        self.flat = flat
        self.version = 0
        self._blocks: list[np.ndarray] = []
        offset = 0
        for layer in self.layers:
            o, i = layer.block_shape
            self._blocks.append(self.flat[offset : offset + o * i].reshape(o, i))
            offset += o * i

    @staticmethod
    def _build_layers(spec: NetworkSpec) -> list[_Dense | _Conv]:
        layers: list[_Dense | _Conv] = []
        fin = spec.input_dim
        if spec.dilated_conv_front is not None:
            conv = spec.dilated_conv_front
            layers.append(
                _Conv(
                    window=spec.window_len,
                    channels=spec.features,
                    kernel=conv.kernel,
                    dilation=conv.dilation,
                )
            )
            fin = spec.window_len * spec.features
        for h in spec.hidden_dims:
            layers.append(_Dense(fin=fin, fout=h, activated=True))
            fin = h
        layers.append(_Dense(fin=fin, fout=spec.output_dim, activated=False))
        return layers

    @classmethod
    def initialize(cls, spec: NetworkSpec, seed) -> "Network":
        rng = as_generator(seed)
        layers = cls._build_layers(spec)
        chunks = []
        for layer in layers:
            o, i = layer.block_shape
            fan_in = i - 1
            bound = np.sqrt(6.0 / (fan_in + o))
            block = np.zeros((o, i))
            block[:, :fan_in] = rng.uniform(-bound, bound, size=(o, fan_in))
            chunks.append(block.reshape(-1))
        return cls(spec, np.concatenate(chunks))

    @property
    def n_params(self) -> int:
        return self.flat.size

    @property
    def output_dim(self) -> int:
        return self.spec.output_dim

    def weight(self, idx: int) -> np.ndarray:
        block = self._blocks[idx]
        return block[:, :-1]

    def bias(self, idx: int) -> np.ndarray:
        return self._blocks[idx][:, -1]

    def block_shapes(self) -> list[tuple[int, int]]:
        return [l.block_shape for l in self.layers]

    def flat_to_blocks(self, flat: np.ndarray) -> list[np.ndarray]:
        flat = np.asarray(flat, dtype=float)
        if flat.shape != (self.n_params,):
            raise ShapeError(f"expected length {self.n_params}, got {flat.shape}")
        out = []
        offset = 0
        for layer in self.layers:
            o, i = layer.block_shape
            out.append(flat[offset : offset + o * i].reshape(o, i))
            offset += o * i
        return out

    def copy(self) -> "Network":
        return Network(self.spec, self.flat.copy())

    # -- forward / backward ---------------------------------------------------

    def _conv_patches(self, conv: _Conv, x: np.ndarray) -> np.ndarray:
        """Causal dilated patch extraction: (n, L, kernel*channels), zero-padded left."""
        n = x.shape[0]
        win = x.reshape(n, conv.window, conv.channels)
        patches = np.zeros((n, conv.window, conv.kernel, conv.channels))
        for j in range(conv.kernel):
            # tap j reaches back (kernel-1-j)*dilation steps; j = kernel-1 is "now"
            shift = (conv.kernel - 1 - j) * conv.dilation
            if shift < conv.window:
                patches[:, shift:, j, :] = win[:, : conv.window - shift, :]
        return patches.reshape(n, conv.window, conv.patch_dim)

    def forward(self, x) -> tuple[np.ndarray, LayerCache]:
        arr = np.asarray(x, dtype=float)
        single = arr.ndim == 1
        if single:
            arr = arr[None, :]
        if arr.ndim != 2 or arr.shape[1] != self.spec.input_dim:
            raise ShapeError(f"input of shape {np.shape(x)} for input_dim {self.spec.input_dim}")
        if not np.all(np.isfinite(arr)):
            raise NumericError("network input has non-finite entries")
        n = arr.shape[0]
        inputs: list[np.ndarray] = []
        preacts: list[np.ndarray] = []
        cur = arr
        for layer, block in zip(self.layers, self._blocks):
            w, b = block[:, :-1], block[:, -1]
            if isinstance(layer, _Conv):
                patches = self._conv_patches(layer, cur)
                inputs.append(patches)
                z = patches @ w.T + b  # (n, L, channels)
                preacts.append(z)
                cur = _act(self.spec.activation, z).reshape(n, -1)
            else:
                inputs.append(cur)
                z = cur @ w.T + b
                preacts.append(z)
                cur = _act(self.spec.activation, z) if layer.activated else z
        cache = LayerCache(
            version=self.version, batch=n, single=single, inputs=inputs, preacts=preacts
        )
        return (cur[0] if single else cur), cache

    def backward(self, cache: LayerCache, out_grad, weights=None) -> np.ndarray:
        """Flat gradient sum_i w_i * grad_i for per-sample output gradients.

        `out_grad` is (m,) or (n, m) with n equal to the cache batch; weights
        default to 1/n (batch mean). Fills cache.g with the unweighted
        per-sample pre-activation gradients.
        """
        if cache.version != self.version:
            raise StateError("cache is stale: parameters changed since forward")
        grad = np.asarray(out_grad, dtype=float)
        if grad.ndim == 1:
            grad = grad[None, :]
        if grad.shape != (cache.batch, self.spec.output_dim):
            raise ShapeError(
                f"out_grad of shape {np.shape(out_grad)} against batch {cache.batch}, "
                f"output_dim {self.spec.output_dim}"
            )
        if weights is None:
            w_vec = np.full(cache.batch, 1.0 / cache.batch)
        else:
            w_vec = np.asarray(weights, dtype=float).reshape(-1)
            if w_vec.shape != (cache.batch,):
                raise ShapeError("weights must match the cache batch")

        flat_grad = np.zeros(self.n_params)
        blocks = self.flat_to_blocks(flat_grad)
        g_list: list[np.ndarray | None] = [None] * len(self.layers)
        cur = grad
        for idx in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[idx]
            block = self._blocks[idx]
            w = block[:, :-1]
            if isinstance(layer, _Conv):
                g = cur.reshape(cache.batch, layer.window, layer.channels) * _act_grad(
                    self.spec.activation, cache.preacts[idx]
                )
                g_list[idx] = g
                patches = cache.inputs[idx]
                gw = g * w_vec[:, None, None]
                blocks[idx][:, :-1] = np.einsum("nlo,nlp->op", gw, patches)
                blocks[idx][:, -1] = gw.sum(axis=(0, 1))
                # front layer: no input gradient needed
            else:
                g = cur  # already d loss / d z: activation grads fold in below
                g_list[idx] = g
                gw = g * w_vec[:, None]
                blocks[idx][:, :-1] = gw.T @ cache.inputs[idx]
                blocks[idx][:, -1] = gw.sum(axis=0)
                if idx > 0:
                    upstream = g @ w  # d loss / d inputs[idx]
                    prev = self.layers[idx - 1]
                    if isinstance(prev, _Conv):
                        cur = upstream  # reshaped/activated inside the conv branch
                    else:
                        cur = upstream * _act_grad(self.spec.activation, cache.preacts[idx - 1])
        cache.g = g_list
        return flat_grad

    def factor_arrays(self, cache: LayerCache) -> list[FactorRows]:
        """Bias-augmented inputs and pre-activation gradients per layer."""
        if cache.g is None:
            raise StateError("factor arrays need a backward pass on this cache")
        rows = []
        for layer, a_in, g in zip(self.layers, cache.inputs, cache.g):
            if isinstance(layer, _Conv):
                aug = np.concatenate([a_in, np.ones(a_in.shape[:2] + (1,))], axis=2)
                rows.append(FactorRows(a=aug, g=g, spatial=True))
            else:
                aug = np.concatenate([a_in, np.ones((a_in.shape[0], 1))], axis=1)
                rows.append(FactorRows(a=aug, g=g, spatial=False))
        return rows

    def apply_delta(self, delta, lr: float) -> "Network":
        """In-place update flat <- flat - lr * delta; returns self."""
        d = np.asarray(delta, dtype=float)
        if d.shape != (self.n_params,):
            raise ShapeError(f"delta must have length {self.n_params}, got {d.shape}")
        if not (np.all(np.isfinite(d)) and np.isfinite(lr)):
            raise NumericError("delta and lr must be finite")
        self.flat -= lr * d
        self.version += 1
        return self

    def set_flat(self, values) -> None:
        v = np.asarray(values, dtype=float)
        if v.shape != (self.n_params,):
            raise ShapeError(f"expected length {self.n_params}, got {v.shape}")
        self.flat[:] = v
        self.version += 1

    def jacobian(self, x) -> np.ndarray:
        """Output-by-parameter Jacobian at one input, one backward per output row."""
        _, cache = self.forward(np.asarray(x, dtype=float).reshape(1, -1))
        m = self.spec.output_dim
        rows = np.empty((m, self.n_params))
        for i in range(m):
            unit = np.zeros((1, m))
            unit[0, i] = 1.0
            rows[i] = self.backward(cache, unit, weights=[1.0])
        return rows


# -- checkpoints ---------------------------------------------------------------

CHECKPOINT_MAGIC = "natsr-checkpoint v1"


def save_checkpoint(net: Network, path) -> None:
    lines = [CHECKPOINT_MAGIC, f"spec {net.spec.spec_hash()}", f"params {net.n_params}"]
    lines.extend(repr(float(v)) for v in net.flat)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_checkpoint(path, spec: NetworkSpec) -> Network:
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if len(lines) < 3 or lines[0] != CHECKPOINT_MAGIC:
        raise StateError(f"{path}: not a recognizable checkpoint")
    if lines[1] != f"spec {spec.spec_hash()}":
        raise StateError(f"{path}: checkpoint was written for a different network spec")
    p = int(lines[2].split()[1])
    values = [float(v) for v in lines[3 : 3 + p]]
    if len(values) != p:
        raise StateError(f"{path}: expected {p} parameters, found {len(values)}")
    return Network(spec, np.asarray(values))
