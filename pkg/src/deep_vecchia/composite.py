"""Feed-forward composite models: evaluation, intermediate-representation
extraction, a full-batch toy trainer, and the S-curve dataset generator."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from . import dataio

# Published self-normalizing constants; the activation name alone does not fix them.
SELU_ALPHA = 1.6732632423543772
SELU_LAMBDA = 1.0507009873554805

ACTIVATIONS = ("identity", "relu", "leaky_relu", "selu")


class TrainingDivergedError(RuntimeError):
    """Loss became non-finite; carries the epoch where it happened."""

    def __init__(self, epoch: int):
        super().__init__(f"training loss became non-finite at epoch {epoch}")
        self.epoch = epoch


def _activate(name: str, z: np.ndarray, slope: float) -> np.ndarray:
    if name == "identity":
        return z
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "leaky_relu":
        return np.where(z > 0.0, z, slope * z)
    if name == "selu":
        return SELU_LAMBDA * np.where(z > 0.0, z, SELU_ALPHA * np.expm1(z))
    raise ValueError(f"unknown activation {name!r}")


def _activate_grad(name: str, z: np.ndarray, slope: float) -> np.ndarray:
    """Derivative with respect to the pre-activation."""
    if name == "identity":
        return np.ones_like(z)
    if name == "relu":
        return (z > 0.0).astype(np.float64)
    if name == "leaky_relu":
        return np.where(z > 0.0, 1.0, slope)
    if name == "selu":
        return SELU_LAMBDA * np.where(z > 0.0, 1.0, SELU_ALPHA * np.exp(z))
    raise ValueError(f"unknown activation {name!r}")


@dataclass(frozen=True)
class LayerSpec:
    weight: np.ndarray  # (d_in, d_out)
    bias: np.ndarray  # (d_out,)
    activation: str = "identity"
    leaky_slope: float = 0.01

    def __post_init__(self):
        w = np.asarray(self.weight, dtype=np.float64)
        b = np.asarray(self.bias, dtype=np.float64)
        if w.ndim != 2:
            raise ValueError("weight must be a 2-D matrix")
        if b.shape != (w.shape[1],):
            raise ValueError(f"bias length {b.shape} does not match weight cols {w.shape[1]}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        object.__setattr__(self, "weight", w)
        object.__setattr__(self, "bias", b)

    @property
    def d_in(self) -> int:
        return self.weight.shape[0]

    @property
    def d_out(self) -> int:
        return self.weight.shape[1]

    def apply(self, X: np.ndarray) -> np.ndarray:
        return _activate(self.activation, X @ self.weight + self.bias, self.leaky_slope)


@dataclass(frozen=True)
class CompositeModel:
    """L+1 layers; the first L outputs are the intermediate spaces, the last is scalar."""

    layers: tuple

    def __post_init__(self):
        layers = tuple(self.layers)
        if not layers:
            raise ValueError("a composite model needs at least one layer")
        for a, b in zip(layers, layers[1:]):
            if a.d_out != b.d_in:
                raise ValueError(f"layer dims do not chain: {a.d_out} -> {b.d_in}")
        if layers[-1].d_out != 1:
            raise ValueError("final layer must map to a scalar output")
        object.__setattr__(self, "layers", layers)

    @property
    def d_in(self) -> int:
        return self.layers[0].d_in

    @property
    def n_intermediate(self) -> int:
        return len(self.layers) - 1

    @property
    def intermediate_dims(self) -> tuple:
        return tuple(layer.d_out for layer in self.layers[:-1])


def forward(model: CompositeModel, x: np.ndarray):
    """Evaluate one input; returns (post-activation intermediates e_1..e_L, scalar output)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (model.d_in,):
        raise ValueError(f"input shape {x.shape} does not match model input dim {model.d_in}")
    inters, out = forward_batch(model, x.reshape(1, -1))
    return [e[0] for e in inters], float(out[0])


def forward_batch(model: CompositeModel, X: np.ndarray):
    """Row-wise forward pass; returns (list of (n, d_k) intermediates, (n,) outputs)."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.d_in:
        raise ValueError(f"input shape {X.shape} does not match model input dim {model.d_in}")
    a = X
    inters = []
    for layer in model.layers[:-1]:
        a = layer.apply(a)
        inters.append(a)
    out = model.layers[-1].apply(a)
    return inters, out[:, 0]


def extract_datasets(model: CompositeModel, X: np.ndarray, y: np.ndarray):
    """Map X through the network and pair every intermediate space with the
    shared response vector, preserving row order."""
    from .vecchia import EmbeddingDataset

    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.shape[0] != y.shape[0]:
        raise ValueError(f"X has {X.shape[0]} rows but y has {y.shape[0]} entries")
    inters, _ = forward_batch(model, X)
    return [
        EmbeddingDataset(E=e.copy(), y=y.copy(), layer_index=k + 1)
        for k, e in enumerate(inters)
    ]


def _init_layers(layer_dims, d_in, activation, rng):
    dims = list(layer_dims)
    if dims[-1] != 1:
        dims = dims + [1]
    layers = []
    prev = d_in
    for i, d in enumerate(dims):
        last = i == len(dims) - 1
        w = rng.standard_normal((prev, d)) / np.sqrt(prev)
        b = np.zeros(d)
        layers.append(LayerSpec(w, b, "identity" if last else activation))
        prev = d
    return layers


def train_toy_mlp(
    X: np.ndarray,
    y: np.ndarray,
    layer_dims,
    activation: str = "selu",
    epochs: int = 2000,
    learning_rate: float = 0.05,
    seed: int = 0,
    momentum: float = 0.9,
):
    """Full-batch gradient descent with momentum on mean-squared error.

    layer_dims lists per-layer output dims; a scalar identity output layer is
    appended when the last entry is not 1.  Deterministic given seed.
    Returns (model, final training MSE).
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if not len(layer_dims):
        raise ValueError("layer_dims must be non-empty")
    if X.shape[0] < 2:
        raise ValueError("need at least two training rows")
    rng = np.random.default_rng(seed)
    layers = _init_layers(layer_dims, X.shape[1], activation, rng)
    n = X.shape[0]
    vel_w = [np.zeros_like(l.weight) for l in layers]
    vel_b = [np.zeros_like(l.bias) for l in layers]

    def loss_of(ls):
        _, out = forward_batch(CompositeModel(tuple(ls)), X)
        return float(np.mean((out - y) ** 2))

    mse = loss_of(layers)
    for epoch in range(epochs):
        # forward, keeping pre-activations for backprop
        acts = [X]
        pres = []
        a = X
        for l in layers:
            z = a @ l.weight + l.bias
            pres.append(z)
            a = _activate(l.activation, z, l.leaky_slope)
            acts.append(a)
        out = a[:, 0]
        mse = float(np.mean((out - y) ** 2))
        if not np.isfinite(mse):
            raise TrainingDivergedError(epoch)
        # backprop of d MSE / d out
        delta = (2.0 / n) * (out - y).reshape(-1, 1)
        new_layers = []
        grads = []
        for i in range(len(layers) - 1, -1, -1):
            l = layers[i]
            delta = delta * _activate_grad(l.activation, pres[i], l.leaky_slope)
            gw = acts[i].T @ delta
            gb = delta.sum(axis=0)
            grads.append((gw, gb))
            if i > 0:
                delta = delta @ l.weight.T
        grads.reverse()
        for i, (gw, gb) in enumerate(grads):
            vel_w[i] = momentum * vel_w[i] - learning_rate * gw
            vel_b[i] = momentum * vel_b[i] - learning_rate * gb
            l = layers[i]
            new_layers.append(
                LayerSpec(l.weight + vel_w[i], l.bias + vel_b[i], l.activation, l.leaky_slope)
            )
        layers = new_layers
    model = CompositeModel(tuple(layers))
    mse = loss_of(layers)
    if not np.isfinite(mse):
        raise TrainingDivergedError(epochs)
    return model, mse


def make_scurve(n: int, noise_sd: float = 0.1, seed: int = 0):
    """S-curve manifold sample: X = (sin t, u, sign(t)(cos t - 1)) with
    t ~ U(-3pi/2, 3pi/2), u ~ U(0, 2); response is t plus Gaussian noise."""
    if n < 1:
        raise ValueError("n must be at least 1")
    rng = np.random.default_rng(seed)
    t = rng.uniform(-1.5 * np.pi, 1.5 * np.pi, size=n)
    u = rng.uniform(0.0, 2.0, size=n)
    X = np.column_stack([np.sin(t), u, np.sign(t) * (np.cos(t) - 1.0)])
    y = t + noise_sd * rng.standard_normal(n)
    return X, y


def model_hash(model: CompositeModel) -> str:
    """Content hash over weights, biases, and activation metadata."""
    h = hashlib.sha256()
    for l in model.layers:
        h.update(l.activation.encode())
        h.update(np.float64(l.leaky_slope).tobytes())
        h.update(np.array(l.weight.shape, dtype="<i8").tobytes())
        h.update(l.weight.astype("<f8").tobytes())
        h.update(l.bias.astype("<f8").tobytes())
    return h.hexdigest()


def save_model(model: CompositeModel, path) -> None:
    """Persist a composite model as a checkpoint directory."""
    meta = {
        "kind": "composite_model",
        "layers": [
            {"activation": l.activation, "leaky_slope": l.leaky_slope}
            for l in model.layers
        ],
        "hash": model_hash(model),
    }
    arrays = {}
    for i, l in enumerate(model.layers):
        arrays[f"w{i}"] = l.weight
        arrays[f"b{i}"] = dataio.as_column(l.bias).T  # (1, d_out)
    dataio.save_checkpoint(dataio.Checkpoint(meta=meta, arrays=arrays), path)


def load_model(path) -> CompositeModel:
    c = dataio.load_checkpoint(path)
    if c.meta.get("kind") != "composite_model":
        raise dataio.SchemaVersionError(f"{path}: not a composite-model checkpoint")
    layers = []
    for i, lm in enumerate(c.meta["layers"]):
        w = c.arrays[f"w{i}"]
        b = c.arrays[f"b{i}"][0]
        layers.append(LayerSpec(w, b, lm["activation"], lm["leaky_slope"]))
    model = CompositeModel(tuple(layers))
    if c.meta.get("hash") != model_hash(model):
        raise dataio.ModelHashMismatchError(f"{path}: stored hash does not match contents")
    return model
