"""Feed-forward ReLU classifier over a flat parameter vector.

Parameters are stored layer by layer as the row-major weight matrix
``W`` (fan_out x fan_in) followed by the bias vector, so the output
layer's weights are the last ``C*H + C`` entries minus the bias.
All arithmetic is float64.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .errors import NonFiniteError

# Rows processed together when materializing per-example gradients.
_GRAD_CHUNK = 256


@dataclass(frozen=True)
class ArchSpec:
    input_dim: int
    hidden: tuple[int, ...] = (128, 128)
    num_classes: int = 2

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.input_dim < 1 or self.num_classes < 1:
            raise ValueError("input_dim and num_classes must be positive")
        if any(h < 1 for h in self.hidden):
            raise ValueError("hidden widths must be positive")

    @property
    def widths(self) -> tuple[int, ...]:
        return (self.input_dim, *self.hidden, self.num_classes)

    @property
    def layers(self) -> list[tuple[int, int]]:
        """(fan_in, fan_out) per affine layer."""
        w = self.widths
        return list(zip(w[:-1], w[1:]))

    @property
    def num_params(self) -> int:
        return sum(i * o + o for i, o in self.layers)

    def slices(self) -> list[tuple[slice, slice]]:
        """(weight slice, bias slice) into the flat vector for every layer."""
        out = []
        pos = 0
        for fan_in, fan_out in self.layers:
            w = slice(pos, pos + fan_in * fan_out)
            pos += fan_in * fan_out
            b = slice(pos, pos + fan_out)
            pos += fan_out
            out.append((w, b))
        return out

    def last_layer_slice(self) -> slice:
        """Slice of the output layer's weight matrix (C x H, row-major)."""
        return self.slices()[-1][0]


@dataclass(frozen=True)
class InitSpec:
    family: str = "he_uniform"
    scale: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.family not in ("he_uniform", "he_normal"):
            raise ValueError(f"unknown init family {self.family!r}")
        if self.scale < 0:
            raise ValueError("init scale must be nonnegative")


@dataclass(frozen=True, eq=False)
class ParamVector:
    values: np.ndarray
    arch: ArchSpec

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.shape != (self.arch.num_params,):
            raise ValueError(
                f"expected {self.arch.num_params} parameters, got shape {values.shape}"
            )
        if not np.all(np.isfinite(values)):
            raise NonFiniteError("parameter vector contains non-finite entries")
        values = values.copy()
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def layer(self, index: int) -> tuple[np.ndarray, np.ndarray]:
        """Return (W, b) views for layer ``index``; W has shape (fan_out, fan_in)."""
        fan_in, fan_out = self.arch.layers[index]
        ws, bs = self.arch.slices()[index]
        return self.values[ws].reshape(fan_out, fan_in), self.values[bs]

    def digest(self) -> str:
        return hashlib.sha256(self.values.tobytes()).hexdigest()[:16]


@dataclass(frozen=True)
class TrainConfig:
    step_size: float = 3e-4
    weight_decay: float = 1e-4
    minibatch: int = 100
    epochs: int = 50
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.step_size <= 0 or self.weight_decay < 0:
            raise ValueError("step_size must be positive and weight_decay nonnegative")
        if self.minibatch < 1 or self.epochs < 0:
            raise ValueError("minibatch must be positive and epochs nonnegative")
        if not (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1):
            raise ValueError("Adam betas must lie in [0, 1)")
        if self.adam_eps <= 0:
            raise ValueError("adam_eps must be positive")


@dataclass(frozen=True, eq=False)
class WeightedDataset:
    features: np.ndarray
    labels: np.ndarray
    weights: np.ndarray = field(default=None)

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.features, dtype=np.float64))
        y = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if len(y) == 0:
            X = X.reshape(0, X.shape[-1] if X.size else 0)
        w = np.ones(len(y)) if self.weights is None else np.asarray(self.weights, dtype=np.float64)
        if X.shape[0] != len(y) or w.shape != y.shape:
            raise ValueError("features, labels and weights must have matching lengths")
        if np.any(w < 0):
            raise ValueError("weights must be nonnegative")
        if len(y) and w.sum() <= 0:
            raise ValueError("weights must not all be zero")
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "weights", w)

    def __len__(self) -> int:
        return len(self.labels)


def init_params(arch: ArchSpec, init: InitSpec) -> ParamVector:
    """Sample He-scaled weights (times ``init.scale``) and zero biases."""
    rng = np.random.default_rng(init.seed)
    values = np.zeros(arch.num_params)
    for (fan_in, fan_out), (ws, _) in zip(arch.layers, arch.slices()):
        size = fan_in * fan_out
        if init.family == "he_uniform":
            bound = np.sqrt(6.0 / fan_in)
            draw = rng.uniform(-bound, bound, size)
        else:
            draw = rng.normal(0.0, np.sqrt(2.0 / fan_in), size)
        values[ws] = init.scale * draw
    return ParamVector(values, arch)


def _check_features(params: ParamVector, features) -> np.ndarray:
    X = np.atleast_2d(np.asarray(features, dtype=np.float64))
    if X.shape[1] != params.arch.input_dim:
        raise ValueError(
            f"feature width {X.shape[1]} does not match input_dim {params.arch.input_dim}"
        )
    return X


def _forward_cache(params: ParamVector, X: np.ndarray):
    """Run the network and keep every layer's input activation.

    Returns (activations, pre_activations, logits) where activations[l]
    is the input to layer l.
    """
    acts = [X]
    pre = []
    h = X
    n_layers = len(params.arch.layers)
    for l in range(n_layers):
        W, b = params.layer(l)
        with np.errstate(over="ignore", invalid="ignore"):
            z = h @ W.T + b
        if not np.all(np.isfinite(z)):
            raise NonFiniteError(f"non-finite activations in layer {l}", layer=l)
        if l < n_layers - 1:
            pre.append(z)
            h = np.maximum(z, 0.0)
            acts.append(h)
        else:
            return acts, pre, z
    raise AssertionError("unreachable")


def forward(params: ParamVector, features) -> np.ndarray:
    """Logits (B x C) for a batch of feature rows."""
    X = _check_features(params, features)
    return _forward_cache(params, X)[2]


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _cross_entropy(logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
    m = logits.max(axis=1)
    lse = m + np.log(np.exp(logits - m[:, None]).sum(axis=1))
    return lse - logits[np.arange(len(labels)), labels]


def _check_labels(params: ParamVector, labels) -> np.ndarray:
    y = np.asarray(labels, dtype=np.int64).reshape(-1)
    C = params.arch.num_classes
    if np.any((y < 0) | (y >= C)):
        raise ValueError(f"labels must lie in [0, {C})")
    return y


def _output_delta(logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
    delta = _softmax(logits)
    delta[np.arange(len(labels)), labels] -= 1.0
    return delta


def loss_and_grad(params: ParamVector, example, weight: float = 1.0) -> tuple[float, np.ndarray]:
    """Weighted cross-entropy of one (features, label) pair and its gradient."""
    x, label = example
    X = _check_features(params, np.asarray(x, dtype=np.float64).reshape(1, -1))
    y = _check_labels(params, [label])
    losses, grads = _per_example_block(params, X, y)
    return weight * float(losses[0]), weight * grads[0]


def _per_example_block(params: ParamVector, X: np.ndarray, y: np.ndarray):
    arch = params.arch
    acts, pre, logits = _forward_cache(params, X)
    losses = _cross_entropy(logits, y)
    out = np.empty((len(y), arch.num_params))
    delta = _output_delta(logits, y)
    slices = arch.slices()
    for l in range(len(arch.layers) - 1, -1, -1):
        ws, bs = slices[l]
        a = acts[l]
        out[:, ws] = (delta[:, :, None] * a[:, None, :]).reshape(len(y), -1)
        out[:, bs] = delta
        if l > 0:
            W, _ = params.layer(l)
            delta = (delta @ W) * (pre[l - 1] > 0)
    if not np.all(np.isfinite(out)):
        raise NonFiniteError("non-finite gradient")
    return losses, out


def per_example_grads(params: ParamVector, dataset: WeightedDataset, use_weights: bool = False) -> np.ndarray:
    """Gradient of every example's loss, one row per example (N x D)."""
    X = _check_features(params, dataset.features) if len(dataset) else dataset.features
    y = _check_labels(params, dataset.labels)
    out = np.empty((len(y), params.arch.num_params))
    for lo in range(0, len(y), _GRAD_CHUNK):
        out[lo:lo + _GRAD_CHUNK] = _per_example_block(params, X[lo:lo + _GRAD_CHUNK], y[lo:lo + _GRAD_CHUNK])[1]
    if use_weights:
        out *= dataset.weights[:, None]
    return out


def penultimate(params: ParamVector, features) -> np.ndarray:
    """Hidden representation fed into the output layer (B x H)."""
    X = _check_features(params, features)
    return _forward_cache(params, X)[0][-1]


def last_layer_grads(params: ParamVector, dataset: WeightedDataset) -> np.ndarray:
    """Per-example gradients w.r.t. the output weight matrix, flattened row-major (N x C*H).

    Only needs a forward pass: row i is vec((softmax(s_i) - onehot(y_i)) h_i^T).
    Without hidden layers h is the input itself.
    """
    y = _check_labels(params, dataset.labels)
    if len(y) == 0:
        return np.empty((0, params.arch.num_classes * params.arch.widths[-2]))
    X = _check_features(params, dataset.features)
    acts, _, logits = _forward_cache(params, X)
    h = acts[-1]
    delta = _output_delta(logits, y)
    return (delta[:, :, None] * h[:, None, :]).reshape(len(y), -1)


def _batch_loss_grad(params: ParamVector, X, y, w) -> tuple[float, np.ndarray]:
    """Weight-normalized minibatch loss and its gradient via one backward pass."""
    arch = params.arch
    acts, pre, logits = _forward_cache(params, X)
    wn = w / w.sum()
    loss = float(wn @ _cross_entropy(logits, y))
    grad = np.empty(arch.num_params)
    delta = _output_delta(logits, y) * wn[:, None]
    slices = arch.slices()
    for l in range(len(arch.layers) - 1, -1, -1):
        ws, bs = slices[l]
        grad[ws] = (delta.T @ acts[l]).ravel()
        grad[bs] = delta.sum(axis=0)
        if l > 0:
            W, _ = params.layer(l)
            delta = (delta @ W) * (pre[l - 1] > 0)
    return loss, grad


def train(params: ParamVector, dataset: WeightedDataset, config: TrainConfig) -> ParamVector:
    """Adam on shuffled weighted minibatches with coupled L2 decay."""
    if len(dataset) == 0:
        raise ValueError("cannot train on an empty dataset")
    X = _check_features(params, dataset.features)
    y = _check_labels(params, dataset.labels)
    w = dataset.weights
    rng = np.random.default_rng(config.seed)
    theta = params.values.copy()
    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    b1, b2 = config.adam_beta1, config.adam_beta2
    t = 0
    for epoch in range(config.epochs):
        order = rng.permutation(len(y))
        for step, lo in enumerate(range(0, len(y), config.minibatch)):
            idx = order[lo:lo + config.minibatch]
            if w[idx].sum() <= 0:
                continue
            try:
                loss, grad = _batch_loss_grad(ParamVector(theta, params.arch), X[idx], y[idx], w[idx])
            except NonFiniteError as exc:
                raise NonFiniteError(
                    f"training diverged at epoch {epoch}, step {step}: {exc}",
                    layer=exc.layer, epoch=epoch, step=step,
                ) from exc
            if not np.isfinite(loss):
                raise NonFiniteError(
                    f"non-finite loss at epoch {epoch}, step {step}", epoch=epoch, step=step
                )
            grad += config.weight_decay * theta
            t += 1
            m = b1 * m + (1 - b1) * grad
            v = b2 * v + (1 - b2) * grad * grad
            m_hat = m / (1 - b1 ** t)
            v_hat = v / (1 - b2 ** t)
            theta = theta - config.step_size * m_hat / (np.sqrt(v_hat) + config.adam_eps)
    return ParamVector(theta, params.arch)


def predict(params: ParamVector, features) -> np.ndarray:
    """Argmax class per row; ties resolve to the lowest class index."""
    return np.argmax(forward(params, features), axis=1)

