"""Minimal dense-network machinery: forward/backward passes, MSE loss,
SGD/Adam updates, finite-difference gradient checking, and a versioned
binary checkpoint format.

All math runs in 64-bit floats. Inputs are row-major batches (batch, dim);
1-D vectors are accepted as single-row convenience inputs.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class ShapeError(ValueError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 64
    epochs: int = 100
    optimizer: str = "adam"
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    seed: int = 0
    validation_fraction: float = 0.10

    def __post_init__(self) -> None:
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer: {self.optimizer!r}")
        if not 0.0 <= self.validation_fraction < 1.0:
            raise ValueError("validation_fraction must lie in [0, 1)")

    def make_optimizer(self) -> "Optimizer":
        if self.optimizer == "sgd":
            return Sgd(self.learning_rate)
        return Adam(
            self.learning_rate,
            beta1=self.adam_beta1,
            beta2=self.adam_beta2,
            epsilon=self.adam_epsilon,
        )


class DenseNet:
    """Fully-connected network: affine + ReLU per layer, with the final
    activation skipped when ``final_linear`` is set. Every layer carries a
    trainable bias."""

    def __init__(
        self,
        layer_sizes: list[int] | tuple[int, ...],
        final_linear: bool = False,
        seed: int = 0,
    ):
        if len(layer_sizes) < 2:
            raise ValueError("need at least an input and an output size")
        if any(n < 1 for n in layer_sizes):
            raise ValueError("layer sizes must be positive")
        self.layer_sizes = tuple(int(n) for n in layer_sizes)
        self.final_linear = bool(final_linear)
        rng = np.random.default_rng(seed)
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        for fan_in, fan_out in zip(self.layer_sizes[:-1], self.layer_sizes[1:]):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            self.weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
            self.biases.append(np.zeros(fan_out))

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    @property
    def input_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def output_dim(self) -> int:
        return self.layer_sizes[-1]

    def parameters(self) -> list[np.ndarray]:
        out: list[np.ndarray] = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def _as_batch(self, x: np.ndarray) -> tuple[np.ndarray, bool]:
        x = np.asarray(x, dtype=np.float64)
        squeeze = x.ndim == 1
        if squeeze:
            x = x[None, :]
        if x.ndim != 2 or x.shape[1] != self.input_dim:
            raise ShapeError(
                f"expected input of width {self.input_dim}, got shape {x.shape}"
            )
        return x, squeeze

    def forward(self, x: np.ndarray) -> np.ndarray:
        y, _ = self.forward_cached(x)
        return y if np.asarray(x).ndim > 1 else y[0]

    def forward_cached(self, x: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
        """Forward pass keeping per-layer inputs and pre-activations for
        backprop. Returns (output, caches)."""
        a, _ = self._as_batch(x)
        caches: list[np.ndarray] = [a]
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = a @ w.T + b
            last = i == self.n_layers - 1
            a = z if (last and self.final_linear) else np.maximum(z, 0.0)
            caches.append(a)
        return a, caches

    def backward(
        self, caches: list[np.ndarray], grad_output: np.ndarray
    ) -> tuple[list[tuple[np.ndarray, np.ndarray]], np.ndarray]:
        """Backpropagate ``grad_output`` through a cached forward pass.

        Returns per-layer (dW, db) plus the gradient w.r.t. the input.
        """
        if len(caches) != self.n_layers + 1:
            raise ShapeError("caches do not match this network")
        grad = np.asarray(grad_output, dtype=np.float64)
        if grad.ndim == 1:
            grad = grad[None, :]
        if grad.shape != caches[-1].shape:
            raise ShapeError(
                f"gradient shape {grad.shape} does not match output "
                f"{caches[-1].shape}"
            )
        grads: list[tuple[np.ndarray, np.ndarray]] = [None] * self.n_layers  # type: ignore[list-item]
        for i in range(self.n_layers - 1, -1, -1):
            a_out = caches[i + 1]
            last = i == self.n_layers - 1
            if last and self.final_linear:
                dz = grad
            else:
                # ReLU output is cached, so a_out > 0 marks active units
                dz = grad * (a_out > 0.0)
            a_in = caches[i]
            grads[i] = (dz.T @ a_in, dz.sum(axis=0))
            grad = dz @ self.weights[i]
        return grads, grad

    def copy(self) -> "DenseNet":
        clone = DenseNet(self.layer_sizes, final_linear=self.final_linear)
        clone.weights = [w.copy() for w in self.weights]
        clone.biases = [b.copy() for b in self.biases]
        return clone


def mse_loss(prediction: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean squared error over all elements and its gradient 2(pred-target)/n."""
    prediction = np.asarray(prediction, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if prediction.shape != target.shape:
        raise ShapeError(
            f"prediction shape {prediction.shape} != target shape {target.shape}"
        )
    diff = prediction - target
    n = diff.size
    return float(np.mean(diff * diff)), 2.0 * diff / n


class Optimizer:
    def step(self, net: DenseNet, grads: list[tuple[np.ndarray, np.ndarray]]) -> None:
        raise NotImplementedError


class Sgd(Optimizer):
    def __init__(self, learning_rate: float):
        self.learning_rate = learning_rate

    def step(self, net: DenseNet, grads: list[tuple[np.ndarray, np.ndarray]]) -> None:
        for i, (dw, db) in enumerate(grads):
            net.weights[i] -= self.learning_rate * dw
            net.biases[i] -= self.learning_rate * db


class Adam(Optimizer):
    def __init__(
        self,
        learning_rate: float = 1e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        epsilon: float = 1e-8,
    ):
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.t = 0
        self._m: list[np.ndarray] | None = None
        self._v: list[np.ndarray] | None = None

    def step(self, net: DenseNet, grads: list[tuple[np.ndarray, np.ndarray]]) -> None:
        flat = [g for pair in grads for g in pair]
        params = net.parameters()
        if self._m is None:
            self._m = [np.zeros_like(p) for p in params]
            self._v = [np.zeros_like(p) for p in params]
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for p, g, m, v in zip(params, flat, self._m, self._v):
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            m_hat = m / (1 - b1**self.t)
            v_hat = v / (1 - b2**self.t)
            p -= self.learning_rate * m_hat / (np.sqrt(v_hat) + self.epsilon)


@dataclass
class GradCheckReport:
    max_relative_error: float
    n_probes: int
    tolerance: float
    probes: list[tuple[int, int, float]] = field(default_factory=list, repr=False)

    @property
    def passed(self) -> bool:
        return self.max_relative_error < self.tolerance


def _central_difference(evaluate, p: np.ndarray, ci: int, step: float) -> float:
    original = p.flat[ci]
    p.flat[ci] = original + step
    plus = evaluate()
    p.flat[ci] = original - step
    minus = evaluate()
    p.flat[ci] = original
    return (plus - minus) / (2 * step)


def _consistent_fd(evaluate, p: np.ndarray, ci: int, step: float) -> float | None:
    """Central difference, validated at two step sizes.

    Near a ReLU kink the estimate depends strongly on the step; such probe
    points are not differentiable and are reported as invalid (None).
    """
    coarse = _central_difference(evaluate, p, ci, step)
    fine = _central_difference(evaluate, p, ci, step / 8.0)
    scale = max(abs(coarse), abs(fine), 1e-7)
    if abs(coarse - fine) > 1e-3 * scale:
        return None
    return coarse


def gradient_check(
    net: DenseNet,
    loss_fn,
    n_probes: int = 25,
    step: float = 1e-5,
    tolerance: float = 1e-4,
    seed: int = 0,
) -> GradCheckReport:
    """Compare analytic parameter gradients against central differences.

    ``loss_fn(net)`` must return (scalar loss, per-layer (dW, db) grads)
    computed at the network's current parameters. Probed coordinates are
    sampled uniformly over all parameters; probes landing on a point where
    the central difference is not self-consistent across step sizes (an
    activation kink inside the step) are redrawn.
    """
    rng = np.random.default_rng(seed)
    _, grads = loss_fn(net)
    params = net.parameters()
    flat_grads = [g for pair in grads for g in pair]
    max_err = 0.0
    probes: list[tuple[int, int, float]] = []
    attempts = 0
    while len(probes) < n_probes and attempts < 50 * n_probes:
        attempts += 1
        pi = int(rng.integers(len(params)))
        p = params[pi]
        ci = int(rng.integers(p.size))
        numeric = _consistent_fd(lambda: loss_fn(net)[0], p, ci, step)
        if numeric is None:
            continue
        analytic = flat_grads[pi].flat[ci]
        denom = max(abs(numeric), abs(analytic), 1e-8)
        err = abs(numeric - analytic) / denom
        probes.append((pi, ci, err))
        max_err = max(max_err, err)
    return GradCheckReport(
        max_relative_error=max_err,
        n_probes=len(probes),
        tolerance=tolerance,
        probes=probes,
    )


_MAGIC = b"TSNN"
_VERSION = 1


def save_model(net: DenseNet, path: str | Path, sidecar: dict | None = None) -> None:
    """Write the versioned binary checkpoint plus a JSON sidecar describing
    the architecture (and any training config handed in)."""
    path = Path(path)
    header = struct.pack(
        "<4sIIB",
        _MAGIC,
        _VERSION,
        len(net.layer_sizes),
        1 if net.final_linear else 0,
    )
    body = bytearray(header)
    body += struct.pack(f"<{len(net.layer_sizes)}I", *net.layer_sizes)
    for w, b in zip(net.weights, net.biases):
        body += np.ascontiguousarray(w, dtype="<f8").tobytes()
        body += np.ascontiguousarray(b, dtype="<f8").tobytes()
    checksum = zlib.crc32(bytes(body))
    body += struct.pack("<Q", checksum)
    path.write_bytes(bytes(body))

    meta = {
        "layer_sizes": list(net.layer_sizes),
        "final_linear": net.final_linear,
    }
    if sidecar:
        meta.update(sidecar)
    path.with_suffix(path.suffix + ".json").write_text(
        json.dumps(meta, indent=1, sort_keys=True), encoding="utf-8"
    )


def load_model(path: str | Path) -> tuple[DenseNet, dict]:
    """Read a checkpoint back, validating magic, version and checksum."""
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"no such checkpoint: {path}")
    raw = path.read_bytes()
    if len(raw) < struct.calcsize("<4sIIB") + 8:
        raise CheckpointError(f"{path}: truncated checkpoint")
    payload, (stored,) = raw[:-8], struct.unpack("<Q", raw[-8:])
    if zlib.crc32(payload) != stored:
        raise CheckpointError(f"{path}: checksum mismatch (corrupt file)")
    magic, version, n_sizes, final_linear = struct.unpack_from("<4sIIB", payload, 0)
    if magic != _MAGIC:
        raise CheckpointError(f"{path}: bad magic {magic!r}")
    if version != _VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    offset = struct.calcsize("<4sIIB")
    sizes = struct.unpack_from(f"<{n_sizes}I", payload, offset)
    offset += 4 * n_sizes
    net = DenseNet(list(sizes), final_linear=bool(final_linear))
    for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        w_bytes = 8 * fan_out * fan_in
        net.weights[i] = (
            np.frombuffer(payload, dtype="<f8", count=fan_out * fan_in, offset=offset)
            .reshape(fan_out, fan_in)
            .copy()
        )
        offset += w_bytes
        net.biases[i] = np.frombuffer(
            payload, dtype="<f8", count=fan_out, offset=offset
        ).copy()
        offset += 8 * fan_out
    if offset != len(payload):
        raise CheckpointError(f"{path}: payload size mismatch")

    sidecar_path = path.with_suffix(path.suffix + ".json")
    sidecar = {}
    if sidecar_path.is_file():
        sidecar = json.loads(sidecar_path.read_text(encoding="utf-8"))
    return net, sidecar
