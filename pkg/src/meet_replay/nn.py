"""Small dense networks with hand-written reverse-mode gradients.

Everything is float64. A forward pass returns a tape holding the per-layer
inputs and activations, and ``backward`` consumes that tape exactly once.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

ACTIVATIONS = ("tanh", "relu", "identity")
_ACT_CODES = {name: i for i, name in enumerate(ACTIVATIONS)}
MAGIC = b"MEETNET1"


class ShapeError(ValueError):
    pass


class InvalidTapeError(RuntimeError):
    pass


class NonFiniteError(FloatingPointError):
    pass


@dataclass
class MlpParameters:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activations: list[str]
    seed: int | None = None
    version: int = 0

    @property
    def dims(self) -> list[int]:
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    def num_parameters(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def copy(self) -> MlpParameters:
        return MlpParameters(
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            list(self.activations),
            self.seed,
        )

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for pair in zip(self.weights, self.biases) for a in pair])

    def check_finite(self) -> None:
        # a sum is finite exactly when no element is nan or inf (or it overflowed)
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            if not np.isfinite(w.sum() + b.sum()):
                raise NonFiniteError(f"non-finite parameter in layer {k}")


@dataclass
class Gradients:
    """Parameter gradients shaped like an :class:`MlpParameters`.

    ``inputs`` carries the gradient with respect to the network input.
    """

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    inputs: np.ndarray | None = None

    @classmethod
    def zeros_like(cls, params: MlpParameters) -> Gradients:
        return cls([np.zeros_like(w) for w in params.weights], [np.zeros_like(b) for b in params.biases])

    def scaled(self, factor: float) -> Gradients:
        return Gradients([w * factor for w in self.weights], [b * factor for b in self.biases])

    def add_(self, other: Gradients) -> Gradients:
        for w, ow in zip(self.weights, other.weights):
            w += ow
        for b, ob in zip(self.biases, other.biases):
            b += ob
        return self

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for pair in zip(self.weights, self.biases) for a in pair])

    def sq_norm(self) -> float:
        return float(sum(np.vdot(w, w) + np.vdot(b, b) for w, b in zip(self.weights, self.biases)))


@dataclass
class GradientTape:
    inputs: list[np.ndarray]
    outputs: list[np.ndarray]
    batch_size: int
    params_id: int
    params_version: int
    shapes: list[tuple[int, int]]
    used: bool = field(default=False)


def mlp_init(layer_dims, activations, seed: int) -> MlpParameters:
    """Fan-in uniform initialisation, weights in +-1/sqrt(fan_in)."""
    layer_dims = [int(d) for d in layer_dims]
    activations = list(activations)
    if len(layer_dims) < 2 or len(activations) != len(layer_dims) - 1:
        raise ValueError("need len(activations) == len(layer_dims) - 1 and at least one layer")
    if any(d < 1 for d in layer_dims):
        raise ValueError("layer dims must be positive")
    for act in activations:
        if act not in ACTIVATIONS:
            raise ValueError(f"unknown activation {act!r}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_dims[:-1], layer_dims[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(rng.uniform(-bound, bound, size=fan_out))
    return MlpParameters(weights, biases, activations, seed)


def _activate(z: np.ndarray, act: str) -> np.ndarray:
    if act == "tanh":
        return np.tanh(z)
    if act == "relu":
        return np.maximum(z, 0.0)
    return z


def forward(params: MlpParameters, x) -> tuple[np.ndarray, GradientTape]:
    h = np.asarray(x, dtype=np.float64)
    if h.ndim == 1:
        h = h[None, :]
    if h.ndim != 2 or h.shape[1] != params.weights[0].shape[1]:
        raise ShapeError(f"input shape {h.shape} does not match first layer width {params.weights[0].shape[1]}")
    inputs, outputs = [], []
    for w, b, act in zip(params.weights, params.biases, params.activations):
        inputs.append(h)
        h = _activate(h @ w.T + b, act)
        outputs.append(h)
    tape = GradientTape(
        inputs, outputs, h.shape[0], id(params), params.version, [w.shape for w in params.weights]
    )
    return h, tape


def predict(params: MlpParameters, x) -> np.ndarray:
    """Forward pass without recording a tape."""
    h = np.asarray(x, dtype=np.float64)
    for w, b, act in zip(params.weights, params.biases, params.activations):
        h = _activate(h @ w.T + b, act)
    return h


def backward(params: MlpParameters, tape: GradientTape, output_gradient, param_grads: bool = True) -> Gradients:
    """Exact gradients of ``sum(output * output_gradient)`` w.r.t. every parameter.

    With ``param_grads=False`` only the input gradient is computed and the
    parameter lists are left empty.
    """
    if tape.used:
        raise InvalidTapeError("tape already consumed by a previous backward pass")
    if (
        tape.params_id != id(params)
        or tape.params_version != params.version
        or tape.shapes != [w.shape for w in params.weights]
    ):
        raise InvalidTapeError("tape was recorded with different parameters")
    g = np.asarray(output_gradient, dtype=np.float64)
    if g.ndim == 1 and tape.outputs[-1].shape[0] == 1:
        g = g[None, :]
    if g.shape != tape.outputs[-1].shape:
        raise ShapeError(f"output gradient shape {g.shape} != output shape {tape.outputs[-1].shape}")
    tape.used = True
    n = len(params.weights)
    gw: list[np.ndarray] = [None] * n  # type: ignore[list-item]
    gb: list[np.ndarray] = [None] * n  # type: ignore[list-item]
    for k in range(n - 1, -1, -1):
        act = params.activations[k]
        out = tape.outputs[k]
        if act == "tanh":
            g = g * (1.0 - out * out)
        elif act == "relu":
            g = g * (out > 0)
        if param_grads:
            gw[k] = g.T @ tape.inputs[k]
            gb[k] = g.sum(axis=0)
        g = g @ params.weights[k]
    if not param_grads:
        return Gradients([], [], g)
    return Gradients(gw, gb, g)


@dataclass
class StackedTape:
    inputs: list[np.ndarray]
    outputs: list[np.ndarray]
    weights: list[np.ndarray]
    activations: list[str]
    shared_input: bool
    used: bool = False


def forward_stacked(nets: list[MlpParameters], x) -> tuple[np.ndarray, StackedTape]:
    """Run several same-shaped networks at once.

    ``x`` is either one ``(batch, d)`` input shared by every net or a
    ``(n_nets, batch, d)`` stack. Output has shape ``(n_nets, batch, out)``.
    """
    acts = nets[0].activations
    if any(n.activations != acts or n.dims != nets[0].dims for n in nets):
        raise ShapeError("stacked networks must share one architecture")
    h = np.asarray(x, dtype=np.float64)
    shared = h.ndim == 2
    if h.shape[-1] != nets[0].dims[0]:
        raise ShapeError(f"input width {h.shape[-1]} does not match {nets[0].dims[0]}")
    inputs, outputs, weights = [], [], []
    for k, act in enumerate(acts):
        w = np.stack([n.weights[k] for n in nets])
        wt = np.stack([n.weights[k].T for n in nets])
        b = np.stack([n.biases[k] for n in nets])[:, None, :]
        inputs.append(h)
        h = _activate(np.matmul(h, wt) + b, act)
        outputs.append(h)
        weights.append(w)
    return h, StackedTape(inputs, outputs, weights, list(acts), shared)


def backward_stacked(tape: StackedTape, output_gradient, param_grads: bool = True) -> tuple[list[Gradients], np.ndarray]:
    """Per-network gradients plus the input gradient.

    With a shared input the input gradient is summed over the networks.
    ``param_grads=False`` skips the weight gradients and returns an empty list.
    """
    if tape.used:
        raise InvalidTapeError("tape already consumed by a previous backward pass")
    g = np.asarray(output_gradient, dtype=np.float64)
    if g.shape != tape.outputs[-1].shape:
        raise ShapeError(f"output gradient shape {g.shape} != output shape {tape.outputs[-1].shape}")
    tape.used = True
    n_layers = len(tape.weights)
    gw: list[np.ndarray] = [None] * n_layers  # type: ignore[list-item]
    gb: list[np.ndarray] = [None] * n_layers  # type: ignore[list-item]
    for k in range(n_layers - 1, -1, -1):
        act, out = tape.activations[k], tape.outputs[k]
        if act == "tanh":
            g = g * (1.0 - out * out)
        elif act == "relu":
            g = g * (out > 0)
        if param_grads:
            gw[k] = np.matmul(g.transpose(0, 2, 1), tape.inputs[k])
            gb[k] = g.sum(axis=1)
        g = np.matmul(g, tape.weights[k])
    if tape.shared_input:
        g = g.sum(axis=0)
    if not param_grads:
        return [], g
    n_nets = tape.weights[0].shape[0]
    grads = [Gradients([w[i] for w in gw], [b[i] for b in gb]) for i in range(n_nets)]
    return grads, g


def _check_same_arch(a, b) -> None:
    if len(a.weights) != len(b.weights) or any(x.shape != y.shape for x, y in zip(a.weights, b.weights)):
        raise ShapeError("architectures differ")
    if any(x.shape != y.shape for x, y in zip(a.biases, b.biases)):
        raise ShapeError("architectures differ")


def apply_gradients(params: MlpParameters, delta: Gradients, learning_rate: float) -> None:
    """In-place ``theta <- theta + learning_rate * delta``."""
    _check_same_arch(params, delta)
    for w, dw in zip(params.weights, delta.weights):
        w += learning_rate * dw
    for b, db in zip(params.biases, delta.biases):
        b += learning_rate * db
    params.version += 1
    params.check_finite()


def polyak_update(target: MlpParameters, online: MlpParameters, tau: float) -> None:
    """In-place ``target <- tau * online + (1 - tau) * target``."""
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"tau must lie in [0, 1], got {tau}")
    _check_same_arch(target, online)
    if tau == 1.0:
        for t, o in zip(target.weights + target.biases, online.weights + online.biases):
            t[...] = o
    elif tau > 0.0:
        for t, o in zip(target.weights + target.biases, online.weights + online.biases):
            t *= 1.0 - tau
            t += tau * o
    target.version += 1


class SGD:
    """Gradient descent with optional heavy-ball momentum and global-norm clipping."""

    def __init__(self, learning_rate: float, momentum: float = 0.0, max_grad_norm: float | None = None):
        if learning_rate < 0:
            raise ValueError("learning rate must be >= 0")
        if not 0.0 <= momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.max_grad_norm = max_grad_norm
        self._velocity: dict[int, Gradients] = {}

    def descend(self, params: MlpParameters, grads: Gradients, norm_scale: float = 1.0) -> None:
        """Step ``params`` against ``grads`` (a loss gradient)."""
        if not np.isfinite(grads.sq_norm()):
            raise NonFiniteError("non-finite gradient")
        step = grads.scaled(-norm_scale)
        if self.momentum:
            vel = self._velocity.get(id(params))
            if vel is None:
                vel = self._velocity[id(params)] = Gradients.zeros_like(params)
            for v, s in zip(vel.weights + vel.biases, step.weights + step.biases):
                v *= self.momentum
                v += s
            step = vel
        apply_gradients(params, step, self.learning_rate)

    def clip_scale(self, *grads: Gradients) -> float:
        """Factor that brings the joint norm of ``grads`` under ``max_grad_norm``."""
        if self.max_grad_norm is None:
            return 1.0
        norm = np.sqrt(sum(g.sq_norm() for g in grads))
        return 1.0 if norm <= self.max_grad_norm else self.max_grad_norm / norm


def save_checkpoint(params: MlpParameters, path) -> None:
    """Write ``params`` in the little-endian MEETNET1 layout (see README)."""
    parts = [MAGIC, struct.pack("<I", len(params.weights))]
    for w, act in zip(params.weights, params.activations):
        parts.append(struct.pack("<IIB", w.shape[1], w.shape[0], _ACT_CODES[act]))
    for w, b in zip(params.weights, params.biases):
        parts.append(np.ascontiguousarray(w, dtype="<f8").tobytes())
        parts.append(np.ascontiguousarray(b, dtype="<f8").tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_checkpoint(path) -> MlpParameters:
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise ValueError("not a MEETNET1 checkpoint")
    (n_layers,) = struct.unpack_from("<I", data, 8)
    offset = 12
    shapes, acts = [], []
    for _ in range(n_layers):
        fan_in, fan_out, code = struct.unpack_from("<IIB", data, offset)
        offset += 9
        shapes.append((fan_out, fan_in))
        acts.append(ACTIVATIONS[code])
    weights, biases = [], []
    for fan_out, fan_in in shapes:
        w = np.frombuffer(data, dtype="<f8", count=fan_out * fan_in, offset=offset).reshape(fan_out, fan_in)
        offset += w.nbytes
        b = np.frombuffer(data, dtype="<f8", count=fan_out, offset=offset)
        offset += b.nbytes
        weights.append(w.astype(np.float64))
        biases.append(b.astype(np.float64))
    if offset != len(data):
        raise ValueError("trailing bytes in checkpoint")
    return MlpParameters(weights, biases, acts)
