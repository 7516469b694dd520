"""Small fully connected Q-network with hand-rolled backpropagation.

Hidden layers are rectified, the output layer is linear, one Q-value per
action. Besides parameter gradients for TD training, the network exposes
analytic gradients of attack losses with respect to its *input*, which the
gradient-based observation attacks need.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np


class QNetError(ValueError):
    pass


@dataclass
class QNetwork:
    """Feedforward Q-function. ``sizes`` = [input_dim, hidden..., n_actions]."""

    sizes: list[int]
    weights: list[np.ndarray] = field(default_factory=list)  # each (fan_in, fan_out)
    biases: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def initialize(cls, sizes, rng: np.random.Generator) -> "QNetwork":
        """Glorot-uniform weights (+-sqrt(6/(fan_in+fan_out))), zero biases."""
        sizes = [int(s) for s in sizes]
        if len(sizes) < 2 or any(s < 1 for s in sizes):
            raise QNetError(f"bad layer sizes {sizes}")
        weights = []
        biases = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
            biases.append(np.zeros(fan_out))
        return cls(sizes=sizes, weights=weights, biases=biases)

    @property
    def input_dim(self) -> int:
        return self.sizes[0]

    @property
    def n_actions(self) -> int:
        return self.sizes[-1]

    def clone(self) -> "QNetwork":
        return QNetwork(
            sizes=list(self.sizes),
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
        )

    def check_finite(self) -> None:
        for w, b in zip(self.weights, self.biases):
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise QNetError("non-finite network parameters")


@dataclass
class GradientBundle:
    """Loss value plus gradients shaped exactly like the network parameters."""

    loss: float
    weight_grads: list[np.ndarray]
    bias_grads: list[np.ndarray]


def _forward_cached(net: QNetwork, x: np.ndarray):
    """Batch forward pass keeping the activations needed for backprop."""
    activations = [x]
    a = x
    last = len(net.weights) - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = a @ w + b
        a = z if i == last else np.maximum(z, 0.0)
        activations.append(a)
    return activations


def forward(net: QNetwork, state) -> np.ndarray:
    """Q-values for one state (1-D) or a batch of states (2-D)."""
    x = np.asarray(state, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.shape[1] != net.input_dim:
        raise QNetError(f"state dim {x.shape[1]} != input dim {net.input_dim}")
    q = _forward_cached(net, x)[-1]
    return q[0] if single else q


def _backward(net: QNetwork, activations, dq: np.ndarray):
    """Backprop dLoss/dQ through the net; returns (param grads, input grad)."""
    weight_grads = [np.zeros_like(w) for w in net.weights]
    bias_grads = [np.zeros_like(b) for b in net.biases]
    delta = dq
    for i in range(len(net.weights) - 1, -1, -1):
        a_prev = activations[i]
        weight_grads[i] = a_prev.T @ delta
        bias_grads[i] = delta.sum(axis=0)
        delta = delta @ net.weights[i].T
        if i > 0:
            delta = delta * (activations[i] > 0.0)
    return weight_grads, bias_grads, delta


def td_loss(net: QNetwork, target: QNetwork, batch, gamma: float) -> GradientBundle:
    """Mean squared TD error over a transition batch.

    y = r + gamma * max_a' Q_target(s', a'), or y = r for terminal rows; the
    target branch is treated as a constant.
    """
    if not 0.0 <= gamma <= 1.0:
        raise QNetError(f"gamma must be in [0,1], got {gamma}")
    if len(batch) == 0:
        raise QNetError("empty batch")
    states = np.stack([t.state for t in batch])
    next_states = np.stack([t.next_state for t in batch])
    actions = np.array([t.action for t in batch], dtype=np.intp)
    rewards = np.array([t.reward for t in batch], dtype=np.float64)
    terminal = np.array([t.terminal for t in batch], dtype=bool)

    next_q = forward(target, next_states)
    y = rewards + gamma * next_q.max(axis=1) * (~terminal)

    activations = _forward_cached(net, states)
    q = activations[-1]
    rows = np.arange(len(batch))
    diff = q[rows, actions] - y
    loss = float(np.mean(diff**2))
    if not np.isfinite(loss):
        raise QNetError("non-finite TD loss")

    dq = np.zeros_like(q)
    dq[rows, actions] = 2.0 * diff / len(batch)
    weight_grads, bias_grads, _ = _backward(net, activations, dq)
    return GradientBundle(loss=loss, weight_grads=weight_grads, bias_grads=bias_grads)


def _softmax(q: np.ndarray) -> np.ndarray:
    e = np.exp(q - q.max())
    return e / e.sum()


def attack_loss_value(net: QNetwork, state, loss_spec: str, action: int) -> float:
    """Scalar attack loss at a state (used by finite-difference checks)."""
    q = forward(net, np.asarray(state, dtype=np.float64))
    if loss_spec == "cross_entropy":
        return float(-np.log(_softmax(q)[action] + 1e-300))
    others = np.delete(q, action)
    if loss_spec == "lead_margin":
        return float(max(0.0, q[action] - others.max()))
    if loss_spec == "deficit_margin":
        return float(max(0.0, others.max() - q[action]))
    raise QNetError(f"unknown loss_spec {loss_spec!r}")


def input_gradient(net: QNetwork, state, loss_spec: str, action: int) -> np.ndarray:
    """Analytic gradient of an attack loss with respect to the input.

    loss_spec:
      cross_entropy  -- -log softmax(Q)[action]
      lead_margin    -- max(0, Q[action] - best other Q)   (dethrone ``action``)
      deficit_margin -- max(0, best other Q - Q[action])   (crown ``action``)
    """
    x = np.asarray(state, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != net.input_dim:
        raise QNetError(f"state shape {x.shape} != ({net.input_dim},)")
    if not 0 <= action < net.n_actions:
        raise QNetError(f"action {action} out of range")
    activations = _forward_cached(net, x[None, :])
    q = activations[-1][0]
    dq = np.zeros((1, net.n_actions))
    if loss_spec == "cross_entropy":
        p = _softmax(q)
        dq[0] = p
        dq[0, action] -= 1.0
    elif loss_spec in ("lead_margin", "deficit_margin"):
        others = np.delete(q, action)
        rival = int(np.argmax(others))
        rival += rival >= action  # undo the delete offset
        if loss_spec == "lead_margin" and q[action] - q[rival] > 0.0:
            dq[0, action] = 1.0
            dq[0, rival] = -1.0
        elif loss_spec == "deficit_margin" and q[rival] - q[action] > 0.0:
            dq[0, rival] = 1.0
            dq[0, action] = -1.0
    else:
        raise QNetError(f"unknown loss_spec {loss_spec!r}")
    _, _, dx = _backward(net, activations, dq)
    return dx[0]


def sgd_step(net: QNetwork, grads: GradientBundle, learning_rate: float) -> QNetwork:
    """In-place plain SGD update; returns the mutated network."""
    if learning_rate <= 0:
        raise QNetError(f"learning rate must be > 0, got {learning_rate}")
    for w, gw in zip(net.weights, grads.weight_grads):
        w -= learning_rate * gw
    for b, gb in zip(net.biases, grads.bias_grads):
        b -= learning_rate * gb
    net.check_finite()
    return net


def sync_target(net: QNetwork, target: QNetwork) -> QNetwork:
    """Copy net parameters into the target snapshot (in place)."""
    if net.sizes != target.sizes:
        raise QNetError(f"shape mismatch: {net.sizes} vs {target.sizes}")
    for tw, w in zip(target.weights, net.weights):
        tw[...] = w
    for tb, b in zip(target.biases, net.biases):
        tb[...] = b
    return target


CHECKPOINT_VERSION = 1


def save_checkpoint(net: QNetwork, path, meta: dict | None = None) -> None:
    """Versioned JSON checkpoint; floats round-trip bit-exactly via repr."""
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "sizes": net.sizes,
        "weights": [w.tolist() for w in net.weights],
        "biases": [b.tolist() for b in net.biases],
        "meta": meta or {},
    }
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(payload, handle, sort_keys=True)


def load_checkpoint(path) -> tuple[QNetwork, dict]:
    with open(path, encoding="utf-8") as handle:
        payload = json.load(handle)
    if payload.get("format_version") != CHECKPOINT_VERSION:
        raise QNetError(f"unsupported checkpoint version {payload.get('format_version')}")
    net = QNetwork(
        sizes=[int(s) for s in payload["sizes"]],
        weights=[np.array(w, dtype=np.float64) for w in payload["weights"]],
        biases=[np.array(b, dtype=np.float64) for b in payload["biases"]],
    )
    net.check_finite()
    return net, payload.get("meta", {})
