"""Whitebox test-time attacks on the observation channel.

All perturbation attacks touch only the most recent feature tuple of the
served observation window; the rest of the observation is masked off. Every
candidate tuple passes through a domain-constraint projector before the
induced action is evaluated, so emitted perturbations stay plausible
(non-negative relative highs, non-positive relative lows, close bounded
between them and matching the true close's behavior; RSI clamped to
[0, 100] for indicator tuples).

Attack families:
  delay      -- serve the tuple from t-1 in the most recent slot (DoS).
  fgsm       -- single-step sign-of-gradient perturbations tried along an
                increasing epsilon ladder, per-dimension scale factors k_d.
  cw (box)   -- Carlini-Wagner L2 in a tanh-reparameterized [0,1] box.
  cw (scaled)-- the same objective optimized directly in original units with
                per-dimension steps capped at lr * eps * k_d.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .qnet import QNetwork, forward, input_gradient

SUCCESS = "success"
PARTIAL = "partial"
NON_TARGET = "non_target"
FAILURE = "failure"

_PRIORITY = {FAILURE: 0, NON_TARGET: 1, PARTIAL: 2, SUCCESS: 3}

CLOSE_MARGIN = 1e-9  # strictly-between nudge for the projected relative close


class AttackError(ValueError):
    pass


@dataclass(frozen=True)
class ConstraintSpec:
    """Domain rules for a feature tuple plus the affine box used to map the
    tuple into [0,1] for the tanh-box attack."""

    kind: str  # "relative_price" | "indicator" | "box" | "none"
    box_low: tuple[float, ...]
    box_high: tuple[float, ...]

    def box(self, dim: int) -> tuple[np.ndarray, np.ndarray]:
        lo = np.asarray(self.box_low, dtype=np.float64)
        hi = np.asarray(self.box_high, dtype=np.float64)
        if lo.size == 1:
            lo = np.full(dim, lo[0])
            hi = np.full(dim, hi[0])
        if lo.size != dim:
            raise AttackError(f"constraint box is {lo.size}-dimensional, tuple is {dim}")
        if np.any(hi <= lo):
            raise AttackError("constraint box must have positive width")
        return lo, hi


CONSTRAINT_SPECS = {
    "relative_price": ConstraintSpec(
        kind="relative_price", box_low=(-0.05, -0.05, -0.05), box_high=(0.05, 0.05, 0.05)),
    "indicator": ConstraintSpec(
        kind="indicator", box_low=(-0.5, -100.0, 0.0), box_high=(0.5, 100.0, 100.0)),
    "none": ConstraintSpec(kind="none", box_low=(-1.0,), box_high=(1.0,)),
}


def project_constraints(candidate, original, spec: ConstraintSpec) -> np.ndarray:
    """Project a perturbed tuple back into the declared feasible set.

    relative_price: rel_high >= 0, rel_low <= 0, and the close matches the
    original close's behavior (equal to high, equal to low, or strictly
    between). indicator: RSI coordinate clamped to [0, 100]. box: clamp to
    the spec's box. none: identity. Idempotent for a fixed original.
    """
    cand = np.asarray(candidate, dtype=np.float64).copy()
    orig = np.asarray(original, dtype=np.float64)
    if cand.shape != orig.shape:
        raise AttackError(f"shape mismatch {cand.shape} vs {orig.shape}")
    if spec.kind == "none":
        return cand
    if spec.kind == "box":
        lo, hi = spec.box(cand.size)
        return np.clip(cand, lo, hi)
    if spec.kind == "indicator":
        cand[2] = min(max(cand[2], 0.0), 100.0)
        return cand
    if spec.kind != "relative_price":
        raise AttackError(f"unknown constraint kind {spec.kind!r}")
    high = max(cand[0], 0.0)
    low = min(cand[1], 0.0)
    if orig[2] == orig[0]:
        close = high
    elif orig[2] == orig[1]:
        close = low
    elif high - low < 2.0 * CLOSE_MARGIN:
        close = (high + low) / 2.0
    else:
        close = min(max(cand[2], low + CLOSE_MARGIN), high - CLOSE_MARGIN)
    return np.array([high, low, close])


def validate_relative_tuple(t) -> bool:
    """The plausibility check applied to emitted relative-price tuples."""
    high, low, close = float(t[0]), float(t[1]), float(t[2])
    return high >= 0.0 and low <= 0.0 and low <= close <= high


@dataclass(frozen=True)
class AttackConfig:
    method: str  # "delay" | "fgsm" | "cw"
    mode: str = "non_targeted"  # | "targeted"
    chance: float = 1.0
    eps_start: float = 1e-4
    eps_end: float = 1e-3
    eps_iters: int = 5
    k_scale: tuple[float, ...] = (1.0, 1.0, 1.0)
    cw_variant: str = "box"  # | "scaled"
    cw_max_iters: int = 100
    cw_lr: float = 0.5
    cw_const: float = 0.1
    cw_eps: float = 1.0  # per-dimension step scale for the "scaled" variant
    constraint: str = "relative_price"
    seed: int | None = None

    def validate(self) -> None:
        if self.method not in ("delay", "fgsm", "cw"):
            raise AttackError(f"unknown method {self.method!r}")
        if self.mode not in ("non_targeted", "targeted"):
            raise AttackError(f"unknown mode {self.mode!r}")
        if not 0.0 <= self.chance <= 1.0:
            raise AttackError(f"chance must be in [0,1], got {self.chance}")
        if not 0.0 < self.eps_start <= self.eps_end:
            raise AttackError("need 0 < eps_start <= eps_end")
        if self.eps_iters < 1 or self.cw_max_iters < 1:
            raise AttackError("iteration counts must be >= 1")
        if any(not 0.0 < k <= 1.0 for k in self.k_scale):
            raise AttackError("k scalars must be in (0, 1]")
        if self.cw_variant not in ("box", "scaled"):
            raise AttackError(f"unknown cw variant {self.cw_variant!r}")
        if self.constraint not in CONSTRAINT_SPECS:
            raise AttackError(f"unknown constraint set {self.constraint!r}")

    @property
    def spec(self) -> ConstraintSpec:
        return CONSTRAINT_SPECS[self.constraint]


# Stock attack configurations, by environment.
PRESETS = {
    "delay": AttackConfig(method="delay"),
    "basic-fgsm": AttackConfig(
        method="fgsm", eps_start=1e-4, eps_end=1e-3, eps_iters=5,
        k_scale=(1.0, 1.0, 1.0), constraint="relative_price"),
    "basic-cw": AttackConfig(
        method="cw", cw_variant="box", cw_max_iters=100, cw_lr=0.5, cw_const=0.1,
        constraint="relative_price"),
    "managed-fgsm": AttackConfig(
        method="fgsm", eps_start=0.1, eps_end=3.0, eps_iters=5,
        k_scale=(0.01, 0.01, 0.1), constraint="indicator"),
    "managed-cw": AttackConfig(
        method="cw", cw_variant="scaled", cw_eps=1.0, k_scale=(0.01, 1.0, 1.0),
        cw_max_iters=100, cw_lr=0.5, cw_const=0.1, constraint="indicator"),
}


def preset(name: str, **overrides) -> AttackConfig:
    if name not in PRESETS:
        raise AttackError(f"unknown preset {name!r}; have {sorted(PRESETS)}")
    config = replace(PRESETS[name], **overrides)
    config.validate()
    return config


@dataclass(frozen=True)
class PerturbationResult:
    perturbed: np.ndarray  # projected candidate tuple; discarded on failure
    outcome: str
    induced_action: int
    iterations: int
    final_eps: float
    l2: float


def epsilon_ladder(start: float, end: float, n: int) -> np.ndarray:
    """Geometric interpolation from start to end inclusive."""
    if n == 1:
        return np.array([end])
    return np.geomspace(start, end, n)


def least_q_target(net: QNetwork, observation) -> int:
    """The adversarial target: the action the policy values least."""
    return int(np.argmin(forward(net, observation)))


def classify_outcome(original: int, induced: int, mode: str, target: int | None = None,
                     action_types=None) -> str:
    """Outcome taxonomy shared by all perturbation attacks.

    Non-targeted: success iff the induced action differs (by action *type*
    when a type map is given). Targeted: success iff the exact target is
    induced; partial when only the target's type is matched; any other
    change is a non-target change; everything else is a failure.
    """
    if action_types is not None:
        for idx in (original, induced) + (() if target is None else (target,)):
            if not 0 <= idx < len(action_types):
                raise AttackError(f"unknown action index {idx}")
    if induced == original:
        return FAILURE
    if mode == "non_targeted":
        if action_types is not None:
            return SUCCESS if action_types[induced] != action_types[original] else FAILURE
        return SUCCESS
    if target is None:
        raise AttackError("targeted mode requires a target action")
    if induced == target:
        return SUCCESS
    if action_types is not None and action_types[induced] == action_types[target]:
        return PARTIAL
    return NON_TARGET


def qualifies_for_persistence(outcome: str) -> bool:
    """Only these outcomes keep their perturbed tuple in the window."""
    return outcome in (SUCCESS, PARTIAL)


def delay_attack(observation, tuple_slice: slice, previous_tuple) -> np.ndarray:
    """Serve the t-1 tuple in the most recent slot; identity when there is
    no previous tuple yet (episode start)."""
    served = np.asarray(observation, dtype=np.float64).copy()
    if previous_tuple is not None:
        served[tuple_slice] = previous_tuple
    return served


class _BestCandidate:
    """Keeps the best (priority, then smallest L2) candidate seen so far."""

    def __init__(self):
        self.outcome = FAILURE
        self.tuple = None
        self.induced = -1
        self.l2 = np.inf
        self.eps = 0.0
        self.iteration = 0

    def offer(self, outcome, candidate, induced, l2, eps, iteration) -> None:
        better = _PRIORITY[outcome] > _PRIORITY[self.outcome] or (
            outcome == self.outcome and l2 < self.l2)
        if better:
            self.outcome = outcome
            self.tuple = candidate
            self.induced = induced
            self.l2 = l2
            self.eps = eps
            self.iteration = iteration


def _attacked_forward(net, observation, tuple_slice, candidate) -> int:
    attacked = observation.copy()
    attacked[tuple_slice] = candidate
    return int(np.argmax(forward(net, attacked)))


def _check_setup(net, observation, tuple_slice, k_scale, mode, target):
    observation = np.asarray(observation, dtype=np.float64)
    if observation.shape[0] != net.input_dim:
        raise AttackError(
            f"observation dim {observation.shape[0]} != net input {net.input_dim}")
    x = observation[tuple_slice].copy()
    k = None
    if k_scale is not None:
        k = np.asarray(k_scale, dtype=np.float64)
        if k.shape != x.shape:
            raise AttackError(f"k scalars shape {k.shape} != tuple shape {x.shape}")
    if mode == "targeted" and target is None:
        raise AttackError("targeted mode requires a target action")
    return observation, x, k


def fgsm_attack(net: QNetwork, observation, config: AttackConfig, tuple_slice: slice,
                target: int | None = None, action_types=None) -> PerturbationResult:
    """Sign-of-gradient attack along a geometric epsilon ladder.

    The gradient of the cross-entropy loss (against the current greedy
    action, or the adversarial target) is computed once at the original
    observation; each ladder rung tries x +- eps * k (.) sign(g), projects it,
    and classifies the induced action. Stops at the first full success.
    """
    observation, x_orig, k = _check_setup(
        net, observation, tuple_slice, config.k_scale, config.mode, target)
    original_action = int(np.argmax(forward(net, observation)))
    if config.mode == "targeted":
        grad = input_gradient(net, observation, "cross_entropy", target)
        direction = -np.sign(grad[tuple_slice])  # descend toward the target
    else:
        grad = input_gradient(net, observation, "cross_entropy", original_action)
        direction = np.sign(grad[tuple_slice])  # ascend away from the greedy action
    best = _BestCandidate()
    spec = config.spec
    ladder = epsilon_ladder(config.eps_start, config.eps_end, config.eps_iters)
    for iteration, eps in enumerate(ladder, start=1):
        candidate = project_constraints(x_orig + eps * k * direction, x_orig, spec)
        induced = _attacked_forward(net, observation, tuple_slice, candidate)
        outcome = classify_outcome(original_action, induced, config.mode, target, action_types)
        best.offer(outcome, candidate, induced, float(np.linalg.norm(candidate - x_orig)),
                   float(eps), iteration)
        if outcome == SUCCESS:
            break
    return PerturbationResult(
        perturbed=best.tuple if best.tuple is not None else x_orig,
        outcome=best.outcome, induced_action=best.induced if best.induced >= 0
        else original_action, iterations=best.iteration or config.eps_iters,
        final_eps=best.eps or float(ladder[-1]), l2=0.0 if best.tuple is None else best.l2)


def _margin_loss_action(mode: str, original_action: int, target: int | None):
    if mode == "targeted":
        return "deficit_margin", target  # descend until the target wins
    return "lead_margin", original_action  # descend until the greedy action loses


def cw_l2_box(net: QNetwork, observation, config: AttackConfig, tuple_slice: slice,
              target: int | None = None, action_types=None) -> PerturbationResult:
    """Carlini-Wagner L2 in a tanh-reparameterized box.

    The attacked tuple is affinely mapped into [0,1] using the constraint
    spec's box, written as (tanh(w)+1)/2, and w is driven by plain gradient
    descent on ||delta||^2 + c * margin. Every iterate is unscaled,
    projected, and classified; the smallest-norm qualifying candidate wins.
    """
    observation, x_orig, _ = _check_setup(
        net, observation, tuple_slice, None, config.mode, target)
    original_action = int(np.argmax(forward(net, observation)))
    if config.mode == "targeted" and original_action == target:
        return PerturbationResult(perturbed=x_orig.copy(), outcome=SUCCESS,
                                  induced_action=original_action, iterations=0,
                                  final_eps=0.0, l2=0.0)
    spec = config.spec
    lo, hi = spec.box(x_orig.size)
    width = hi - lo
    x_scaled = np.clip((x_orig - lo) / width, 1e-6, 1.0 - 1e-6)
    w = np.arctanh(2.0 * x_scaled - 1.0)
    loss_spec, loss_action = _margin_loss_action(config.mode, original_action, target)
    best = _BestCandidate()
    attacked = observation.copy()
    for iteration in range(1, config.cw_max_iters + 1):
        adv_scaled = (np.tanh(w) + 1.0) / 2.0
        adv = lo + adv_scaled * width
        attacked[tuple_slice] = adv
        grad = input_gradient(net, attacked, loss_spec, loss_action)[tuple_slice]
        grad_w = (2.0 * (adv_scaled - x_scaled) + config.cw_const * grad * width) \
            * (1.0 - np.tanh(w) ** 2) / 2.0
        if not np.all(np.isfinite(grad_w)):
            break
        w = w - config.cw_lr * grad_w
        adv_scaled = (np.tanh(w) + 1.0) / 2.0
        candidate = project_constraints(lo + adv_scaled * width, x_orig, spec)
        induced = _attacked_forward(net, observation, tuple_slice, candidate)
        outcome = classify_outcome(original_action, induced, config.mode, target, action_types)
        best.offer(outcome, candidate, induced, float(np.linalg.norm(candidate - x_orig)),
                   0.0, iteration)
    return PerturbationResult(
        perturbed=best.tuple if best.tuple is not None else x_orig.copy(),
        outcome=best.outcome, induced_action=best.induced if best.induced >= 0
        else original_action, iterations=best.iteration or config.cw_max_iters,
        final_eps=0.0, l2=0.0 if best.tuple is None else best.l2)


def cw_scaled(net: QNetwork, observation, config: AttackConfig, tuple_slice: slice,
              target: int | None = None, action_types=None) -> PerturbationResult:
    """Carlini-Wagner objective optimized directly in original feature units.

    Per-dimension steps are lr * eps * k_d times the objective gradient,
    clipped to at most lr * eps * k_d in magnitude so the emitted
    perturbation stays inside |delta_d| <= eps * k_d * max_iters * lr.
    """
    observation, x_orig, k = _check_setup(
        net, observation, tuple_slice, config.k_scale, config.mode, target)
    original_action = int(np.argmax(forward(net, observation)))
    if config.mode == "targeted" and original_action == target:
        return PerturbationResult(perturbed=x_orig.copy(), outcome=SUCCESS,
                                  induced_action=original_action, iterations=0,
                                  final_eps=config.cw_eps, l2=0.0)
    loss_spec, loss_action = _margin_loss_action(config.mode, original_action, target)
    spec = config.spec
    step_cap = config.cw_lr * config.cw_eps * k
    delta = np.zeros_like(x_orig)
    best = _BestCandidate()
    attacked = observation.copy()
    for iteration in range(1, config.cw_max_iters + 1):
        attacked[tuple_slice] = x_orig + delta
        grad = input_gradient(net, attacked, loss_spec, loss_action)[tuple_slice]
        objective_grad = 2.0 * delta + config.cw_const * grad
        if not np.all(np.isfinite(objective_grad)):
            break
        delta = delta - np.clip(step_cap * objective_grad, -step_cap, step_cap)
        candidate = project_constraints(x_orig + delta, x_orig, spec)
        induced = _attacked_forward(net, observation, tuple_slice, candidate)
        outcome = classify_outcome(original_action, induced, config.mode, target, action_types)
        best.offer(outcome, candidate, induced, float(np.linalg.norm(candidate - x_orig)),
                   config.cw_eps, iteration)
    return PerturbationResult(
        perturbed=best.tuple if best.tuple is not None else x_orig.copy(),
        outcome=best.outcome, induced_action=best.induced if best.induced >= 0
        else original_action, iterations=best.iteration or config.cw_max_iters,
        final_eps=config.cw_eps, l2=0.0 if best.tuple is None else best.l2)


def run_perturbation_attack(net, observation, config: AttackConfig, tuple_slice,
                            target=None, action_types=None) -> PerturbationResult:
    """Dispatch to the configured perturbation attack."""
    if config.method == "fgsm":
        return fgsm_attack(net, observation, config, tuple_slice, target, action_types)
    if config.method == "cw":
        attack = cw_l2_box if config.cw_variant == "box" else cw_scaled
        return attack(net, observation, config, tuple_slice, target, action_types)
    raise AttackError(f"{config.method!r} is not a perturbation attack")
