"""Gradient-based adversarial examples against a thresholded anomaly score.

An attack target is anything with ``score(x) -> float`` and
``score_gradient(x) -> ndarray``; for KitNET that is usually
``model.feature_space()``, so perturbations live in the normalized feature
space. Two logits are built from the score and the threshold T:
benign = 2T - S, malicious = S.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ConfigError, ShapeError
from .kitnet import Label, classify_score

L0_TOLERANCE = 1e-6


@dataclass
class AttackSpec:
    target_label: Label
    threshold: float = 1.0
    box_low: np.ndarray | float = 0.0
    box_high: np.ndarray | float = 1.0

    def __post_init__(self):
        self.target_label = Label.parse(self.target_label)
        self.box_low = np.asarray(self.box_low, dtype=float)
        self.box_high = np.asarray(self.box_high, dtype=float)
        if np.any(self.box_low > self.box_high):
            raise ConfigError("box_low exceeds box_high")

    @classmethod
    def unbounded(cls, target_label, threshold: float = 1.0) -> "AttackSpec":
        return cls(target_label, threshold, -np.inf, np.inf)

    @property
    def bounded(self) -> bool:
        return bool(np.all(np.isfinite(self.box_low)) and np.all(np.isfinite(self.box_high)))

    def clip(self, x: np.ndarray) -> np.ndarray:
        return np.clip(x, self.box_low, self.box_high)

    def is_success(self, s: float) -> bool:
        return classify_score(s, self.threshold) is self.target_label


@dataclass(frozen=True)
class FgsmConfig:
    epsilon: float = 0.1

    def __post_init__(self):
        if not (math.isfinite(self.epsilon) and self.epsilon >= 0):
            raise ConfigError("epsilon must be finite and non-negative")


@dataclass(frozen=True)
class JsmaConfig:
    theta: float = 1.0
    max_features: Optional[int] = None  # None: every feature
    max_iterations: int = 1000
    # A signed theta only moves features in its own direction unless this is set.
    bidirectional: bool = True
    # Move the two most salient features per iteration, as in the original
    # pair-based saliency attack. Off by default: one feature per iteration.
    pairwise: bool = False

    def __post_init__(self):
        if self.theta == 0 or not math.isfinite(self.theta):
            raise ConfigError("theta must be finite and non-zero")
        if self.max_features is not None and self.max_features < 1:
            raise ConfigError("max_features must be at least 1")
        if self.max_iterations < 1:
            raise ConfigError("max_iterations must be at least 1")


@dataclass(frozen=True)
class CwConfig:
    c: float = 10.0
    learning_rate: float = 0.01
    max_steps: int = 1000
    confidence: float = 0.0
    binary_search_steps: int = 0
    change_of_variables: bool = True

    def __post_init__(self):
        _check_optimizer(self.c, self.learning_rate, self.max_steps, self.confidence,
                         self.binary_search_steps)


@dataclass(frozen=True)
class EnmConfig:
    c: float = 450.0
    beta_l1: float = 1.0
    learning_rate: float = 0.05
    max_steps: int = 1000
    confidence: float = 0.0
    binary_search_steps: int = 0
    l2_squared: bool = True

    def __post_init__(self):
        _check_optimizer(self.c, self.learning_rate, self.max_steps, self.confidence,
                         self.binary_search_steps)
        if not self.beta_l1 >= 0:
            raise ConfigError("beta_l1 must be non-negative")


def _check_optimizer(c, lr, steps, confidence, bss):
    if not c > 0:
        raise ConfigError("c must be positive")
    if not lr > 0:
        raise ConfigError("learning rate must be positive")
    if steps < 1:
        raise ConfigError("max_steps must be at least 1")
    if confidence < 0:
        raise ConfigError("confidence must be non-negative")
    if bss < 0:
        raise ConfigError("binary_search_steps must be non-negative")


@dataclass(frozen=True)
class Distances:
    l0: float
    l1: float
    l2: float
    linf: float

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.l0, self.l1, self.l2, self.linf)


def lp_distances(x, x_adv, l0_tolerance: float = L0_TOLERANCE) -> Distances:
    x = np.asarray(x, dtype=float)
    x_adv = np.asarray(x_adv, dtype=float)
    if x.shape != x_adv.shape:
        raise ShapeError(f"length mismatch: {x.shape} vs {x_adv.shape}")
    d = np.abs(x_adv - x)
    if d.size == 0:
        return Distances(0, 0.0, 0.0, 0.0)
    return Distances(int(np.count_nonzero(d > l0_tolerance)), float(d.sum()),
                     float(np.sqrt((d ** 2).sum())), float(d.max()))


@dataclass
class AdversarialResult:
    original: np.ndarray
    adversarial: np.ndarray
    success: bool
    iterations: int
    distances: Optional[Distances] = None
    score: Optional[float] = None

    @classmethod
    def from_pair(cls, x0, x_adv, success, iterations, score=None) -> "AdversarialResult":
        if not success:
            # A failed attack hands back the untouched input and no distances.
            x0 = np.asarray(x0)
            return cls(x0, x0.copy(), False, iterations, None, score)
        return cls(np.asarray(x0), np.asarray(x_adv), True, iterations,
                   lp_distances(x0, x_adv), score)


# ------------------------------------------------------------------ objective

def _sign_for(target: Label) -> float:
    # margin = logit_nontarget - logit_target = sign * 2 (S - T)
    return 1.0 if target is Label.BENIGN else -1.0


def margin(s: float, target_label, threshold: float) -> float:
    """logit_nontarget - logit_target for a given score."""
    return _sign_for(Label.parse(target_label)) * 2.0 * (s - threshold)


def adversarial_loss(model, x, target_label, threshold: float, confidence: float = 0.0) -> float:
    return max(margin(model.score(x), target_label, threshold) + confidence, 0.0)


def _loss_and_grad(model, x, spec: AttackSpec, confidence: float):
    s = model.score(x)
    m = margin(s, spec.target_label, spec.threshold) + confidence
    if m <= 0:
        return s, 0.0, np.zeros_like(x)
    return s, m, _sign_for(spec.target_label) * 2.0 * model.score_gradient(x)


def saliency_map(model, x, target_label, threshold: float = 1.0) -> np.ndarray:
    """d(logit_target - logit_nontarget)/dx; equals -/+ 2 dS/dx."""
    return -_sign_for(Label.parse(target_label)) * 2.0 * np.asarray(model.score_gradient(x))


def _prepare(model, x, spec):
    x0 = np.asarray(x, dtype=float)
    if x0.ndim != 1:
        raise ShapeError("attack input must be a vector")
    s0 = model.score(x0)
    return x0, s0


# ----------------------------------------------------------------------- FGSM

def fgsm(model, x, spec: AttackSpec, cfg: FgsmConfig) -> AdversarialResult:
    x0, s0 = _prepare(model, x, spec)
    # Step along the un-hinged margin so inputs sitting on the margin still move.
    g = _sign_for(spec.target_label) * model.score_gradient(x0)
    x_adv = spec.clip(x0 - cfg.epsilon * np.sign(g))
    s = model.score(x_adv)
    return AdversarialResult.from_pair(x0, x_adv, spec.is_success(s), 1, s)


# ----------------------------------------------------------------------- JSMA

def jsma(model, x, spec: AttackSpec, cfg: JsmaConfig) -> AdversarialResult:
    """Greedy saliency attack.

    Each iteration changes one feature (two with ``pairwise``) by |theta| in
    the direction its saliency favours. Features already at the box edge in
    that direction are skipped. The attack gives up once ``max_features``
    distinct features have been touched without success.

    With two logits the pair score of the original attack, alpha * |beta|
    with beta = -alpha, is alpha squared, so the best pair is simply the two
    features of largest saliency.
    """
    x0, s0 = _prepare(model, x, spec)
    if spec.is_success(s0):
        return AdversarialResult.from_pair(x0, x0.copy(), True, 0, s0)
    n = x0.size
    budget = n if cfg.max_features is None else min(cfg.max_features, n)
    per_iter = 2 if cfg.pairwise else 1
    step = abs(cfg.theta)
    lo = np.broadcast_to(spec.box_low, x0.shape)
    hi = np.broadcast_to(spec.box_high, x0.shape)
    xa = x0.copy()
    touched = np.zeros(n, dtype=bool)
    s = s0
    for it in range(1, cfg.max_iterations + 1):
        sal = saliency_map(model, xa, spec.target_label, spec.threshold)
        direction = np.sign(sal)
        ok = direction != 0
        if not cfg.bidirectional:
            ok &= direction == np.sign(cfg.theta)
        ok &= ~((direction > 0) & (xa >= hi)) & ~((direction < 0) & (xa <= lo))
        if not ok.any():
            break
        picks = []
        n_touched = int(touched.sum())
        for i in np.argsort(-np.abs(sal), kind="stable"):
            if len(picks) == per_iter:
                break
            if not ok[i]:
                continue
            if not touched[i]:
                if n_touched >= budget:
                    continue
                n_touched += 1
            picks.append(int(i))
        if not picks:
            break
        for i in picks:
            xa[i] = np.clip(xa[i] + step * direction[i], lo[i], hi[i])
            touched[i] = True
        s = model.score(xa)
        if spec.is_success(s):
            return AdversarialResult.from_pair(x0, xa, True, it, s)
        if touched.sum() >= budget:
            break
    return AdversarialResult.from_pair(x0, xa, False, it, s)


# ---------------------------------------------------------------- C&W and ENM

class _BestTracker:
    def __init__(self):
        self.x = None
        self.dist = math.inf
        self.score = None

    def offer(self, x, dist, s):
        if dist < self.dist:
            self.x, self.dist, self.score = x.copy(), dist, s


def _binary_search(run, c0: float, steps: int):
    """Outer search over c: shrink after success, grow (x10) after failure."""
    best = _BestTracker()
    total = 0
    c, lo, hi = c0, 0.0, math.inf
    for _ in range(steps + 1):
        found, it = run(c)
        total += it
        if found.x is not None:
            best.offer(found.x, found.dist, found.score)
            hi = min(hi, c)
        else:
            lo = max(lo, c)
        c = (lo + hi) / 2 if math.isfinite(hi) else c * 10
    return best, total


def cw_l2(model, x, spec: AttackSpec, cfg: CwConfig) -> AdversarialResult:
    """Minimize ||x' - x||^2 + c * loss(x') by gradient descent.

    With ``change_of_variables`` the search runs over w with
    x' = mid + half * tanh(w), which keeps x' inside a finite box; otherwise
    iterates are projected onto the box after each step.
    """
    x0, s0 = _prepare(model, x, spec)
    if cfg.change_of_variables and not spec.bounded:
        raise ConfigError("change of variables needs finite box bounds")
    lo = np.broadcast_to(spec.box_low, x0.shape).astype(float)
    hi = np.broadcast_to(spec.box_high, x0.shape).astype(float)

    if cfg.change_of_variables:
        mid, half = (hi + lo) / 2, (hi - lo) / 2
        safe = np.where(half > 0, half, 1.0)
        v = np.clip((x0 - mid) / safe, -1 + 1e-9, 1 - 1e-9)
        w0 = np.arctanh(np.where(half > 0, v, 0.0))

        def to_x(w):
            return np.where(half > 0, mid + half * np.tanh(w), x0)
    else:
        w0 = x0.copy()

    def run(c):
        best = _BestTracker()
        w = w0.copy()
        for _ in range(cfg.max_steps):
            xa = to_x(w) if cfg.change_of_variables else w
            s, _, g_loss = _loss_and_grad(model, xa, spec, cfg.confidence)
            if spec.is_success(s):
                best.offer(xa, float(((xa - x0) ** 2).sum()), s)
            g = 2 * (xa - x0) + c * g_loss
            if cfg.change_of_variables:
                g = g * half * (1 - np.tanh(w) ** 2)
                w = w - cfg.learning_rate * g
            else:
                w = spec.clip(w - cfg.learning_rate * g)
        xa = to_x(w) if cfg.change_of_variables else w
        s = model.score(xa)
        if spec.is_success(s):
            best.offer(xa, float(((xa - x0) ** 2).sum()), s)
        return best, cfg.max_steps

    best, iters = _binary_search(run, cfg.c, cfg.binary_search_steps)
    return AdversarialResult.from_pair(x0, best.x, best.x is not None, iters, best.score)


def soft_threshold(z, center, shrink: float) -> np.ndarray:
    """Proximal map of shrink*|u - center|: pull z toward center by shrink."""
    if shrink < 0:
        raise ValueError("shrink must be non-negative")
    z = np.asarray(z, dtype=float)
    d = z - np.asarray(center, dtype=float)
    return center + np.maximum(np.abs(d) - shrink, 0.0) * np.sign(d)


def enm(model, x, spec: AttackSpec, cfg: EnmConfig) -> AdversarialResult:
    """Elastic-net attack solved with FISTA.

    Smooth part: c * loss(x') + ||x' - x||_2^2 (or the unsquared norm when
    ``l2_squared`` is off). The L1 term enters through soft-thresholding toward
    x with shrink = lr * beta_l1. Successful iterates are ranked by
    beta_l1 * L1 + L2 term.
    """
    x0, s0 = _prepare(model, x, spec)
    lr, beta = cfg.learning_rate, cfg.beta_l1

    def l2_grad(d):
        if cfg.l2_squared:
            return 2 * d
        nrm = np.linalg.norm(d)
        return d / nrm if nrm > 0 else np.zeros_like(d)

    def en_dist(d):
        l2 = float((d ** 2).sum())
        return beta * float(np.abs(d).sum()) + (l2 if cfg.l2_squared else math.sqrt(l2))

    def run(c):
        best = _BestTracker()
        xk = x0.copy()
        yk = x0.copy()
        for k in range(cfg.max_steps):
            _, _, g_loss = _loss_and_grad(model, yk, spec, cfg.confidence)
            g = c * g_loss + l2_grad(yk - x0)
            x_new = spec.clip(soft_threshold(yk - lr * g, x0, lr * beta))
            yk = spec.clip(x_new + k / (k + 3) * (x_new - xk))
            xk = x_new
            s = model.score(xk)
            if spec.is_success(s):
                best.offer(xk, en_dist(xk - x0), s)
        return best, cfg.max_steps

    best, iters = _binary_search(run, cfg.c, cfg.binary_search_steps)
    return AdversarialResult.from_pair(x0, best.x, best.x is not None, iters, best.score)


ATTACKS = {
    "fgsm": (fgsm, FgsmConfig),
    "jsma": (jsma, JsmaConfig),
    "cw": (cw_l2, CwConfig),
    "enm": (enm, EnmConfig),
}


def make_config(method: str, **params):
    try:
        _, cls = ATTACKS[method]
    except KeyError:
        raise ConfigError(f"unknown attack method {method!r}") from None
    names = set(cls.__dataclass_fields__)
    unknown = set(params) - names
    if unknown:
        raise ConfigError(f"unknown {method} parameters: {sorted(unknown)}")
    return cls(**params)


def run_attack(method: str, model, x, spec: AttackSpec, cfg) -> AdversarialResult:
    try:
        fn, _ = ATTACKS[method]
    except KeyError:
        raise ConfigError(f"unknown attack method {method!r}") from None
    return fn(model, x, spec, cfg)
