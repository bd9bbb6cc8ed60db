"""KitNET: an ensemble of small autoencoders feeding one aggregate autoencoder.

Pipeline for a raw feature vector x::

    x -> input normalizer -> per-cluster slices -> ensemble RMSEs
      -> score normalizer -> output autoencoder -> RMSE = S

An alarm is raised when S >= phi * beta, with phi the largest score seen while
training. ``logits`` exposes the same rule as a two-class output so that
gradient-based attacks can target it.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np
from scipy.cluster.hierarchy import linkage, to_tree
from scipy.spatial.distance import squareform

from .errors import CalibrationError, DataError, ShapeError, TrainingError
from .nn import (
    Autoencoder,
    GradientBundle,
    autoencoder_forward,
    backprop_params,
    reconstruction_rmse,
    sgd_step,
)


class Label(str, enum.Enum):
    BENIGN = "benign"
    MALICIOUS = "malicious"

    @property
    def code(self) -> int:
        return 0 if self is Label.BENIGN else 1

    @classmethod
    def parse(cls, value) -> "Label":
        if isinstance(value, Label):
            return value
        text = str(value).strip().lower()
        if text in ("0", "benign"):
            return cls.BENIGN
        if text in ("1", "malicious"):
            return cls.MALICIOUS
        raise ValueError(f"unknown label {value!r}")

    def other(self) -> "Label":
        return Label.MALICIOUS if self is Label.BENIGN else Label.BENIGN


# ---------------------------------------------------------------- feature map

@dataclass
class FeatureMap:
    clusters: list[list[int]]
    max_cluster_size: int

    def __post_init__(self):
        self.clusters = [sorted(int(i) for i in c) for c in self.clusters]
        flat = [i for c in self.clusters for i in c]
        if any(len(c) == 0 for c in self.clusters):
            raise ShapeError("empty cluster in feature map")
        if sorted(flat) != list(range(len(flat))):
            raise ShapeError("feature map clusters do not partition the feature indices")
        if any(len(c) > self.max_cluster_size for c in self.clusters):
            raise ShapeError(f"cluster larger than m={self.max_cluster_size}")

    @property
    def n_features(self) -> int:
        return sum(len(c) for c in self.clusters)


def _correlation_distance(rows: np.ndarray) -> np.ndarray:
    centered = rows - rows.mean(axis=0)
    norms = np.sqrt((centered ** 2).sum(axis=0))
    with np.errstate(invalid="ignore", divide="ignore"):
        corr = (centered.T @ centered) / np.outer(norms, norms)
    # Constant features have no defined correlation; treat them as unrelated.
    corr = np.nan_to_num(corr, nan=0.0, posinf=0.0, neginf=0.0)
    dist = np.clip(1.0 - np.abs(corr), 0.0, 1.0)
    np.fill_diagonal(dist, 0.0)
    return dist


def build_feature_map(training_rows, m: int) -> FeatureMap:
    """Average-linkage clustering on 1 - |Pearson r|, splitting clusters above m."""
    rows = np.asarray(training_rows, dtype=float)
    if rows.ndim != 2 or rows.shape[0] < 2:
        raise CalibrationError("feature mapping needs at least two rows")
    if m < 1:
        raise CalibrationError("max cluster size must be at least 1")
    n = rows.shape[1]
    if n == 1:
        return FeatureMap([[0]], m)

    dist = _correlation_distance(rows)
    tree = to_tree(linkage(squareform(dist, checks=False), method="average"))

    clusters: list[list[int]] = []

    def split(node):
        if node.get_count() <= m:
            clusters.append(node.pre_order())
        else:
            split(node.get_left())
            split(node.get_right())

    split(tree)
    clusters.sort(key=min)
    return FeatureMap(clusters, m)


# ----------------------------------------------------------------- normalizer

@dataclass
class MinMaxNormalizer:
    mins: np.ndarray
    maxs: np.ndarray

    def __post_init__(self):
        self.mins = np.array(self.mins, dtype=float, ndmin=1)
        self.maxs = np.array(self.maxs, dtype=float, ndmin=1)
        if self.mins.shape != self.maxs.shape:
            raise ShapeError("mins and maxs differ in length")

    @classmethod
    def empty(cls, n: int) -> "MinMaxNormalizer":
        return cls(np.full(n, np.inf), np.full(n, -np.inf))

    @property
    def dim(self) -> int:
        return self.mins.shape[0]

    @property
    def is_fitted(self) -> bool:
        return bool(np.all(self.mins <= self.maxs))

    def scale(self) -> np.ndarray:
        """Per-feature slope 1/(max-min); zero where the range is degenerate."""
        width = self.maxs - self.mins
        out = np.zeros_like(width)
        ok = width > 0
        out[ok] = 1.0 / width[ok]
        return out

    def normalize(self, x) -> np.ndarray:
        return normalize(self, x)

    def copy(self) -> "MinMaxNormalizer":
        return MinMaxNormalizer(self.mins.copy(), self.maxs.copy())


def normalize(norm: MinMaxNormalizer, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != norm.dim:
        raise ShapeError(f"normalizer expects {norm.dim} values, got {x.shape[-1]}")
    if not norm.is_fitted:
        raise CalibrationError("normalizer has not seen any data")
    s = norm.scale()
    # Degenerate features map to 0 regardless of x; no clipping otherwise.
    return np.where(s > 0, (x - norm.mins) * s, 0.0)


def update_normalizer(norm: MinMaxNormalizer, x) -> MinMaxNormalizer:
    x = np.asarray(x, dtype=float)
    if x.shape != norm.mins.shape:
        raise ShapeError(f"normalizer expects {norm.dim} values, got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise DataError("non-finite value fed to normalizer")
    return MinMaxNormalizer(np.minimum(norm.mins, x), np.maximum(norm.maxs, x))


# ---------------------------------------------------------------------- model

def hidden_size(input_dim: int, hidden_ratio: float) -> int:
    h = max(1, math.ceil(hidden_ratio * input_dim))
    # Keep a real bottleneck for tiny clusters (ceil(0.75*2) would be 2).
    if input_dim > 1:
        h = min(h, input_dim - 1)
    return h


@dataclass
class ScoreTrace:
    """Intermediate values of one forward pass, kept for backprop."""

    z: np.ndarray
    ensemble_rmse: np.ndarray
    u: np.ndarray
    score: float


@dataclass
class KitNetModel:
    input_normalizer: MinMaxNormalizer
    feature_map: FeatureMap
    ensemble: list[Autoencoder]
    score_normalizer: MinMaxNormalizer
    output_ae: Autoencoder
    hidden_ratio: float = 0.75

    def __post_init__(self):
        k = len(self.feature_map.clusters)
        if len(self.ensemble) != k:
            raise ShapeError(f"{len(self.ensemble)} autoencoders for {k} clusters")
        for c, ae in zip(self.feature_map.clusters, self.ensemble):
            if ae.input_dim != len(c):
                raise ShapeError(f"autoencoder of width {ae.input_dim} on cluster of size {len(c)}")
        if self.output_ae.input_dim != k:
            raise ShapeError("output autoencoder width must equal the number of clusters")
        if self.input_normalizer.dim != self.feature_map.n_features:
            raise ShapeError("input normalizer width does not match the feature map")
        if self.score_normalizer.dim != k:
            raise ShapeError("score normalizer width does not match the ensemble")

    @property
    def n_features(self) -> int:
        return self.input_normalizer.dim

    @property
    def n_clusters(self) -> int:
        return len(self.ensemble)

    def _check(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.n_features,):
            raise ShapeError(f"model expects {self.n_features} features, got shape {x.shape}")
        return x

    def ensemble_scores(self, z: np.ndarray) -> np.ndarray:
        return np.array([
            reconstruction_rmse(z[c], autoencoder_forward(ae, z[c]))
            for c, ae in zip(self.feature_map.clusters, self.ensemble)
        ])

    def trace_normalized(self, z) -> ScoreTrace:
        z = self._check(z)
        r = self.ensemble_scores(z)
        u = normalize(self.score_normalizer, r)
        s = reconstruction_rmse(u, autoencoder_forward(self.output_ae, u))
        return ScoreTrace(z, r, u, s)

    def score_normalized(self, z) -> float:
        return self.trace_normalized(z).score

    def score(self, x) -> float:
        return self.score_normalized(normalize(self.input_normalizer, self._check(x)))

    def score_many(self, rows) -> np.ndarray:
        return np.array([self.score(x) for x in np.asarray(rows, dtype=float)])

    def _backward(self, z) -> tuple[float, np.ndarray, list[GradientBundle], GradientBundle]:
        z = self._check(z)
        r = self.ensemble_scores(z)
        t = self.score_normalizer.scale()
        u = normalize(self.score_normalizer, r)
        out = backprop_params(self.output_ae, u)
        d_r = out.input_grad * t
        grad_z = np.zeros_like(z)
        ens = []
        for k, (c, ae) in enumerate(zip(self.feature_map.clusters, self.ensemble)):
            b = backprop_params(ae, z[c]).scaled(d_r[k])
            grad_z[c] += b.input_grad
            ens.append(b)
        return out.value, grad_z, ens, out

    def gradient_normalized(self, z) -> np.ndarray:
        """dS/dz with z already in the normalized feature space."""
        return self._backward(z)[1]

    def score_gradient(self, x) -> np.ndarray:
        """dS/dx for a raw feature vector."""
        x = self._check(x)
        z = normalize(self.input_normalizer, x)
        return self._backward(z)[1] * self.input_normalizer.scale()

    def parameter_gradients(self, x) -> tuple[list[GradientBundle], GradientBundle]:
        """dS/dtheta for every ensemble autoencoder and the output autoencoder."""
        z = normalize(self.input_normalizer, self._check(x))
        _, _, ens, out = self._backward(z)
        return ens, out

    def all_params(self) -> list[np.ndarray]:
        ps = []
        for ae in self.ensemble:
            ps.extend(ae.params())
        ps.extend(self.output_ae.params())
        return ps

    def feature_space(self) -> "NormalizedScorer":
        return NormalizedScorer(self)


@dataclass(frozen=True)
class NormalizedScorer:
    """View of a model whose inputs are already min-max normalized.

    Attacks run in this space; it exposes the ``score``/``score_gradient`` pair
    they expect.
    """

    model: KitNetModel

    @property
    def n_features(self) -> int:
        return self.model.n_features

    def score(self, z) -> float:
        return self.model.score_normalized(z)

    def score_gradient(self, z) -> np.ndarray:
        return self.model.gradient_normalized(z)


def score(model: KitNetModel, x) -> float:
    return model.score(x)


# ---------------------------------------------------------------- calibration

@dataclass(frozen=True)
class ThresholdCalibration:
    phi: float
    beta_threshold: float = 1.0

    def __post_init__(self):
        if not self.beta_threshold >= 1.0:
            raise CalibrationError(
                f"threshold multiplier must be >= 1.0, got {self.beta_threshold}"
            )

    @property
    def threshold(self) -> float:
        return self.phi * self.beta_threshold


def calibrate_threshold(phi: float, beta_threshold: float = 1.0) -> ThresholdCalibration:
    return ThresholdCalibration(float(phi), float(beta_threshold))


def threshold_value(calib) -> float:
    if isinstance(calib, ThresholdCalibration):
        return calib.threshold
    return float(calib)


def logits(model, x, calib) -> tuple[float, float]:
    """(benign, malicious) logits; argmax is malicious exactly when S >= T.

    The logits sum to 2T for every input.
    """
    t = threshold_value(calib)
    s = model.score(x)
    return 2 * t - s, s


def classify_score(s: float, threshold: float) -> Label:
    return Label.MALICIOUS if s >= threshold else Label.BENIGN


def classify(model, x, calib) -> Label:
    return classify_score(model.score(x), threshold_value(calib))


# ------------------------------------------------------------------- training

@dataclass
class TrainingConfig:
    fm_window: int = 5000
    train_window: int = 50000
    learning_rate: float = 0.1
    max_cluster_size: int = 10
    hidden_ratio: float = 0.75
    seed: int = 0

    def __post_init__(self):
        if self.fm_window < 2 or self.train_window < 1 or self.max_cluster_size < 1:
            raise TrainingError("fm_window must be >= 2 and other counts >= 1")
        if not self.learning_rate > 0:
            raise TrainingError("learning rate must be positive")
        if not 0 < self.hidden_ratio <= 1:
            raise TrainingError("hidden_ratio must lie in (0, 1]")


@dataclass
class TrainingLog:
    phase2_scores: list[float] = field(default_factory=list)

    @property
    def phi(self) -> float:
        return max(self.phase2_scores)


def _init_model(norm: MinMaxNormalizer, fmap: FeatureMap, cfg: TrainingConfig) -> KitNetModel:
    rng = np.random.default_rng(cfg.seed)
    ensemble = [Autoencoder.random(len(c), hidden_size(len(c), cfg.hidden_ratio), rng)
                for c in fmap.clusters]
    k = len(fmap.clusters)
    output_ae = Autoencoder.random(k, hidden_size(k, cfg.hidden_ratio), rng)
    return KitNetModel(norm, fmap, ensemble, MinMaxNormalizer.empty(k), output_ae,
                       cfg.hidden_ratio)


def _train_step(model: KitNetModel, x: np.ndarray, lr: float) -> float:
    """One online update on x; returns the score x received on the way in."""
    model.input_normalizer = update_normalizer(model.input_normalizer, x)
    z = normalize(model.input_normalizer, x)
    r = np.empty(model.n_clusters)
    updates = []
    for k, (c, ae) in enumerate(zip(model.feature_map.clusters, model.ensemble)):
        b = backprop_params(ae, z[c])
        r[k] = b.value
        updates.append((ae, b.param_grads))
    model.score_normalizer = update_normalizer(model.score_normalizer, r)
    u = normalize(model.score_normalizer, r)
    out = backprop_params(model.output_ae, u)
    for ae, grads in updates:
        ae.set_params(sgd_step(ae.params(), grads, lr))
    model.output_ae.set_params(sgd_step(model.output_ae.params(), out.param_grads, lr))
    return out.value


def train_online(stream: Iterable, cfg: TrainingConfig,
                 log: TrainingLog | None = None) -> tuple[KitNetModel, ThresholdCalibration]:
    """Two-phase online training on a stream assumed benign.

    Phase one (``fm_window`` rows) fits the input normalizer and learns the
    feature map. Phase two (``train_window`` rows) takes one SGD step per
    autoencoder per row. phi is the running maximum of phase-two scores.
    """
    rows = np.asarray(list(stream) if not isinstance(stream, np.ndarray) else stream, dtype=float)
    need = cfg.fm_window + cfg.train_window
    if rows.ndim != 2 or rows.shape[0] < need:
        have = rows.shape[0] if rows.ndim == 2 else 0
        raise TrainingError(
            f"stream has {have} rows but fm_window + train_window = {need}"
        )
    if not np.all(np.isfinite(rows[:need])):
        raise DataError("training stream contains non-finite values")

    n = rows.shape[1]
    norm = MinMaxNormalizer.empty(n)
    for x in rows[:cfg.fm_window]:
        norm = update_normalizer(norm, x)
    fmap = build_feature_map(rows[:cfg.fm_window], cfg.max_cluster_size)
    model = _init_model(norm, fmap, cfg)

    log = log if log is not None else TrainingLog()
    for x in rows[cfg.fm_window:need]:
        log.phase2_scores.append(_train_step(model, x, cfg.learning_rate))
    return model, ThresholdCalibration(log.phi, 1.0)
