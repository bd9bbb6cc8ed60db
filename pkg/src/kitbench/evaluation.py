"""Experiment harness: threshold sweeps, ROC/AUC, attack campaigns, ENM sweeps."""

from __future__ import annotations

import dataclasses
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np

from .attacks import (
    ATTACKS,
    AdversarialResult,
    AttackSpec,
    Distances,
    EnmConfig,
    make_config,
    run_attack,
)
from .data import LabeledDataset
from .errors import ConfigError, EvaluationError
from .kitnet import KitNetModel, Label, classify_score, threshold_value

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
DEFAULT_CAMPAIGN_THRESHOLD = 1.0
VIOLATIONS = ("integrity", "availability")
STRATEGIES = ("random_of_class", "nearest_threshold")
BOX_MODES = ("data", "unit", "none")


def _mean_distances(results: Sequence[AdversarialResult]) -> Optional[tuple]:
    ok = [r.distances.as_tuple() for r in results if r.success]
    if not ok:
        return None
    return tuple(float(v) for v in np.mean(np.array(ok, dtype=float), axis=0))


def _fmt(v) -> str:
    return "" if v is None else repr(float(v))


# ----------------------------------------------------------------- ROC / AUC

def roc_curve(scores_benign, scores_malicious) -> list[tuple[float, float]]:
    """ROC points (fpr, tpr) from (0, 0) to (1, 1), malicious as positive."""
    return [(float(f), float(t)) for f, t in _roc_counts_as_rates(scores_benign, scores_malicious)]


def _roc_counts(sb: np.ndarray, sm: np.ndarray) -> list[tuple[int, int]]:
    thresholds = np.unique(np.r_[sb, sm])[::-1]
    sb_sorted, sm_sorted = np.sort(sb), np.sort(sm)
    pts = [(0, 0)]
    for t in thresholds:
        fp = sb.size - int(np.searchsorted(sb_sorted, t, side="left"))
        tp = sm.size - int(np.searchsorted(sm_sorted, t, side="left"))
        pts.append((fp, tp))
    return pts


def _roc_counts_as_rates(scores_benign, scores_malicious):
    sb, sm = _check_classes(scores_benign, scores_malicious)
    return [(fp / sb.size, tp / sm.size) for fp, tp in _roc_counts(sb, sm)]


def _check_classes(scores_benign, scores_malicious):
    sb = np.asarray(scores_benign, dtype=float).ravel()
    sm = np.asarray(scores_malicious, dtype=float).ravel()
    if sb.size == 0 or sm.size == 0:
        raise EvaluationError("ROC needs at least one benign and one malicious score")
    return sb, sm


def roc_auc(scores_benign, scores_malicious) -> float:
    """Trapezoidal area under the ROC curve, in exact integer arithmetic."""
    sb, sm = _check_classes(scores_benign, scores_malicious)
    pts = _roc_counts(sb, sm)
    twice_area = sum((fp1 - fp0) * (tp0 + tp1) for (fp0, tp0), (fp1, tp1) in zip(pts, pts[1:]))
    return float(Fraction(twice_area, 2 * sb.size * sm.size))


def pair_count_auc(scores_benign, scores_malicious) -> float:
    """P(malicious > benign) + P(tie)/2 by counting every pair."""
    sb, sm = _check_classes(scores_benign, scores_malicious)
    greater = int((sm[:, None] > sb[None, :]).sum())
    ties = int((sm[:, None] == sb[None, :]).sum())
    return float(Fraction(2 * greater + ties, 2 * sb.size * sm.size))


# ------------------------------------------------------------ threshold sweep

@dataclass
class ThresholdSweepReport:
    grid: list[tuple[float, float, float, float]]  # threshold, fpr, fnr, accuracy
    roc: list[tuple[float, float]]
    auc: float
    n_benign: int = 0
    n_malicious: int = 0
    config: dict = field(default_factory=dict)
    schema_version: int = SCHEMA_VERSION
    kind: str = "threshold_sweep"

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["grid"] = [list(p) for p in self.grid]
        d["roc"] = [list(p) for p in self.roc]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ThresholdSweepReport":
        d = dict(d)
        d["grid"] = [tuple(p) for p in d["grid"]]
        d["roc"] = [tuple(p) for p in d["roc"]]
        return cls(**d)

    def csv_rows(self):
        header = ["schema_version", "threshold", "fpr", "fnr", "accuracy"]
        return header, [[str(self.schema_version)] + [repr(float(v)) for v in p] for p in self.grid]

    def roc_csv_rows(self):
        header = ["schema_version", "fpr", "tpr"]
        return header, [[str(self.schema_version), repr(f), repr(t)] for f, t in self.roc]

    def roc_report(self) -> "_RocView":
        return _RocView(self)


@dataclass
class _RocView:
    """Adapter so ``write_report(..., 'csv')`` can emit the ROC points."""

    sweep: ThresholdSweepReport

    def to_dict(self):
        return {"kind": "roc", "schema_version": self.sweep.schema_version,
                "roc": [list(p) for p in self.sweep.roc], "auc": self.sweep.auc}

    def csv_rows(self):
        return self.sweep.roc_csv_rows()


def sweep_threshold(model, dataset: LabeledDataset, t_min: float = 0.0, t_max: float = 20.0,
                    steps: int = 400, scores: Optional[np.ndarray] = None) -> ThresholdSweepReport:
    if steps < 2:
        raise EvaluationError("threshold sweep needs at least two grid points")
    if not t_min < t_max:
        raise EvaluationError("t_min must be below t_max")
    if not dataset.has_labels:
        raise EvaluationError("threshold sweep needs labelled rows")
    if scores is None:
        scores = model.score_many(dataset.rows)
    sb = scores[dataset.labels == 0]
    sm = scores[dataset.labels == 1]
    if sb.size == 0 or sm.size == 0:
        raise EvaluationError("dataset contains a single class; ROC is undefined")

    grid = []
    for t in np.linspace(t_min, t_max, steps):
        fp = int((sb >= t).sum())
        fn = int((sm < t).sum())
        acc = ((sb.size - fp) + (sm.size - fn)) / (sb.size + sm.size)
        grid.append((float(t), fp / sb.size, fn / sm.size, acc))
    return ThresholdSweepReport(grid, roc_curve(sb, sm), roc_auc(sb, sm),
                                int(sb.size), int(sm.size))


# ---------------------------------------------------------- sample selection

def select_samples(dataset: LabeledDataset, model, strategy: str, label, n: int,
                   seed: int = 0, threshold: float = DEFAULT_CAMPAIGN_THRESHOLD,
                   only_correct: bool = False, scores: Optional[np.ndarray] = None) -> np.ndarray:
    """Row indices to attack.

    ``random_of_class`` draws uniformly without replacement; ``nearest_threshold``
    takes the rows whose score is closest to the threshold (ties by row index).
    With ``only_correct`` only rows the model currently assigns to ``label``
    are eligible.
    """
    if strategy not in STRATEGIES:
        raise ConfigError(f"unknown selection strategy {strategy!r}")
    label = Label.parse(label)
    idx = dataset.indices_of(label)
    if scores is None and (only_correct or strategy == "nearest_threshold"):
        scores = model.score_many(dataset.rows[idx])
    elif scores is not None:
        scores = np.asarray(scores, dtype=float)[idx]
    if only_correct:
        keep = np.array([classify_score(s, threshold) is label for s in scores], dtype=bool)
        idx, scores = idx[keep], scores[keep]
    if n > idx.size:
        raise EvaluationError(f"asked for {n} samples but only {idx.size} {label.value} rows are eligible")
    if strategy == "random_of_class":
        rng = np.random.default_rng(seed)
        return np.sort(rng.choice(idx, size=n, replace=False))
    order = np.lexsort((idx, np.abs(scores - threshold)))
    return idx[order[:n]]


# ------------------------------------------------------------------ campaigns

def attack_box(mode: str, z_rows: np.ndarray, pad_fraction: float = 0.1):
    """Per-feature box for the normalized feature space.

    ``data`` spans [0, 1] plus every observed normalized value, widened by
    ``pad_fraction`` of its width on both sides.
    """
    if mode == "unit":
        return 0.0, 1.0
    if mode == "none":
        return -np.inf, np.inf
    if mode != "data":
        raise ConfigError(f"unknown box mode {mode!r}")
    lo = np.minimum(z_rows.min(axis=0), 0.0)
    hi = np.maximum(z_rows.max(axis=0), 1.0)
    pad = pad_fraction * (hi - lo)
    return lo - pad, hi + pad


def _result_to_dict(row: int, r: AdversarialResult, score_before: float) -> dict:
    return {
        "row": int(row),
        "success": bool(r.success),
        "iterations": int(r.iterations),
        "score_before": float(score_before),
        "score_after": None if r.score is None else float(r.score),
        "distances": None if r.distances is None else list(r.distances.as_tuple()),
        "original": [float(v) for v in r.original],
        "adversarial": [float(v) for v in r.adversarial],
    }


def _result_from_dict(d: dict) -> AdversarialResult:
    dist = d["distances"]
    return AdversarialResult(
        np.array(d["original"], dtype=float),
        np.array(d["adversarial"], dtype=float),
        d["success"], d["iterations"],
        None if dist is None else Distances(*dist), d["score_after"])


@dataclass
class SampleOutcome:
    row: int
    score_before: float
    result: AdversarialResult


@dataclass
class AttackCampaignReport:
    method: str
    violation: str
    n_samples: int
    success_rate: float
    mean_distances: Optional[tuple]
    per_sample: list[SampleOutcome]
    seed: int
    threshold: float
    config: dict = field(default_factory=dict)
    schema_version: int = SCHEMA_VERSION
    kind: str = "attack_campaign"

    @property
    def n_success(self) -> int:
        return sum(s.result.success for s in self.per_sample)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind, "schema_version": self.schema_version,
            "method": self.method, "violation": self.violation,
            "n_samples": self.n_samples, "success_rate": self.success_rate,
            "mean_distances": None if self.mean_distances is None else list(self.mean_distances),
            "seed": self.seed, "threshold": self.threshold, "config": self.config,
            "per_sample": [_result_to_dict(s.row, s.result, s.score_before) for s in self.per_sample],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AttackCampaignReport":
        md = d["mean_distances"]
        return cls(d["method"], d["violation"], d["n_samples"], d["success_rate"],
                   None if md is None else tuple(md),
                   [SampleOutcome(p["row"], p["score_before"], _result_from_dict(p))
                    for p in d["per_sample"]],
                   d["seed"], d["threshold"], d["config"], d["schema_version"], d["kind"])

    def table_row(self) -> str:
        """Single summary line; dashes where no attack succeeded."""
        cells = ["-"] * 4 if self.mean_distances is None else [f"{v:.4g}" for v in self.mean_distances]
        return (f"{self.method:<5} {self.violation:<12} success {self.success_rate:6.2f}%  "
                f"L0 {cells[0]:>8}  L1 {cells[1]:>8}  L2 {cells[2]:>8}  Linf {cells[3]:>8}")

    def csv_rows(self):
        header = ["schema_version", "row", "success", "iterations", "score_before",
                  "score_after", "l0", "l1", "l2", "linf"]
        rows = []
        for s in self.per_sample:
            r = s.result
            dist = r.distances.as_tuple() if r.distances else (None,) * 4
            rows.append([str(self.schema_version), str(s.row), str(int(r.success)),
                         str(r.iterations), _fmt(s.score_before), _fmt(r.score)]
                        + [_fmt(v) for v in dist])
        return header, rows


def _attack_chunk(args):
    method, scorer, rows, spec_args, cfg = args
    out = []
    for z in rows:
        out.append(run_attack(method, scorer, z, AttackSpec(*spec_args), cfg))
    return out


def _run_all(method, scorer, zs, spec_args, cfg, workers: int):
    if workers <= 1 or len(zs) < 2:
        return _attack_chunk((method, scorer, zs, spec_args, cfg))
    chunks = np.array_split(np.arange(len(zs)), min(workers, len(zs)))
    jobs = [(method, scorer, [zs[i] for i in c], spec_args, cfg) for c in chunks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        parts = list(pool.map(_attack_chunk, jobs))
    return [r for part in parts for r in part]


def run_attack_campaign(model: KitNetModel, calib, dataset: LabeledDataset, method: str,
                        config=None, violation: str = "integrity", n: int = 100, seed: int = 0,
                        strategy: str = "random_of_class", box: str = "data",
                        only_correct: bool = False, workers: int = 1,
                        scores: Optional[np.ndarray] = None) -> AttackCampaignReport:
    """Attack ``n`` selected rows at a fixed threshold and aggregate the outcome.

    Integrity campaigns perturb malicious rows toward benign; availability
    campaigns perturb benign rows toward malicious. Attacks operate in the
    model's normalized feature space; every reported success is re-checked.
    """
    if method not in ATTACKS:
        raise ConfigError(f"unknown attack method {method!r}")
    if violation not in VIOLATIONS:
        raise ConfigError(f"unknown violation {violation!r}; use integrity or availability")
    if config is None:
        config = make_config(method)
    t = DEFAULT_CAMPAIGN_THRESHOLD if calib is None else threshold_value(calib)
    source = Label.MALICIOUS if violation == "integrity" else Label.BENIGN
    target = source.other()

    if scores is None:
        scores = model.score_many(dataset.rows)
    rows = select_samples(dataset, model, strategy, source, n, seed, t, only_correct, scores)
    scorer = model.feature_space()
    z_all = model.input_normalizer.normalize(dataset.rows)
    lo, hi = attack_box(box, z_all)
    spec_args = (target, t, lo, hi)
    results = _run_all(method, scorer, [z_all[i] for i in rows], spec_args, config, workers)

    outcomes = []
    for i, r in zip(rows, results):
        if r.success:
            s = scorer.score(r.adversarial)
            if classify_score(s, t) is not target:
                log.warning("row %d: reported success does not re-verify (S=%r)", i, s)
                r = AdversarialResult(r.original, r.original.copy(), False, r.iterations, None, s)
        outcomes.append(SampleOutcome(int(i), float(scores[i]), r))

    done = [o.result for o in outcomes]
    n_ok = sum(r.success for r in done)
    cfg_dict = {
        "attack": dataclasses.asdict(config), "strategy": strategy, "box": box,
        "only_correct": only_correct, "target_label": target.value,
    }
    return AttackCampaignReport(method, violation, n, 100.0 * n_ok / n, _mean_distances(done),
                                outcomes, seed, t, cfg_dict)


# --------------------------------------------------------------- ENM sweeps

@dataclass
class SweepPoint:
    value: float
    success_rate: float
    mean_distances: Optional[tuple]
    n_samples: int


@dataclass
class SweepReport:
    swept_parameter: str
    points: list[SweepPoint]
    config: dict = field(default_factory=dict)
    schema_version: int = SCHEMA_VERSION
    kind: str = "sweep"

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        for p in d["points"]:
            if p["mean_distances"] is not None:
                p["mean_distances"] = list(p["mean_distances"])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SweepReport":
        d = dict(d)
        d["points"] = [SweepPoint(p["value"], p["success_rate"],
                                  None if p["mean_distances"] is None else tuple(p["mean_distances"]),
                                  p["n_samples"]) for p in d["points"]]
        return cls(**d)

    def csv_rows(self):
        header = ["schema_version", self.swept_parameter, "success_rate", "l0", "l1", "l2", "linf"]
        rows = []
        for p in self.points:
            dist = p.mean_distances if p.mean_distances is not None else (None,) * 4
            rows.append([str(self.schema_version), repr(float(p.value)), repr(float(p.success_rate))]
                        + [_fmt(v) for v in dist])
        return header, rows


def _sweep(param: str, model, calib, dataset, values, base: EnmConfig, n, seed, **kw) -> SweepReport:
    values = sorted(float(v) for v in values)
    if not values:
        raise EvaluationError("sweep grid is empty")
    scores = kw.pop("scores", None)
    if scores is None:
        scores = model.score_many(dataset.rows)
    points = []
    for v in values:
        cfg = dataclasses.replace(base, **{param: v})
        rep = run_attack_campaign(model, calib, dataset, "enm", cfg, n=n, seed=seed,
                                  scores=scores, **kw)
        points.append(SweepPoint(v, rep.success_rate, rep.mean_distances, rep.n_samples))
        log.info("%s=%g success %.2f%% distances %s", param, v, rep.success_rate, rep.mean_distances)
    cfg_dict = {"attack": dataclasses.asdict(base), "n": n, "seed": seed,
                "threshold": DEFAULT_CAMPAIGN_THRESHOLD if calib is None else threshold_value(calib)}
    cfg_dict.update({k: v for k, v in kw.items() if k != "workers"})
    return SweepReport(param, points, cfg_dict)


def sweep_enm_c(model, calib, dataset, c_values, beta_l1: float = 1.0, n: int = 100, seed: int = 0,
                base: Optional[EnmConfig] = None, **campaign) -> SweepReport:
    base = dataclasses.replace(base or EnmConfig(), beta_l1=beta_l1)
    return _sweep("c", model, calib, dataset, c_values, base, n, seed, **campaign)


def sweep_enm_beta(model, calib, dataset, beta_values, c: float = 450.0, n: int = 100,
                   seed: int = 0, base: Optional[EnmConfig] = None, **campaign) -> SweepReport:
    base = dataclasses.replace(base or EnmConfig(), c=c)
    return _sweep("beta_l1", model, calib, dataset, beta_values, base, n, seed, **campaign)


_REPORT_KINDS = {
    "threshold_sweep": ThresholdSweepReport,
    "attack_campaign": AttackCampaignReport,
    "sweep": SweepReport,
}


def report_from_dict(d: dict):
    kind = d.get("kind")
    if d.get("schema_version") != SCHEMA_VERSION:
        raise EvaluationError(f"unsupported report schema version {d.get('schema_version')!r}")
    try:
        return _REPORT_KINDS[kind].from_dict(d)
    except KeyError:
        raise EvaluationError(f"unknown report kind {kind!r}") from None
