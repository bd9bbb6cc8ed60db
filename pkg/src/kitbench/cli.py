"""Command-line front end.

Every subcommand resolves its settings as flags over the JSON ``--config``
file over built-in defaults, echoes the resolved set, and copies it into the
reports it writes. Exit codes: 0 ok, 1 usage/config, 2 data, 3 model,
training or evaluation failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path
from typing import Any, Callable, Optional, Sequence

import numpy as np

from . import __version__
from .attacks import ATTACKS, make_config
from .data import (
    SyntheticConfig,
    generate_synthetic,
    load_feature_csv,
    write_dataset_csv,
    write_report,
)
from .errors import ConfigError, DataError, EvaluationError, KitbenchError
from .evaluation import (
    BOX_MODES,
    STRATEGIES,
    VIOLATIONS,
    run_attack_campaign,
    sweep_enm_beta,
    sweep_enm_c,
    sweep_threshold,
)
from .kitnet import Label, ThresholdCalibration, TrainingConfig, TrainingLog, train_online
from .persistence import load_model, save_model

log = logging.getLogger("kitbench")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_MODEL = 0, 1, 2, 3

# Method-specific attack knobs and the config field each one sets.
ATTACK_PARAMS = {
    "fgsm": {"epsilon": "epsilon"},
    "jsma": {"theta": "theta", "max_features": "max_features",
             "max_iterations": "max_iterations", "bidirectional": "bidirectional",
             "pairwise": "pairwise"},
    "cw": {"c": "c", "learning_rate": "learning_rate", "max_steps": "max_steps",
           "confidence": "confidence", "binary_search_steps": "binary_search_steps",
           "change_of_variables": "change_of_variables"},
    "enm": {"c": "c", "beta": "beta_l1", "learning_rate": "learning_rate",
            "max_steps": "max_steps", "confidence": "confidence",
            "binary_search_steps": "binary_search_steps", "l2_squared": "l2_squared"},
}
ALL_ATTACK_KEYS = sorted({k for d in ATTACK_PARAMS.values() for k in d})


class UsageError(ConfigError):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on bad usage; this contract reserves 2 for data errors."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ------------------------------------------------------------ grid parsing

def parse_grid(expr: str) -> list[float]:
    """``start:stop:steps`` (inclusive, evenly spaced) or ``a,b,c``."""
    expr = str(expr).strip()
    if not expr:
        raise UsageError("empty grid")
    try:
        if ":" in expr:
            parts = expr.split(":")
            if len(parts) != 3:
                raise UsageError(f"grid {expr!r} must look like start:stop:steps")
            start, stop, steps = float(parts[0]), float(parts[1]), int(parts[2])
            if steps < 1:
                raise UsageError(f"grid {expr!r} has no points")
            return [float(v) for v in np.linspace(start, stop, steps)]
        values = [float(p) for p in expr.split(",") if p.strip()]
    except ValueError:
        raise UsageError(f"cannot parse grid {expr!r}") from None
    if not values:
        raise UsageError("empty grid")
    return values


def _threshold_arg(v) -> Any:
    if isinstance(v, str) and v.strip().lower() == "calibrated":
        return "calibrated"
    try:
        return float(v)
    except (TypeError, ValueError):
        raise UsageError(f"threshold must be a number or 'calibrated', got {v!r}") from None


# ------------------------------------------------------------- option table

@dataclasses.dataclass(frozen=True)
class Opt:
    name: str
    type: Callable = str
    default: Any = None
    help: str = ""
    choices: Optional[Sequence] = None
    flag: bool = False  # boolean --x / --no-x


COMMON = [
    Opt("seed", int, 0, "global seed; sampling and initialisation derive from it"),
]
CAMPAIGN = [
    Opt("model", str, None, "model file"),
    Opt("data", str, None, "labelled feature CSV"),
    Opt("label_column", str, "label", "label column name"),
    Opt("violation", str, "integrity", "integrity: malicious to benign; availability: benign to malicious",
        choices=VIOLATIONS),
    Opt("n", int, 100, "samples per campaign"),
    Opt("threshold", _threshold_arg, 1.0, "fixed threshold or 'calibrated'"),
    Opt("strategy", str, "random_of_class", "sample selection", choices=STRATEGIES),
    Opt("box", str, "data", "feature box in normalized space", choices=BOX_MODES),
    Opt("only_correct", bool, False, "attack only rows currently classified as their true class",
        flag=True),
    Opt("workers", int, None, "worker processes (default: all cores; 1 is sequential)"),
    Opt("out", str, None, "output path prefix for .json and .csv reports"),
]
ATTACK_KNOBS = [
    Opt("epsilon", float, None, "FGSM step size"),
    Opt("theta", float, None, "JSMA per-step perturbation"),
    Opt("max_features", int, None, "JSMA feature budget"),
    Opt("max_iterations", int, None, "JSMA iteration cap"),
    Opt("bidirectional", bool, None, "JSMA may move features against the sign of theta", flag=True),
    Opt("pairwise", bool, None, "JSMA moves the two most salient features per iteration", flag=True),
    Opt("c", float, None, "loss weight for C&W/ENM"),
    Opt("learning_rate", float, None, "C&W/ENM step size"),
    Opt("max_steps", int, None, "C&W/ENM iterations"),
    Opt("confidence", float, None, "C&W/ENM margin kappa"),
    Opt("binary_search_steps", int, None, "C&W/ENM binary search rounds over c"),
    Opt("change_of_variables", bool, None, "C&W tanh reparametrisation", flag=True),
    Opt("beta", float, None, "ENM L1 weight"),
    Opt("l2_squared", bool, None, "ENM uses squared L2", flag=True),
]

COMMANDS: dict[str, list[Opt]] = {
    "synth": COMMON + [
        Opt("out", str, None, "output CSV path"),
        Opt("n_features", int, 20), Opt("n_benign", int, 3000), Opt("n_malicious", int, 1000),
        Opt("center", float, 5.0, "benign feature mean"),
        Opt("spread", float, 1.0, "feature standard deviation"),
        Opt("shift", float, 4.0, "malicious shift in units of spread"),
        Opt("shifted_features", int, None, "number of leading features shifted (default all)"),
        Opt("group_size", int, 5, "features per correlated block"),
        Opt("correlation", float, 0.8, "within-block correlation"),
        Opt("label_column", str, "label"),
    ],
    "train": COMMON + [
        Opt("data", str, None, "feature CSV; with a label column only benign rows are used"),
        Opt("label_column", str, None, "label column name, if the CSV has one"),
        Opt("model", str, None, "output model file"),
        Opt("fm_window", int, 5000), Opt("train_window", int, 50000),
        Opt("learning_rate", float, 0.1), Opt("max_cluster_size", int, 10),
        Opt("hidden_ratio", float, 0.75), Opt("beta_threshold", float, 1.0),
        Opt("summary", str, None, "optional JSON training summary path"),
    ],
    "calibrate": COMMON + [
        Opt("model", str, None, "input model file"),
        Opt("beta_threshold", float, 1.0, "threshold multiplier (>= 1)"),
        Opt("out", str, None, "output model file (input is never modified)"),
    ],
    "evaluate": COMMON + [
        Opt("model", str, None), Opt("data", str, None), Opt("label_column", str, "label"),
        Opt("t_min", float, 0.0), Opt("t_max", float, 20.0), Opt("steps", int, 400),
        Opt("out", str, None, "output prefix: <out>.json, <out>.csv, <out>_roc.csv"),
    ],
    "attack": COMMON + CAMPAIGN + [
        Opt("method", str, None, "attack", choices=tuple(ATTACKS)),
    ] + ATTACK_KNOBS,
    "sweep": COMMON + CAMPAIGN + [
        Opt("parameter", str, None, "ENM parameter to sweep", choices=("c", "beta")),
        Opt("values", str, None, "grid: start:stop:steps or a comma list"),
    ] + [o for o in ATTACK_KNOBS if o.name in ATTACK_PARAMS["enm"]],
}
REQUIRED = {
    "synth": ("out",),
    "train": ("data", "model"),
    "calibrate": ("model", "out"),
    "evaluate": ("model", "data"),
    "attack": ("model", "data", "method"),
    "sweep": ("model", "data", "parameter", "values"),
}


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="kitbench", description="KitNET detector and adversarial-robustness bench")
    p.add_argument("--version", action="version", version=f"kitbench {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, opts in COMMANDS.items():
        sp = sub.add_parser(name, argument_default=argparse.SUPPRESS)
        sp.add_argument("--config", help="JSON config file with a section per subcommand")
        for o in opts:
            flag = "--" + o.name.replace("_", "-")
            help_ = o.help + (f" (default: {o.default})" if o.default is not None else "")
            if o.flag:
                sp.add_argument(flag, dest=o.name, action=argparse.BooleanOptionalAction, help=help_)
            else:
                sp.add_argument(flag, dest=o.name, type=o.type, choices=o.choices, help=help_)
    return p


# ---------------------------------------------------------- config merging

def _coerce(o: Opt, value):
    if value is None:
        return None
    if o.flag or o.type is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{o.name} must be true or false")
        return value
    try:
        v = o.type(value)
    except (TypeError, ValueError):
        raise ConfigError(f"bad value for {o.name}: {value!r}") from None
    if o.choices is not None and v not in o.choices:
        raise ConfigError(f"{o.name} must be one of {list(o.choices)}")
    return v


def load_config_file(path, command: str) -> dict:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"config {path} is not valid JSON: {e}") from e
    if not isinstance(data, dict):
        raise ConfigError("config file must hold a JSON object")
    unknown = set(data) - set(COMMANDS) - {"global"}
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    known = {o.name for o in COMMANDS[command]}
    merged = {}
    for section in ("global", command):
        body = data.get(section, {})
        if not isinstance(body, dict):
            raise ConfigError(f"config section {section!r} must be an object")
        bad = set(body) - known
        # Global keys only need to make sense for some subcommand.
        if section == "global":
            everywhere = {o.name for opts in COMMANDS.values() for o in opts}
            if set(body) - everywhere:
                raise ConfigError(f"unknown global config keys: {sorted(set(body) - everywhere)}")
            body = {k: v for k, v in body.items() if k in known}
        elif bad:
            raise ConfigError(f"unknown keys in config section {command!r}: {sorted(bad)}")
        merged.update(body)
    return merged


def resolve(command: str, ns: argparse.Namespace) -> dict:
    opts = {o.name: o for o in COMMANDS[command]}
    cfg = {name: o.default for name, o in opts.items()}
    cfg_path = getattr(ns, "config", None)
    if cfg_path:
        for k, v in load_config_file(cfg_path, command).items():
            cfg[k] = _coerce(opts[k], v)
    for k in opts:
        if hasattr(ns, k):
            cfg[k] = getattr(ns, k)
    missing = [k for k in REQUIRED[command] if cfg.get(k) is None]
    if missing:
        raise UsageError("missing required option(s): "
                         + ", ".join("--" + m.replace("_", "-") for m in missing))
    if "workers" in cfg and cfg["workers"] is None:
        cfg["workers"] = os.cpu_count() or 1
    if cfg.get("workers") is not None and cfg["workers"] < 1:
        raise ConfigError("workers must be at least 1")
    return cfg


def _echo(command: str, cfg: dict) -> None:
    print(f"resolved {command} config: {json.dumps(cfg, sort_keys=True)}")


# ------------------------------------------------------------- subcommands

def cmd_synth(cfg: dict) -> int:
    sc = SyntheticConfig(
        n_features=cfg["n_features"], n_benign=cfg["n_benign"], n_malicious=cfg["n_malicious"],
        benign_center=cfg["center"], spread=cfg["spread"], malicious_shift=cfg["shift"],
        shifted_features=cfg["shifted_features"], group_size=cfg["group_size"],
        correlation=cfg["correlation"], seed=cfg["seed"])
    man = write_dataset_csv(generate_synthetic(sc), cfg["out"], cfg["label_column"])
    print(f"wrote {man.path}: {man.n_rows} rows x {man.n_features} features "
          f"{man.label_counts} sha256 {man.checksum}")
    return EXIT_OK


def _training_config(cfg: dict) -> TrainingConfig:
    try:
        return TrainingConfig(cfg["fm_window"], cfg["train_window"], cfg["learning_rate"],
                              cfg["max_cluster_size"], cfg["hidden_ratio"], cfg["seed"])
    except KitbenchError as e:
        raise ConfigError(str(e)) from e


def cmd_train(cfg: dict) -> int:
    tc = _training_config(cfg)
    if cfg["beta_threshold"] < 1.0:
        raise ConfigError("beta_threshold must be at least 1.0")
    ds = load_feature_csv(cfg["data"], cfg["label_column"])
    rows = ds.of_class(Label.BENIGN) if ds.has_labels else ds.rows
    tlog = TrainingLog()
    model, calib = train_online(rows, tc, tlog)
    calib = ThresholdCalibration(calib.phi, cfg["beta_threshold"])
    save_model(model, calib, cfg["model"])
    scores = np.asarray(tlog.phase2_scores)
    summary = {
        "config": cfg, "phi": calib.phi, "threshold": calib.threshold,
        "n_features": model.n_features, "n_clusters": model.n_clusters,
        "clusters": model.feature_map.clusters,
        "fm_window": tc.fm_window, "train_window": tc.train_window,
        "rows_available": int(rows.shape[0]),
        "phase2_score_mean": float(scores.mean()), "phase2_score_last": float(scores[-1]),
    }
    print(f"trained on {tc.fm_window} + {tc.train_window} rows of {rows.shape[0]}; "
          f"{model.n_features} features in {model.n_clusters} clusters")
    print(f"phi {calib.phi!r}  threshold {calib.threshold!r}  (beta_threshold {calib.beta_threshold})")
    print(f"model written to {cfg['model']}")
    if cfg["summary"]:
        Path(cfg["summary"]).write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n",
                                        encoding="utf-8")
    return EXIT_OK


def cmd_calibrate(cfg: dict) -> int:
    model, calib = load_model(cfg["model"])
    if calib is None:
        raise EvaluationError("model file carries no phi to calibrate from")
    try:
        new = ThresholdCalibration(calib.phi, cfg["beta_threshold"])
    except KitbenchError as e:
        raise ConfigError(str(e)) from e
    save_model(model, new, cfg["out"])
    print(f"phi {new.phi!r}  beta_threshold {new.beta_threshold!r}  threshold {new.threshold!r}")
    return EXIT_OK


def _labelled(cfg):
    return load_feature_csv(cfg["data"], cfg["label_column"])


def _check_width(model, ds) -> None:
    if ds.n_features != model.n_features:
        raise DataError(f"data has {ds.n_features} features but the model expects {model.n_features}")


def _out_prefix(cfg: dict, command: str) -> str:
    return cfg.get("out") or command


def cmd_evaluate(cfg: dict) -> int:
    model, _ = load_model(cfg["model"])
    ds = _labelled(cfg)
    _check_width(model, ds)
    rep = sweep_threshold(model, ds, cfg["t_min"], cfg["t_max"], cfg["steps"])
    rep.config = dict(cfg)
    prefix = _out_prefix(cfg, "evaluate")
    for m in (write_report(rep, prefix + ".json"), write_report(rep, prefix + ".csv", "csv"),
              write_report(rep.roc_report(), prefix + "_roc.csv", "csv")):
        print(f"wrote {m.path} ({m.format}, {m.n_records} records)")
    best = max(rep.grid, key=lambda p: (p[3], -p[0]))
    print(f"AUC {rep.auc:.6f}  benign {rep.n_benign}  malicious {rep.n_malicious}")
    print(f"best accuracy {best[3]:.4f} at T={best[0]:.4g} (FPR {best[1]:.4f}, FNR {best[2]:.4f})")
    return EXIT_OK


def _campaign_threshold(cfg, calib):
    if cfg["threshold"] == "calibrated":
        if calib is None:
            raise EvaluationError("threshold 'calibrated' requested but the model has no calibration")
        return calib
    return float(cfg["threshold"])


def _attack_config(method: str, cfg: dict, fixed: Optional[dict] = None):
    allowed = ATTACK_PARAMS[method]
    params = {}
    for key in ALL_ATTACK_KEYS:
        v = cfg.get(key)
        if v is None:
            continue
        if key not in allowed:
            raise ConfigError(f"--{key.replace('_', '-')} does not apply to {method}")
        params[allowed[key]] = v
    params.update(fixed or {})
    return make_config(method, **params)


def _campaign_kwargs(cfg: dict) -> dict:
    return dict(violation=cfg["violation"], strategy=cfg["strategy"], box=cfg["box"],
                only_correct=cfg["only_correct"], workers=cfg["workers"])


def cmd_attack(cfg: dict) -> int:
    acfg = _attack_config(cfg["method"], cfg)
    model, calib = load_model(cfg["model"])
    ds = _labelled(cfg)
    _check_width(model, ds)
    t = _campaign_threshold(cfg, calib)
    rep = run_attack_campaign(model, t, ds, cfg["method"], acfg, n=cfg["n"], seed=cfg["seed"],
                              **_campaign_kwargs(cfg))
    rep.config.update({"resolved": {k: v for k, v in cfg.items() if k != "workers"}})
    prefix = _out_prefix(cfg, f"attack_{cfg['method']}")
    for m in (write_report(rep, prefix + ".json"), write_report(rep, prefix + ".csv", "csv")):
        print(f"wrote {m.path} ({m.format}, {m.n_records} records)")
    print(f"threshold {rep.threshold!r}")
    print(rep.table_row())
    return EXIT_OK


def cmd_sweep(cfg: dict) -> int:
    values = parse_grid(cfg["values"])
    param = cfg["parameter"]
    swept_key = "c" if param == "c" else "beta"
    base_cfg = dict(cfg)
    base_cfg[swept_key] = None
    acfg = _attack_config("enm", base_cfg)
    model, calib = load_model(cfg["model"])
    ds = _labelled(cfg)
    _check_width(model, ds)
    t = _campaign_threshold(cfg, calib)
    kw = _campaign_kwargs(cfg)
    if param == "c":
        rep = sweep_enm_c(model, t, ds, values, acfg.beta_l1, cfg["n"], cfg["seed"], base=acfg, **kw)
    else:
        rep = sweep_enm_beta(model, t, ds, values, acfg.c, cfg["n"], cfg["seed"], base=acfg, **kw)
    rep.config["resolved"] = {k: v for k, v in cfg.items() if k != "workers"}
    prefix = _out_prefix(cfg, f"sweep_{param}")
    for m in (write_report(rep, prefix + ".json"), write_report(rep, prefix + ".csv", "csv")):
        print(f"wrote {m.path} ({m.format}, {m.n_records} records)")
    for p in rep.points:
        dist = "-" if p.mean_distances is None else "  ".join(f"{v:.4g}" for v in p.mean_distances)
        print(f"{param}={p.value:<10g} success {p.success_rate:6.2f}%  L0 L1 L2 Linf: {dist}")
    return EXIT_OK


HANDLERS = {
    "synth": cmd_synth, "train": cmd_train, "calibrate": cmd_calibrate,
    "evaluate": cmd_evaluate, "attack": cmd_attack, "sweep": cmd_sweep,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(ns.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve(ns.command, ns)
        _echo(ns.command, cfg)
        return HANDLERS[ns.command](cfg)
    except UsageError as e:
        parser.print_usage(sys.stderr)
        print(f"kitbench {ns.command}: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except KitbenchError as e:
        print(f"kitbench {ns.command}: error: {e}", file=sys.stderr)
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
