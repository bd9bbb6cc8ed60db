"""Versioned plain-text model files.

Layout (one item per line, sections in this order)::

    KITBENCH-MODEL v1
    n=<features> m=<max cluster size> hidden_ratio=<r> clusters=<k>
    input_normalizer            then a mins row and a maxs row
    feature_map                 then k lines of space-separated indices
    autoencoder <i> <in> <hidden>   per cluster, then the four parameter blocks
    score_normalizer            mins row, maxs row
    output_autoencoder <in> <hidden>
    calibration phi=<phi> beta_threshold=<beta>
    end

A parameter block is a weight matrix (one comma-separated line per row)
followed by a single bias line. Floats use ``repr`` so every double survives
the round trip.
"""

from __future__ import annotations

import os
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import KitbenchError, MalformedModelError, ModelIOError, ModelVersionError
from .kitnet import FeatureMap, KitNetModel, MinMaxNormalizer, ThresholdCalibration
from .nn import Autoencoder, DenseLayer

MAGIC = "KITBENCH-MODEL"
FORMAT_VERSION = 1


def _row(v) -> str:
    return ",".join(repr(float(x)) for x in np.ravel(v))


def _ae_lines(ae: Autoencoder) -> list[str]:
    out = []
    for layer in (ae.encoder, ae.decoder):
        out.extend(_row(r) for r in layer.weights)
        out.append(_row(layer.biases))
    return out


def dumps_model(model: KitNetModel, calib: Optional[ThresholdCalibration]) -> str:
    fm = model.feature_map
    lines = [
        f"{MAGIC} v{FORMAT_VERSION}",
        f"n={model.n_features} m={fm.max_cluster_size} "
        f"hidden_ratio={model.hidden_ratio!r} clusters={model.n_clusters}",
        "input_normalizer",
        _row(model.input_normalizer.mins),
        _row(model.input_normalizer.maxs),
        "feature_map",
    ]
    lines.extend(" ".join(str(int(i)) for i in c) for c in fm.clusters)
    for i, ae in enumerate(model.ensemble):
        lines.append(f"autoencoder {i} {ae.input_dim} {ae.hidden_dim}")
        lines.extend(_ae_lines(ae))
    lines += ["score_normalizer", _row(model.score_normalizer.mins), _row(model.score_normalizer.maxs)]
    lines.append(f"output_autoencoder {model.output_ae.input_dim} {model.output_ae.hidden_dim}")
    lines.extend(_ae_lines(model.output_ae))
    if calib is None:
        lines.append("calibration none")
    else:
        lines.append(f"calibration phi={calib.phi!r} beta_threshold={calib.beta_threshold!r}")
    lines.append("end")
    return "\n".join(lines) + "\n"


def save_model(model: KitNetModel, calib: Optional[ThresholdCalibration], path) -> None:
    text = dumps_model(model, calib)
    try:
        parent = os.path.dirname(os.fspath(path))
        if parent:
            os.makedirs(parent, exist_ok=True)
        Path(path).write_text(text, encoding="utf-8")
    except OSError as e:
        raise ModelIOError(f"cannot write model file {path}: {e}") from e


class _Lines:
    def __init__(self, text: str):
        self.lines = text.split("\n")
        if self.lines and self.lines[-1] == "":
            self.lines.pop()
        self.pos = 0

    def next(self, what: str) -> str:
        if self.pos >= len(self.lines):
            raise MalformedModelError(f"file ends early; expected {what}")
        line = self.lines[self.pos]
        self.pos += 1
        return line

    def fail(self, msg: str):
        raise MalformedModelError(f"line {self.pos}: {msg}")

    def floats(self, what: str, size: int) -> np.ndarray:
        line = self.next(what)
        try:
            v = np.array([float(x) for x in line.split(",")], dtype=float)
        except ValueError:
            self.fail(f"bad number in {what}")
        if v.size != size:
            self.fail(f"{what} has {v.size} values, expected {size}")
        return v

    def keyword(self, word: str) -> list[str]:
        parts = self.next(word).split()
        if not parts or parts[0] != word:
            self.fail(f"expected section {word!r}")
        return parts[1:]


def _ints(lines: _Lines, parts: list[str], n: int) -> list[int]:
    if len(parts) != n:
        lines.fail("wrong number of fields")
    try:
        return [int(p) for p in parts]
    except ValueError:
        lines.fail("expected integers")


def _keyvals(lines: _Lines, parts: list[str]) -> dict[str, str]:
    out = {}
    for p in parts:
        k, sep, v = p.partition("=")
        if not sep:
            lines.fail(f"expected key=value, got {p!r}")
        out[k] = v
    return out


def _read_layer(lines: _Lines, out_dim: int, in_dim: int, what: str) -> DenseLayer:
    w = np.vstack([lines.floats(f"{what} weights", in_dim) for _ in range(out_dim)])
    b = lines.floats(f"{what} biases", out_dim)
    return DenseLayer(w, b)


def _read_ae(lines: _Lines, d: int, h: int, what: str) -> Autoencoder:
    enc = _read_layer(lines, h, d, f"{what} encoder")
    dec = _read_layer(lines, d, h, f"{what} decoder")
    return Autoencoder(enc, dec)


def loads_model(text: str) -> tuple[KitNetModel, Optional[ThresholdCalibration]]:
    lines = _Lines(text)
    head = lines.next("format header").split()
    if len(head) != 2 or head[0] != MAGIC or not head[1].startswith("v"):
        raise MalformedModelError("not a kitbench model file")
    if head[1] != f"v{FORMAT_VERSION}":
        raise ModelVersionError(f"unsupported model format {head[1]!r}; this build reads v{FORMAT_VERSION}")

    try:
        kv = _keyvals(lines, lines.next("model header").split())
        n, m, k = int(kv["n"]), int(kv["m"]), int(kv["clusters"])
        hidden_ratio = float(kv["hidden_ratio"])
        lines.keyword("input_normalizer")
        in_norm = MinMaxNormalizer(lines.floats("input mins", n), lines.floats("input maxs", n))
        lines.keyword("feature_map")
        clusters = []
        for _ in range(k):
            clusters.append([int(t) for t in lines.next("cluster").split()])
        fmap = FeatureMap(clusters, m)
        ensemble = []
        for i in range(k):
            idx, d, h = _ints(lines, lines.keyword("autoencoder"), 3)
            if idx != i:
                lines.fail(f"autoencoder {idx} out of order")
            ensemble.append(_read_ae(lines, d, h, f"autoencoder {i}"))
        lines.keyword("score_normalizer")
        s_norm = MinMaxNormalizer(lines.floats("score mins", k), lines.floats("score maxs", k))
        d, h = _ints(lines, lines.keyword("output_autoencoder"), 2)
        out_ae = _read_ae(lines, d, h, "output autoencoder")
        cal_parts = lines.keyword("calibration")
        if cal_parts == ["none"]:
            calib = None
        else:
            ckv = _keyvals(lines, cal_parts)
            calib = ThresholdCalibration(float(ckv["phi"]), float(ckv["beta_threshold"]))
        lines.keyword("end")
        model = KitNetModel(in_norm, fmap, ensemble, s_norm, out_ae, hidden_ratio)
    except MalformedModelError:
        raise
    except (KeyError, ValueError, TypeError, KitbenchError) as e:
        # Shape, partition and calibration checks raise from the constructors.
        raise MalformedModelError(f"invalid model file: {e}") from e
    if lines.pos != len(lines.lines):
        raise MalformedModelError("trailing content after 'end'")
    return model, calib


def load_model(path) -> tuple[KitNetModel, Optional[ThresholdCalibration]]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except UnicodeDecodeError as e:
        raise MalformedModelError(f"{path} is not UTF-8 text") from e
    except OSError as e:
        raise ModelIOError(f"cannot read model file {path}: {e}") from e
    return loads_model(text)
