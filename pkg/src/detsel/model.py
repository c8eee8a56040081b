"""Model file: trained perceptron, feature scaler, margins and stage metadata.

The file is JSON with a format version; floats are written with repr
precision so a save/load round trip is value-exact.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .features import FEATURE_NAMES, Scaler
from .mlp import ACTIVATIONS, MlpParams, forward
from .selection import Margins, select_argmax, select_reliable

MODEL_FORMAT = "detsel-mlp"
MODEL_VERSION = 1
STAGES = ("trained", "calibrated", "retrained")


class ModelFormatError(ValueError):
    pass


@dataclass
class Model:
    params: MlpParams
    scaler: Scaler
    margins: Margins | None = None
    activation: str = "exact"
    stage: str = "trained"
    metadata: dict = field(default_factory=dict)

    @property
    def margin_free(self) -> bool:
        return self.stage == "retrained"

    @property
    def margins_missing(self) -> bool:
        return self.margins is None

    def probabilities(self, features, activation: str | None = None) -> np.ndarray:
        """Class probabilities from raw (N, 7) feature rows."""
        X = self.scaler.transform(features)
        return forward(self.params, X, activation or self.activation).probs

    def select(self, features, two_stage: bool = False, activation: str | None = None) -> np.ndarray:
        """Online detector choice: argmax, or argmax + reliable margins."""
        r = self.probabilities(features, activation)
        if two_stage:
            if self.margins is None:
                raise ValueError("two-stage selection needs calibrated margins")
            return select_reliable(r, self.margins)
        return select_argmax(r)


def model_to_dict(m: Model) -> dict:
    return {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "stage": m.stage,
        "activation": m.activation,
        "margin_free": m.margin_free,
        "layer_sizes": list(m.params.sizes),
        "theta": [float(v) for v in m.params.theta],
        "selected_features": [FEATURE_NAMES[i] for i in m.scaler.selected],
        "scaler": {
            "selected": [int(i) for i in m.scaler.selected],
            "mean": [float(v) for v in m.scaler.mean],
            "std": [float(v) for v in m.scaler.std],
            "log": bool(m.scaler.log),
        },
        "margins": None if m.margins is None else {
            "delta": [float(v) for v in m.margins.delta],
            "gamma": float(m.margins.gamma),
            "step": float(m.margins.step),
        },
        "metadata": m.metadata,
    }


def save_model(path, model: Model) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model), indent=1) + "\n", encoding="utf-8")


def model_from_dict(d: dict) -> Model:
    if d.get("format") != MODEL_FORMAT or d.get("version") != MODEL_VERSION:
        raise ModelFormatError(f"unsupported model format {d.get('format')!r} version {d.get('version')!r}")
    try:
        sizes = tuple(int(s) for s in d["layer_sizes"])
        if len(sizes) != 3 or min(sizes) < 1:
            raise ModelFormatError(f"bad layer_sizes {d['layer_sizes']!r}")
        params = MlpParams(sizes, np.array(d["theta"], dtype=float))
        sc = d["scaler"]
        scaler = Scaler([int(i) for i in sc["selected"]], np.array(sc["mean"], float),
                        np.array(sc["std"], float), bool(sc["log"]))
        if not len(scaler.selected) == len(scaler.mean) == len(scaler.std) == sizes[0]:
            raise ModelFormatError("scaler size does not match the input layer")
        mg = d.get("margins")
        margins = None
        if mg is not None:
            margins = Margins(np.array(mg["delta"], float), float(mg["gamma"]), float(mg["step"]))
            if len(margins.delta) != sizes[2] - 1:
                raise ModelFormatError("margin count does not match the output layer")
        activation = d["activation"]
        stage = d["stage"]
    except (KeyError, TypeError) as exc:
        raise ModelFormatError(f"missing or malformed field: {exc}") from None
    except ValueError as exc:
        if isinstance(exc, ModelFormatError):
            raise
        raise ModelFormatError(str(exc)) from None
    if activation not in ACTIVATIONS or stage not in STAGES:
        raise ModelFormatError(f"bad activation {activation!r} or stage {stage!r}")
    return Model(params, scaler, margins, activation, stage, dict(d.get("metadata", {})))


def load_model(path) -> Model:
    try:
        d = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"{path}: {exc}") from None
    return model_from_dict(d)
