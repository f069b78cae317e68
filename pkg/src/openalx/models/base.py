import hashlib
from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError, DimensionError

LOGISTIC = "logistic"
FOREST = "forest"

DEFAULT_PARAMS = {
    LOGISTIC: {"l2": 1e-2, "max_epochs": 1000, "learning_rate": None, "tol": 1e-6},
    FOREST: {"n_trees": 100, "max_depth": 12, "min_samples_leaf": 2, "max_features": "sqrt"},
}


@dataclass(frozen=True)
class ModelSpec:
    kind: str
    params: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.kind not in DEFAULT_PARAMS:
            raise ConfigError(f"unknown model kind {self.kind!r}; expected one of {sorted(DEFAULT_PARAMS)}")
        unknown = set(self.params) - set(DEFAULT_PARAMS[self.kind])
        if unknown:
            raise ConfigError(f"unknown {self.kind} hyperparameters: {sorted(unknown)}")
        merged = {**DEFAULT_PARAMS[self.kind], **self.params}
        for key, value in merged.items():
            if value is None or isinstance(value, str):
                continue
            if key == "l2" and value < 0:
                raise ConfigError("l2 must be >= 0")
            if key == "max_depth" and value < 0:
                raise ConfigError("max_depth must be >= 0")
            if key not in ("l2", "max_depth") and value <= 0:
                raise ConfigError(f"{key} must be positive")
        object.__setattr__(self, "params", merged)

    def to_dict(self):
        return {"kind": self.kind, "params": dict(self.params), "seed": self.seed}

    @classmethod
    def from_dict(cls, d):
        return cls(kind=d["kind"], params=dict(d.get("params", {})), seed=int(d.get("seed", 0)))


def fingerprint(X, y):
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(X, dtype=float).tobytes())
    h.update(np.asarray(y).astype(str).tobytes())
    return h.hexdigest()[:16]


class FittedModel:
    """Common surface of the trained learners."""

    kind = None

    def __init__(self, classes, n_features, train_fingerprint):
        self.classes_ = classes
        self.n_features = n_features
        self.train_fingerprint = train_fingerprint

    def _check(self, X):
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise DimensionError(
                f"expected {self.n_features} feature columns, got shape {X.shape}"
            )
        return X

    def predict_proba(self, X):
        raise NotImplementedError

    def predict(self, X):
        return self.classes_[np.argmax(self.predict_proba(X), axis=1)]
