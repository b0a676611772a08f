"""Equivariance audits for layers and models."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .. import autodiff as ad
from ..so3 import random_rotation, wigner_d_from_rotation


def _numpy_map(features: dict) -> dict:
    return {d: (f.data if isinstance(f, ad.Tensor) else np.asarray(f, dtype=np.float64)) for d, f in features.items()}


def rotate_features(features: dict, rotation) -> dict:
    """Apply ``D_d(R)`` to every ``(N, m, 2d+1)`` block."""
    return {d: f @ wigner_d_from_rotation(d, rotation).T for d, f in _numpy_map(features).items()}


@dataclass
class EquivarianceReport:
    name: str
    tol: float
    trials: int = 0
    residuals: dict = field(default_factory=dict)  # key -> list of per-trial residuals

    def add(self, key, value: float):
        """Record a residual under a degree (or another label such as ``"k,l"``)."""
        self.residuals.setdefault(key, []).append(float(value))

    @property
    def max_residual(self) -> float:
        return max((max(v) for v in self.residuals.values()), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_residual <= self.tol

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "tol": self.tol,
            "trials": self.trials,
            "passed": self.passed,
            "max_residual": self.max_residual,
            "degrees": {
                str(d): {"max": max(v), "mean": float(np.mean(v))} for d, v in sorted(self.residuals.items(), key=lambda kv: str(kv[0]))
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def check_equivariance(fn, graph, features, trials=10, tol=1e-7, rng=None, name="layer",
                       translate=False) -> EquivarianceReport:
    """Compare ``fn(R g, D f)`` with ``D fn(g, f)`` over random rotations.

    ``fn(graph, features)`` returns a degree -> ``(N, m, 2d+1)`` map (arrays
    or tensors). Residuals are ``|out_rot - D out| / (1 + |out|)`` per degree.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    base = _numpy_map(fn(graph, features))
    report = EquivarianceReport(name, tol)
    for _ in range(trials):
        R = random_rotation(rng)
        shift = rng.normal(size=3) if translate else None
        rotated = _numpy_map(fn(graph.transformed(R, shift), rotate_features(features, R)))
        expected = rotate_features(base, R)
        for d, out in base.items():
            diff = np.linalg.norm(rotated[d] - expected[d])
            report.add(d, diff / (1.0 + np.linalg.norm(out)))
        report.trials += 1
    return report
