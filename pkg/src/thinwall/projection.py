"""Smoothed Heaviside maps used along the design pipeline.

``project_analysis`` and ``project_geometric`` share the tanh form
``0.5 * (1 + tanh(s * x))`` with independent sharpness schedules; the
detector is the C2 quintic step used by the maximum-size constraint.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ProjectionParams:
    kind: str  # "analysis" | "geometric" | "detector"
    threshold: float = 0.0
    bandwidth: float = 1.0

    def __post_init__(self):
        if self.kind not in ("analysis", "geometric", "detector"):
            raise ValueError(f"unknown projection kind {self.kind!r}")
        if self.bandwidth <= 0:
            raise ValueError("bandwidth must be positive")
        if self.kind == "detector" and not 0.0 < self.threshold < 1.0:
            raise ValueError("detector threshold must lie in (0, 1)")


def tanh_projection(x, sharpness: float):
    """Value and derivative of ``0.5 * (1 + tanh(s x))``."""
    if sharpness <= 0:
        raise ValueError("sharpness must be positive")
    t = np.tanh(sharpness * np.asarray(x, dtype=float))
    return 0.5 * (1.0 + t), 0.5 * sharpness * (1.0 - t * t)


def project_analysis(phi_tilde, sharpness: float):
    """Analysis density and its pointwise derivative."""
    return tanh_projection(phi_tilde, sharpness)


def project_geometric(phi_tilde, sharpness: float):
    """Geometric density; callers keep its sharpness at or above the analysis one."""
    return tanh_projection(phi_tilde, sharpness)


def detector(x, h: float):
    """Quintic smoothed step on [-h, h] and its first derivative."""
    if h <= 0:
        raise ValueError("h must be positive")
    x = np.asarray(x, dtype=float)
    t = np.clip(x / h, -1.0, 1.0)
    t2 = t * t
    value = 0.5 + t * (15.0 / 16.0 - t2 * (5.0 / 8.0 - 3.0 / 16.0 * t2))
    inside = np.abs(x) <= h
    deriv = np.where(inside, 15.0 / (16.0 * h) * (1.0 - t2) ** 2, 0.0)
    return value, deriv


def detector_second_derivative(x, h: float):
    x = np.asarray(x, dtype=float)
    t = x / h
    return np.where(np.abs(t) <= 1.0, -15.0 / (4.0 * h * h) * t * (1.0 - t * t), 0.0)
