"""Method of Moving Asymptotes and continuation scheduling.

The MMA subproblem is separable and convex.  It is solved through its
concave dual in the constraint multipliers: for fixed multipliers the
primal minimizer has a closed form per variable, and the dual is
maximized by projected Newton steps (with a cyclic bisection fallback).
Infeasible subproblems are handled by the usual elastic slacks ``y_i``
with linear and quadratic penalties ``c_i y_i + d_i y_i^2 / 2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

_ALBEFA = 0.1
_RAA0 = 1e-5
_ASY_MIN = 1e-4
_ASY_MAX = 10.0


@dataclass
class MmaState:
    n: int
    move: float = 0.2
    asy_init: float = 0.5
    asy_grow: float = 1.2
    asy_shrink: float = 0.7
    c: float = 1000.0
    d: float = 1.0
    iteration: int = 0
    lower: Optional[np.ndarray] = None
    upper: Optional[np.ndarray] = None
    x_prev1: Optional[np.ndarray] = None
    x_prev2: Optional[np.ndarray] = None
    diagnostics: dict = field(default_factory=dict)

    def reset(self, n: Optional[int] = None):
        """Forget asymptotes and history, e.g. after the variables change identity."""
        if n is not None:
            self.n = n
        self.iteration = 0
        self.lower = self.upper = self.x_prev1 = self.x_prev2 = None


@dataclass
class _Subproblem:
    low: np.ndarray
    upp: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    p0: np.ndarray
    q0: np.ndarray
    P: np.ndarray  # (m, n)
    Q: np.ndarray
    b: np.ndarray  # (m,)
    c: np.ndarray
    d: np.ndarray

    def primal(self, lam):
        pl = self.p0 + lam @ self.P
        ql = self.q0 + lam @ self.Q
        sp, sq = np.sqrt(pl), np.sqrt(ql)
        x = (sp * self.low + sq * self.upp) / (sp + sq)
        x = np.minimum(np.maximum(x, self.alpha), self.beta)
        y = np.maximum(0.0, (lam - self.c) / self.d)
        return x, y, pl, ql

    def dual(self, lam):
        """Dual value, gradient, Hessian and the primal point at ``lam``."""
        x, y, pl, ql = self.primal(lam)
        ux = 1.0 / (self.upp - x)
        xl = 1.0 / (x - self.low)
        gi = self.P @ ux + self.Q @ xl
        value = float(pl @ ux + ql @ xl - lam @ self.b
                      + np.sum(self.c * y + 0.5 * self.d * y * y - lam * y))
        grad = gi - self.b - y
        free = (x > self.alpha) & (x < self.beta)
        dpsi = self.P[:, free] * ux[free] ** 2 - self.Q[:, free] * xl[free] ** 2
        curv = 2.0 * (pl[free] * ux[free] ** 3 + ql[free] * xl[free] ** 3)
        hess = -(dpsi / curv) @ dpsi.T - np.diag((y > 0) / self.d)
        return value, grad, hess, x, y

    def kkt_residual(self, lam):
        """Max of the relative x-stationarity and dual complementarity residuals."""
        x, y, pl, ql = self.primal(lam)
        ux2 = (self.upp - x) ** -2
        xl2 = (x - self.low) ** -2
        dl = pl * ux2 - ql * xl2
        scale = pl * ux2 + ql * xl2
        rx = np.where(x <= self.alpha, np.maximum(0.0, -dl),
                      np.where(x >= self.beta, np.maximum(0.0, dl), np.abs(dl))) / scale
        _, grad, _, _, _ = self.dual(lam)
        rl = np.abs(lam - np.maximum(0.0, lam + grad)) if len(lam) else np.zeros(0)
        return float(max(rx.max(initial=0.0), rl.max(initial=0.0)))


def _solve_dual(sub: _Subproblem, tol: float = 1e-12, max_newton: int = 100):
    m = len(sub.b)
    lam = np.zeros(m)
    if m == 0:
        return lam

    def residual(l, g):
        return np.max(np.abs(l - np.maximum(0.0, l + g)))

    value, grad, hess, _, _ = sub.dual(lam)
    for _ in range(max_newton):
        if residual(lam, grad) <= tol:
            return lam
        active = (lam <= 0.0) & (grad <= 0.0)
        step = np.zeros(m)
        free = ~active
        if free.any():
            H = hess[np.ix_(free, free)] - 1e-14 * np.eye(free.sum())
            try:
                step[free] = -np.linalg.solve(H, grad[free])
            except np.linalg.LinAlgError:
                step[free] = grad[free]
            if step[free] @ grad[free] <= 0:
                step[free] = grad[free]
        t = 1.0
        while t > 1e-12:
            trial = np.maximum(0.0, lam + t * step)
            tv, tg, th, _, _ = sub.dual(trial)
            if tv >= value + 1e-4 * (grad @ (trial - lam)) - 1e-15 * abs(value):
                break
            t *= 0.5
        else:
            break
        lam, value, grad, hess = trial, tv, tg, th
    return _coordinate_bisection(sub, lam, tol)


def _coordinate_bisection(sub: _Subproblem, lam, tol, sweeps: int = 200):
    """Cyclic exact line maximization of the concave dual along each multiplier."""
    lam = lam.copy()
    for _ in range(sweeps):
        for i in range(len(lam)):
            def g(v):
                trial = lam.copy()
                trial[i] = v
                return sub.dual(trial)[1][i]
            if g(0.0) <= 0.0:
                lam[i] = 0.0
                continue
            hi = max(1.0, 2.0 * lam[i])
            while g(hi) > 0.0:
                hi *= 2.0
            lo = 0.0
            for _ in range(200):
                mid = 0.5 * (lo + hi)
                if g(mid) > 0.0:
                    lo = mid
                else:
                    hi = mid
                if hi - lo <= 1e-15 * max(1.0, hi):
                    break
            lam[i] = 0.5 * (lo + hi)
        _, grad, _, _, _ = sub.dual(lam)
        if np.max(np.abs(lam - np.maximum(0.0, lam + grad))) <= tol:
            break
    return lam


def mma_update(state: MmaState, x, f: float, df, g, dg, box=(-1.0, 1.0)) -> np.ndarray:
    """One MMA step for ``min f(x) s.t. g_i(x) <= 0, box[0] <= x <= box[1]``.

    ``dg`` has shape ``(m, n)``.  Asymptote history in ``state`` is
    updated in place; subproblem diagnostics land in ``state.diagnostics``.
    """
    x = np.asarray(x, dtype=float)
    n = len(x)
    df = np.asarray(df, dtype=float)
    g = np.atleast_1d(np.asarray(g, dtype=float))
    dg = np.asarray(dg, dtype=float).reshape(len(g), n)
    if n != state.n:
        raise ValueError(f"state built for {state.n} variables, got {n}")
    xmin = np.broadcast_to(np.asarray(box[0], dtype=float), (n,))
    xmax = np.broadcast_to(np.asarray(box[1], dtype=float), (n,))
    span = np.maximum(xmax - xmin, 1e-5)

    if state.iteration < 2 or state.lower is None:
        low = x - state.asy_init * span
        upp = x + state.asy_init * span
    else:
        sign = (x - state.x_prev1) * (state.x_prev1 - state.x_prev2)
        factor = np.where(sign > 0, state.asy_grow, np.where(sign < 0, state.asy_shrink, 1.0))
        low = x - factor * (state.x_prev1 - state.lower)
        upp = x + factor * (state.upper - state.x_prev1)
        low = np.clip(low, x - _ASY_MAX * span, x - _ASY_MIN * span)
        upp = np.clip(upp, x + _ASY_MIN * span, x + _ASY_MAX * span)

    alpha = np.maximum.reduce([low + _ALBEFA * (x - low), x - state.move * span, xmin])
    beta = np.minimum.reduce([upp - _ALBEFA * (upp - x), x + state.move * span, xmax])

    ux2 = (upp - x) ** 2
    xl2 = (x - low) ** 2
    reg = _RAA0 / span

    def pq(grad):
        pos, neg = np.maximum(grad, 0.0), np.maximum(-grad, 0.0)
        extra = 0.001 * (pos + neg) + reg
        return (pos + extra) * ux2, (neg + extra) * xl2

    p0, q0 = pq(df)
    if len(g):
        PQ = [pq(row) for row in dg]
        P = np.array([p for p, _ in PQ])
        Q = np.array([q for _, q in PQ])
        b = P @ (1.0 / (upp - x)) + Q @ (1.0 / (x - low)) - g
    else:
        P = Q = np.zeros((0, n))
        b = np.zeros(0)
    m = len(g)
    sub = _Subproblem(low, upp, alpha, beta, p0, q0, P, Q, b,
                      np.full(m, state.c), np.full(m, state.d))
    lam = _solve_dual(sub)
    x_new, y, _, _ = sub.primal(lam)
    x_new = np.minimum(np.maximum(x_new, xmin), xmax)

    state.diagnostics = {
        "multipliers": lam,
        "slack": y,
        "relaxed": bool(np.any(y > 0)),
        "kkt_residual": sub.kkt_residual(lam),
        "subproblem": sub,
    }
    state.x_prev2 = state.x_prev1 if state.x_prev1 is not None else x.copy()
    state.x_prev1 = x.copy()
    state.lower, state.upper = low, upp
    state.iteration += 1
    return x_new


# -- continuation and termination ------------------------------------------------------------

@dataclass
class ContinuationSchedule:
    """Piecewise-constant parameter ramps that step every ``step_every`` iterations.

    The SIMP penalty rises linearly in steps from ``penalty_start`` to
    ``penalty_end`` at ``penalty_ramp_end``; both projection sharpnesses
    double per step up to their caps.
    """
    penalty_start: float = 1.0
    penalty_end: float = 3.0
    penalty_ramp_end: int = 30
    sharpness_start: float = 1.0
    sharpness_end: float = 64.0
    geometric_start: float = 8.0
    geometric_end: float = 512.0
    step_every: int = 10

    def __post_init__(self):
        if self.penalty_end < self.penalty_start or self.sharpness_end < self.sharpness_start \
                or self.geometric_end < self.geometric_start:
            raise ValueError("continuation schedules must be non-decreasing")
        if self.step_every < 1:
            raise ValueError("step_every must be >= 1")

    def values(self, iteration: int):
        stage = max(0, int(iteration)) // self.step_every
        n_ramp = max(1, math.ceil(self.penalty_ramp_end / self.step_every))
        P = self.penalty_start + (self.penalty_end - self.penalty_start) * min(stage, n_ramp) / n_ramp
        doubling = 2.0 ** min(stage, 1000)  # both caps are reached long before this
        s = min(self.sharpness_start * doubling, self.sharpness_end)
        sg = min(self.geometric_start * doubling, self.geometric_end)
        return P, s, sg

    def is_final(self, iteration: int) -> bool:
        return self.values(iteration) == self.values(10 ** 9)


def advance_schedules(schedule: ContinuationSchedule, iteration: int):
    """``(P, s, s_g)`` scheduled for ``iteration``."""
    if iteration < 0:
        raise ValueError("iteration must be >= 0")
    return schedule.values(iteration)


@dataclass
class TerminationLimits:
    max_iterations: int = 100
    objective_tol: float = 1e-4
    design_tol: float = 1e-3
    patience: int = 3


@dataclass
class History:
    objective: list = field(default_factory=list)
    design_change: list = field(default_factory=list)

    def record(self, F: float, change: float):
        self.objective.append(float(F))
        self.design_change.append(float(change))


def check_termination(history: History, limits: TerminationLimits) -> str:
    """``"converged"``, ``"iteration-capped"`` or ``"continue"``."""
    F = history.objective
    k = limits.patience
    if len(F) > k:
        recent = np.asarray(F[-k - 1:])
        rel = np.abs(np.diff(recent)) / np.maximum(np.abs(recent[1:]), 1e-300)
        changes = np.asarray(history.design_change[-k:])
        if np.all(rel < limits.objective_tol) and np.all(changes < limits.design_tol):
            return "converged"
    if len(F) >= limits.max_iterations:
        return "iteration-capped"
    return "continue"
