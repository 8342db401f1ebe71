"""Discretized renewal equations for the mean and variance of N(e^t).

With X_j = -ln V_j and mu the sum of the laws of the X_j, the mean
m(t) = E N(e^t) solves m = 1 + mu * m on t >= 0, and the variance solves
s = h + mu * s with the forcing

    h(t) = Var( sum_j m(t - X_j) ).

Both are solved by a left-Riemann forward recurrence on a grid of step h.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from . import _kernels
from .laws import SplitLaw, sample_splits


class InstabilityError(RuntimeError):
    pass


@dataclass
class MeasureGrid:
    h: float
    t_max: float
    mu_mass: np.ndarray
    total_mass: float
    tilt_check: float
    tilt_error: float = 0.0
    method: str = "closed_form"

    @property
    def t(self):
        return self.h * np.arange(self.mu_mass.size)


@dataclass
class RenewalSolution:
    t: np.ndarray
    values: np.ndarray
    h: float
    forcing: np.ndarray
    error: np.ndarray | None = None

    def __call__(self, t):
        """Piecewise-linear interpolation; zero for t < 0."""
        t = np.asarray(t, dtype=float)
        v = np.interp(t, self.t, self.values)
        return np.where(t < 0, 0.0, v)

    def to_csv(self, path):
        err = self.error if self.error is not None else np.zeros_like(self.values)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "x", "value", "error_estimate"])
            for t, v, e in zip(self.t, self.values, err):
                w.writerow([repr(float(t)), repr(math.exp(t)), repr(float(v)), repr(float(e))])


def _mu_cdf(law: SplitLaw, t: np.ndarray):
    """mu([0, t]) = sum_j P(V_j >= e^{-t}) in closed form, or None."""
    f = law.family
    v = np.exp(-t)
    if f == "binary":
        return 2.0 * (1.0 - v)
    if f in ("mary", "simplex"):
        m = law.b
        return m * (1.0 - v) ** (m - 1)
    if f == "quad":
        d = law.params[0]
        return 2.0**d * special.gammainc(d, t)
    if f == "beta":
        a, a2 = law.params
        return (1.0 - special.betainc(a, a2, v)) + (1.0 - special.betainc(a2, a, v))
    if law.is_deterministic:
        x = -np.log(law.weights)
        return (t[:, None] >= x[None, :] - 1e-12).sum(axis=1).astype(float)
    return None


def discretize_measure(law: SplitLaw, h: float = 1e-3, t_max: float = 10.0, n_samples: int = 10**6,
                       rng: np.random.Generator | None = None, closed_form: bool = True) -> MeasureGrid:
    """Bin mu onto cells (kh - h/2, kh + h/2] (cell 0 is [0, h/2]).

    Closed-form CDFs are used where the family has one; otherwise -ln V_j is
    binned over ``n_samples`` sampled split vectors, zero parts carrying no
    mass.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    K = int(round(t_max / h))
    edges = (np.arange(K + 2) - 0.5) * h
    edges[0] = 0.0
    cdf = _mu_cdf(law, edges) if closed_form else None
    if cdf is not None:
        mass = np.diff(cdf)
        # closed forms are continuous except for point masses, counted once at t = 0
        mass[0] += cdf[0]
        total = float(cdf[-1] if law.is_deterministic else _mu_cdf(law, np.array([1e6]))[0])
        tilt = float(np.sum(mass * np.exp(-h * np.arange(K + 1))))
        if law.is_deterministic:
            tilt = float(np.sum(law.weights))
        return MeasureGrid(h, t_max, np.maximum(mass, 0.0), total, tilt, 0.0, "closed_form")
    if n_samples < 10**5:
        raise ValueError("n_samples must be at least 1e5")
    rng = rng or np.random.default_rng()
    V = sample_splits(law, n_samples, rng)
    pos = V > 0
    X = -np.log(np.where(pos, V, 1.0))
    counts = pos.sum(axis=1)
    idx = np.floor(X / h + 0.5).astype(np.int64)
    keep = pos & (idx <= K)
    mass = np.bincount(idx[keep], minlength=K + 1).astype(float) / n_samples
    tilted = np.where(pos, V, 0.0).sum(axis=1)
    tilt = float(np.sum(mass * np.exp(-h * np.arange(K + 1))))
    tilt_err = 3.0 * float(tilted.std()) / math.sqrt(n_samples)
    return MeasureGrid(h, t_max, mass, float(counts.mean()), tilt, tilt_err, "monte_carlo")


def solve_renewal(grid: MeasureGrid, forcing) -> RenewalSolution:
    """Forward recurrence for F = f + mu * F on t in [0, t_max].

    ``forcing`` is a callable of an array of t values or an array on the grid.
    The cell-0 mass of mu enters implicitly by dividing by ``1 - mu_mass[0]``.
    """
    t = grid.t
    f = forcing(t) if callable(forcing) else np.asarray(forcing, dtype=float)
    f = np.broadcast_to(np.asarray(f, dtype=float), t.shape).copy()
    values = _kernels.renewal_recurrence(grid.mu_mass, f)
    cap = np.exp(2.0 * np.maximum(t, 1.0))
    if not np.all(np.isfinite(values)) or np.any(np.abs(values) > cap * max(1.0, np.max(np.abs(f)))):
        raise InstabilityError("renewal recurrence exceeded the e^{2t} sanity cap")
    return RenewalSolution(t, values, grid.h, f)


def mean_renewal(grid: MeasureGrid) -> RenewalSolution:
    return solve_renewal(grid, np.ones_like(grid.t))


def variance_renewal(grid: MeasureGrid, mean_solution: RenewalSolution, law: SplitLaw,
                     rng: np.random.Generator | None = None, n_split: int = 10**5,
                     thin: int = 10) -> RenewalSolution:
    """Variance of N(e^t) from the renewal equation with a Monte Carlo forcing.

    h(t) = E(sum_j m(t - X_j) - m(t) + 1)^2 is estimated with ``n_split``
    split vectors on every ``thin``-th grid point and interpolated linearly.
    The same draws are reused at every grid point.  ``error`` holds the
    solution of the renewal equation forced by three standard errors of h.
    """
    t = grid.t
    if mean_solution.t[-1] < t[-1] - 1e-12:
        raise ValueError("mean solution does not cover the grid")
    rng = rng or np.random.default_rng()
    V = sample_splits(law, n_split, rng)
    pos = V > 0
    X = np.where(pos, -np.log(np.where(pos, V, 1.0)), np.inf)
    coarse = t[::thin]
    if coarse[-1] != t[-1]:
        coarse = np.append(coarse, t[-1])
    hv = np.empty(coarse.size)
    he = np.empty(coarse.size)
    for i, tc in enumerate(coarse):
        s = mean_solution(tc - X).sum(axis=1) - float(mean_solution(tc)) + 1.0
        sq = s * s
        hv[i] = sq.mean()
        he[i] = 3.0 * sq.std() / math.sqrt(n_split)
    forcing = np.interp(t, coarse, hv)
    sol = solve_renewal(grid, forcing)
    sol.error = solve_renewal(grid, np.interp(t, coarse, he)).values
    return sol
