"""Analytic transforms of a split law.

``phi(z) = sum_j E V_j**z`` and ``psi(z, w) = Cov(sum_j V_j**z, sum_k V_k**w)``,
both with the convention ``0**z = 0``.  Closed forms are used for every
built-in family; empirical tables and the explicit ``method="monte_carlo"``
path average over split vectors and report three standard errors.

The ``*_values`` functions are vectorised over numpy arrays of ``z`` and are
what the root finders and quadratures call; the public ``phi``/``phi_prime``/
``psi`` wrap scalars in a :class:`TransformValue`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import digamma, gammaln, loggamma

from .laws import SplitLaw, sample_splits

MC_SAMPLES = 10**6
FD_STEP = 1e-6


class TransformError(ValueError):
    pass


class PoleError(TransformError):
    """z hits a pole of a rational closed form."""


class DomainError(TransformError):
    """Re z < 0 for a law whose transform has no meromorphic extension."""


@dataclass(frozen=True)
class TransformValue:
    value: complex
    error_bound: float = 0.0
    method: str = "closed_form"


def _poles(law: SplitLaw):
    f = law.family
    if f in ("binary", "quad"):
        return [-1.0]
    if f in ("mary", "simplex"):
        m = law.b
        return [-float(k) for k in range(1, m)]
    if f == "beta":
        a, a2 = law.params
        if law.is_rational:
            return [-(a + k) for k in range(int(a2))] + [-(a2 + k) for k in range(int(a))]
        return None
    return []


def _check_domain(law: SplitLaw, z):
    z = np.asarray(z, dtype=complex)
    if law.family == "empirical" and np.any(z.real < 0):
        raise DomainError("empirical transforms are only defined for Re z >= 0")
    poles = _poles(law)
    if poles is None:
        # beta with non-integer parameters: Gamma poles at -a-k and -a2-k
        a, a2 = law.params
        for p in (a, a2):
            k = -(z + p)
            near = (np.abs(k.imag) < 1e-12) & (k.real > -1e-12) & (np.abs(k.real - np.round(k.real)) < 1e-12)
            if np.any(near):
                raise PoleError(f"phi has a pole at z = {-p - np.round(k.real[near][0])}")
        return
    for p in poles:
        if np.any(np.abs(z - p) < 1e-12):
            raise PoleError(f"phi has a pole at z = {p}")


def _beta_moment(a, a2, p, q):
    """E V**p (1-V)**q for V ~ Beta(a, a2), vectorised over complex p, q."""
    return np.exp(
        loggamma(a + p) + loggamma(a2 + q) - loggamma(a + a2 + p + q)
        + gammaln(a + a2) - gammaln(a) - gammaln(a2)
    )


def _rational_beta_terms(a, a2, z):
    """E V**z and E (1-V)**z for integer a, a2, as finite products.

    The Gamma-ratio form has cancelling poles at -a-k, k >= a2, where it
    evaluates to nan; the products are finite there.
    """
    out = []
    for p, n in ((a, a2), (a2, a)):
        poles = [p + k for k in range(int(n))]
        val = np.ones_like(z)
        dlog = np.zeros_like(z)
        for q in poles:
            val = val * (q / (z + q))
            dlog = dlog - 1.0 / (z + q)
        out.append((val, dlog))
    return out


def _mary_phi(m, z):
    out = np.full(np.shape(z), float(math.factorial(m)) if m < 171 else np.inf, dtype=complex)
    if m >= 171:
        return np.exp(gammaln(m + 1) + loggamma(z + 1) - loggamma(z + m))
    for k in range(1, m):
        out = out / (z + k)
    return out


def _table_sums(table, z):
    """Row sums of V_j**z over a table, skipping zero entries."""
    pos = table > 0
    logs = np.where(pos, np.log(np.where(pos, table, 1.0)), 0.0)
    z = np.asarray(z, dtype=complex)
    pw = np.exp(np.multiply.outer(z, logs)) * pos
    return pw.sum(axis=-1), logs, pos


def phi_values(law: SplitLaw, z) -> np.ndarray:
    """Closed-form (or exact table-average) phi, vectorised over ``z``."""
    z = np.asarray(z, dtype=complex)
    _check_domain(law, z)
    f = law.family
    if f == "binary":
        return 2.0 / (1.0 + z)
    if f in ("mary", "simplex"):
        return _mary_phi(law.b, z)
    if f == "quad":
        return (2.0 / (1.0 + z)) ** law.params[0]
    if f == "beta" and law.is_rational:
        (v1, _), (v2, _) = _rational_beta_terms(*law.params, z)
        return v1 + v2
    if f == "beta":
        a, a2 = law.params
        return _beta_moment(a, a2, z, 0.0) + _beta_moment(a, a2, 0.0, z)
    if law.is_deterministic:
        w = law.weights
        return np.exp(np.multiply.outer(z, np.log(w))).sum(axis=-1)
    if f == "empirical":
        s, _, _ = _table_sums(law.table, z)
        return s.mean(axis=-1)
    raise TransformError(f"no transform for family {f!r}")


def phi_prime_values(law: SplitLaw, z) -> np.ndarray:
    z = np.asarray(z, dtype=complex)
    _check_domain(law, z)
    f = law.family
    if f == "binary":
        return -2.0 / (1.0 + z) ** 2
    if f in ("mary", "simplex"):
        m = law.b
        return _mary_phi(m, z) * -sum(1.0 / (z + k) for k in range(1, m))
    if f == "quad":
        d = law.params[0]
        return -d * (2.0 / (1.0 + z)) ** d / (1.0 + z)
    if f == "beta" and law.is_rational:
        (v1, d1), (v2, d2) = _rational_beta_terms(*law.params, z)
        return v1 * d1 + v2 * d2
    if f == "beta":
        a, a2 = law.params
        t1 = _beta_moment(a, a2, z, 0.0) * (digamma(z + a) - digamma(z + a + a2))
        t2 = _beta_moment(a, a2, 0.0, z) * (digamma(z + a2) - digamma(z + a + a2))
        return t1 + t2
    if law.is_deterministic:
        lw = np.log(law.weights)
        return (np.exp(np.multiply.outer(z, lw)) * lw).sum(axis=-1)
    if f == "empirical":
        return _fd_richardson(lambda u: phi_values(law, u), z)[0]
    raise TransformError(f"no transform for family {f!r}")


def _fd_richardson(fun, z, h=FD_STEP):
    """Central difference with one Richardson level; returns (value, error)."""
    d1 = (fun(z + h) - fun(z - h)) / (2 * h)
    d2 = (fun(z + h / 2) - fun(z - h / 2)) / h
    est = (4 * d2 - d1) / 3
    return est, np.abs(est - d2)


def _dirichlet_cross(m, z, w):
    # E V_1**z V_2**w for a flat Dirichlet with m parts
    return np.exp(gammaln(m) + loggamma(1 + z) + loggamma(1 + w) - loggamma(m + z + w))


def psi_values(law: SplitLaw, z, w) -> np.ndarray:
    """Closed-form psi(z, w), vectorised over broadcast ``z``, ``w``."""
    z = np.asarray(z, dtype=complex)
    w = np.asarray(w, dtype=complex)
    f = law.family
    if f in ("binary", "mary", "simplex"):
        m = law.b
        second = phi_values(law, z + w) + m * (m - 1) * _dirichlet_cross(m, z, w)
        return second - phi_values(law, z) * phi_values(law, w)
    if f == "quad":
        d = law.params[0]
        bz, bw = 2.0 / (1.0 + z), 2.0 / (1.0 + w)
        cross = 2.0 / (1.0 + z + w) + 2.0 * _dirichlet_cross(2, z, w)
        return cross**d - (bz * bw) ** d
    if f == "beta":
        a, a2 = law.params
        second = (
            _beta_moment(a, a2, z + w, 0.0)
            + _beta_moment(a, a2, 0.0, z + w)
            + _beta_moment(a, a2, z, w)
            + _beta_moment(a, a2, w, z)
        )
        return second - phi_values(law, z) * phi_values(law, w)
    if law.is_deterministic:
        return np.zeros(np.broadcast(z, w).shape, dtype=complex)
    if f == "empirical":
        return _table_psi(law.table, z, w)[0]
    raise TransformError(f"no transform for family {f!r}")


def _table_psi(table, z, w):
    sz, _, _ = _table_sums(table, z)
    sw, _, _ = _table_sums(table, w)
    cz = sz - sz.mean()
    cw = sw - sw.mean()
    prod = cz * cw
    n = table.shape[0]
    val = prod.mean() * n / max(n - 1, 1)
    err = 3.0 * np.std(prod) / math.sqrt(n)
    return val, err


def _mc_phi(law, z, n, rng, deriv=False):
    table = sample_splits(law, n, rng)
    s, logs, pos = _table_sums(table, z)
    if deriv:
        s = (np.exp(z * logs) * pos * logs).sum(axis=-1)
    return complex(s.mean()), 3.0 * float(np.std(s)) / math.sqrt(n)


def phi(law: SplitLaw, z: complex, method: str | None = None, n_samples: int = MC_SAMPLES,
        rng: np.random.Generator | None = None) -> TransformValue:
    """phi(z) with an error bound.

    ``method`` defaults to the closed form when one exists.  Empirical laws
    return the table average with a three-standard-error bound; pass
    ``method="monte_carlo"`` to force sampling for any law.
    """
    z = complex(z)
    if method == "monte_carlo":
        if z.real < 0:
            raise DomainError("Monte Carlo transforms need Re z >= 0")
        val, err = _mc_phi(law, z, n_samples, rng or np.random.default_rng())
        return TransformValue(val, err, "monte_carlo")
    val = complex(phi_values(law, z))
    if law.family == "empirical":
        s, _, _ = _table_sums(law.table, z)
        return TransformValue(val, 3.0 * float(np.std(s)) / math.sqrt(s.size), "monte_carlo")
    return TransformValue(val, 0.0, "closed_form")


def phi_prime(law: SplitLaw, z: complex, method: str | None = None, n_samples: int = MC_SAMPLES,
              rng: np.random.Generator | None = None) -> TransformValue:
    z = complex(z)
    if method == "monte_carlo":
        val, err = _mc_phi(law, z, n_samples, rng or np.random.default_rng(), deriv=True)
        return TransformValue(val, err, "monte_carlo")
    if law.family == "empirical":
        _check_domain(law, z)
        val, fd_err = _fd_richardson(lambda u: phi_values(law, u), np.asarray(z))
        s, logs, pos = _table_sums(law.table, z)
        d = (np.exp(z * logs) * pos * logs).sum(axis=-1)
        err = float(fd_err) + 3.0 * float(np.std(d)) / math.sqrt(d.size)
        return TransformValue(complex(val), err, "monte_carlo")
    if method == "finite_difference":
        val, err = _fd_richardson(lambda u: phi_values(law, u), np.asarray(z))
        return TransformValue(complex(val), float(err) + 1e-9, "quadrature")
    return TransformValue(complex(phi_prime_values(law, z)), 0.0, "closed_form")


def psi(law: SplitLaw, z: complex, w: complex, method: str | None = None,
        n_samples: int = MC_SAMPLES, rng: np.random.Generator | None = None) -> TransformValue:
    z, w = complex(z), complex(w)
    if method == "monte_carlo":
        if z.real < 0 or w.real < 0:
            raise DomainError("Monte Carlo transforms need Re z, Re w >= 0")
        table = sample_splits(law, n_samples, rng or np.random.default_rng())
        val, err = _table_psi(table, z, w)
        return TransformValue(complex(val), float(err), "monte_carlo")
    if law.family == "empirical":
        val, err = _table_psi(law.table, z, w)
        return TransformValue(complex(val), float(err), "monte_carlo")
    return TransformValue(complex(psi_values(law, z, w)), 0.0, "closed_form")


def alpha(law: SplitLaw) -> float:
    """Expected entropy -phi'(1) of the split vector."""
    return float(-phi_prime(law, 1.0).value.real)


@dataclass(frozen=True)
class ConditionBReport:
    delta: float
    sup_estimate: float
    attained_at: float
    t_min: float
    t_max: float
    heuristic: bool = True
    note: str = "grid scan of |phi(delta + i t)|; a diagnostic, not a proof"


def check_condition_b(law: SplitLaw, delta: float, t_max: float = 200.0, grid: float = 0.01,
                      t_min: float = 1.0) -> ConditionBReport:
    """Scan ``|phi(delta + i t)|`` over ``t in [t_min, t_max]``.

    Ties in the modulus are broken towards the largest real part (earliest t
    among near-ties), so for a lattice law the reported point is the first
    place phi returns to 1; that point is then refined by a local
    golden-section search.
    """
    if delta < 0:
        raise ValueError("delta must be >= 0")
    t = np.arange(t_min, t_max + grid / 2, grid)
    vals = phi_values(law, delta + 1j * t)
    mod = np.round(np.abs(vals), 12)
    best = np.flatnonzero(mod == mod.max())
    near_top = best[vals.real[best] >= vals.real[best].max() - 1e-3]
    # first contiguous run of near-maximal points, then its best point
    gaps = np.flatnonzero(np.diff(near_top) > 1)
    run = near_top[: gaps[0] + 1] if gaps.size else near_top
    i = run[np.argmax(vals.real[run])]
    lo, hi = max(t_min, t[i] - grid), min(t_max, t[i] + grid)

    def score(u):
        v = complex(phi_values(law, delta + 1j * u))
        return round(abs(v), 12), v.real

    g = (math.sqrt(5) - 1) / 2
    a, bb = lo, hi
    for _ in range(60):
        c1 = bb - g * (bb - a)
        c2 = a + g * (bb - a)
        if score(c1) >= score(c2):
            bb = c2
        else:
            a = c1
    t_star = 0.5 * (a + bb)
    sup = max(float(np.abs(vals).max()), abs(complex(phi_values(law, delta + 1j * t_star))))
    return ConditionBReport(delta, sup, t_star, t_min, t_max)
