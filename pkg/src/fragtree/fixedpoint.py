"""The complex fixed-point map Z -> sum_r V_r**lambda2 Z_r and its iteration.

Iterates act on empirical measures.  Each application draws one fresh split
vector per output sample and b input samples with replacement, then (by
default) shifts the output so its mean is exactly the declared mean gamma.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from . import transforms as tr
from .laws import SplitLaw


class InvalidCertificate(RuntimeError):
    pass


class NonConvergence(RuntimeError):
    pass


@dataclass(frozen=True)
class ContractionCertificate:
    lambda2: complex
    xi: float
    lipschitz_bound: float
    valid: bool

    def to_dict(self):
        return {"lambda2": {"re": self.lambda2.real, "im": self.lambda2.imag}, "xi": self.xi,
                "lipschitz_bound": self.lipschitz_bound, "valid": self.valid}


@dataclass
class EmpiricalComplexMeasure:
    samples: np.ndarray
    declared_mean: complex
    generation: int = 0
    history: list = field(default_factory=list)
    last_step_distance: float | None = None
    raw_mean: complex | None = None
    raw_stderr: float | None = None

    def moments(self):
        z = self.samples
        return complex(z.mean()), float(np.mean(np.abs(z) ** 2)), complex(np.mean(z * z))

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["re", "im"])
            for z in self.samples:
                w.writerow([repr(float(z.real)), repr(float(z.imag))])


def contraction_certificate(law: SplitLaw, lambda2: complex) -> ContractionCertificate:
    """xi = E sum_r |V_r**lambda2|**2 = phi(2 Re lambda2); valid when xi < 1 - 1e-6."""
    lambda2 = complex(lambda2)
    xi = float(tr.phi(law, 2.0 * lambda2.real).value.real)
    return ContractionCertificate(lambda2, xi, math.sqrt(max(xi, 0.0)), xi < 1.0 - 1e-6)


def _map_args(law):
    # deterministic laws feed their weights, never lattice exponents
    if law.is_deterministic:
        return _kernels.DETERMINISTIC, np.asarray(law.weights, dtype=float)
    return law.kernel_args()


def apply_T(measure: EmpiricalComplexMeasure, law: SplitLaw, lambda2: complex,
            rng: np.random.Generator, recentre: bool = True, n_out: int | None = None,
            check: bool = True) -> EmpiricalComplexMeasure:
    """One application of the map to an empirical measure.

    The output mean before recentring is kept in ``raw_mean`` together with
    its standard error, so mean preservation can still be checked.
    """
    if check:
        cert = contraction_certificate(law, lambda2)
        if not cert.valid:
            raise InvalidCertificate(f"xi = {cert.xi} >= 1")
    code, params = _map_args(law)
    n_out = n_out or measure.samples.size
    s1, s2 = (int(v) for v in rng.integers(0, 2**63, size=2))
    out = _kernels.apply_map(np.ascontiguousarray(measure.samples, dtype=np.complex128), code, params,
                             law.b, complex(lambda2), n_out, s1, s2)
    raw_mean = complex(out.mean())
    raw_se = float(out.std()) / math.sqrt(out.size)
    if recentre:
        out = out - raw_mean + measure.declared_mean
    return EmpiricalComplexMeasure(out, measure.declared_mean, measure.generation + 1, list(measure.history),
                                   raw_mean=raw_mean, raw_stderr=raw_se)


def second_moment_targets(law: SplitLaw, lambda2: complex, gamma: complex):
    """(E|Xi|^2, E Xi^2) of the fixed point with mean gamma.

    Squaring Xi = sum_r V_r^l Z_r with independent Z_r distributed as Xi:
    E|Xi|^2 = xi E|Xi|^2 + (psi(l, conj l) + |phi(l)|^2 - xi) |gamma|^2, and
    likewise for E Xi^2 with phi(2 l) in place of xi.  phi(l) = 1.
    """
    lam = complex(lambda2)
    xi = complex(tr.phi_values(law, 2 * lam.real)).real
    p_bar = complex(tr.psi_values(law, lam, lam.conjugate())).real
    p = complex(tr.psi_values(law, lam, lam))
    f2 = complex(tr.phi_values(law, 2 * lam))
    abs2 = abs(gamma) ** 2 * (1.0 + p_bar / (1.0 - xi))
    sq = gamma**2 * (1.0 + p / (1.0 - f2))
    return abs2, sq


def iterate_to_fixed_point(law: SplitLaw, lambda2: complex, gamma: complex, n_samples: int = 10**5,
                           max_gen: int = 200, tol: float | None = None,
                           rng: np.random.Generator | None = None, min_gen: int = 5) -> EmpiricalComplexMeasure:
    """Iterate from the point mass at gamma until the moments settle.

    Stops when mean, E|Z|^2 and E Z^2 each move by less than ``tol``
    (relative to the current E|Z|^2; default 5/sqrt(n)) between generations.
    Second moments approach their limit geometrically with factor xi per
    generation, so at least ``max(min_gen, ln(tol/2)/ln(xi))`` generations are
    run before the test is applied.  The transport distance between the last
    two generations' real parts is kept in ``last_step_distance``.
    """
    cert = contraction_certificate(law, lambda2)
    if not cert.valid:
        raise InvalidCertificate(f"xi = {cert.xi} >= 1")
    rng = rng or np.random.default_rng()
    tol = 5.0 / math.sqrt(n_samples) if tol is None else tol
    min_gen = max(min_gen, int(math.ceil(math.log(tol / 2) / math.log(cert.xi))) if cert.xi > 0 else 0)
    m = EmpiricalComplexMeasure(np.full(n_samples, complex(gamma)), complex(gamma))
    prev = m.moments()
    m.history.append(prev)
    for g in range(max_gen):
        new = apply_T(m, law, lambda2, rng, check=False)
        cur = new.moments()
        new.history.append(cur)
        new.last_step_distance = w2_distance(m.samples.real, new.samples.real)
        m = new
        scale = max(cur[1], 1e-300)
        change = max(abs(cur[0] - prev[0]) / math.sqrt(scale), abs(cur[1] - prev[1]) / scale,
                     abs(cur[2] - prev[2]) / scale)
        prev = cur
        if g + 1 >= min_gen and change < tol:
            return m
    raise NonConvergence(f"moments still moving after {max_gen} generations")


def w2_distance(a, b) -> float:
    """Exact order-2 transport distance between two 1-d empirical distributions.

    Integrates the squared difference of the two quantile functions over the
    merged grid of their jump points; equal sizes reduce to sorted matching.
    """
    a = np.sort(np.asarray(a, dtype=float))
    b = np.sort(np.asarray(b, dtype=float))
    if a.size == b.size:
        return float(math.sqrt(np.mean((a - b) ** 2)))
    pa = np.arange(1, a.size + 1) / a.size
    pb = np.arange(1, b.size + 1) / b.size
    cuts = np.union1d(pa, pb)
    widths = np.diff(np.concatenate([[0.0], cuts]))
    mid = cuts - 0.5 * widths
    qa = a[np.minimum(np.searchsorted(pa, mid), a.size - 1)]
    qb = b[np.minimum(np.searchsorted(pb, mid), b.size - 1)]
    return float(math.sqrt(np.sum(widths * (qa - qb) ** 2)))


def rescaled_sample(raw, x, alpha, sigma2):
    return (np.asarray(raw, dtype=float) - x / alpha) / x**sigma2


def periodic_limit_distance(ensemble, fixed_point: EmpiricalComplexMeasure, model) -> float:
    """l2 distance between (N(x) - x/alpha)/x**sigma2 and Re(Xi exp(i tau2 ln x))."""
    if model.phase != "Periodic":
        raise ValueError(f"periodic_limit_distance needs the Periodic phase, got {model.phase}")
    if ensemble.raw is None:
        raise ValueError("ensemble kept no raw values")
    lam = model.lambda2
    x = ensemble.x
    sim = rescaled_sample(ensemble.raw, x, model.alpha, lam.real)
    target = (fixed_point.samples * np.exp(1j * lam.imag * math.log(x))).real
    return w2_distance(sim, target)
