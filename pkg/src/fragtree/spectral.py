"""Roots of phi(lambda) = 1, phase classification and moment constants.

Rational phi goes through a companion matrix of the cleared-denominator
polynomial followed by Newton polishing.  Anything else goes through an
argument-principle search: winding numbers of ``phi - 1`` around rectangles,
recursive bisection down to single-root cells, then Newton.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, optimize

from . import transforms as tr
from .laws import SplitLaw, sample_splits

DEFAULT_DELTA = 0.05
DEFAULT_IMAG_BOUND = 60.0
DEFAULT_TOL = 1e-10
CONDITIONING = 1e-8
MAX_COMPANION_DEGREE = 40


class SpectralError(RuntimeError):
    pass


class CountMismatchError(SpectralError):
    pass


class NonSimpleRootError(SpectralError):
    pass


class QuadratureError(SpectralError):
    pass


class PreconditionError(SpectralError):
    pass


class ConditioningWarning(RuntimeWarning):
    pass


def cjson(z):
    z = complex(z)
    return {"re": z.real, "im": z.imag}


@dataclass(frozen=True)
class Root:
    lam: complex
    multiplicity: int
    residual: float
    phi_prime: complex
    simple: bool

    def to_dict(self):
        return {
            "lambda": cjson(self.lam),
            "multiplicity": self.multiplicity,
            "residual": self.residual,
            "phi_prime_at_root": cjson(self.phi_prime),
            "simplicity_certificate": self.simple,
        }


@dataclass
class Spectrum:
    law: SplitLaw
    roots: list
    delta: float
    imag_bound: float
    method: str
    tol: float
    all_roots: list | None = None
    phi_error: float = 0.0
    winding_total: int | None = None

    @property
    def lambdas(self):
        return [r.lam for r in self.roots]

    def to_dict(self):
        d = {
            "law": self.law.label,
            "law_hash": self.law.config_hash(),
            "strip": {"delta": self.delta, "imag_bound": self.imag_bound},
            "method": self.method,
            "tol": self.tol,
            "roots": [r.to_dict() for r in self.roots],
        }
        if self.all_roots is not None:
            d["all_roots"] = [r.to_dict() for r in self.all_roots]
        if self.winding_total is not None:
            d["winding_total"] = self.winding_total
        return d


def _sort_key(lam):
    return (-round(lam.real, 9), round(abs(lam.imag), 9), -np.sign(lam.imag))


def _phi1(law, z):
    return complex(tr.phi_values(law, z)) - 1.0


def _dphi(law, z):
    return complex(tr.phi_prime_values(law, z))


def newton(law, z0, tol=DEFAULT_TOL, maxiter=100):
    """Newton iteration on phi(z) = 1; returns (root, residual, converged)."""
    with np.errstate(over="ignore", invalid="ignore"):
        return _newton(law, z0, tol, maxiter)


def _newton(law, z0, tol, maxiter):
    z = complex(z0)
    for _ in range(maxiter):
        try:
            f = _phi1(law, z)
            d = _dphi(law, z)
        except tr.TransformError:
            return z, math.inf, False
        if not np.isfinite(f) or d == 0 or not np.isfinite(d):
            return z, math.inf, False
        step = f / d
        z = z - step
        if abs(step) <= 1e-15 * max(1.0, abs(z)):
            break
    try:
        res = abs(_phi1(law, z))
    except tr.TransformError:
        return z, math.inf, False
    return z, res, bool(np.isfinite(res) and res <= tol)


# ---------------------------------------------------------------- rational path


def characteristic_polynomial(law: SplitLaw) -> np.ndarray:
    """Coefficients (lowest degree first) of the cleared polynomial of phi - 1."""
    P = np.polynomial.polynomial
    f = law.family
    if f in ("binary", "mary", "simplex"):
        m = law.b
        den = np.array([1.0])
        for k in range(1, m):
            den = P.polymul(den, [k, 1.0])
        return P.polysub(den, [float(math.factorial(m))])
    if f == "quad":
        d = law.params[0]
        return P.polysub(P.polypow([1.0, 1.0], d), [2.0**d])
    if f == "beta" and law.is_rational:
        a, a2 = (int(p) for p in law.params)
        poles1 = [a + k for k in range(a2)]
        poles2 = [a2 + k for k in range(a)]
        c1 = float(np.prod([float(p) for p in poles1]))
        c2 = float(np.prod([float(p) for p in poles2]))
        union = sorted(set(poles1) | set(poles2))
        den = np.array([1.0])
        for p in union:
            den = P.polymul(den, [float(p), 1.0])
        num = np.array([0.0])
        for c, poles in ((c1, poles1), (c2, poles2)):
            rest = np.array([c])
            for p in union:
                if p not in poles:
                    rest = P.polymul(rest, [float(p), 1.0])
            num = P.polyadd(num, rest)
        return P.polysub(num, den)
    raise SpectralError(f"phi is not rational for {law.label}")


def companion_roots(coeffs) -> np.ndarray:
    """Eigenvalues of the companion matrix of a polynomial (lowest degree first)."""
    c = np.trim_zeros(np.asarray(coeffs, dtype=float), "b")
    n = c.size - 1
    if n < 1:
        return np.zeros(0, dtype=complex)
    mon = c[:-1] / c[-1]
    comp = np.zeros((n, n))
    comp[1:, :-1] = np.eye(n - 1)
    comp[:, -1] = -mon
    return np.linalg.eigvals(comp)


def _product_terms(law):
    """The cleared polynomial of phi - 1 as [(c, shifts)], meaning sum c * prod (z + s)."""
    f = law.family
    if f in ("binary", "mary", "simplex"):
        m = law.b
        return [(1.0, list(range(1, m))), (-float(math.factorial(m)), [])]
    if f == "quad":
        d = law.params[0]
        return [(1.0, [1.0] * d), (-(2.0**d), [])]
    a, a2 = (int(p) for p in law.params)
    poles1 = [a + k for k in range(a2)]
    poles2 = [a2 + k for k in range(a)]
    union = sorted(set(poles1) | set(poles2))
    terms = [(-1.0, union)]
    for poles in (poles1, poles2):
        c = float(np.prod([float(p) for p in poles]))
        terms.append((c, [p for p in union if p not in poles]))
    return terms


def _eval_terms(terms, z):
    """p(z), p'(z) and sum |c prod (z + s)| (the backward-error scale), vectorised over ``z``."""
    z = np.atleast_1d(np.asarray(z, dtype=complex))
    val = np.zeros_like(z)
    dval = np.zeros_like(z)
    scale = np.zeros(z.shape)
    for c, shifts in terms:
        if not shifts:
            val += c
            scale += abs(c)
            continue
        F = z[:, None] + np.asarray(shifts, dtype=float)[None, :]
        ones = np.ones((z.size, 1), dtype=complex)
        pre = np.cumprod(np.hstack([ones, F[:, :-1]]), axis=1)
        suf = np.cumprod(np.hstack([ones, F[:, :0:-1]]), axis=1)[:, ::-1]
        t = c * pre[:, -1] * F[:, -1]
        val += t
        scale += np.abs(t)
        dval += c * np.sum(pre * suf, axis=1)
    return val, dval, scale


def _aberth(terms, z, maxiter=500):
    """Simultaneous refinement of all roots (Aberth-Ehrlich) from starting values ``z``."""
    z = np.array(z, dtype=complex)
    n = z.size
    for i in range(n):
        for j in range(i):
            if abs(z[i] - z[j]) < 1e-12 * max(1.0, abs(z[i])):
                z[i] += 1e-6 * max(1.0, abs(z[i])) * np.exp(1j * (i + 0.5))
    with np.errstate(all="ignore"):
        for _ in range(maxiter):
            v, dv, _ = _eval_terms(terms, z)
            w = np.where(v == 0, 0, v / dv)
            diff = z[:, None] - z[None, :]
            np.fill_diagonal(diff, np.inf)
            corr = w / (1.0 - w * np.sum(1.0 / diff, axis=1))
            corr = np.where(np.isfinite(corr), corr, 0)
            z = z - corr
            if np.max(np.abs(corr) / np.maximum(1.0, np.abs(z))) < 1e-15:
                break
    return z


def _rational_roots(law, tol):
    coeffs = characteristic_polynomial(law)
    terms = _product_terms(law)
    raw = _aberth(terms, companion_roots(coeffs))
    out = []
    poles = tr._poles(law) or []
    for z0 in raw:
        # factors shared by numerator and denominator are not roots of phi = 1
        if any(abs(z0 - p) < 1e-7 * max(1.0, abs(p)) for p in poles):
            continue
        z, res, ok = newton(law, z0, tol)
        if not ok:
            # roots next to poles of phi: keep the polynomial root, accepted on
            # relative backward error in product form
            z = complex(z0)
            v, _, scale = _eval_terms(terms, z)
            if abs(v[0]) > 1e-12 * scale[0]:
                raise SpectralError(f"root polishing failed near {z0}")
        out.append(z)
    # companion clusters mark multiple roots
    roots = []
    used = [False] * len(out)
    for i, z in enumerate(out):
        if used[i]:
            continue
        mult = 1
        for j in range(i + 1, len(out)):
            if not used[j] and abs(out[j] - z) < 1e-6 * max(1.0, abs(z)):
                used[j] = True
                mult += 1
        roots.append((z, mult))
    return roots


# ---------------------------------------------------- argument-principle path


def winding_number(fun, corners, n0=512, max_points=2**17):
    """Winding number of ``fun`` around the polygon ``corners`` (closed).

    Each edge is sampled with ``n0`` points and refined by doubling until no
    argument step exceeds pi/3 and two successive refinements agree on the
    same integer, each within 0.25 of it.
    """
    corners = list(corners) + [corners[0]]
    n = n0
    prev = None
    while n <= max_points:
        total = 0.0
        ok = True
        for a, b in zip(corners[:-1], corners[1:]):
            s = np.linspace(0.0, 1.0, n + 1)
            vals = fun(a + (b - a) * s)
            if not np.all(np.isfinite(vals)) or np.any(vals == 0):
                raise SpectralError("phi - 1 vanishes or is undefined on a contour")
            steps = np.angle(vals[1:] / vals[:-1])
            if np.max(np.abs(steps)) > math.pi / 3:
                ok = False
            total += steps.sum()
        w = total / (2 * math.pi)
        if ok and abs(w - round(w)) < 0.25:
            if prev is not None and round(prev) == round(w):
                return int(round(w))
            prev = w
        n *= 2
    raise SpectralError("winding number did not stabilise")


def _rect(x0, x1, y0, y1):
    return [complex(x0, y0), complex(x1, y0), complex(x1, y1), complex(x0, y1)]


def _circle_winding(law, z, r=1e-4, n=64):
    t = np.linspace(0, 2 * math.pi, n, endpoint=False)
    pts = z + r * np.exp(1j * t)
    return winding_number(lambda u: tr.phi_values(law, u) - 1.0, list(pts), n0=8)


def _safe_split(fun, lo, hi, other_lo, other_hi, vertical):
    """Pick a bisection line near the middle where |phi - 1| is not tiny."""
    for frac in (0.5037, 0.4711, 0.5313, 0.4427, 0.5821):
        c = lo + frac * (hi - lo)
        s = np.linspace(other_lo, other_hi, 257)
        pts = (c + 1j * s) if vertical else (s + 1j * c)
        if np.min(np.abs(fun(pts))) > 1e-9:
            return c
    return lo + 0.5 * (hi - lo)


def _argument_roots(law, x0, x1, y0, y1, tol, min_size=1e-7):
    fun = lambda u: tr.phi_values(law, u) - 1.0  # noqa: E731
    total = winding_number(fun, _rect(x0, x1, y0, y1))
    found = []
    stack = [((x0, x1, y0, y1), total)]
    while stack:
        (a0, a1, b0, b1), count = stack.pop()
        if count == 0:
            continue
        w, h = a1 - a0, b1 - b0
        if count == 1 or max(w, h) < min_size:
            z, res, ok = newton(law, complex(0.5 * (a0 + a1), 0.5 * (b0 + b1)), tol)
            inside = a0 - 1e-9 <= z.real <= a1 + 1e-9 and b0 - 1e-9 <= z.imag <= b1 + 1e-9
            if ok and inside:
                found.append((z, count))
                continue
            if max(w, h) < min_size:
                raise SpectralError(f"could not resolve root cluster near {complex(a0, b0)}")
        if w >= h:
            c = _safe_split(fun, a0, a1, b0, b1, vertical=True)
            cells = [(a0, c, b0, b1), (c, a1, b0, b1)]
        else:
            c = _safe_split(fun, b0, b1, a0, a1, vertical=False)
            cells = [(a0, a1, b0, c), (a0, a1, c, b1)]
        first = winding_number(fun, _rect(*cells[0]))
        stack.append((cells[0], first))
        stack.append((cells[1], count - first))
    return found, total


# ------------------------------------------------------------------- roots


def _make_root(law, z, mult, winding_check=True):
    if abs(z - 1.0) < 1e-8:
        z = 1.0 + 0.0j
    if abs(z.imag) < 1e-12:
        z = complex(z.real, 0.0)
    d = _dphi(law, z)
    res = abs(_phi1(law, z))
    simple = mult == 1 and abs(d) > CONDITIONING
    if simple and winding_check:
        try:
            simple = _circle_winding(law, z) == 1
        except SpectralError:
            simple = False
    if mult == 1 and abs(d) <= CONDITIONING:
        warnings.warn(f"|phi'(lambda)| < {CONDITIONING} at claimed simple root {z}", ConditioningWarning)
    return Root(z, mult, res, d, simple)


def _symmetrize(pairs):
    """Force exact conjugate symmetry on a list of (root, multiplicity)."""
    upper = [(z, m) for z, m in pairs if z.imag > 1e-9]
    real = [(complex(z.real, 0.0), m) for z, m in pairs if abs(z.imag) <= 1e-9]
    out = real[:]
    for z, m in upper:
        out.append((z, m))
        out.append((z.conjugate(), m))
    return out


def find_roots(law: SplitLaw, delta: float = DEFAULT_DELTA, imag_bound: float = DEFAULT_IMAG_BOUND,
               tol: float = DEFAULT_TOL, method: str | None = None) -> Spectrum:
    """All roots of phi(lambda) = 1 with delta <= Re <= 1 and |Im| <= imag_bound."""
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    phi_err = 0.0
    if law.family == "empirical":
        phi_err = tr.phi(law, 1.0).error_bound
    use_rational = law.is_rational and method != "argument_principle"
    if use_rational and characteristic_polynomial(law).size - 1 > MAX_COMPANION_DEGREE:
        use_rational = False
    all_roots = None
    winding_total = None
    if use_rational:
        pairs = _symmetrize(_rational_roots(law, tol))
        # multiplicities come from the polynomial; no per-root winding check
        all_roots = sorted((_make_root(law, z, m, winding_check=False) for z, m in pairs),
                           key=lambda r: _sort_key(r.lam))
        roots = [r for r in all_roots
                 if r.lam.real >= delta - 1e-12 and r.lam.real <= 1 + 1e-9 and abs(r.lam.imag) <= imag_bound]
        method_name = "companion_matrix"
    else:
        # lower half by conjugation; the real axis is covered by a thin band
        found, total = _argument_roots(law, delta, 1.1, -0.37, imag_bound, tol)
        pairs = [(z, m) for z, m in found if z.imag > 1e-9 or abs(z.imag) <= 1e-9]
        pairs = _symmetrize(pairs)
        roots = sorted((_make_root(law, z, m) for z, m in pairs), key=lambda r: _sort_key(r.lam))
        # check: winding of the full symmetric rectangle
        fun = lambda u: tr.phi_values(law, u) - 1.0  # noqa: E731
        winding_total = winding_number(fun, _rect(delta, 1.1, -imag_bound, imag_bound))
        if sum(r.multiplicity for r in roots) != winding_total:
            raise CountMismatchError(
                f"refined roots count {sum(r.multiplicity for r in roots)} != winding number {winding_total}")
        method_name = "argument_principle"
    for r in roots:
        if r.residual > max(tol, phi_err):
            raise SpectralError(f"root {r.lam} has residual {r.residual} > tol")
    return Spectrum(law, roots, delta, imag_bound, method_name, tol, all_roots, phi_err, winding_total)


# ------------------------------------------------------------------- phase


@dataclass
class PhaseReport:
    phase: str
    lambda2: complex | None
    sigma2: float | None
    tau2: float | None
    simplicity_certificate: dict = field(default_factory=dict)
    tol: float = 1e-9

    def to_dict(self):
        return {
            "phase": self.phase,
            "lambda2": None if self.lambda2 is None else cjson(self.lambda2),
            "sigma2": self.sigma2,
            "tau2": self.tau2,
            "tol": self.tol,
            "simplicity_certificate": {str(k): v for k, v in self.simplicity_certificate.items()},
        }


def phase_tolerance(spec: Spectrum) -> float:
    if spec.phi_error == 0.0:
        return 1e-9
    if len(spec.roots) < 2:
        return spec.phi_error
    return max(1e-9, spec.phi_error / max(abs(spec.roots[1].phi_prime), 1e-300))


def classify_phase(spec: Spectrum) -> PhaseReport:
    tol = phase_tolerance(spec)
    others = [r for r in spec.roots if r.lam != 1.0]
    if not others:
        return PhaseReport("Normal", None, None, None, {}, tol)
    r2 = others[0]
    sigma2, tau2 = r2.lam.real, abs(r2.lam.imag)
    lam2 = complex(sigma2, tau2)
    if sigma2 < 0.5 - tol:
        phase = "Normal"
        critical = []
    else:
        critical = [r for r in others if abs(r.lam.real - sigma2) <= tol]
        phase = "CriticalLine" if abs(sigma2 - 0.5) <= tol else "Periodic"
    cert = {r.lam: r.simple for r in critical}
    if any(not ok for ok in cert.values()):
        phase = "Degenerate"
    return PhaseReport(phase, lam2, sigma2, tau2, cert, tol)


# ------------------------------------------------------------------- moments


@dataclass
class MomentModel:
    alpha: float
    a_coeffs: list
    a0: complex | None = None
    beta: float | None = None
    beta_error: float | None = None
    gamma: complex | None = None
    kappa: float | None = None
    phase: str | None = None
    lambda2: complex | None = None
    exact: bool = False

    def mean(self, x):
        """Mean expansion sum_i a_i x**lambda_i (+ a0) evaluated at x >= 1."""
        x = np.asarray(x, dtype=float)
        tot = np.zeros(x.shape, dtype=complex)
        for lam, a in self.a_coeffs:
            tot = tot + a * np.exp(lam * np.log(x))
        if self.a0 is not None:
            tot = tot + self.a0
        return tot.real

    def to_dict(self):
        return {
            "alpha": self.alpha,
            "a_coeffs": [{"lambda": cjson(l), "a": cjson(a)} for l, a in self.a_coeffs],
            "a0": None if self.a0 is None else cjson(self.a0),
            "exact_mean_formula": self.exact,
            "beta": self.beta,
            "beta_error": self.beta_error,
            "gamma": None if self.gamma is None else cjson(self.gamma),
            "kappa": self.kappa,
            "phase": self.phase,
        }


def mean_expansion(law: SplitLaw, spec: Spectrum) -> MomentModel:
    """Coefficients a_i = -1/(lambda_i phi'(lambda_i)) of the mean expansion.

    For rational phi every root in the plane is used and the constant
    a0 = -1/(phi(0) - 1) is added, which makes the expansion exact on x >= 1.
    """
    roots = spec.all_roots if spec.all_roots is not None else spec.roots
    bad = [r.lam for r in roots if not r.simple]
    if bad:
        raise NonSimpleRootError(f"non-simple roots {bad}")
    coeffs = [(r.lam, -1.0 / (r.lam * r.phi_prime)) for r in roots]
    alpha = float(-_dphi(law, 1.0).real)
    a0 = None
    if spec.all_roots is not None:
        a0 = complex(-1.0 / (complex(tr.phi_values(law, 0.0)) - 1.0))
    rep = classify_phase(spec)
    model = MomentModel(alpha, coeffs, a0, phase=rep.phase, lambda2=rep.lambda2, exact=a0 is not None)
    if rep.phase == "Periodic":
        a2 = -1.0 / (rep.lambda2 * _dphi(law, rep.lambda2))
        model.gamma = 2.0 * a2
        model.kappa = 0.5 * (0.5 + rep.sigma2)
    return model


def beta_normal(law: SplitLaw, spec: Spectrum, rel_tail=1e-6, u0=1.0):
    """Variance constant of the normal phase by quadrature on Re z = 1/2.

    Returns ``(beta, error_bound)``.  The integrand is even in u; [0, U] is
    integrated on geometric panels and the tail beyond U is bounded by
    ``2 b**2 / ((1 - q)**2 U)`` with ``q`` a grid estimate of sup |phi| on the
    tail, scaled by ``1 / (pi alpha)``.
    """
    rep = classify_phase(spec)
    if rep.phase != "Normal" or spec.delta >= 0.5:
        raise PreconditionError("beta_normal needs the Normal phase and delta < 1/2")
    a = float(-_dphi(law, 1.0).real)

    def g(u):
        z = 0.5 + 1j * u
        num = tr.psi_values(law, z, np.conj(z)).real
        den = np.abs(z) ** 2 * np.abs(1.0 - tr.phi_values(law, z)) ** 2
        return num / den

    # panel edges; add the heights of roots near the line as breakpoints
    bumps = sorted({abs(r.lam.imag) for r in spec.roots if r.lam.real > 0.2 and r.lam != 1.0})
    edges = [0.0, u0]
    total, err = 0.0, 0.0

    def add(lo, hi):
        nonlocal total, err
        pts = [p for p in bumps if lo < p < hi]
        v, e = integrate.quad(g, lo, hi, points=pts or None, limit=200, epsabs=1e-13, epsrel=1e-11)
        total += v
        err += e

    add(0.0, u0)
    U = u0
    b2 = 2.0 * law.b**2
    while True:
        U_next = 2.0 * U
        add(U, U_next)
        U = U_next
        grid = U * np.geomspace(1.0, 1e3, 200)
        q = float(np.max(np.abs(tr.phi_values(law, 0.5 + 1j * grid))))
        if q >= 1:
            tail = math.inf
        else:
            tail = b2 / ((1.0 - q) ** 2 * U)
        value = total / (math.pi * a)
        tail_beta = tail / (math.pi * a)
        if tail_beta < rel_tail * abs(value) or U > 1e15:
            break
    err_beta = err / (math.pi * a) + tail_beta
    if not value > 0:
        raise SpectralError(f"nonpositive beta {value}")
    if err_beta > 0.01 * value:
        raise QuadratureError(f"quadrature error {err_beta} exceeds 1% of beta {value}")
    return value, err_beta


def _binary_blocks():
    # closed forms for V = (U, 1-U), U uniform
    E_min = 1.5                       # sum_{j,l} E min(V_j, V_l)
    E_log = math.log(2.0) - 0.5       # sum_{j,l} E V_l (ln V_j - ln V_l) 1{V_l < V_j}
    return E_min, E_log


def beta_rational(law: SplitLaw, model: MomentModel, spec: Spectrum | None = None,
                  n_samples: int = 10**6, rng: np.random.Generator | None = None,
                  closed_form: bool = True):
    """Variance constant from the rational-phi four-block formula.

    Returns ``(beta, error_bound)``.  Cross-moment expectations are exact for
    the binary uniform law and Monte Carlo averages otherwise.
    """
    if not law.is_rational or model.a0 is None:
        raise PreconditionError("beta_rational needs a rational phi with the full root set")
    roots = [l for l, _ in model.a_coeffs]
    if spec is not None and spec.all_roots is not None and not all(r.simple for r in spec.all_roots):
        raise PreconditionError("all roots must be simple")
    if not any(abs(l - 1.0) < 1e-12 for l in roots):
        raise PreconditionError("lambda_1 = 1 missing")
    others = [(l, a) for l, a in model.a_coeffs if abs(l - 1.0) >= 1e-12]
    if any(l.real >= 0.5 for l, _ in others):
        raise PreconditionError("every root other than 1 must have Re < 1/2")
    al = model.alpha
    b = law.b
    a0 = -1.0 / (b - 1)
    idx = [(0.0 + 0.0j, a0)] + others

    def phi_(z):
        return complex(tr.phi_values(law, z))

    if law.family == "binary" and closed_form:
        E_min, E_log = _binary_blocks()
        blocks = 0.0
        # only i = k = 0 survives (no further roots)
        blocks += (a0 * a0 / 1.0) * (E_min - 2 * phi_(1.0) + 1) / al
        blocks += -2 * al**-2 * a0 * (E_log - al)
        blocks += al**-3 * (E_min - 1) - 1 / al
        return float(blocks.real), 0.0

    rng = rng or np.random.default_rng()
    V = sample_splits(law, n_samples, rng)
    if np.any(V <= 0):
        raise PreconditionError("beta_rational needs V_j > 0 a.s.")
    logV = np.log(V)
    n = V.shape[0]
    err = 0.0
    Vj = V[:, :, None]
    Vl = V[:, None, :]
    lj = logV[:, :, None]
    ll = logV[:, None, :]
    mn = np.minimum(Vj, Vl)
    lmn = np.log(mn)

    def mc(arr):
        s = arr.reshape(n, -1).sum(axis=1)
        mu = s.mean()
        return complex(mu), 3.0 * math.sqrt(float(np.mean(np.abs(s - mu) ** 2)) / n)

    beta_val = 0.0 + 0.0j
    for li, ai in idx:
        for lk, ak in idx:
            e1, s1 = mc(np.exp(li * lj + lk * ll + (1 - li - lk) * lmn))
            coef = ai * ak / (1 - li - lk) / al
            beta_val += coef * (e1 - 2 * phi_(1 - lk) + 1)
            err += abs(coef) * s1
    for li, ai in others:
        e2, s2 = mc((np.exp(li * lj + (1 - li) * ll) - Vl) * (Vl <= Vj))
        coef = -2 * al**-2 * ai / li
        beta_val += coef * (e2 - phi_(1 - li) + 1)
        err += abs(coef) * s2
    e3, s3 = mc(Vl * (lj - ll) * (Vl < Vj))
    beta_val += -2 * al**-2 * a0 * (e3 - al)
    err += abs(2 * al**-2 * a0) * s3
    e4, s4 = mc(mn)
    beta_val += al**-3 * (e4 - 1) - 1 / al
    err += al**-3 * s4
    return float(beta_val.real), err


@dataclass
class CriticalBeta:
    beta: float
    terms: list

    def to_dict(self):
        return {"beta": self.beta, "terms": [{"lambda": cjson(l), "psi": cjson(p)} for l, p in self.terms]}


def beta_critical(law: SplitLaw, spec: Spectrum) -> CriticalBeta:
    """x ln x variance constant on the critical line, with each psi(lambda, conj lambda) term."""
    rep = classify_phase(spec)
    if rep.phase == "Degenerate":
        raise NonSimpleRootError("a critical root is not simple")
    if rep.phase != "CriticalLine":
        raise PreconditionError(f"beta_critical needs the CriticalLine phase, got {rep.phase}")
    al = float(-_dphi(law, 1.0).real)
    terms = []
    total = 0.0
    for lam in rep.simplicity_certificate:
        p = tr.psi(law, lam, lam.conjugate()).value
        d = _dphi(law, lam)
        total += p.real / (al * abs(lam * d) ** 2)
        terms.append((lam, p))
    return CriticalBeta(float(total), terms)


def variance_periodic(law: SplitLaw, spec: Spectrum):
    """Coefficients c_ik with Var N(x) ~ sum c_ik x**(lambda_i + lambda_k)."""
    rep = classify_phase(spec)
    if rep.phase == "Degenerate":
        raise NonSimpleRootError("a root on the leading line is not simple")
    if rep.phase != "Periodic":
        raise PreconditionError(f"variance_periodic needs the Periodic phase, got {rep.phase}")
    line = list(rep.simplicity_certificate)
    out = []
    for li in line:
        for lk in line:
            denom_phi = 1.0 - complex(tr.phi_values(law, li + lk))
            if abs(denom_phi) < 1e-10:
                raise SpectralError(f"phi(lambda_i + lambda_k) = 1 at {li + lk}")
            p = complex(tr.psi_values(law, li, lk))
            c = p / (li * lk * _dphi(law, li) * _dphi(law, lk) * denom_phi)
            out.append((li, lk, c))
    return out


def periodic_variance(coeffs, x):
    x = np.asarray(x, dtype=float)
    tot = np.zeros(x.shape, dtype=complex)
    for li, lk, c in coeffs:
        tot = tot + c * np.exp((li + lk) * np.log(x))
    return tot.real


# ------------------------------------------------------------ phase crossing


def leading_nontrivial_root(law, guess=None, **kw):
    """lambda_2 of ``law``: Newton from ``guess`` if given, else a full search."""
    if guess is not None:
        z, res, ok = newton(law, guess)
        if ok:
            return complex(z.real, abs(z.imag))
    spec = find_roots(law, **kw)
    rep = classify_phase(spec)
    return rep.lambda2


def phase_crossing(make_law, lo: float, hi: float, xtol: float = 1e-10, step: float = 0.25, **kw):
    """Parameter value where Re lambda_2 crosses 1/2 for the family ``make_law``.

    lambda_2 is tracked by Newton continuation from a full root search at
    ``lo``; the bracket end points are re-checked with full searches so the
    tracked branch really is the leading one.
    """
    cache = {}

    def track(a):
        if a in cache:
            return cache[a]
        known = min(cache, key=lambda k: abs(k - a)) if cache else None
        if known is None:
            lam = leading_nontrivial_root(make_law(a), **kw)
        else:
            lam = cache[known]
            n = max(1, int(math.ceil(abs(a - known) / step)))
            for s in np.linspace(known, a, n + 1)[1:]:
                lam = leading_nontrivial_root(make_law(float(s)), guess=lam, **kw)
        cache[a] = lam
        return lam

    g = lambda a: track(a).real - 0.5  # noqa: E731
    if g(lo) * g(hi) > 0:
        raise SpectralError("Re lambda_2 - 1/2 does not change sign on the bracket")
    for end in (lo, hi):
        full = leading_nontrivial_root(make_law(end), **kw)
        if abs(full - cache[end]) > 1e-6:
            raise SpectralError(f"continuation left the leading branch at {end}")
    a0 = optimize.brentq(g, lo, hi, xtol=xtol, rtol=4 * np.finfo(float).eps)
    return a0, track(a0)
