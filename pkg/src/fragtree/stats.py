"""Statistical checks tying simulated ensembles to the analytic constants."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import optimize, stats

from . import __version__


class PhaseMismatch(ValueError):
    pass


class InsufficientRange(ValueError):
    pass


@dataclass
class TestRecord:
    name: str
    statistic: float | None
    threshold: float | None
    passed: bool | None
    sample_sizes: list = field(default_factory=list)
    seeds: list = field(default_factory=list)
    details: dict = field(default_factory=dict)

    def to_dict(self):
        return _jsonable(asdict(self))


@dataclass
class VerificationReport:
    law: str
    law_hash: str
    phase_claimed: str
    phase_detected: str | None
    records: list = field(default_factory=list)
    version: str = __version__
    config: dict = field(default_factory=dict)

    @property
    def passed(self):
        return all(r.passed is not False for r in self.records)

    def to_dict(self):
        return _jsonable({
            "version": self.version, "law": self.law, "law_hash": self.law_hash,
            "phase_claimed": self.phase_claimed, "phase_detected": self.phase_detected,
            "passed": self.passed, "config": self.config,
            "records": [r.to_dict() for r in self.records],
        })

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), sort_keys=True, **kw)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, complex):
        return {"re": obj.real, "im": obj.imag}
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    return obj


# ------------------------------------------------------------------ CLT


def standardize(raw, x, alpha, beta, scaling="sqrt_x"):
    if scaling == "sqrt_x":
        s = math.sqrt(beta * x)
    elif scaling == "sqrt_x_ln_x":
        s = math.sqrt(beta * x * math.log(x))
    else:
        raise ValueError(f"unknown scaling {scaling!r}")
    return (np.asarray(raw, dtype=float) - x / alpha) / s


def normal_summary(z):
    z = np.asarray(z, dtype=float)
    ks = float(stats.kstest(z, "norm").statistic)
    return ks, float(stats.skew(z)), float(stats.kurtosis(z))


def clt_test(ensemble, model, scaling: str = "sqrt_x", ks_threshold: float = 0.02,
             kurtosis_threshold: float = 0.2) -> TestRecord:
    """KS distance, skewness and excess kurtosis of the standardized N(x)."""
    if model.phase not in ("Normal", "CriticalLine"):
        raise PhaseMismatch(f"clt_test needs the Normal or CriticalLine phase, got {model.phase}")
    if ensemble.raw is None:
        raise ValueError("ensemble kept no raw values")
    if model.beta is None:
        raise ValueError("model has no beta")
    z = standardize(ensemble.raw, ensemble.x, model.alpha, model.beta, scaling)
    ks, sk, ku = normal_summary(z)
    ok = ks < ks_threshold and abs(ku) < kurtosis_threshold
    return TestRecord(f"clt_{scaling}", ks, ks_threshold, ok, [int(z.size)], [ensemble.master_seed],
                      {"x": ensemble.x, "skewness": sk, "excess_kurtosis": ku,
                       "kurtosis_threshold": kurtosis_threshold, "mean": float(z.mean()), "std": float(z.std())})


def calibrate_normal_thresholds(n: int, reps: int = 200, quantile: float = 0.99, seed: int = 0):
    """Quantiles of the KS distance and |excess kurtosis| on exact normal samples of size n."""
    rng = np.random.default_rng(seed)
    ks = np.empty(reps)
    ku = np.empty(reps)
    for i in range(reps):
        z = rng.standard_normal(n)
        ks[i] = stats.kstest(z, "norm").statistic
        ku[i] = abs(stats.kurtosis(z))
    return float(np.quantile(ks, quantile)), float(np.quantile(ku, quantile))


# ------------------------------------------------------- variance scaling


@dataclass
class ScalingFit:
    selected: str
    fits: dict
    beta_reference: float | None = None

    def to_dict(self):
        return _jsonable({"selected": self.selected, "fits": self.fits, "beta_reference": self.beta_reference})


def _relative_lstsq(G, v):
    """min_c sum_i ((v_i - (G c)_i) / v_i)^2."""
    W = G / v[:, None]
    c, *_ = np.linalg.lstsq(W, np.ones_like(v), rcond=None)
    r = W @ c - 1.0
    return c, float(np.sum(r * r))


def variance_scaling_fit(xs, variances, lambda2: complex | None = None,
                         beta_reference: float | None = None) -> ScalingFit:
    """Pick among c x, c x ln x and x^{2 sigma2}(c0 + c1 cos + c2 sin)(2 tau2 ln x).

    Fits minimize relative squared residuals, so multiplying every variance
    by a constant rescales the coefficients and leaves the choice unchanged.
    Models are ranked by AIC, n ln(RSS/n) + 2k.
    """
    x = np.asarray(xs, dtype=float)
    v = np.asarray(variances, dtype=float)
    if x.size < 6 or math.log10(x.max() / x.min()) < 3 - 1e-9:
        raise InsufficientRange("need at least 6 x values spanning 3 decades")
    if np.any(v <= 0):
        raise ValueError("variances must be positive")
    lx = np.log(x)
    models = {"x": x[:, None], "x_ln_x": (x * lx)[:, None]}
    if lambda2 is not None and lambda2.real > 0:
        s, t = lambda2.real, abs(lambda2.imag)
        p = x ** (2 * s)
        models["periodic"] = np.column_stack([p, p * np.cos(2 * t * lx), p * np.sin(2 * t * lx)])
    fits = {}
    n = x.size
    for name, G in models.items():
        c, rss = _relative_lstsq(G, v)
        k = G.shape[1]
        aic = n * math.log(max(rss, 1e-300) / n) + 2 * k
        fits[name] = {"coefficients": c.tolist(), "rss": rss, "aic": aic, "fitted": (G @ c).tolist()}
    best = min(fits, key=lambda k: fits[k]["aic"])
    return ScalingFit(best, fits, beta_reference)


# ---------------------------------------------------------- oscillation


@dataclass
class OscillationFit:
    amplitude: float
    phase: float
    tau: float
    amplitude_stderr: float
    gamma_abs: float
    gamma_arg: float
    conclusive: bool
    free_tau: float | None = None

    def to_dict(self):
        return _jsonable(asdict(self))


def phase_spread_grid(x_lo: float, tau: float, periods: int = 3, per_period: int = 8) -> np.ndarray:
    """x values with tau ln x advancing 2 pi / per_period per point."""
    k = np.arange(periods * per_period)
    return x_lo * np.exp(2 * math.pi * k / (per_period * tau))


def oscillation_probe(xs, means, stderrs, model, free_frequency: bool = True) -> OscillationFit:
    """Fit A cos(tau ln x + phi0) to (mean - x/alpha) / x^sigma2.

    With the expansion E N(x) = x/alpha + Re(gamma x^lambda2) + ..., A should
    match |gamma| and phi0 should match arg gamma.  The fit is inconclusive
    when A is below three of its standard errors.
    """
    if model.phase != "Periodic":
        lam = model.lambda2
        if lam is None:
            raise PhaseMismatch("no lambda2: nothing to probe")
    lam = model.lambda2
    s, tau = lam.real, abs(lam.imag)
    x = np.asarray(xs, dtype=float)
    y = (np.asarray(means, dtype=float) - x / model.alpha) / x**s
    w = 1.0 / (np.asarray(stderrs, dtype=float) / x**s)
    lx = np.log(x)

    def fit(t):
        G = np.column_stack([np.cos(t * lx), -np.sin(t * lx)])
        c, *_ = np.linalg.lstsq(G * w[:, None], y * w, rcond=None)
        r = (G @ c - y) * w
        return c, G, float(r @ r)

    c, G, _ = fit(tau)
    cov = np.linalg.pinv((G * w[:, None]).T @ (G * w[:, None]))
    A = float(math.hypot(*c))
    A_se = float(math.sqrt(max(c @ cov @ c, 0.0)) / max(A, 1e-300))
    free = None
    if free_frequency:
        grid = np.linspace(0.5 * tau, 1.5 * tau, 401)
        t0 = grid[int(np.argmin([fit(t)[2] for t in grid]))]
        res = optimize.minimize_scalar(lambda t: fit(t)[2], bracket=(t0 - 0.01 * tau, t0, t0 + 0.01 * tau))
        free = float(res.x)
    g = model.gamma if model.gamma is not None else 0j
    return OscillationFit(A, float(math.atan2(c[1], c[0])), tau, A_se, abs(g), float(np.angle(g)),
                          A > 3 * A_se, free)


def write_fit_csv(path, xs, observed, fitted: dict):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        names = sorted(fitted)
        w.writerow(["x", "observed"] + names)
        for i, x in enumerate(xs):
            w.writerow([repr(float(x)), repr(float(observed[i]))] + [repr(float(fitted[k][i])) for k in names])
