"""End-to-end acceptance checks at their stated tolerances.

Each test prints one ``[PASS]``/``[FAIL]`` line, visible in ``pytest -v``
output, before asserting.
"""

import math
import time

import numpy as np
import pytest

from fragtree import fixedpoint as fp
from fragtree import laws, renewal, simulate as sm, spectral as sp, stats, transforms as tr

GOLDEN = (1 + math.sqrt(5)) / 2
BINARY_BETA = 8 * math.log(2) - 5


@pytest.fixture
def verdict(capsys):
    t0 = time.perf_counter()

    def emit(number, title, ok, detail):
        with capsys.disabled():
            tag = "PASS" if ok else "FAIL"
            print(f"\n[{tag}] criterion {number:2d} {title}: {detail} ({time.perf_counter() - t0:.1f}s)")
        assert ok, f"criterion {number} failed: {detail}"

    return emit


def test_binary_exact_mean(verdict):
    law = laws.binary()
    sol = renewal.mean_renewal(renewal.discretize_measure(law, h=1e-3, t_max=7.0))
    parts, ok = [], True
    for i, x in enumerate((2.5, 10.0, 1e3)):
        e = sm.ensemble(law, x, 10**5, master_seed=100 + i, keep_raw=False)
        z = (e.mean - (2 * x - 1)) / e.stderr
        rel = abs(sol(math.log(x)) / (2 * x - 1) - 1)
        ok &= abs(z) <= 3 and rel <= 0.02
        parts.append(f"x={x:g} z={z:+.2f} renewal_rel={rel:.1e}")
    verdict(1, "binary mean 2x-1", ok, "; ".join(parts))


def test_binary_variance_constant(verdict):
    law = laws.binary()
    spec = sp.find_roots(law)
    model = sp.mean_expansion(law, spec)
    b_quad, b_err = sp.beta_normal(law, spec)
    b_rat, _ = sp.beta_rational(law, model, spec)
    x = 1e4
    e = sm.ensemble(law, x, 10**5, master_seed=200, keep_raw=False)
    ratio = e.variance / x
    ok = (abs(b_quad - BINARY_BETA) <= 1e-4 and abs(b_rat - BINARY_BETA) <= 1e-8
          and abs(ratio / BINARY_BETA - 1) <= 0.05)
    verdict(2, "binary variance constant", ok,
            f"quadrature={b_quad:.9f} (bound {b_err:.1e}) rational={b_rat:.12f} "
            f"target={BINARY_BETA:.12f} Var/x={ratio:.5f} ({ratio / BINARY_BETA - 1:+.2%})")


def test_mary_threshold(verdict):
    out = {}
    for m in (26, 27):
        spec = sp.find_roots(laws.mary(m))
        rep = sp.classify_phase(spec)
        out[m] = (rep.sigma2, max(r.residual for r in spec.roots))
    ok = out[26][0] < 0.5 < out[27][0] and max(v[1] for v in out.values()) <= 1e-9
    verdict(3, "m-ary threshold", ok,
            f"sigma2(26)={out[26][0]:.6f} sigma2(27)={out[27][0]:.6f} "
            f"max residual={max(v[1] for v in out.values()):.1e}")


def test_quad_spectrum(verdict):
    worst, phases = 0.0, {}
    for d in range(2, 13):
        spec = sp.find_roots(laws.quad(d))
        exact = 2 * np.exp(2j * np.pi * np.arange(d) / d) - 1
        got = np.array([r.lam for r in spec.all_roots])
        assert got.size == d
        worst = max(worst, max(np.min(np.abs(got - z)) for z in exact))
        phases[d] = sp.classify_phase(spec).phase
    flip = phases[8] == "Normal" and phases[9] == "Periodic"
    ok = worst <= 1e-10 and flip and all(phases[d] == "Normal" for d in range(2, 9)) \
        and all(phases[d] == "Periodic" for d in range(9, 13))
    verdict(4, "quad spectrum", ok, f"max root error={worst:.1e} phase(8)={phases[8]} phase(9)={phases[9]}")


def test_alpha_identities(verdict):
    cases = [(laws.binary(), 0.5)]
    cases += [(laws.mary(m), sum(1 / k for k in range(2, m + 1))) for m in (2, 3, 5, 10, 27)]
    cases += [(laws.quad(d), d / 2) for d in (1, 2, 5, 9)]
    # Beta(a, a'): alpha = psi(a + a' + 1) - (a psi(a + 1) + a' psi(a' + 1)) / (a + a')
    from scipy.special import digamma

    for a, a2 in ((2.0, 2.0), (3.0, 2.0), (2.5, 0.7), (59.6, 59.6), (26.9, 1.0)):
        s = a + a2
        cases.append((laws.beta(a, a2), digamma(s + 1) - (a * digamma(a + 1) + a2 * digamma(a2 + 1)) / s))

    def numeric_alpha(law, h=1e-3):
        # central differences of phi with one Richardson step
        f = lambda u: tr.phi(law, u).value.real  # noqa: E731
        d1 = (f(1 + h) - f(1 - h)) / (2 * h)
        d2 = (f(1 + h / 2) - f(1 - h / 2)) / h
        return -(4 * d2 - d1) / 3

    worst = max(abs(numeric_alpha(law) - ref) for law, ref in cases)
    ok = worst <= 1e-8
    verdict(5, "alpha identities", ok, f"{len(cases)} laws, max |-phi'(1) - closed form|={worst:.1e}")


def test_deterministic_identities(verdict):
    fib = [0, 1]
    for _ in range(40):
        fib.append(fib[-1] + fib[-2])
    law = laws.deterministic([1 / GOLDEN, 1 / GOLDEN**2])
    bad = [n for n in range(31) if sm.run_deterministic(law, GOLDEN**n).n_internal != fib[n + 3] - 1]
    bad_sim = [n for n in range(25) if sm.run_once(law, GOLDEN**n).n_internal != fib[n + 3] - 1]
    third = laws.deterministic([1 / 3, 2 / 3])
    target = 1 / (math.log(3) - (2 / 3) * math.log(2))
    ratio = sm.run_deterministic(third, 1e6).n_internal / 1e6
    ok = not bad and not bad_sim and abs(ratio / target - 1) <= 0.02
    verdict(6, "deterministic identities", ok,
            f"Fibonacci mismatches={bad + bad_sim} N(1e6)/1e6={ratio:.5f} target={target:.5f} "
            f"({ratio / target - 1:+.2%})")


def test_external_node_identity(verdict):
    families = [laws.binary(), laws.mary(4), laws.mary(27), laws.quad(3), laws.simplex(3), laws.beta(2.5, 0.7),
                laws.beta(3, 2), laws.deterministic([1 / 3, 2 / 3]), laws.deterministic([0.5, 0.5]),
                laws.lattice(2, [1, 2, 2]),
                laws.empirical(laws.sample_splits(laws.mary(3), 500, np.random.default_rng(0)))]
    rng = np.random.default_rng(7)
    per_x = 4000
    n_x = -(-10**6 // (per_x * len(families)))
    total = violations = 0
    for i, law in enumerate(families):
        for j, x in enumerate(np.exp(rng.uniform(0, math.log(2e3), n_x))):
            e = sm.ensemble(law, float(x), per_x, master_seed=1000 * i + j, keep_raw=False)
            violations += e.identity_violations
            total += e.n
    ok = total >= 10**6 and violations == 0
    verdict(7, "external-node identity", ok, f"{total} runs over {len(families)} laws, violations={violations}")


def test_binary_clt(verdict):
    law = laws.binary()
    model = sp.mean_expansion(law, sp.find_roots(law))
    model.beta = BINARY_BETA
    n = 10**4
    ks_q, ku_q = stats.calibrate_normal_thresholds(n, reps=200, seed=1)
    e = sm.ensemble(law, 1e5, n, master_seed=300)
    rec = stats.clt_test(e, model, "sqrt_x", 0.02, 0.2)
    ku = rec.details["excess_kurtosis"]
    # the stated thresholds must sit above what exact normal samples of this size produce
    ok = rec.passed and ks_q < 0.02 and ku_q < 0.2
    verdict(8, "binary CLT", ok,
            f"KS={rec.statistic:.4f} (<0.02; normal 99% quantile {ks_q:.4f}) "
            f"|kurt|={abs(ku):.3f} (<0.2; normal 99% quantile {ku_q:.3f}) skew={rec.details['skewness']:+.3f}")


def test_quad9_periodic_limit(verdict):
    law = laws.quad(9)
    spec = sp.find_roots(law)
    model = sp.mean_expansion(law, spec)
    lam = model.lambda2
    cert = fp.contraction_certificate(law, lam)
    xi = fp.iterate_to_fixed_point(law, lam, model.gamma, 10**5, rng=np.random.default_rng(400))
    z = abs(xi.raw_mean - model.gamma) / xi.raw_stderr
    xs = sm.phase_locked_grid(5.0, lam.imag, 2)
    ens = sm.phase_locked_samples(law, 5.0, lam.imag, 2, 1000, master_seed=401)
    dist = [fp.periodic_limit_distance(e, xi, model) for e in ens]
    slope = float(np.polyfit(np.log(xs), np.log(dist), 1)[0])
    bound = model.kappa - lam.real + 0.1
    ok = cert.xi < 1 and z <= 3 and slope <= bound and dist[-1] < dist[0]
    verdict(9, "quad(9) periodic limit", ok,
            f"xi={cert.xi:.5f} |raw mean - gamma|/se={z:.2f} after {xi.generation} generations; "
            f"distances {', '.join(f'{d:.3f}' for d in dist)} at x={', '.join(f'{x:.0f}' for x in xs)}; "
            f"slope={slope:+.3f} <= {bound:.3f}")


def test_beta_thresholds(verdict):
    a_sym, lam_sym = sp.phase_crossing(lambda a: laws.beta(a, a), 50.0, 70.0)
    a_one, lam_one = sp.phase_crossing(lambda a: laws.beta(a, 1.0), 20.0, 35.0)
    ok = abs(a_sym - 59.6) <= 0.5 and abs(a_one - 26.9) <= 0.5
    verdict(10, "Beta thresholds", ok, f"Beta(a,a): a0={a_sym:.4f} (lambda2={lam_sym:.4f})  Beta(a,1): a0={a_one:.4f} (lambda2={lam_one:.4f})")
