import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from fragtree import fixedpoint as fp, laws, simulate as sm, spectral as sp, transforms as tr


@pytest.fixture(scope="module")
def quad9():
    law = laws.quad(9)
    model = sp.mean_expansion(law, sp.find_roots(law))
    return law, model


def test_certificate_quad9(quad9):
    law, model = quad9
    cert = fp.contraction_certificate(law, model.lambda2)
    assert cert.valid
    assert cert.xi == pytest.approx((2 / (1 + 2 * model.lambda2.real)) ** 9, rel=1e-12)
    assert cert.lipschitz_bound == pytest.approx(math.sqrt(cert.xi))


def test_certificate_mary27():
    law = laws.mary(27)
    model = sp.mean_expansion(law, sp.find_roots(law))
    assert model.phase == "Periodic"
    assert fp.contraction_certificate(law, model.lambda2).xi < 1


def test_invalid_certificate_rejected():
    law = laws.binary()
    m = fp.EmpiricalComplexMeasure(np.ones(10, dtype=complex), 1 + 0j)
    with pytest.raises(fp.InvalidCertificate):
        fp.apply_T(m, law, 0.3 + 1j, np.random.default_rng(0))
    with pytest.raises(fp.InvalidCertificate):
        fp.iterate_to_fixed_point(law, 0.3 + 1j, 1 + 0j, 100)


def test_point_mass_mean_is_preserved(quad9):
    law, model = quad9
    g = model.gamma
    m = fp.EmpiricalComplexMeasure(np.full(50000, g), g)
    out = fp.apply_T(m, law, model.lambda2, np.random.default_rng(1), recentre=False)
    assert abs(out.raw_mean - g) <= 4 * out.raw_stderr
    assert out.samples.mean() == pytest.approx(out.raw_mean)
    rec = fp.apply_T(m, law, model.lambda2, np.random.default_rng(1))
    assert rec.samples.mean() == pytest.approx(g, abs=1e-12)


@pytest.mark.parametrize("law", [laws.quad(9), laws.mary(27)], ids=str)
def test_one_step_second_moment(law):
    """E|T Z|^2 = xi E|Z|^2 + (psi + |phi|^2 - xi) |E Z|^2, psi being the covariance of the weight sums."""
    model = sp.mean_expansion(law, sp.find_roots(law))
    lam = model.lambda2
    rng = np.random.default_rng(7)
    z = 0.4 + 0.2j + rng.standard_normal(200000) + 1j * rng.standard_normal(200000)
    m = fp.EmpiricalComplexMeasure(z, complex(z.mean()))
    out = fp.apply_T(m, law, lam, rng, recentre=False)
    xi = tr.phi(law, 2 * lam.real).value.real
    p = tr.psi(law, lam, lam.conjugate()).value.real
    expect = xi * np.mean(np.abs(z) ** 2) + (p + 1 - xi) * abs(z.mean()) ** 2
    got = np.abs(out.samples) ** 2
    assert abs(got.mean() - expect) <= 4 * got.std() / math.sqrt(got.size)


def test_second_moment_targets_deterministic_oracle():
    """Two-point law: solve the moment recursion directly with the weights."""
    w = np.array([0.3, 0.7])
    law = laws.deterministic(w)
    lam = 1.0 + 0j  # 0.3 + 0.7 = 1
    g = 0.5 - 0.2j
    c = w**lam
    xi = np.sum(np.abs(c) ** 2)
    cross = np.sum(np.outer(c, c.conj())) - xi
    abs2 = (cross.real * abs(g) ** 2) / (1 - xi)
    sq_cross = np.sum(np.outer(c, c)) - np.sum(c * c)
    sq = sq_cross * g**2 / (1 - np.sum(c * c))
    t_abs2, t_sq = fp.second_moment_targets(law, lam, g)
    assert t_abs2 == pytest.approx(abs2, rel=1e-12)
    assert t_sq == pytest.approx(sq, rel=1e-12)


@pytest.fixture(scope="module")
def fixed_point(quad9):
    law, model = quad9
    return fp.iterate_to_fixed_point(law, model.lambda2, model.gamma, 20000, rng=np.random.default_rng(3))


def test_iteration_matches_second_moment_targets(quad9, fixed_point):
    law, model = quad9
    t_abs2, t_sq = fp.second_moment_targets(law, model.lambda2, model.gamma)
    mean, abs2, sq = fixed_point.moments()
    assert mean == pytest.approx(model.gamma, abs=1e-12)
    assert abs2 == pytest.approx(t_abs2, rel=0.08)
    assert abs(sq - t_sq) <= 0.08 * t_abs2
    assert abs(fixed_point.raw_mean - model.gamma) <= 4 * fixed_point.raw_stderr
    assert fixed_point.last_step_distance < 0.1


def test_successive_generations_contract(quad9):
    """Distance between consecutive iterates shrinks while it is above the noise floor."""
    law, model = quad9
    rng = np.random.default_rng(5)
    m = fp.EmpiricalComplexMeasure(np.full(20000, model.gamma), model.gamma)
    prev = m
    steps = []
    for _ in range(4):
        cur = fp.apply_T(prev, law, model.lambda2, rng)
        steps.append(fp.w2_distance(abs(prev.samples), abs(cur.samples)))
        prev = cur
    assert steps[1] < steps[0] and steps[2] < steps[1]


def test_conjugation_equivariance(quad9):
    law, model = quad9
    lam, g = model.lambda2, model.gamma
    z = np.random.default_rng(0).standard_normal(1000) + 1j
    a = fp.apply_T(fp.EmpiricalComplexMeasure(z, g), law, lam, np.random.default_rng(9), recentre=False)
    b = fp.apply_T(fp.EmpiricalComplexMeasure(z.conj(), g.conjugate()), law, lam.conjugate(),
                   np.random.default_rng(9), recentre=False)
    assert np.allclose(a.samples.conj(), b.samples, rtol=1e-13, atol=1e-13)


@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=50),
       st.floats(-100, 100), st.floats(0.1, 10))
def test_w2_translation_and_scale(xs, shift, scale):
    a = np.array(xs)
    assert fp.w2_distance(a, a) == 0
    assert fp.w2_distance(a + shift, a) == pytest.approx(abs(shift), abs=1e-9 * (1 + abs(shift)))
    b = a[::-1] + 1.0
    assert fp.w2_distance(scale * a, scale * b) == pytest.approx(scale * fp.w2_distance(a, b), rel=1e-9, abs=1e-9)


def test_w2_unequal_sizes():
    # two-point law against the same law sampled with doubled multiplicity
    a = np.array([0.0, 1.0])
    assert fp.w2_distance(a, np.array([0.0, 0.0, 1.0, 1.0])) == 0
    # uniform {0,1} vs point mass at 0.5
    assert fp.w2_distance(a, np.array([0.5, 0.5, 0.5])) == pytest.approx(0.5)


def test_limit_distance_requires_periodic_phase():
    law = laws.binary()
    model = sp.mean_expansion(law, sp.find_roots(law))
    e = sm.ensemble(law, 100.0, 10, 0)
    with pytest.raises(ValueError):
        fp.periodic_limit_distance(e, fp.EmpiricalComplexMeasure(np.zeros(3, complex), 0j), model)


def test_samples_csv(tmp_path, fixed_point):
    p = tmp_path / "xi.csv"
    fixed_point.to_csv(p)
    rows = p.read_text().splitlines()
    assert rows[0] == "re,im" and len(rows) == fixed_point.samples.size + 1
