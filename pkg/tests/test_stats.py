import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from fragtree import laws, simulate as sm, spectral as sp, stats


@pytest.fixture(scope="module")
def quad9_model():
    law = laws.quad(9)
    return sp.mean_expansion(law, sp.find_roots(law))


def test_calibrated_thresholds_are_plausible():
    ks, ku = stats.calibrate_normal_thresholds(2000, reps=100, seed=1)
    # asymptotic 99% KS quantile is 1.63 / sqrt(n)
    assert ks == pytest.approx(1.63 / math.sqrt(2000), rel=0.25)
    assert 0 < ku < 1


def test_clt_on_normal_data_passes():
    law = laws.binary()
    model = sp.mean_expansion(law, sp.find_roots(law))
    model.beta = 8 * math.log(2) - 5
    x = 1e4
    raw = x / model.alpha + math.sqrt(model.beta * x) * np.random.default_rng(0).standard_normal(10**4)
    e = sm.SimulationEnsemble(law, x, raw.size, 0, None, raw)
    rec = stats.clt_test(e, model)
    assert rec.passed and rec.statistic < 0.02


def test_clt_rejects_periodic(quad9_model):
    e = sm.SimulationEnsemble(laws.quad(9), 10.0, 3, 0, None, np.ones(3))
    with pytest.raises(stats.PhaseMismatch):
        stats.clt_test(e, quad9_model)


XS = np.geomspace(10, 1e4, 8)


def test_selects_linear_for_binary_simulation():
    vs = [sm.ensemble(laws.binary(), x, 1500, master_seed=i).variance for i, x in enumerate(XS)]
    fit = stats.variance_scaling_fit(XS, vs, beta_reference=8 * math.log(2) - 5)
    assert fit.selected == "x"
    assert fit.fits["x"]["coefficients"][0] == pytest.approx(8 * math.log(2) - 5, rel=0.15)


def test_selects_x_ln_x_and_periodic(quad9_model):
    noise = 1 + 0.01 * np.random.default_rng(2).standard_normal(XS.size)
    assert stats.variance_scaling_fit(XS, 0.3 * XS * np.log(XS) * noise).selected == "x_ln_x"
    lam = quad9_model.lambda2
    v = XS ** (2 * lam.real) * (0.7 + 0.2 * np.cos(2 * lam.imag * np.log(XS) + 1)) * noise
    assert stats.variance_scaling_fit(XS, v, lambda2=lam).selected == "periodic"


@given(st.floats(1e-3, 1e3))
def test_selection_is_scale_equivariant(c):
    v = 0.5 * XS * (1 + 0.05 * np.sin(np.arange(XS.size)))
    a = stats.variance_scaling_fit(XS, v)
    b = stats.variance_scaling_fit(XS, c * v)
    assert a.selected == b.selected
    for k in a.fits:
        assert np.allclose(np.array(b.fits[k]["coefficients"]), c * np.array(a.fits[k]["coefficients"]), rtol=1e-8)


def test_insufficient_range():
    with pytest.raises(stats.InsufficientRange):
        stats.variance_scaling_fit(np.geomspace(10, 1e3, 10), np.ones(10))
    with pytest.raises(stats.InsufficientRange):
        stats.variance_scaling_fit(np.geomspace(10, 1e5, 5), np.ones(5))


def test_phase_spread_grid():
    xs = stats.phase_spread_grid(3.0, 2.0, periods=3, per_period=8)
    assert xs.size == 24
    assert np.allclose(np.diff(2.0 * np.log(xs)), 2 * math.pi / 8)


def test_oscillation_probe_recovers_gamma(quad9_model):
    m = quad9_model
    lam, g = m.lambda2, m.gamma
    xs = stats.phase_spread_grid(3.0, lam.imag, 3, 8)
    se = 0.01 * xs ** lam.real
    rng = np.random.default_rng(4)
    means = xs / m.alpha + (g * xs**lam).real + se * rng.standard_normal(xs.size)
    fit = stats.oscillation_probe(xs, means, se, m)
    assert fit.conclusive
    assert fit.amplitude == pytest.approx(abs(g), rel=0.05)
    assert fit.phase == pytest.approx(np.angle(g), abs=0.05)
    assert fit.free_tau == pytest.approx(lam.imag, rel=0.01)


def test_oscillation_absent_is_inconclusive(quad9_model):
    m = quad9_model
    xs = stats.phase_spread_grid(3.0, m.lambda2.imag, 3, 8)
    se = 0.5 * xs ** m.lambda2.real
    means = xs / m.alpha + se * np.random.default_rng(0).standard_normal(xs.size)
    fit = stats.oscillation_probe(xs, means, se, m, free_frequency=False)
    assert not fit.conclusive


def test_report_json_roundtrip():
    rep = stats.VerificationReport("binary", "abc", "Normal", "Normal")
    rep.records.append(stats.TestRecord("t", np.float64(0.1), 0.2, np.bool_(True), [10], [1], {"z": 1 + 2j}))
    rep.records.append(stats.TestRecord("u", None, None, None))
    d = json.loads(rep.to_json())
    assert d["passed"] is True
    assert d["records"][0]["details"]["z"] == {"re": 1.0, "im": 2.0}
    rep.records.append(stats.TestRecord("v", 1.0, 0.5, False))
    assert not rep.passed


def test_fit_csv(tmp_path):
    stats.write_fit_csv(tmp_path / "f.csv", [1.0, 2.0], [3.0, 4.0], {"x": [3.1, 3.9]})
    assert (tmp_path / "f.csv").read_text().splitlines() == ["x,observed,x", "1.0,3.0,3.1", "2.0,4.0,3.9"]
