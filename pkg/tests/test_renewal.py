import math

import numpy as np
import pytest

from fragtree import laws, renewal, spectral as sp, transforms as tr


@pytest.fixture(scope="module")
def binary_grid():
    return renewal.discretize_measure(laws.binary(), h=1e-3, t_max=7)


@pytest.mark.parametrize("law", [laws.binary(), laws.mary(4), laws.quad(3), laws.beta(2.5, 0.7),
                                 laws.deterministic([0.2, 0.3, 0.5])], ids=str)
def test_measure_masses(law):
    g = renewal.discretize_measure(law, h=1e-2, t_max=40)
    assert np.all(g.mu_mass >= 0)
    assert g.total_mass == pytest.approx(law.b)
    assert g.tilt_check == pytest.approx(1.0, abs=2e-4)


def test_monte_carlo_measure_matches_closed_form(rng):
    law = laws.beta(2.5, 0.7)
    exact = renewal.discretize_measure(law, h=0.05, t_max=10)
    mc = renewal.discretize_measure(law, h=0.05, t_max=10, n_samples=200000, rng=rng, closed_form=False)
    assert mc.total_mass == pytest.approx(tr.phi(law, 0).value.real)
    assert abs(mc.tilt_check - 1) <= 3 * 1e-3 + mc.tilt_error
    cdf_e, cdf_m = np.cumsum(exact.mu_mass), np.cumsum(mc.mu_mass)
    assert np.max(np.abs(cdf_e - cdf_m)) < 0.02


def test_empirical_measure(rng):
    law = laws.empirical(laws.sample_splits(laws.mary(3), 1000, rng))
    g = renewal.discretize_measure(law, h=0.01, t_max=20, n_samples=10**5, rng=rng)
    assert g.total_mass == pytest.approx(3)
    assert g.tilt_check == pytest.approx(1, abs=0.02)


def test_binary_mean_matches_closed_form(binary_grid):
    sol = renewal.mean_renewal(binary_grid)
    x = np.linspace(2, 100, 50)
    rel = np.abs(sol(np.log(x)) - (2 * x - 1)) / (2 * x - 1)
    assert rel.max() <= 0.02
    assert np.all(np.diff(sol.values) >= 0)
    assert np.all(sol(np.array([-1.0, -0.1])) == 0)


def test_discretization_error_is_first_order():
    errs = []
    for h in (2e-3, 1e-3, 5e-4):
        sol = renewal.mean_renewal(renewal.discretize_measure(laws.binary(), h=h, t_max=5))
        x = np.array([5.0, 50.0])
        errs.append(np.max(np.abs(sol(np.log(x)) - (2 * x - 1)) / (2 * x - 1)))
    assert errs[1] / errs[0] == pytest.approx(0.5, abs=0.05)
    assert errs[2] / errs[1] == pytest.approx(0.5, abs=0.05)


def test_zero_forcing_gives_zero(binary_grid):
    sol = renewal.solve_renewal(binary_grid, lambda t: np.zeros_like(t))
    assert np.all(sol.values == 0)


def test_deterministic_output(binary_grid):
    a = renewal.mean_renewal(binary_grid).values
    b = renewal.mean_renewal(binary_grid).values
    assert np.array_equal(a, b)


def test_instability_detected():
    g = renewal.discretize_measure(laws.binary(), h=0.01, t_max=5)
    g.mu_mass = g.mu_mass * 50
    with pytest.raises(renewal.InstabilityError):
        renewal.mean_renewal(g)


def test_mary3_growth_rate():
    law = laws.mary(3)
    g = renewal.discretize_measure(law, h=1e-3, t_max=8)
    sol = renewal.mean_renewal(g)
    alpha = sp.mean_expansion(law, sp.find_roots(law)).alpha
    assert sol(8.0) / math.exp(8.0) == pytest.approx(1 / alpha, rel=0.03)


@pytest.mark.parametrize("law", [laws.mary(5), laws.beta(3, 2)], ids=str)
def test_mean_matches_exact_rational_formula(law):
    model = sp.mean_expansion(law, sp.find_roots(law))
    sol = renewal.mean_renewal(renewal.discretize_measure(law, h=1e-3, t_max=6))
    x = np.geomspace(1, math.exp(6), 40)
    assert np.allclose(sol(np.log(x)), model.mean(x), rtol=5e-3)


def test_binary_variance_constant(binary_grid):
    law = laws.binary()
    sol = renewal.variance_renewal(binary_grid, renewal.mean_renewal(binary_grid), law,
                                   np.random.default_rng(0), n_split=10**5)
    assert np.all(sol.values >= -sol.error - 1e-9)
    v = sol(math.log(1e3)) / 1e3
    assert v == pytest.approx(8 * math.log(2) - 5, rel=0.10)


def test_deterministic_variance_forcing_is_exact():
    law = laws.deterministic([1 / 3, 2 / 3])
    g = renewal.discretize_measure(law, h=1e-2, t_max=6)
    sol = renewal.variance_renewal(g, renewal.mean_renewal(g), law, np.random.default_rng(0), n_split=10**5)
    assert np.max(np.abs(sol.error)) < 1e-12


def test_csv_export(tmp_path, binary_grid):
    sol = renewal.mean_renewal(binary_grid)
    p = tmp_path / "m.csv"
    sol.to_csv(p)
    rows = p.read_text().splitlines()
    assert rows[0] == "t,x,value,error_estimate"
    assert len(rows) == sol.t.size + 1
