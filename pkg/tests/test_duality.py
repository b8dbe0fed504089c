import math

import numpy as np
import pytest

from consumption_duality.duality import (
    calibrate,
    calibrate_y,
    candidate_consumption,
    conjugacy_scan,
    duality_report,
    optimal_wealth_from_dual,
    plan_value,
    solve_dual,
    solve_primal_direct,
)
from consumption_duality.errors import CalibrationError, DualInfiniteError, NoDeflatorError, OracleError, StageError
from consumption_duality.tree import EventTree, build_recombining, random_tree
from consumption_duality.utility import UtilitySpec
from oracles import one_period_dual_grid, two_control_grid

LOG = UtilitySpec.log()
SQRT = UtilitySpec.power(0.5)
V_BIN = -2 * math.log(2) - 2 - 0.5 * math.log(8 / 9)
U_BIN = -3.5 * math.log(2) + math.log(3)


@pytest.fixture
def binomial():
    return build_recombining(2, 1, [2.0, 0.5], [0.5, 0.5])


def test_binomial_dual(binomial):
    sol = solve_dual(binomial, LOG, 2.0)
    np.testing.assert_allclose(sol.Z, [1, 2 / 3, 4 / 3], rtol=1e-14)
    assert sol.value == pytest.approx(V_BIN, abs=1e-14)
    assert sol.value == pytest.approx(-3.32740, abs=1e-5)
    for y in (0.3, 7.0):
        np.testing.assert_allclose(solve_dual(binomial, LOG, y).Z, sol.Z, rtol=1e-14)


def test_trinomial_dual_matches_grid():
    tri = build_recombining(3, 1, [1.5, 1.0, 0.5], [0.2, 0.5, 0.3])
    sol = solve_dual(tri, SQRT, 1.0)
    grid_val, grid_q = one_period_dual_grid(tri, SQRT.V, 1.0)
    assert sol.value == pytest.approx(grid_val, abs=1e-7)
    assert sol.value <= grid_val + 1e-12
    kids = tri.children[0]
    assert np.all(sol.q[kids] > 1e-6)  # interior minimiser
    np.testing.assert_allclose(sol.q[kids], grid_q, atol=1e-4)


def test_candidate_consumption(binomial):
    sol = solve_dual(binomial, LOG, 2.0)
    np.testing.assert_allclose(candidate_consumption(binomial, LOG, 2.0, sol.Z), [0.5, 0.75, 0.375], rtol=1e-14)
    tree = build_recombining(2, 2, [2.0, 0.5], [0.5, 0.5], alpha=0.3)
    Z = solve_dual(tree, SQRT, 1.5).Z
    np.testing.assert_allclose(candidate_consumption(tree, SQRT, 1.5, Z), (tree.gamma * 1.5 * Z) ** -2.0, rtol=1e-14)


def test_calibration_examples(binomial):
    assert calibrate_y(binomial, LOG, 1.0) == pytest.approx(2.0, abs=1e-12)
    assert calibrate_y(binomial, LOG, 2.0) == pytest.approx(1.0, abs=1e-12)
    # power p = 0.5, complete one-period tree: c Z = (gamma y)^-2 / Z, so y = sqrt(S / x)
    tree = build_recombining(2, 1, [1.3, 0.8], [0.6, 0.4], alpha=0.2)
    Z = solve_dual(tree, SQRT, 1.0).Z
    S = float(np.dot(tree.path_prob, tree.gamma**-2.0 / Z)) * tree.dt
    x = 1.7
    assert calibrate_y(tree, SQRT, x) == pytest.approx(math.sqrt(S / x), rel=1e-9)


def test_calibration_error(binomial):
    with pytest.raises(CalibrationError):
        calibrate(binomial, LOG, 1e12)


def test_primal_binomial(binomial):
    sol = solve_primal_direct(binomial, LOG, 1.0)
    assert sol.value == pytest.approx(U_BIN, abs=1e-12)
    np.testing.assert_allclose(sol.c, [0.5, 0.75, 0.375], rtol=1e-10)

    def u(c0, h):
        return np.log(c0) + 0.5 * np.log(1 - c0 + h) + 0.5 * np.log(1 - c0 - 0.5 * h)

    grid_max = two_control_grid(u, (1e-3, -0.99), (0.999, 1.99))
    assert grid_max <= sol.value + 1e-12
    assert grid_max == pytest.approx(sol.value, abs=1e-5)


def test_primal_scaling_and_degenerate(binomial):
    u1 = solve_primal_direct(binomial, LOG, 1.0).value
    u2 = solve_primal_direct(binomial, LOG, 2.0).value
    assert u2 == pytest.approx(u1 + 2 * math.log(2), abs=1e-12)
    assert plan_value(binomial, LOG, np.zeros(3)) == -math.inf
    with pytest.raises(OracleError):
        solve_primal_direct(random_tree(np.random.default_rng(0), 5, 2), LOG, 1.0, method="newton")


def test_optimal_wealth(binomial):
    sol = solve_dual(binomial, LOG, 2.0)
    c = candidate_consumption(binomial, LOG, 2.0, sol.Z)
    assert optimal_wealth_from_dual(binomial, c, sol.Z)[0] == pytest.approx(1.0, abs=1e-15)
    np.testing.assert_array_equal(optimal_wealth_from_dual(binomial, np.zeros(3), sol.Z), 0.0)
    single = EventTree([0], [-1], [1.0], [[1.0]], dt=0.5)
    assert optimal_wealth_from_dual(single, [4.0], [1.0])[0] == pytest.approx(2.0)


def test_report_binomial(binomial):
    rep = duality_report(binomial, LOG, 1.0)
    assert rep.y_star == pytest.approx(2.0, abs=1e-12)
    assert abs(rep.conjugacy_gap) <= 1e-8
    assert rep.pdc_max_residual <= 1e-10
    assert rep.budget_residual <= 1e-10
    assert rep.martingale_max_residual <= 1e-10
    assert rep.u_direct == pytest.approx(U_BIN, abs=1e-10)
    assert all(v <= 1e-6 for v in rep.derivative_identity_residuals.values())
    # x u'(x) = sum of clock weights = 2 for log utility
    h = 1e-4
    du = (solve_primal_direct(binomial, LOG, 1 + h).value - solve_primal_direct(binomial, LOG, 1 - h).value) / (2 * h)
    assert du == pytest.approx(2.0, abs=1e-7)
    assert binomial.clock_mass == 2.0
    assert rep.hedge_admissible and rep.potential_decreasing


def test_report_stage_label():
    arb = build_recombining(2, 1, [2.0, 1.1], [0.5, 0.5])
    with pytest.raises(StageError) as err:
        duality_report(arb, LOG, 1.0)
    assert err.value.stage == "calibrate_y" and isinstance(err.value.cause, NoDeflatorError)


def test_dual_errors():
    tree = random_tree(np.random.default_rng(2), 2, 3)
    with pytest.raises(DualInfiniteError):
        solve_dual(tree, SQRT, 1.0, max_iter=1, tol=1e-15)


def test_conjugacy_scan_binomial(binomial):
    x = np.array([0.5, 1.0, 2.0])
    y = np.geomspace(0.1, 20, 400)
    scan = conjugacy_scan(binomial, LOG, x, y)
    ratio = y[1] / y[0]
    for xi, arg in zip(x, scan.grid_argmin):
        assert abs(math.log(arg / (2 / xi))) <= math.log(ratio)
    assert np.all(scan.grid_gap >= -1e-12)
    assert np.all(np.abs(scan.solved_gap) <= 1e-10)
    assert np.all(np.diff(scan.u) > 0) and np.all(np.diff(scan.v) < 0)
    assert np.min(np.diff(scan.v, 2)) >= -1e-9


def test_uniqueness_from_random_starts():
    rng = np.random.default_rng(11)
    for spec in (LOG, SQRT, UtilitySpec.power(-1)):
        tree = random_tree(rng, 2, 3, alpha=0.1)
        a = solve_dual(tree, spec, 1.3, rng=np.random.default_rng(1))
        b = solve_dual(tree, spec, 1.3, rng=np.random.default_rng(2))
        assert np.max(np.abs(a.Z - b.Z)) <= 1e-7


def test_incomplete_strong_duality():
    rng = np.random.default_rng(5)
    for spec in (LOG, SQRT, UtilitySpec.power(-1)):
        tree = random_tree(rng, 3, 3, alpha=0.05)
        cal = calibrate(tree, spec, 1.4)
        u = solve_primal_direct(tree, spec, 1.4).value
        assert abs(u - cal.dual.value - 1.4 * cal.y) <= 1e-7


def test_primal_routes_agree():
    rng = np.random.default_rng(17)
    for spec in (LOG, SQRT, UtilitySpec.power(-1), UtilitySpec.power(0.9)):
        tree = random_tree(rng, 2, 3, alpha=0.2, dt=0.5)
        a = solve_primal_direct(tree, spec, 0.8, method="backward")
        b = solve_primal_direct(tree, spec, 0.8, method="newton")
        assert a.value == pytest.approx(b.value, abs=1e-9)
        np.testing.assert_allclose(a.c, b.c, rtol=1e-5)


def test_backward_route_on_wide_spread():
    """Optimal consumption spanning dozens of decades stays well resolved."""
    rng = np.random.default_rng(21)
    tree = random_tree(rng, 3, 2, alpha=0.5, dt=0.5, spread=0.9)
    spec = UtilitySpec.power(0.9)
    sol = solve_primal_direct(tree, spec, 0.1)
    assert np.all(sol.c > 0) and np.all(np.isfinite(sol.c))
    cal = calibrate(tree, spec, 0.1)
    assert sol.value == pytest.approx(cal.dual.value + 0.1 * cal.y, abs=1e-9)


def test_tabulated_utility_uses_newton(binomial):
    xs = np.logspace(-3, 3, 400)
    tab = UtilitySpec.tabulated(xs, np.log(xs))
    assert solve_primal_direct(binomial, tab, 1.0).value == pytest.approx(U_BIN, abs=1e-4)
    with pytest.raises(OracleError):
        solve_primal_direct(binomial, tab, 1.0, method="backward")


def test_newton_and_projected_gradient_agree():
    rng = np.random.default_rng(8)
    for spec in (LOG, SQRT, UtilitySpec.power(-1)):
        tree = random_tree(rng, 2, 3, alpha=0.1)
        a = solve_dual(tree, spec, 0.7)
        b = solve_dual(tree, spec, 0.7, method="spg")
        assert a.value == pytest.approx(b.value, rel=1e-9, abs=1e-12)
        assert a.value <= b.value + 1e-12


def test_power_dual_minimiser_independent_of_y():
    """Homogeneity of power conjugates: the optimal Z does not move with y."""
    rng = np.random.default_rng(41)
    tree = random_tree(rng, 2, 3, alpha=0.5, dt=0.5)
    spec = UtilitySpec.power(0.9)
    zs = [solve_dual(tree, spec, y).Z for y in (1e-2, 1.0, 1e2)]
    for Z in zs[1:]:
        np.testing.assert_allclose(Z, zs[0], rtol=1e-6)
