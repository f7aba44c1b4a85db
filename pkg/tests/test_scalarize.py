import numpy as np
import pytest

from moco import problems as P
from moco import scalarize as S
from moco.errors import BudgetExceededError, ConfigurationError, DomainError, StateError


def test_ws_axis_preference():
    spec = S.ScalarizationSpec(method="ws")
    assert S.scalarize((3.7, 9.9), (1.0, 0.0), spec) == pytest.approx(3.7)


def test_tch_hand_case():
    spec = S.ScalarizationSpec(method="tch", ideal=0.0, utopia_offset=0.0)
    assert S.scalarize((2.0, 1.0), (0.3, 0.7), spec) == pytest.approx(0.7)


def test_pbi_collinear():
    for theta in (0.0, 1.0, 5.0):
        spec = S.ScalarizationSpec(method="pbi", ideal=0.0, pbi_theta=theta)
        assert S.scalarize((2.0, 0.0), (1.0, 0.0), spec) == pytest.approx(2.0)


def test_ipbi_hand_case():
    spec = S.ScalarizationSpec(method="ipbi", ideal=0.0, nadir=(4.0, 4.0), pbi_theta=0.0)
    # d1 along lambda=(1,0): |nadir_x - F_x| = 2
    assert S.scalarize((2.0, 4.0), (1.0, 0.0), spec) == pytest.approx(-2.0)


def test_ipbi_requires_nadir():
    spec = S.ScalarizationSpec(method="ipbi", ideal=0.0, nadir=None)
    with pytest.raises(StateError):
        S.scalarize((1.0, 1.0), (0.5, 0.5), spec)


def test_mtch_rejects_zero_weight():
    spec = S.ScalarizationSpec(method="mtch", ideal=0.0)
    with pytest.raises(DomainError):
        S.scalarize((1.0, 1.0), (1.0, 0.0), spec)


def test_tch_nonnegative_and_zero_at_utopia():
    rng = np.random.default_rng(0)
    spec = S.ScalarizationSpec(method="tch", ideal=1.0, utopia_offset=0.25)
    for _ in range(100):
        F = rng.uniform(0.75, 5.0, size=3)
        lam = S.sample_preference(3, rng)
        assert S.scalarize(F, lam, spec) >= 0.0
    utopia = np.full(3, 0.75)
    assert S.scalarize(utopia, np.array([0.2, 0.3, 0.5]), spec) == pytest.approx(0.0)
    # zero value forces F to sit at the utopia point wherever lambda > 0
    off = utopia.copy()
    off[1] += 1e-3
    assert S.scalarize(off, np.array([0.2, 0.3, 0.5]), spec) > 0.0
    # a coordinate with zero weight is unconstrained
    free = utopia.copy()
    free[0] += 10.0
    assert S.scalarize(free, np.array([0.0, 0.4, 0.6]), spec) == pytest.approx(0.0)


def test_ws_scaling_keeps_ranking():
    rng = np.random.default_rng(8)
    spec = S.ScalarizationSpec(method="ws")
    F = rng.uniform(size=(20, 2))
    lam = np.array([0.3, 0.7])
    base = S.scalarize_batch(F, lam, spec)
    for c in (0.1, 2.0, 17.0):
        scaled = S.scalarize_batch(F, c * lam, spec)
        np.testing.assert_allclose(scaled, c * base, rtol=1e-12)
        assert np.array_equal(np.argsort(scaled), np.argsort(base))


def test_maximization_negates_before_aggregation():
    # knapsack-style: ideal is an upper bound, cost grows as value falls
    spec = S.ScalarizationSpec(method="tch", ideal=(10.0, 10.0), utopia_offset=0.5, sense="max")
    lo = S.scalarize((9.0, 9.0), (0.5, 0.5), spec)
    hi = S.scalarize((2.0, 9.0), (0.5, 0.5), spec)
    assert lo < hi
    assert lo == pytest.approx(0.5 * (10.0 - 9.0 + 0.5))


def test_sample_preference_on_simplex_and_seeded():
    rng = np.random.default_rng(123)
    draws = np.array([S.sample_preference(4, rng) for _ in range(500)])
    assert np.all(np.abs(draws.sum(axis=1) - 1.0) <= 1e-9)
    assert (draws >= 0).all()
    again = np.array([S.sample_preference(4, np.random.default_rng(123)) for _ in range(1)])
    np.testing.assert_array_equal(draws[0], again[0])


def test_sample_preference_mean_matches_flat_dirichlet():
    rng = np.random.default_rng(7)
    draws = np.array([S.sample_preference(2, rng) for _ in range(100_000)])
    assert abs(draws[:, 0].mean() - 0.5) < 0.01


@pytest.mark.parametrize("m,p,count", [(3, 13, 105), (3, 44, 1035), (3, 140, 10011), (10, 4, 715)])
def test_das_dennis_counts(m, p, count):
    w = S.das_dennis_weights(m, p)
    assert w.shape == (count, m)
    assert np.all(np.abs(w.sum(axis=1) - 1.0) <= 1e-9)


def test_das_dennis_m2_p4_lattice():
    w = S.das_dennis_weights(2, 4)
    expected = [(0.0, 1.0), (0.25, 0.75), (0.5, 0.5), (0.75, 0.25), (1.0, 0.0)]
    assert [tuple(row) for row in w] == expected


def test_das_dennis_cap_refusal():
    with pytest.raises(BudgetExceededError):
        S.das_dennis_weights(10, 40, max_count=10_000)


def test_preference_grid_endpoints():
    g = S.preference_grid(101)
    assert g.shape == (101, 2)
    assert tuple(g[0]) == (0.0, 1.0)
    assert tuple(g[-1]) == (1.0, 0.0)


def test_as_preference_validation():
    with pytest.raises(DomainError):
        S.as_preference([-0.1, 1.1])
    with pytest.raises(DomainError):
        S.as_preference([0.5, 0.6])
    ok = S.as_preference([0.25, 0.75], m=2)
    assert ok.sum() == 1.0


def test_ideal_nadir_fixed_zero():
    z, nad = S.ideal_nadir(P.sample_instance("motsp", 5, 2, seed=0), "fixed_zero")
    np.testing.assert_array_equal(z, [0, 0])
    assert nad is None


def test_ideal_nadir_from_archive():
    from moco.metrics import ParetoArchive
    arch = ParetoArchive()
    arch.offer((1, 3))
    arch.offer((2, 2))
    z, nad = S.ideal_nadir(mode="from_archive", archive=arch)
    np.testing.assert_array_equal(z, [1, 2])
    np.testing.assert_array_equal(nad, [2, 3])
    with pytest.raises(StateError):
        S.ideal_nadir(mode="from_archive", archive=ParetoArchive())


def test_greedy_bound_dominates_enumerated_front():
    inst = P.sample_instance("mokp", 15, 2, seed=2)
    ub = S.fractional_knapsack_bound(inst)
    front = P.enumerate_exact(inst).objectives_array()
    assert (front <= ub[None, :] + 1e-9).all()


def test_export_weights_csv(tmp_path):
    w = S.das_dennis_weights(3, 4)
    path = tmp_path / "w.csv"
    S.export_weights_csv(path, w)
    rows = [line.split(",") for line in path.read_text().strip().splitlines()]
    assert len(rows) == len(w)
    recovered = np.array([[float(v) for v in row] for row in rows])
    np.testing.assert_array_equal(recovered, w)


def test_default_spec_choices():
    assert S.default_spec("motsp", 2).method == "tch"
    assert S.default_spec("motsp", 3).method == "ipbi"
    assert S.default_spec("mokp", 2).sense == "max"


def test_tch_minimizer_recovers_pareto_points_small():
    """Every enumerated Pareto point is a tch-minimizer for some lattice weight."""
    inst = P.sample_instance("motsp", 7, 2, seed=0)
    front = P.enumerate_exact(inst).objectives_array()
    weights = S.das_dennis_weights(2, 200)
    ideal = front.min(axis=0)
    spec = S.ScalarizationSpec(method="tch", ideal=ideal, utopia_offset=0.1)
    recovered = set()
    for lam in weights:
        vals = S.scalarize_batch(front, lam, spec)
        best = vals.min()
        for j in np.flatnonzero(np.isclose(vals, best, rtol=0, atol=1e-12)):
            recovered.add(j)
    assert recovered == set(range(len(front)))
