import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sde_rtm import (
    DegenerateDataError,
    ErrorRow,
    ErrorTable,
    SchemeKind,
    SeedPolicy,
    blowup_demo,
    fit_rate,
    make_builtin,
    moment_experiment,
    simulate_terminals,
    strong_error_experiment,
)
from tests.conftest import make_zero_problem

RTM = SchemeKind.RANDOMIZED_TAMED_MILSTEIN
TM = SchemeKind.TAMED_MILSTEIN


def synthetic_table(ns, errors, horizon=1.0, p=2.0):
    rows = tuple(
        ErrorRow(level=int(np.log2(n)), n=n, dt=horizon / n, lp_error=e,
                 paths=100, p=p, stderr=0.0, overflowed=0)
        for n, e in zip(ns, errors)
    )
    return ErrorTable(rows, "exact", p)


# --- fit_rate ----------------------------------------------------------------

def test_fit_rate_order_one():
    fit = fit_rate(synthetic_table([2, 4, 8], [0.5, 0.25, 0.125]))
    assert fit.slope == pytest.approx(1.0, rel=1e-12)
    assert fit.r_squared == pytest.approx(1.0, abs=1e-12)


def test_fit_rate_order_two():
    fit = fit_rate(synthetic_table([2, 4], [0.25, 0.0625]))
    assert fit.slope == pytest.approx(2.0, rel=1e-12)


def test_fit_rate_constant_errors():
    fit = fit_rate(synthetic_table([2, 4, 8], [0.3, 0.3, 0.3]))
    assert fit.slope == pytest.approx(0.0, abs=1e-12)


@settings(max_examples=50)
@given(
    slope=st.floats(min_value=0.1, max_value=3.0),
    scale=st.floats(min_value=1e-3, max_value=1e3),
    count=st.integers(min_value=2, max_value=8),
)
def test_fit_rate_exact_on_power_laws(slope, scale, count):
    ns = [2 ** (k + 1) for k in range(count)]
    errors = [scale * (1.0 / n) ** slope for n in ns]
    fit = fit_rate(synthetic_table(ns, errors))
    assert fit.slope == pytest.approx(slope, rel=1e-10)
    assert fit.r_squared >= 1.0 - 1e-10


def test_fit_rate_degenerate_inputs():
    with pytest.raises(DegenerateDataError):
        fit_rate(synthetic_table([2], [0.5]))
    with pytest.raises(DegenerateDataError):
        fit_rate(synthetic_table([2, 4], [0.5, 0.0]))
    with pytest.raises(DegenerateDataError):
        fit_rate(synthetic_table([2, 4], [0.5, float("inf")]))


# --- strong error experiment -------------------------------------------------

def test_zero_problem_zero_error():
    problem = make_builtin("gbm", a=0.0, sigma=0.0, x0=1.0)
    table = strong_error_experiment(problem, TM, [2, 3, 4], "exact", 2.0, 40,
                                    SeedPolicy(5))
    for row in table.rows:
        assert row.lp_error == 0.0
        assert row.overflowed == 0
    assert table.reference == "exact"


def test_rows_sorted_and_labelled():
    problem = make_builtin("gbm")
    table = strong_error_experiment(problem, TM, [5, 3, 4], 7, 2.0, 30,
                                    SeedPolicy(5))
    assert [row.level for row in table.rows] == [3, 4, 5]
    assert [row.n for row in table.rows] == [8, 16, 32]
    assert table.reference == "level 7"


def test_gbm_exact_reference_rms_small():
    # fine-level tamed Milstein on a shared path vs the closed form
    problem = make_builtin("gbm", a=0.5, sigma=0.5, x0=1.0)
    table = strong_error_experiment(problem, TM, [12], "exact", 2.0, 500,
                                    SeedPolicy(99))
    assert table.rows[0].lp_error <= 5e-3
    assert table.rows[0].paths == 500


def test_worker_count_does_not_change_results(fhn):
    kwargs = dict(levels=[3, 4], ref=7, p=2.0, paths=600, policy=SeedPolicy(2))
    serial = strong_error_experiment(fhn, RTM, threads=1, **kwargs)
    parallel = strong_error_experiment(fhn, RTM, threads=3, **kwargs)
    assert serial == parallel


def test_statistical_monotonicity_across_levels():
    problem = make_builtin("gbm", a=0.5, sigma=0.5, x0=1.0)
    wins = 0
    for seed in range(10):
        table = strong_error_experiment(problem, TM, [3, 6], "exact", 2.0, 64,
                                        SeedPolicy(1000 + seed))
        coarse, fine = table.rows
        wins += coarse.lp_error >= fine.lp_error
    assert wins >= 8


def test_doubling_paths_is_stable():
    problem = make_builtin("gbm", a=0.5, sigma=0.5, x0=1.0)
    small = strong_error_experiment(problem, TM, [5], "exact", 2.0, 400,
                                    SeedPolicy(31)).rows[0]
    large = strong_error_experiment(problem, TM, [5], "exact", 2.0, 800,
                                    SeedPolicy(31)).rows[0]
    assert abs(small.lp_error - large.lp_error) < 3.0 * small.stderr


def test_overflowing_paths_excluded_and_counted():
    # untamed Euler on the double-well problem at level 0: one giant step
    # sends some paths past the overshoot threshold
    from sde_rtm.analysis import _double_well_problem

    problem = _double_well_problem()
    table = strong_error_experiment(problem, SchemeKind.EULER_MARUYAMA,
                                    [0, 1], 10, 2.0, 200, SeedPolicy(12))
    for row in table.rows:
        assert row.paths + row.overflowed == 200
        assert np.isfinite(row.lp_error)


def test_experiment_validation(fhn):
    policy = SeedPolicy(1)
    with pytest.raises(ValueError):
        strong_error_experiment(fhn, RTM, [4, 5], 5, 2.0, 10, policy)
    with pytest.raises(ValueError):
        strong_error_experiment(fhn, RTM, [], 5, 2.0, 10, policy)
    with pytest.raises(ValueError):
        strong_error_experiment(fhn, RTM, [3], 5, 0.5, 10, policy)
    with pytest.raises(ValueError):
        strong_error_experiment(fhn, RTM, [3], "exact", 2.0, 10, policy)
    with pytest.raises(ValueError):
        strong_error_experiment(fhn, RTM, [3], "almost", 2.0, 10, policy)


# --- moment experiment -------------------------------------------------------

def test_zero_problem_moments_constant():
    problem = make_zero_problem(d=2)
    table = moment_experiment(problem, SchemeKind.TAMED_EULER, 4.0, [2, 3], 20,
                              SeedPolicy(7))
    expected = float(np.sum(problem.initial_state ** 2) ** 2)
    for row in table.rows:
        assert row.moment == pytest.approx(expected, rel=1e-12)
    assert table.overflows == {2: 0, 3: 0}


def test_moment_rows_cover_every_grid_point(fhn):
    table = moment_experiment(fhn, RTM, 4.0, [3], 10, SeedPolicy(7))
    indices = [row.t_index for row in table.rows]
    assert indices == list(range(9))
    assert table.sup_moment(3) == max(row.moment for row in table.rows)


def test_moment_overflow_counting():
    def drift(t, x):
        xa = np.asarray(x, dtype=float)
        return xa ** 3

    from sde_rtm import NoiseStructure, SdeProblem

    explosive = SdeProblem(
        d=1, m=1, horizon=1.0, initial_state=[2.0],
        drift=drift,
        diffusion=lambda t, x: np.zeros(np.asarray(x).shape + (1,)),
        milstein_tensor=lambda t, x: np.zeros(np.asarray(x).shape + (1, 1)),
        noise_structure=NoiseStructure.SCALAR, xi=2.0, beta=1.0,
    )
    table = moment_experiment(explosive, SchemeKind.EULER_MARUYAMA, 2.0, [4],
                              5, SeedPolicy(3))
    assert table.overflows[4] == 5
    assert table.sup_moment(4) == float("inf")


def test_single_path_moments_well_formed():
    problem = make_builtin("gbm")
    table = moment_experiment(problem, TM, 2.0, [3], 1, SeedPolicy(3))
    assert len(table.rows) == 9
    assert all(np.isfinite(row.moment) for row in table.rows)


# --- blow-up demo ------------------------------------------------------------

def test_blowup_demo_tables_well_formed():
    demo = blowup_demo([4], 50, SeedPolicy(17))
    assert set(demo) == {SchemeKind.EULER_MARUYAMA, SchemeKind.TAMED_EULER}
    for table in demo.values():
        assert table.q == 2.0
        assert [row.t_index for row in table.rows] == list(range(17))
    tamed = demo[SchemeKind.TAMED_EULER]
    assert tamed.sup_moment(4) <= 100.0
    assert tamed.overflows[4] == 0


# --- simulate_terminals ------------------------------------------------------

def test_simulate_terminals_matches_strong_error_reference():
    problem = make_builtin("gbm", a=0.0, sigma=0.0, x0=3.0)
    terminals, overflow = simulate_terminals(problem, TM, 4, 25, SeedPolicy(4))
    assert terminals == pytest.approx(np.full((25, 1), 3.0))
    assert np.all(overflow == -1)
