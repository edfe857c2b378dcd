import numpy as np
import pytest

from doublephase.errors import ValidationError
from doublephase.grids import BoundaryData, Grid
from doublephase.operators import CoefficientField, DoublePhaseParams
from doublephase.studies import (
    StudyTable,
    caccioppoli_study,
    caccioppoli_verdict,
    comparison_study,
    comparison_verdict,
    equivalence_study,
    equivalence_verdict,
    obstacle_approximation_study,
    obstacle_verdict,
    regularization_study,
    regularization_verdict,
    trig_series,
)
from doublephase.variational import ProblemSpec, solve_dirichlet


def smooth_bd():
    return BoundaryData.from_callable(
        lambda pts: 0.5 * pts[:, 0] + 0.3 * pts[:, 1] + 0.2 * np.sin(np.pi * pts[:, 0]) * np.cos(np.pi * pts[:, 1])
    )


def base_spec(p=2.5, q=3.0, a0=1.0, n=17):
    return ProblemSpec(
        grid=Grid((n, n)),
        params=DoublePhaseParams(p, q, coeff=CoefficientField.constant(a0)),
        boundary=smooth_bd(),
    )


class TestTrigSeries:
    def test_deterministic(self):
        g1 = trig_series(42, 2)
        g2 = trig_series(42, 2)
        pts = np.random.default_rng(0).uniform(size=(50, 2))
        np.testing.assert_array_equal(g1(pts), g2(pts))

    def test_bounded_and_smoothish(self):
        g = trig_series(7, 2)
        pts = np.random.default_rng(1).uniform(size=(200, 2))
        assert np.max(np.abs(g(pts))) < 4.0


class TestEquivalence:
    def test_nonlinear_benchmark(self):
        table = equivalence_study(base_spec(), 3)
        assert table.verdict
        d = [row[2] for row in table.rows]
        assert d[0] > d[1] > d[2]
        assert d[2] <= d[0] / 2.0
        hs = [row[0] for row in table.rows]
        assert hs == sorted(hs, reverse=True)

    def test_1d_linear_data_tiny_gap(self):
        spec = ProblemSpec(
            grid=Grid((65,)),
            params=DoublePhaseParams(2.5, 3.0, coeff=CoefficientField.constant(1.0)),
            boundary=BoundaryData.from_callable(lambda pts: pts[:, 0]),
        )
        table = equivalence_study(spec, 2)
        assert all(row[2] <= 1e-6 for row in table.rows)

    def test_laplace_case_discretizations_coincide(self):
        # p = q = 2: on this mesh the P1 stiffness IS the 5-point stencil,
        # so the two routes solve the same discrete system and the gap sits
        # at solver noise for every h
        spec = ProblemSpec(
            grid=Grid((9, 9)),
            params=DoublePhaseParams(2.0, 2.0, coeff=CoefficientField.constant(0.0)),
            boundary=BoundaryData.from_callable(
                lambda pts: pts[:, 0] ** 4 - 6 * pts[:, 0] ** 2 * pts[:, 1] ** 2 + pts[:, 1] ** 4
            ),
        )
        table = equivalence_study(spec, 3)
        assert all(row[2] <= 1e-10 for row in table.rows)

    def test_rejects_nonconstant_coefficient(self):
        coeff = CoefficientField.analytic(
            lambda pts: 0.5 + pts[:, 0],
            lambda pts: np.column_stack([np.ones(pts.shape[0]), np.zeros(pts.shape[0])]),
        )
        spec = ProblemSpec(
            grid=Grid((9, 9)),
            params=DoublePhaseParams(2.0, 2.5, coeff=coeff),
            boundary=smooth_bd(),
        )
        with pytest.raises(ValidationError, match="constant coefficient"):
            equivalence_study(spec, 2)


class TestComparison:
    def test_small_run_passes(self):
        table = comparison_study(base_spec(n=9), 5, seed=3)
        assert table.verdict
        assert len(table.rows) == 5

    def test_viscosity_column_skipped_for_variable_coefficient(self):
        coeff = CoefficientField.analytic(
            lambda pts: 0.5 + 0.25 * pts[:, 0],
            lambda pts: np.column_stack([np.full(pts.shape[0], 0.25), np.zeros(pts.shape[0])]),
        )
        spec = ProblemSpec(
            grid=Grid((9, 9)),
            params=DoublePhaseParams(2.0, 2.2, coeff=coeff),
            boundary=smooth_bd(),
        )
        table = comparison_study(spec, 3, seed=5)
        assert table.verdict
        assert all(np.isnan(row[3]) for row in table.rows)

    def test_reproducible(self):
        t1 = comparison_study(base_spec(n=9), 3, seed=11)
        t2 = comparison_study(base_spec(n=9), 3, seed=11)
        assert t1.rows == t2.rows

    def test_unit_shift_translates_solution_exactly(self):
        # the flux depends on Du only, so g + 1 lifts the solution by 1
        from dataclasses import replace

        base = lambda pts: 0.5 * pts[:, 0] + 0.2 * np.cos(np.pi * pts[:, 1])
        spec1 = replace(base_spec(n=17), boundary=BoundaryData.from_callable(base))
        u1, _ = solve_dirichlet(spec1)
        spec2 = replace(
            spec1, boundary=BoundaryData.from_callable(lambda pts: base(pts) + 1.0)
        )
        u2, _ = solve_dirichlet(spec2)
        assert np.max(np.abs(u2.values - (u1.values + 1.0))) <= 1e-10


class TestCaccioppoli:
    def test_ratios_finite_and_stable(self):
        table = caccioppoli_study(base_spec(n=17), 10, seed=2)
        assert table.verdict
        assert all(np.isfinite(row[4]) for row in table.rows)

    def test_zero_cutoff_against_constant_field(self):
        # u constant: lhs = 0 whatever the cutoff
        spec = ProblemSpec(
            grid=Grid((17, 17)),
            params=DoublePhaseParams(2.0, 3.0, coeff=CoefficientField.constant(0.5)),
            boundary=BoundaryData.constant(2.0),
        )
        table = caccioppoli_study(spec, 4, seed=8)
        assert all(row[2] <= 1e-20 for row in table.rows)


class TestRegularization:
    def test_monotone_and_decreasing(self):
        spec = ProblemSpec(
            grid=Grid((17, 17)),
            params=DoublePhaseParams(2.0, 2.5, coeff=CoefficientField.constant(1.0)),
            boundary=smooth_bd(),
        )
        table = regularization_study(spec, [1e-1, 1e-2, 1e-3])
        assert table.verdict
        sups = [row[1] for row in table.rows if row[0] > 0]
        assert sups[0] > sups[1] > sups[2]

    def test_exponent_precondition(self):
        # q/p = 1.4 > p = 1.25 violates the regularized-limit bound
        spec = ProblemSpec(
            grid=Grid((9, 9)),
            params=DoublePhaseParams(1.25, 1.75, coeff=CoefficientField.constant(0.5)),
            boundary=smooth_bd(),
        )
        with pytest.raises(ValidationError):
            regularization_study(spec, [1e-1, 1e-2])

    def test_epsilons_must_decrease(self):
        spec = ProblemSpec(
            grid=Grid((9, 9)),
            params=DoublePhaseParams(2.0, 2.5, coeff=CoefficientField.constant(1.0)),
            boundary=smooth_bd(),
        )
        with pytest.raises(ValidationError):
            regularization_study(spec, [1e-2, 1e-1])

    def test_1d_values_match_flux_inversion_oracle(self):
        from oracles import flux_inversion_solution
        from dataclasses import replace

        g = Grid((129,))
        spec = ProblemSpec(
            grid=g,
            params=DoublePhaseParams(2.0, 2.5, coeff=CoefficientField.constant(1.0)),
            boundary=BoundaryData.from_callable(lambda pts: pts[:, 0]),
        )
        table = regularization_study(spec, [1e-1, 1e-2, 1e-3])
        assert table.verdict
        for eps in (1e-1, 1e-2):
            u_eps, _ = solve_dirichlet(replace(spec, epsilon=eps))
            exact = flux_inversion_solution(2.0, 2.5, 1.0, eps, 0.0, 1.0, g.coords[:, 0])
            assert np.max(np.abs(u_eps.values - exact)) <= 1e-7  # O(h^2) at h=1/128


class TestObstacleApproximation:
    def test_1d_nonlinear_target(self):
        spec = ProblemSpec(
            grid=Grid((65,), extent=(1.0,)),
            params=DoublePhaseParams(2.5, 3.0, coeff=CoefficientField.constant(1.0)),
            boundary=BoundaryData.from_callable(lambda pts: 0.3 + 0.5 * np.sin(1.5 * np.pi * pts[:, 0])),
        )
        target, _ = solve_dirichlet(spec)
        table = obstacle_approximation_study(spec, target, 5)
        assert table.verdict

    def test_constant_target(self):
        spec = ProblemSpec(
            grid=Grid((17, 17)),
            params=DoublePhaseParams(2.0, 2.0, coeff=CoefficientField.constant(0.5)),
            boundary=BoundaryData.constant(1.0),
        )
        table = obstacle_approximation_study(spec, lambda pts: np.ones(pts.shape[0]), 3)
        assert table.verdict
        assert all(abs(row[2]) <= 1e-9 for row in table.rows)


class TestTablesRoundTrip:
    @pytest.mark.parametrize(
        "maker,verdict_fn",
        [
            (lambda: equivalence_study(base_spec(n=9), 2), equivalence_verdict),
            (lambda: comparison_study(base_spec(n=9), 3, seed=1), comparison_verdict),
            (lambda: caccioppoli_study(base_spec(n=9), 4, seed=1), caccioppoli_verdict),
        ],
    )
    def test_verdict_recomputable_from_csv(self, tmp_path, maker, verdict_fn):
        table = maker()
        path = tmp_path / "table.csv"
        table.to_csv(path, comment="version=test config_hash=deadbeef seed=1")
        columns, rows = StudyTable.rows_from_csv(path)
        assert columns == table.columns
        assert verdict_fn(rows) == table.verdict

    def test_regularization_verdict_roundtrip(self, tmp_path):
        spec = ProblemSpec(
            grid=Grid((9, 9)),
            params=DoublePhaseParams(2.0, 2.5, coeff=CoefficientField.constant(1.0)),
            boundary=smooth_bd(),
        )
        table = regularization_study(spec, [1e-1, 1e-2])
        path = tmp_path / "reg.csv"
        table.to_csv(path)
        _cols, rows = StudyTable.rows_from_csv(path)
        assert regularization_verdict(rows) == table.verdict

    def test_obstacle_verdict_roundtrip(self, tmp_path):
        spec = ProblemSpec(
            grid=Grid((33,)),
            params=DoublePhaseParams(2.2, 2.8, coeff=CoefficientField.constant(0.7)),
            boundary=BoundaryData.from_callable(lambda pts: 0.5 * pts[:, 0]),
        )
        target, _ = solve_dirichlet(spec)
        table = obstacle_approximation_study(spec, target, 3)
        path = tmp_path / "obs.csv"
        table.to_csv(path)
        _cols, rows = StudyTable.rows_from_csv(path)
        assert obstacle_verdict(rows) == table.verdict
