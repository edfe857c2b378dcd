import os

import numpy as np
import pytest

from doublephase.cli import main, parse_config
from doublephase.errors import ParseError, ValidationError
from doublephase.expressions import compile_expression
from doublephase.grids import read_field

LINEAR_1D = """
[run]
seed = 7

[problem]
dimension = 1
nodes = 65
lower = 0
extent = 1
p = 2.5
q = 3.0
alpha = 1.0
coefficient = 1.0
epsilon = 0.0
boundary = x

[output]
directory = {out}
prefix = bench
"""

STUDY_2D = """
[problem]
dimension = 2
nodes = 9 9
extent = 1 1
p = 2.5
q = 3.0
coefficient = 1.0
boundary = 0.5*x + 0.3*y + 0.2*sin(3.141592653589793*x)

[study]
trials = 3

[output]
directory = {out}
prefix = study
"""


class TestExpressions:
    def test_polynomial(self):
        f = compile_expression("2*x - y + 0.5")
        pts = np.array([[1.0, 2.0], [0.0, 0.0]])
        np.testing.assert_allclose(f(pts), [0.5, 0.5])

    def test_power_and_abs(self):
        f = compile_expression("abs(x - 0.5)^1.5")
        pts = np.array([[1.5, 0.0]])
        np.testing.assert_allclose(f(pts), [1.0])

    def test_radial_expression(self):
        f = compile_expression("(x*x + y*y)^0.25")
        pts = np.array([[1.0, 1.0]])
        np.testing.assert_allclose(f(pts), [2.0**0.25])

    def test_gradient_matches_finite_differences(self):
        f = compile_expression("sin(2*x)*cos(y) + x^3 - 0.5*y^2")
        grad = f.gradient_callable(2)
        rng = np.random.default_rng(3)
        pts = rng.uniform(-1, 1, size=(20, 2))
        g = grad(pts)
        h = 1e-6
        for axis in range(2):
            e = np.zeros(2)
            e[axis] = h
            fd = (f(pts + e) - f(pts - e)) / (2 * h)
            np.testing.assert_allclose(g[:, axis], fd, atol=1e-8)

    def test_fractional_power_domain_guard(self):
        f = compile_expression("x^0.5")
        with pytest.raises(ValidationError):
            f(np.array([[-1.0, 0.0]]))

    def test_parse_errors(self):
        for text in ["", "x +", "2 ** 3", "foo(x)", "x^y"]:
            with pytest.raises(ParseError):
                compile_expression(text)


class TestParseConfig:
    def test_minimal_valid(self, tmp_path):
        cfg = parse_config(LINEAR_1D.format(out=tmp_path), command="solve-var")
        assert cfg.command == "solve-var"
        assert cfg.seed == 7
        assert cfg.spec.grid.shape == (65,)
        assert cfg.spec.params.p == 2.5

    def test_exponent_invariant_diagnostic(self):
        text = "[problem]\ndimension = 1\nnodes = 9\np = 3\nq = 2\nboundary = x\n"
        with pytest.raises(ValidationError) as info:
            parse_config(text, command="solve-var")
        assert any("1 < p <= q" in reason for _l, _k, reason in info.value.diagnostics)

    def test_negative_coefficient_diagnostic(self):
        text = (
            "[problem]\ndimension = 1\nnodes = 9\np = 2\nq = 3\n"
            "coefficient = -1.0\nboundary = x\n"
        )
        with pytest.raises(ValidationError) as info:
            parse_config(text, command="solve-var")
        assert any("a(x) >= 0" in reason for _l, _k, reason in info.value.diagnostics)

    def test_bad_line_reported_with_number(self):
        with pytest.raises(ParseError) as info:
            parse_config("[problem]\nnot a key value line\n", command="solve-var")
        assert info.value.diagnostics[0][0] == 2

    def test_unknown_key_reported(self):
        text = (
            "[problem]\ndimension = 1\nnodes = 9\np = 2\nq = 3\n"
            "boundry = x\nboundary = x\n"
        )
        with pytest.raises(ValidationError) as info:
            parse_config(text, command="solve-var")
        assert any("unknown key" in reason for _l, k, reason in info.value.diagnostics
                   if k == "boundry")

    def test_command_conflict(self):
        text = "[run]\ncommand = solve-var\n" + "\n".join(LINEAR_1D.splitlines()[3:]).format(out=".")
        with pytest.raises(ValidationError):
            parse_config(text, command="solve-visc")


class TestMain:
    def test_solve_and_artifacts(self, tmp_path, capsys):
        cfg = tmp_path / "run.cfg"
        cfg.write_text(LINEAR_1D.format(out=tmp_path))
        code = main(["solve-var", "--config", str(cfg)])
        assert code == 0
        field = read_field(tmp_path / "bench_solution.field")
        np.testing.assert_allclose(field.values, field.grid.coords[:, 0], atol=1e-10)
        report = (tmp_path / "bench_report.csv").read_text().splitlines()
        assert report[0].startswith("# version=")
        assert "config_hash=" in report[0] and "seed=7" in report[0]

    def test_viscosity_route(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text(LINEAR_1D.format(out=tmp_path))
        assert main(["solve-visc", "--config", str(cfg)]) == 0
        field = read_field(tmp_path / "bench_solution.field")
        np.testing.assert_allclose(field.values, field.grid.coords[:, 0], atol=1e-6)

    def test_malformed_config_exit_2(self, tmp_path, capsys):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("[problem]\np = 3\nq = 2\n")
        assert main(["solve-var", "--config", str(cfg)]) == 2
        assert "missing required key" in capsys.readouterr().err

    def test_missing_file_exit_2(self):
        assert main(["solve-var", "--config", "/nonexistent/x.cfg"]) == 2

    def test_nonconstant_coefficient_study_exit_2(self, tmp_path, capsys):
        cfg = tmp_path / "nc.cfg"
        cfg.write_text(
            "[problem]\ndimension = 1\nnodes = 33\nextent = 1\np = 2\nq = 2.5\n"
            "coefficient = 0.5 + 0.25*x\nboundary = x\n"
        )
        code = main(["study:equivalence", "--config", str(cfg), "--out", str(tmp_path)])
        assert code == 2
        assert "constant coefficient" in capsys.readouterr().err

    def test_study_pass_exit_0_and_csv(self, tmp_path):
        cfg = tmp_path / "study.cfg"
        cfg.write_text(STUDY_2D.format(out=tmp_path))
        code = main(["study:comparison", "--config", str(cfg), "--seed", "3"])
        assert code == 0
        lines = (tmp_path / "study_comparison.csv").read_text().splitlines()
        assert lines[0].startswith("# version=") and "seed=3" in lines[0]
        assert lines[2].startswith("trial,")

    def test_obstacle_route(self, tmp_path):
        cfg = tmp_path / "obs.cfg"
        cfg.write_text(
            "[problem]\ndimension = 1\nnodes = 65\nextent = 1\np = 2\nq = 2\n"
            "coefficient = 0\nboundary = 0\n"
            "obstacle = 0.3 - 2*(x - 0.5)^2\n"
            f"[output]\ndirectory = {tmp_path}\nprefix = obs\n"
        )
        assert main(["solve-obstacle", "--config", str(cfg)]) == 0
        field = read_field(tmp_path / "obs_solution.field")
        assert np.max(field.values) > 0.25  # rides the obstacle

    def test_byte_for_byte_determinism(self, tmp_path):
        cfg = tmp_path / "study.cfg"
        cfg.write_text(STUDY_2D.format(out="."))
        for sub in ("a", "b"):
            code = main(
                ["study:comparison", "--config", str(cfg),
                 "--seed", "5", "--out", str(tmp_path / sub)]
            )
            assert code == 0
        c1 = (tmp_path / "a" / "study_comparison.csv").read_bytes()
        c2 = (tmp_path / "b" / "study_comparison.csv").read_bytes()
        assert c1 == c2

    def test_no_temp_files_left(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text(LINEAR_1D.format(out=tmp_path))
        assert main(["solve-var", "--config", str(cfg)]) == 0
        leftovers = [f for f in os.listdir(tmp_path) if f.endswith(".tmp")]
        assert leftovers == []

    def test_tolerance_override_applied(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text(
            LINEAR_1D.format(out=tmp_path) + "\n[tolerances]\nnewton = 1e-10\n"
        )
        assert main(["solve-var", "--config", str(cfg)]) == 0

    def test_nonconvergence_maps_to_exit_1(self, tmp_path, monkeypatch):
        import doublephase.cli as cli_mod
        from doublephase.errors import NonConvergence

        def boom(spec, **kwargs):
            raise NonConvergence("stalled")

        monkeypatch.setattr(cli_mod, "solve_dirichlet", boom)
        cfg = tmp_path / "run.cfg"
        cfg.write_text(LINEAR_1D.format(out=tmp_path))
        assert main(["solve-var", "--config", str(cfg)]) == 1

    def test_regularization_study_route(self, tmp_path):
        cfg = tmp_path / "reg.cfg"
        cfg.write_text(
            "[problem]\ndimension = 2\nnodes = 9 9\nextent = 1 1\np = 2\nq = 2.5\n"
            "coefficient = 1.0\nboundary = 0.5*x + 0.3*y\n"
            "[study]\nepsilons = 0.1 0.01\n"
            f"[output]\ndirectory = {tmp_path}\nprefix = reg\n"
        )
        assert main(["study:regularization", "--config", str(cfg)]) == 0
        assert (tmp_path / "reg_regularization.csv").exists()

    def test_obstacle_approximation_study_route(self, tmp_path):
        cfg = tmp_path / "obsapp.cfg"
        cfg.write_text(
            "[problem]\ndimension = 1\nnodes = 33\nextent = 1\np = 2.2\nq = 2.8\n"
            "coefficient = 0.7\nboundary = 0.5*x\n"
            "[study]\nlevels = 3\n"
            f"[output]\ndirectory = {tmp_path}\nprefix = oa\n"
        )
        assert main(["study:obstacle-approximation", "--config", str(cfg)]) == 0
        assert (tmp_path / "oa_obstacle_approximation.csv").exists()

    def test_failing_study_maps_to_exit_3(self, tmp_path, monkeypatch):
        import doublephase.cli as cli_mod
        from doublephase.studies import StudyTable

        def fake_study(spec, trials, seed=0):
            return StudyTable("comparison", ("trial",), [(0,)], False, {})

        monkeypatch.setattr(cli_mod, "comparison_study", fake_study)
        cfg = tmp_path / "study.cfg"
        cfg.write_text(STUDY_2D.format(out=tmp_path))
        assert main(["study:comparison", "--config", str(cfg)]) == 3
