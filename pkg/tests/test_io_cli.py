"""Problem files, report round-trips, and the command-line surface."""

import json
import math

import numpy as np
import pytest

from fbsde import AssumptionViolation, SchemaError, bind_problem, verify_report
from fbsde.cli import DEMOS, run_cli


def minimal_special_doc():
    return {
        "kind": "special",
        "tree": {"N": 2, "T": 2, "transition": "uniform"},
        "x0": 0.0,
        "coefficients": {"g": 0.0},
    }


class TestBinding:
    def test_minimal_special_file(self):
        loaded = bind_problem(minimal_special_doc())
        assert loaded.kind == "special"
        assert loaded.tree.N == 2
        assert loaded.options.tolerance == 1e-10

    def test_linear_assumption_checked_at_load(self):
        doc = {
            "kind": "linear",
            "tree": {"N": 2, "T": 1, "transition": "uniform"},
            "x0": 0.0,
            "coefficients": {"C": [1.0, 1.0]},
        }
        with pytest.raises(AssumptionViolation, match="C column"):
            bind_problem(doc)

    def test_expression_coefficients_use_time_and_branch(self):
        doc = {
            "kind": "linear",
            "tree": {"N": 2, "T": 2, "transition": "uniform"},
            "x0": 0.0,
            "coefficients": {"D": "0.5*t + 0.25*w", "G": 1.0},
        }
        loaded = bind_problem(doc)
        coeffs = loaded.data
        assert coeffs.D[0][0] == 0.0  # root: t=0, w=0
        np.testing.assert_allclose(coeffs.D[1], [0.75, 1.0])  # t=1, w in {1, 2}

    def test_per_node_flat_arrays(self):
        doc = {
            "kind": "linear",
            "tree": {"N": 2, "T": 2, "transition": "uniform"},
            "x0": 0.0,
            "coefficients": {"A": [10.0, 20.0, 30.0], "G": [1.0, 2.0, 3.0, 4.0]},
        }
        coeffs = bind_problem(doc).data
        assert coeffs.A[0][0] == 10.0
        np.testing.assert_array_equal(coeffs.A[1], [20.0, 30.0])
        np.testing.assert_array_equal(coeffs.G, [1.0, 2.0, 3.0, 4.0])

    def test_wrong_flat_length(self):
        doc = {
            "kind": "linear",
            "tree": {"N": 2, "T": 2, "transition": "uniform"},
            "x0": 0.0,
            "coefficients": {"A": [1.0, 2.0]},
        }
        with pytest.raises(SchemaError, match="per-node"):
            bind_problem(doc)

    def test_state_variables_rejected_in_linear_coefficients(self):
        doc = {
            "kind": "linear",
            "tree": {"N": 2, "T": 1, "transition": "uniform"},
            "x0": 0.0,
            "coefficients": {"A": "x + 1"},
        }
        with pytest.raises(SchemaError, match="not allowed"):
            bind_problem(doc)

    def test_missing_required_fields(self):
        with pytest.raises(SchemaError, match="kind"):
            bind_problem({"tree": {"N": 2, "T": 1}})
        with pytest.raises(SchemaError, match="x0"):
            bind_problem(
                {"kind": "special", "tree": {"N": 2, "T": 1, "transition": "uniform"}}
            )

    def test_unknown_coefficient_field(self):
        doc = minimal_special_doc()
        doc["coefficients"]["Q"] = 1.0
        with pytest.raises(SchemaError, match="unknown fields"):
            bind_problem(doc)

    def test_bad_transition_rows(self):
        doc = minimal_special_doc()
        doc["tree"]["transition"] = [[0.6, 0.6]]
        with pytest.raises(SchemaError, match="tree"):
            bind_problem(doc)

    def test_sigma_needs_one_expression_per_state(self):
        doc = DEMOS["monotone-family"] | {
            "coefficients": {"b": "-y", "sigma": ["-z1"], "f": "x", "h": "x"}
        }
        with pytest.raises(SchemaError, match="sigma"):
            bind_problem(doc)

    def test_contraction_variables_bounded_by_branching(self):
        doc = json.loads(json.dumps(DEMOS["monotone-family"]))
        doc["coefficients"]["b"] = "-y + z2"
        with pytest.raises(SchemaError, match="z2"):
            bind_problem(doc)

    def test_terminal_generator_required_when_f_uses_contraction(self):
        doc = json.loads(json.dumps(DEMOS["monotone-family"]))
        doc["coefficients"]["f"] = "x + z1"
        del doc["coefficients"]["f_terminal"]
        with pytest.raises(SchemaError, match="f_terminal"):
            bind_problem(doc)

    def test_bsde_kind(self):
        doc = {
            "kind": "bsde",
            "tree": {"N": 2, "T": 2, "transition": "uniform"},
            "terminal": [1.0, 2.0, 3.0, 4.0],
            "coefficients": {"f": "0.1*y + z1", "f_terminal": "0.1*y"},
        }
        loaded = bind_problem(doc)
        assert loaded.x0 is None
        assert loaded.data.terminal.shape == (4,)

    def test_bsde_terminal_generator_defaults_to_f_when_row_free(self):
        doc = {
            "kind": "bsde",
            "tree": {"N": 2, "T": 2, "transition": "uniform"},
            "terminal": [1.0, 2.0, 3.0, 4.0],
            "coefficients": {"f": "0.5"},
        }
        problem = bind_problem(doc).data
        assert problem.terminal_generator(0, 1.0) == 0.5
        doc["coefficients"] = {"f": "z1"}
        with pytest.raises(SchemaError, match="f_terminal"):
            bind_problem(doc)

    def test_row_coefficients_accept_expressions(self):
        doc = {
            "kind": "linear",
            "tree": {"N": 2, "T": 2, "transition": "uniform"},
            "x0": 0.0,
            "coefficients": {"C": ["0.2*t", "-0.2*t"], "G": 1.0},
        }
        coeffs = bind_problem(doc).data
        np.testing.assert_allclose(coeffs.C[0][0], [0.0, 0.0])
        np.testing.assert_allclose(coeffs.C[1], [[0.2, -0.2], [0.2, -0.2]])

    def test_options_validated(self):
        doc = minimal_special_doc()
        doc["options"] = {"mode": "fancy"}
        with pytest.raises(SchemaError, match="mode"):
            bind_problem(doc)
        doc["options"] = {"tolerance": 1e-8, "seed": 3}
        assert bind_problem(doc).options.tolerance == 1e-8


def test_certificate_payload_on_halted_recursion():
    # feedback only at time 1: the backward pass stops there and the
    # payload reports the unreached level as null
    import fbsde
    from fbsde.io import certificate_payload

    tree = fbsde.build_tree(2, 2)
    coeffs = fbsde.LinearCoefficients(tree, G=1.0)
    coeffs.B[1][:] = 1.0
    payload = certificate_payload(tree, fbsde.riccati_backward(tree, coeffs))
    assert payload["all_invertible"] is False
    assert payload["P_levels"][0] is None
    assert payload["P_levels"][1] == [1.0, 1.0, 1.0, 1.0]
    assert json.dumps(payload)  # serializable as-is


class TestCli:
    def test_solve_file_and_round_trip(self, tmp_path, capsys):
        path = tmp_path / "problem.json"
        path.write_text(json.dumps(DEMOS["monotone-family"]))
        assert run_cli(["solve", str(path)]) == 0
        report = json.loads(capsys.readouterr().out)
        assert report["status"] == "solved"
        assert report["residuals"]["forward"] <= 1e-10
        loaded = bind_problem(DEMOS["monotone-family"])
        again = verify_report(loaded, report)
        assert math.isclose(
            again["forward"], report["residuals"]["forward"], abs_tol=1e-12
        )
        assert math.isclose(
            again["backward"], report["residuals"]["backward"], abs_tol=1e-12
        )

    def test_bsde_file_solves(self, tmp_path, capsys):
        path = tmp_path / "bsde.json"
        path.write_text(
            json.dumps(
                {
                    "kind": "bsde",
                    "tree": {"N": 2, "T": 2, "transition": "uniform"},
                    "terminal": [1.0, 2.0, 3.0, 4.0],
                    "coefficients": {"f": "0.5", "f_terminal": "0.5"},
                }
            )
        )
        assert run_cli(["solve", str(path)]) == 0
        report = json.loads(capsys.readouterr().out)
        assert report["solution"]["X"] is None
        assert report["residuals"]["backward"] <= 1e-11
        # martingale closure plus remaining-time drift at the root
        assert report["solution"]["Y"][0][0] == pytest.approx(2.5 + 2 * 0.5, abs=1e-12)
        loaded = bind_problem(json.loads(path.read_text()))
        again = verify_report(loaded, report)
        assert again["backward"] == report["residuals"]["backward"]

    def test_missing_file_is_input_error(self):
        assert run_cli(["solve", "/nonexistent/problem.json"]) == 4

    def test_invalid_json_is_input_error(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        assert run_cli(["solve", str(bad)]) == 4

    def test_demo_corollary_levels(self, capsys):
        assert run_cli(["demo", "corollary-special"]) == 0
        report = json.loads(capsys.readouterr().out)
        levels = report["certificate"]["P_levels"]
        for value in levels[-1]:
            assert value == pytest.approx(2.0, abs=1e-12)
        for value in levels[-2]:
            assert value == pytest.approx(5.0 / 3.0, abs=1e-12)
        for value in levels[-3]:
            assert value == pytest.approx(13.0 / 8.0, abs=1e-12)

    def test_demo_singular_gamma(self, capsys):
        assert run_cli(["demo", "singular-gamma"]) == 2
        report = json.loads(capsys.readouterr().out)
        assert report["status"] == "unsolvable"
        assert report["certificate"]["singular_nodes"] == [{"path": [], "t": 0}]

    def test_all_demos_run(self, tmp_path):
        codes = {}
        for name in DEMOS:
            codes[name] = run_cli(["demo", name, "--output", str(tmp_path / f"{name}.json")])
        assert codes == {
            "partially-coupled": 0,
            "corollary-special": 0,
            "singular-gamma": 2,
            "monotone-family": 0,
        }

    def test_oracle_subcommand(self, tmp_path, capsys):
        path = tmp_path / "problem.json"
        path.write_text(json.dumps(DEMOS["singular-gamma"]))
        assert run_cli(["oracle", str(path)]) == 2
        report = json.loads(capsys.readouterr().out)
        assert report["status"] == "no_solution"
        doc = json.loads(json.dumps(DEMOS["singular-gamma"]))
        doc["x0"] = 0.0
        path.write_text(json.dumps(doc))
        assert run_cli(["oracle", str(path)]) == 2
        report = json.loads(capsys.readouterr().out)
        assert report["status"] == "infinitely_many"

    def test_oracle_rejects_backward_only(self, tmp_path):
        path = tmp_path / "bsde.json"
        path.write_text(
            json.dumps(
                {
                    "kind": "bsde",
                    "tree": {"N": 2, "T": 1, "transition": "uniform"},
                    "terminal": [1.0, 2.0],
                }
            )
        )
        assert run_cli(["oracle", str(path)]) == 4

    def test_check_subcommand(self, tmp_path, capsys):
        path = tmp_path / "problem.json"
        path.write_text(json.dumps(DEMOS["monotone-family"]))
        assert run_cli(["check", str(path)]) == 0
        report = json.loads(capsys.readouterr().out)
        assert report["status"] == "satisfied"
        assert report["diagnostics"]["monotone_terminal"] > 0

        doc = json.loads(json.dumps(DEMOS["monotone-family"]))
        doc["coefficients"]["h"] = "-x"
        path.write_text(json.dumps(doc))
        assert run_cli(["check", str(path)]) == 2
        report = json.loads(capsys.readouterr().out)
        assert report["status"] == "violated"
        assert "terminal map monotonicity" in report["diagnostics"]["violations"]

    def test_check_on_linear_kinds_reports_certificate(self, tmp_path, capsys):
        for name, expected in (("partially-coupled", 0), ("singular-gamma", 2)):
            path = tmp_path / f"{name}.json"
            path.write_text(json.dumps(DEMOS[name]))
            assert run_cli(["check", str(path)]) == expected
            report = json.loads(capsys.readouterr().out)
            assert report["certificate"]["all_invertible"] is (expected == 0)

    def test_csv_without_solution_keeps_exit_code(self, tmp_path, capsys):
        out = tmp_path / "nothing.csv"
        code = run_cli(["demo", "singular-gamma", "--format", "csv", "--output", str(out)])
        assert code == 2
        assert not out.exists()
        assert "no solution" in capsys.readouterr().err

    def test_reports_are_byte_identical(self, tmp_path):
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        for target in (a, b):
            assert run_cli(["demo", "monotone-family", "--output", str(target)]) == 0
        assert a.read_bytes() == b.read_bytes()

    def test_flag_overrides(self, tmp_path, capsys):
        path = tmp_path / "problem.json"
        path.write_text(json.dumps(DEMOS["monotone-family"]))
        assert run_cli(["solve", str(path), "--mode", "picard", "--tol", "1e-8"]) == 0
        report = json.loads(capsys.readouterr().out)
        assert report["status"] == "solved"
        assert max(report["residuals"].values()) <= 1e-8

    def test_csv_output(self, tmp_path):
        out = tmp_path / "solution.csv"
        assert run_cli(["demo", "corollary-special", "--format", "csv", "--output", str(out)]) == 0
        lines = out.read_text().strip().splitlines()
        assert lines[0] == "t,path,X,Y,Z_1,Z_2"
        assert len(lines) == 1 + 1 + 2 + 4 + 8
        root = lines[1].split(",")
        assert root[0] == "0" and root[1] == "" and float(root[2]) == 0.5
        leaf = lines[-1].split(",")
        assert leaf[1] == "2-2-2" and leaf[4] == "" and leaf[5] == ""

    def test_no_convergence_exit_code(self, tmp_path, capsys):
        doc = json.loads(json.dumps(DEMOS["monotone-family"]))
        doc["coefficients"]["b"] = "-y + 10*x"
        doc["options"] = {"mode": "picard"}
        path = tmp_path / "hard.json"
        path.write_text(json.dumps(doc))
        assert run_cli(["solve", str(path)]) == 3
        report = json.loads(capsys.readouterr().out)
        assert report["status"] == "no_convergence"
