import json
from pathlib import Path

import pytest
from typer.testing import CliRunner

from mlsteer.applications.cli import cli
from mlsteer.applications.cli.config import parse_config
from tests.e2e.conftest import SCALAR_SYSTEM, ConfigWriter, read_csv, read_report

runner = CliRunner()


def invoke(config: Path, out_dir: Path, command: str, *options: str):
    return runner.invoke(cli, [command, "-c", config.as_posix(), "-o", out_dir.as_posix(), *options])


class TestDeterministicCommands:
    def test_solve_delayed_exponential(self, write_config: ConfigWriter, out_dir: Path):
        config = write_config(
            {"system": {"A": [[0.0]], "B": [[1.0]], "h": 1.0, "alpha": 1.0, "T": 2.0}}
        )
        result = invoke(config, out_dir, "solve")
        assert result.exit_code == 0
        rows = read_csv(out_dir / "trajectory.csv")
        assert list(rows[0]) == ["t", "x_1"]
        row = min(rows, key=lambda row: abs(row["t"] - 1.5))
        assert row["x_1"] == pytest.approx(2.625, rel=1e-10)
        report = read_report(out_dir)
        assert report["schema"] == "mlsteer/1"
        assert report["outputs"] == ["trajectory.csv", "config.json", "report.json"]
        assert report["results"]["method"] == "variation_of_constants"

    def test_rank(self, write_config: ConfigWriter, out_dir: Path):
        config = write_config(
            {
                "system": {
                    "A": [[0.0, 1.0], [0.0, 0.0]],
                    "B": [[0.0, 0.0], [0.0, 0.0]],
                    "C": [[0.0], [1.0]],
                    "h": 1.0,
                    "alpha": 0.8,
                    "T": 1.0,
                }
            }
        )
        result = invoke(config, out_dir, "rank")
        assert result.exit_code == 0
        results = read_report(out_dir)["results"]
        assert results["rank"] == 2
        assert results["controllable"] is True
        assert results["char_poly"] == [1.0, 0.0, 0.0]

    def test_verify_lemma(self, write_config: ConfigWriter, out_dir: Path):
        result = invoke(write_config({}), out_dir, "verify-lemma")
        assert result.exit_code == 0
        results = read_report(out_dir)["results"]
        assert results["max_violation"] <= 1e-8
        assert len(results["checks"]) == 9
        assert len(read_csv(out_dir / "lemma.csv")) == 9 * 5

    def test_empty_table_has_header_only(self, write_config: ConfigWriter, out_dir: Path):
        config = write_config({"ml_query": {"alpha": 0.5, "beta": 1.0}})
        result = invoke(config, out_dir, "eval-ml")
        assert result.exit_code == 0
        assert (out_dir / "ml_values.csv").read_bytes() == b"z,value\n"

    def test_emitted_configuration_is_reusable(self, write_config: ConfigWriter, out_dir: Path):
        path = write_config({"system": SCALAR_SYSTEM, "mesh": {"base_step": 0.03125}})
        result = invoke(path, out_dir, "solve")
        assert result.exit_code == 0
        emitted = parse_config(out_dir / "config.json", "solve")
        assert emitted == parse_config(path, "solve")
        assert emitted.mesh.base_step == 0.03125

    def test_emitted_configuration_records_seed_override(
        self, write_config: ConfigWriter, out_dir: Path
    ):
        path = write_config(
            {"system": SCALAR_SYSTEM, "diffusion": {"sigma": 0.3}, "monte_carlo": {"n_paths": 4}}
        )
        result = invoke(path, out_dir, "simulate", "--seed", "9")
        assert result.exit_code == 0
        assert parse_config(out_dir / "config.json").monte_carlo.seed == 9

    def test_json_format_embeds_tables(self, write_config: ConfigWriter, out_dir: Path):
        config = write_config({"ml_query": {"alpha": 1.0, "beta": 1.0, "z": [0.0, 1.0]}})
        result = invoke(config, out_dir, "eval-ml", "--format", "json")
        assert result.exit_code == 0
        report = read_report(out_dir)
        assert report["outputs"] == ["config.json", "report.json"]
        assert not (out_dir / "ml_values.csv").exists()
        table = report["results"]["tables"]["ml_values"]
        assert table["columns"] == ["z", "value"]
        assert table["rows"][1][1] == pytest.approx(2.718281828459045, rel=1e-14)


class TestStochasticCommands:
    def test_results_do_not_depend_on_threads(self, write_config: ConfigWriter, tmp_path: Path):
        config = write_config(
            {
                "system": SCALAR_SYSTEM,
                "diffusion": {"kind": "linear_state", "sigma": 0.3},
                "monte_carlo": {"n_paths": 600, "seed": 5},
            }
        )
        single, pooled = tmp_path / "single", tmp_path / "pooled"
        assert invoke(config, single, "simulate", "--threads", "1").exit_code == 0
        assert invoke(config, pooled, "simulate", "--threads", "4").exit_code == 0
        for name in ("summary.csv", "config.json", "report.json"):
            assert (single / name).read_bytes() == (pooled / name).read_bytes()

    def test_seed_changes_digest(self, write_config: ConfigWriter, tmp_path: Path):
        config = write_config(
            {"system": SCALAR_SYSTEM, "diffusion": {"sigma": 0.3}, "monte_carlo": {"n_paths": 4}}
        )
        assert invoke(config, tmp_path / "a", "simulate").exit_code == 0
        assert invoke(config, tmp_path / "b", "simulate", "--seed", "1").exit_code == 0
        assert read_report(tmp_path / "a")["inputs_digest"] != read_report(tmp_path / "b")["inputs_digest"]

    def test_per_path_dump(self, write_config: ConfigWriter, out_dir: Path):
        config = write_config(
            {"system": SCALAR_SYSTEM, "diffusion": {"sigma": 0.3}, "monte_carlo": {"n_paths": 3}}
        )
        assert invoke(config, out_dir, "simulate", "--per-path").exit_code == 0
        assert len(read_csv(out_dir / "paths.csv")) == 3 * 65

    def test_steer(self, write_config: ConfigWriter, out_dir: Path):
        config = write_config(
            {"system": SCALAR_SYSTEM, "target": [2.0], "monte_carlo": {"n_paths": 2}}
        )
        result = invoke(config, out_dir, "steer")
        assert result.exit_code == 0
        results = read_report(out_dir)["results"]
        assert results["terminal_error_max"] <= 1e-16
        assert results["converged"] is True
        assert len(read_csv(out_dir / "control.csv")) == 64

    def test_hypotheses(self, write_config: ConfigWriter, out_dir: Path):
        config = write_config(
            {
                "system": SCALAR_SYSTEM,
                "diffusion": {"kind": "linear_state", "sigma": 0.2},
                "steer": {"mode": "nonlinear_causal"},
            }
        )
        result = invoke(config, out_dir, "hypotheses")
        assert result.exit_code == 0
        results = read_report(out_dir)["results"]
        assert results["rho"] < 1
        assert results["rho_ok"] is True
        assert results["lambda"] > 0


class TestExitCodes:
    def test_missing_config(self, tmp_path: Path):
        result = invoke(tmp_path / "missing.json", tmp_path / "out", "solve")
        assert result.exit_code == 1

    def test_invalid_json(self, tmp_path: Path):
        config = tmp_path / "config.json"
        config.write_text('{"system": ')
        result = invoke(config, tmp_path / "out", "solve")
        assert result.exit_code == 2
        assert "ConfigParseError" in result.output

    def test_unknown_key(self, write_config: ConfigWriter, out_dir: Path):
        result = invoke(write_config({"sytem": {}}), out_dir, "verify-lemma")
        assert result.exit_code == 2
        assert "SchemaError" in result.output

    def test_non_commuting_matrices(self, write_config: ConfigWriter, out_dir: Path):
        config = write_config(
            {
                "system": {
                    "A": [[0.0, 1.0], [0.0, 0.0]],
                    "B": [[0.0, 0.0], [1.0, 0.0]],
                    "h": 1.0,
                    "alpha": 0.8,
                    "T": 1.0,
                }
            }
        )
        result = invoke(config, out_dir, "solve")
        assert result.exit_code == 2
        assert "commutator norm" in result.output

    def test_stochastic_order(self, write_config: ConfigWriter, out_dir: Path):
        config = write_config({"system": {**SCALAR_SYSTEM, "alpha": 0.4}})
        result = invoke(config, out_dir, "simulate")
        assert result.exit_code == 2
        assert "(0.5, 1)" in result.output

    def test_mesh_coarser_than_delay(self, write_config: ConfigWriter, out_dir: Path):
        config = write_config({"system": SCALAR_SYSTEM, "mesh": {"base_step": 0.125}})
        result = invoke(config, out_dir, "solve")
        assert result.exit_code == 2
        assert "mesh.base_step" in result.output

    def test_argument_out_of_range(self, write_config: ConfigWriter, out_dir: Path):
        config = write_config({"ml_query": {"alpha": 0.5, "beta": 1.0, "z": [51.0]}})
        result = invoke(config, out_dir, "eval-ml")
        assert result.exit_code == 3
        assert "ArgumentGuardError" in result.output

    def test_series_does_not_converge(self, write_config: ConfigWriter, out_dir: Path):
        config = write_config(
            {"ml_query": {"alpha": 0.5, "beta": 1.0, "max_terms": 16, "z": [40.0]}}
        )
        result = invoke(config, out_dir, "eval-ml")
        assert result.exit_code == 4
        assert "SeriesConvergenceError" in result.output

    def test_uncontrollable_system(self, write_config: ConfigWriter, out_dir: Path):
        config = write_config(
            {
                "system": {**SCALAR_SYSTEM, "C": [[0.0]]},
                "target": [2.0],
                "monte_carlo": {"n_paths": 2},
            }
        )
        result = invoke(config, out_dir, "steer")
        assert result.exit_code == 5
        error = json.loads(result.output.strip().splitlines()[-1])
        assert error["code"] == 5
        assert error["error"] == "SingularGrammianError"
