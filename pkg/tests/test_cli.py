import json
import logging

import pytest
from pydantic import ValidationError

from bdie.api.cli import EXIT_CONFIG_ERROR, EXIT_OK, build_parser, run
from bdie.main import create_runner, load_config
from bdie.models.schemas import GeometryConfig, RunConfig
from bdie.services import laplace_core
from bdie.services.suites import SuiteOutcome
from bdie.utils.errors import ConfigurationError


SMALL_GEOMETRY = {"n_polar": 8, "n_azimuth": 16, "n_r": 4, "volume_polar": 6, "volume_azimuth": 12}


def write_config(tmp_path, **overrides):
    config = {"schema_version": 1, "geometry": SMALL_GEOMETRY, "output_dir": str(tmp_path / "out")}
    config.update(overrides)
    path = tmp_path / "config.json"
    path.write_text(json.dumps(config))
    return path


class TestSchemas:
    """Validation of the run configuration"""

    def test_defaults(self):
        """Default mesh and a single solve suite"""
        config = RunConfig()
        assert config.geometry.n_polar == 16
        assert config.suites == ["solve"]
        assert len(config.convergence_levels) >= 3

    def test_odd_polar_count(self):
        """The message names the equator"""
        with pytest.raises(ValidationError, match="equator"):
            GeometryConfig(n_polar=15)

    def test_unknown_field_rejected(self):
        """Typos in the config are errors"""
        with pytest.raises(ValidationError):
            RunConfig.model_validate({"geometry": {"n_pol": 8}})

    def test_refined_and_coarsened(self):
        """Refinement doubles the boundary counts, coarsening halves everything"""
        geometry = GeometryConfig()
        refined = geometry.refined()
        assert (refined.n_polar, refined.n_azimuth, refined.n_r) == (32, 64, 8)
        coarse = geometry.coarsened()
        assert (coarse.n_polar, coarse.n_azimuth, coarse.n_r, coarse.volume_polar) == (8, 16, 4, 6)
        assert GeometryConfig(n_polar=4, n_azimuth=8).coarsened().n_polar == 4

    def test_too_few_convergence_levels(self):
        """At least three levels"""
        with pytest.raises(ValidationError):
            RunConfig(convergence_levels=[GeometryConfig(), GeometryConfig()])


class TestRunner:
    """Config loading and command-line overrides"""

    def test_load_missing_file(self, tmp_path):
        """A missing file is a configuration error"""
        with pytest.raises(ConfigurationError):
            load_config(tmp_path / "absent.json")

    def test_load_invalid_json(self, tmp_path):
        """Malformed JSON is a configuration error"""
        path = tmp_path / "bad.json"
        path.write_text("{not json")
        with pytest.raises(ConfigurationError):
            load_config(path)

    def test_overrides(self, tmp_path):
        """Suites are de-duplicated and workers are applied"""
        runner = create_runner(
            RunConfig(), suites=["spectrum", "solve", "spectrum"], output_dir=tmp_path, seed=3, workers=2
        )
        assert runner.config.suites == ["spectrum", "solve"]
        assert runner.config.seed == 3
        assert runner.output_dir == tmp_path
        assert laplace_core.get_workers() == 2

    def test_invalid_override(self):
        """Overrides are validated like the file"""
        with pytest.raises(ConfigurationError):
            create_runner(RunConfig(), workers=0)

    def test_outcome_verdicts(self):
        """Non-finite values never pass"""
        outcome = SuiteOutcome()
        outcome.at_most("c", "small", 1e-3, 1e-2)
        outcome.at_least("c", "large", 1.0, 0.5)
        outcome.below("c", "nan", float("nan"), 1.0)
        assert [check.passed for check in outcome.checks] == [True, True, False]


class TestCommandLine:
    """Exit codes and report files"""

    def test_parser_rejects_unknown_suite(self):
        """argparse exits with status 2"""
        with pytest.raises(SystemExit) as exc:
            build_parser().parse_args(["--suite", "plots"])
        assert exc.value.code == 2

    def test_odd_polar_count_exit_code(self, tmp_path, caplog):
        """Schema errors exit with 2 and mention the equator"""
        path = write_config(tmp_path, geometry={**SMALL_GEOMETRY, "n_polar": 7})
        with caplog.at_level(logging.ERROR):
            assert run(["--config", str(path)]) == EXIT_CONFIG_ERROR
        assert "equator" in caplog.text

    def test_solve_suite(self, tmp_path):
        """The constant case passes and writes its reports"""
        path = write_config(tmp_path, case="constant", suites=["solve"])
        out = tmp_path / "out"
        assert run(["--config", str(path), "--seed", "11"]) == EXIT_OK

        summary = json.loads((out / "summary.json").read_text())
        assert summary["passed"] is True
        assert summary["seed"] == 11
        assert summary["solve"]["case"] == "constant"
        for name in ("errors.csv", "u.csv", "psi.csv", "phi.csv", "trace.csv", "conormal.csv"):
            assert (out / name).exists(), name
        header = (out / "errors.csv").read_text().splitlines()[0]
        assert header == "case,field,error,tolerance,passed"

    def test_spectrum_suite_writes_constant_row(self, tmp_path):
        """The n = 0 row of 𝒱 is (1, 1)"""
        path = write_config(tmp_path, suites=["solve"], max_degree=1)
        out = tmp_path / "spec"
        code = run(["--config", str(path), "--suite", "spectrum", "--out", str(out)])
        assert code in (0, 1)
        rows = (out / "spectrum.csv").read_text().splitlines()
        assert rows[0] == "resolution,operator,degree,oracle,computed,abs_error,max_deviation"
        assert rows[1].startswith("base,V,0,1.000000000000e+00,1.000000000000e+00,")
        assert not (out / "errors.csv").exists()

    def test_outputs_are_reproducible(self, tmp_path):
        """Same config and seed give byte-identical CSV files, whatever the worker count"""
        path = write_config(tmp_path, case="constant", suites=["solve"])
        first, second = tmp_path / "first", tmp_path / "second"
        assert run(["--config", str(path), "--out", str(first)]) == EXIT_OK
        assert run(["--config", str(path), "--out", str(second), "--workers", "3"]) == EXIT_OK
        for name in ("errors.csv", "u.csv", "psi.csv", "phi.csv"):
            assert (first / name).read_bytes() == (second / name).read_bytes(), name
