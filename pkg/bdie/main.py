import json
import logging
from pathlib import Path
from typing import List, Optional, Sequence, Union

from pydantic import ValidationError

from bdie.models.schemas import RunConfig, RunSummary
from bdie.services import laplace_core
from bdie.services.suites import SUITES, SuiteOutcome
from bdie.utils.errors import ConfigurationError
from bdie.utils.reporting import write_json


logger = logging.getLogger(__name__)


def load_config(path: Optional[Union[str, Path]]) -> RunConfig:
    """Read and validate a JSON run configuration; defaults when no path is given"""
    if path is None:
        return RunConfig()
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except FileNotFoundError as e:
        raise ConfigurationError(f"Config file not found: {path}") from e
    except json.JSONDecodeError as e:
        raise ConfigurationError(f"Config file {path} is not valid JSON: {e}") from e
    try:
        return RunConfig.model_validate(raw)
    except ValidationError as e:
        raise ConfigurationError(f"Invalid config {path}:\n{e}") from e


class SuiteRunner:
    """Runs the configured suites in order and writes summary.json"""

    def __init__(self, config: RunConfig):
        self.config = config
        self.output_dir = Path(config.output_dir)

    def run(self) -> RunSummary:
        self.output_dir.mkdir(parents=True, exist_ok=True)
        outcomes: List[SuiteOutcome] = []
        for name in self.config.suites:
            logger.info("Running suite '%s' on %s", name, self.config.geometry.label())
            outcome = SUITES[name](self.config, self.output_dir)
            failed = sum(not c.passed for c in outcome.checks)
            logger.info("Suite '%s': %d checks, %d failed", name, len(outcome.checks), failed)
            outcomes.append(outcome)

        checks = [c for o in outcomes for c in o.checks]
        failed_criteria = sorted({c.criterion for c in checks if not c.passed})
        solve = next((o.solve for o in outcomes if o.solve is not None), None)
        files = [str(f) for o in outcomes for f in o.files]
        summary_path = self.output_dir / "summary.json"

        summary = RunSummary(
            config=self.config,
            seed=self.config.seed,
            passed=not failed_criteria,
            failed_criteria=failed_criteria,
            checks=checks,
            solve=solve,
            files=files + [str(summary_path)],
        )
        write_json(summary_path, summary)
        return summary


def create_runner(
    config: RunConfig,
    suites: Optional[Sequence[str]] = None,
    output_dir: Optional[Union[str, Path]] = None,
    seed: Optional[int] = None,
    workers: Optional[int] = None,
) -> SuiteRunner:
    """Apply command-line overrides, configure assembly threads and build the runner"""
    updates = {}
    if suites:
        updates["suites"] = list(dict.fromkeys(suites))
    if output_dir is not None:
        updates["output_dir"] = str(output_dir)
    if seed is not None:
        updates["seed"] = seed
    if workers is not None:
        updates["workers"] = workers
    if updates:
        try:
            config = RunConfig.model_validate({**config.model_dump(), **updates})
        except ValidationError as e:
            raise ConfigurationError(f"Invalid command-line override:\n{e}") from e

    laplace_core.set_workers(config.workers)
    return SuiteRunner(config)
