"""
Scenario JSON export and import.
"""

import logging
from pathlib import Path

from v2xpnp_desk.shared.errors import ScenarioError
from v2xpnp_desk.shared.types import Scenario
from v2xpnp_desk.shared.utils import atomic_write_text

logger = logging.getLogger(__name__)


def save_scenario(scenario: Scenario, filepath: str | Path) -> Path:
    """
    Write a scenario as JSON. Floats use shortest round-trip repr so the
    reloaded scenario compares equal.
    """
    path = atomic_write_text(filepath, scenario.model_dump_json(indent=1))
    logger.info(f"Scenario seed={scenario.seed} saved to: {path}")
    return path


def load_scenario(filepath: str | Path) -> Scenario:
    """
    Raises:
        ScenarioError: If the file is missing.
        pydantic.ValidationError: If the content is invalid.
    """
    path = Path(filepath)
    if not path.exists():
        raise ScenarioError(f"scenario file not found: {filepath}")
    with open(path) as f:
        data = f.read()
    # Pydantic validation
    return Scenario.model_validate_json(data)
