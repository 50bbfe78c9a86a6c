"""
JSON-lines annotation files, one annotation per line.
"""

import logging
from collections.abc import Iterable
from pathlib import Path

from pydantic import BaseModel, ValidationError

from v2xpnp_desk.shared.errors import GraphError
from v2xpnp_desk.shared.types import Annotation
from v2xpnp_desk.shared.utils import atomic_write_text

logger = logging.getLogger(__name__)


def read_annotations(filepath: str | Path) -> list[Annotation]:
    """
    Raises:
        GraphError: If the file is missing or a line does not validate.
    """
    path = Path(filepath)
    if not path.exists():
        raise GraphError(f"Annotation file not found: {path}")
    out = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            out.append(Annotation.model_validate_json(line))
        except ValidationError as e:
            raise GraphError(f"{path}:{lineno}: malformed annotation: {e}") from e
    logger.info(f"Read {len(out)} annotations from {path}")
    return out


def write_annotations(records: Iterable[BaseModel], filepath: str | Path) -> Path:
    lines = [r.model_dump_json() for r in records]
    path = atomic_write_text(filepath, "\n".join(lines) + ("\n" if lines else ""))
    logger.info(f"Wrote {len(lines)} annotations to {path}")
    return path
