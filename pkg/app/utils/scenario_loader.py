"""
Scenario files: YAML documents mirroring the Scenario model.

Validation errors are reported with the key path and the line/column of the
offending node.
"""
import logging
from pathlib import Path
from typing import Any, List, Optional, Sequence, Tuple, Union

import yaml
from pydantic import ValidationError

from app.errors import ScenarioNotFoundError, ScenarioValidationError
from app.models.schemas import Scenario

logger = logging.getLogger(__name__)


def _child(node: yaml.Node, part: Union[str, int]) -> Optional[Tuple[yaml.Node, yaml.Node]]:
    """(key node, value node) of ``part`` under ``node``, if present."""
    if isinstance(node, yaml.MappingNode) and isinstance(part, str):
        for key, value in node.value:
            if isinstance(key, yaml.ScalarNode) and key.value == part:
                return key, value
    if isinstance(node, yaml.SequenceNode) and isinstance(part, int) and 0 <= part < len(node.value):
        item = node.value[part]
        return item, item
    return None


def locate(root: Optional[yaml.Node], loc: Sequence[Union[str, int]]) -> Tuple[str, Optional[int], Optional[int]]:
    """
    Resolve a validation error location against the YAML node tree.

    Parts that are not in the document (union tags) are skipped, except a
    trailing missing key, which is reported against its parent mapping.

    Returns:
        Tuple of (key path, 1-based line, 1-based column)
    """
    parts: List[str] = []
    node = root
    mark = root.start_mark if root is not None else None
    for index, part in enumerate(loc):
        found = _child(node, part) if node is not None else None
        last = index == len(loc) - 1
        if found is None:
            if last:
                parts.append(f"[{part}]" if isinstance(part, int) else str(part))
            continue
        key, node = found
        parts.append(f"[{part}]" if isinstance(part, int) else str(part))
        # The innermost key is reported at the key, enclosing parts at their value
        mark = key.start_mark if last else node.start_mark
    key_path = ".".join(parts).replace(".[", "[")
    if mark is None:
        return key_path, None, None
    return key_path, mark.line + 1, mark.column + 1


def parse_scenario(text: str, source: str = "<scenario>") -> Scenario:
    """Parse and validate a scenario document."""
    try:
        root = yaml.compose(text, Loader=yaml.SafeLoader)
        data = yaml.safe_load(text)
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        problem = getattr(e, "problem", None) or str(e)
        raise ScenarioValidationError(
            problem,
            path=source,
            line=mark.line + 1 if mark else None,
            column=mark.column + 1 if mark else None,
        ) from e

    if not isinstance(data, dict):
        raise ScenarioValidationError("scenario must be a mapping", path=source, line=1, column=1)

    try:
        return Scenario.model_validate(data)
    except ValidationError as e:
        error = e.errors()[0]
        key_path, line, column = locate(root, error["loc"])
        message = error["msg"]
        if error["type"] == "extra_forbidden":
            message = "unknown key"
        raise ScenarioValidationError(message, path=source, key_path=key_path or None, line=line, column=column) from e


def load_scenario(path: Union[str, Path]) -> Scenario:
    """
    Read a scenario file.

    Raises:
        ScenarioNotFoundError: If the file does not exist
        ScenarioValidationError: If it does not parse or validate
    """
    path = Path(path)
    if not path.is_file():
        raise ScenarioNotFoundError(f"file not found: {path}")
    scenario = parse_scenario(path.read_text(encoding="utf-8"), source=str(path))
    logger.debug(f"Loaded scenario {scenario.name} from {path}")
    return scenario


def dump_scenario(scenario: Scenario, path: Union[str, Path]) -> Path:
    """Write a scenario as YAML that ``load_scenario`` reads back unchanged."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    document: Any = scenario.model_dump(mode="json")
    path.write_text(yaml.safe_dump(document, sort_keys=False), encoding="utf-8")
    return path
