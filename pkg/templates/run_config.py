"""Commented TOML rendering of run configurations."""

import json
from pathlib import Path
from typing import Any, Dict, List, Optional

from pydantic import BaseModel

HEADER = """\
# Dual-stream detector run configuration.
# Sections mirror ModelConfig, TrainConfig, EvalConfig and PathsConfig.
# Any key can be overridden on the command line with --set section.key=value.
"""


def format_toml_value(value: Any) -> Optional[str]:
    """TOML literal for a config value; None has no TOML form."""
    if value is None:
        return None
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, float)):
        return repr(value)
    if isinstance(value, Path):
        return json.dumps(str(value))
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(format_toml_value(v) or '""' for v in value) + "]"
    return json.dumps(str(value))


def render_section(name: str, section: BaseModel) -> List[str]:
    """
    Render one config model as a TOML table with field descriptions as comments.

    Args:
        name: Table name
        section: Config model instance

    Returns:
        Lines of the table
    """
    lines = [f"[{name}]"]
    values: Dict[str, Any] = section.model_dump()
    for key, info in type(section).model_fields.items():
        if info.description:
            lines.append(f"# {info.description}")
        literal = format_toml_value(values[key])
        lines.append(f"{key} = {literal}" if literal is not None else f"# {key} =")
    return lines


def get_run_config_template(sections: Dict[str, BaseModel], note: Optional[str] = None) -> str:
    """
    Generate the commented TOML document for a run.

    Args:
        sections: Table name to config model, in output order
        note: Optional extra comment placed under the header (e.g. the command)

    Returns:
        TOML text
    """
    parts = [HEADER.rstrip("\n")]
    if note:
        parts.append(f"# {note}")
    for name, section in sections.items():
        parts.append("")
        parts.extend(render_section(name, section))
    return "\n".join(parts) + "\n"
