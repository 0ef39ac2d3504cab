"""Jinja2 rendering of markdown reports."""

from __future__ import annotations

import math
from datetime import datetime
from pathlib import Path
from typing import Any

from jinja2 import Environment, FileSystemLoader, StrictUndefined, TemplateNotFound

TEMPLATES_DIR = Path(__file__).parent.parent / "templates"

# Strict mode so a missing report field fails loudly
_env: Environment | None = None


def _get_env() -> Environment:
    global _env
    if _env is None:
        _env = Environment(
            loader=FileSystemLoader(TEMPLATES_DIR),
            undefined=StrictUndefined,
            trim_blocks=True,
            lstrip_blocks=True,
            autoescape=False,
        )
        _env.filters["sci"] = _format_sci
        _env.filters["status"] = _format_status
    return _env


def _format_sci(value: float | None, digits: int = 3) -> str:
    """Scientific notation, with ``-`` for missing and ``inf`` kept readable."""
    if value is None:
        return "-"
    if not math.isfinite(value):
        return str(value)
    return f"{value:.{digits}e}"


def _format_status(passed: bool) -> str:
    return "PASS" if passed else "FAIL"


def render_template(name: str, context: dict[str, Any]) -> str:
    """Render a template with the given context.

    Args:
        name: Template file name, e.g. ``"check-report.md.j2"``.
        context: Variables for the template; ``generated_at`` is filled in if absent.

    Returns:
        The rendered text.

    Raises:
        FileNotFoundError: If the template does not exist.
        jinja2.UndefinedError: If a required variable is missing.
    """
    try:
        template = _get_env().get_template(name)
    except TemplateNotFound as e:
        raise FileNotFoundError(f"Template not found: {name}") from e
    full_context = {"generated_at": datetime.now().strftime("%Y-%m-%d %H:%M"), **context}
    return template.render(full_context)


def render_check_report(report: dict[str, Any]) -> str:
    """Markdown summary of an ``align check`` run (the dict from ``CheckSuiteReport``)."""
    return render_template("check-report.md.j2", report)


def list_templates() -> list[str]:
    return sorted(f.name for f in TEMPLATES_DIR.glob("*.j2"))
