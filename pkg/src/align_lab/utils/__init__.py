"""Shared utilities.

- templates: Jinja2 report rendering
- validation: sweep axis parsing and path checks
"""

from align_lab.utils.templates import render_check_report, render_template
from align_lab.utils.validation import (
    parse_axis,
    parse_scalar,
    validate_config_path,
    validate_output_path,
)

__all__ = [
    "parse_axis",
    "parse_scalar",
    "render_check_report",
    "render_template",
    "validate_config_path",
    "validate_output_path",
]
