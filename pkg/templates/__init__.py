"""Text templates for generated files."""

from .run_config import format_toml_value, get_run_config_template, render_section

__all__ = ['get_run_config_template', 'render_section', 'format_toml_value']
