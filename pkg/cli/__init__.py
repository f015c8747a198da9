"""Command-line interface."""

__version__ = "0.1.0"

from .config import PathsConfig, RunConfig, load_run_config, parse_override  # noqa: E402
from .main import build_parser, dispatch, main  # noqa: E402

__all__ = ['__version__', 'PathsConfig', 'RunConfig', 'load_run_config', 'parse_override', 'build_parser', 'dispatch', 'main']
