"""
Helpers shared by the ``evaluate``, ``compare`` and ``train`` commands.
"""

import json
import logging
from contextlib import contextmanager
from pathlib import Path

from django.conf import settings
from django.core.management.base import CommandError
from pydantic import ValidationError

from .core import MpcsConfig, MpcsError, load_config_file

logger = logging.getLogger(__name__)

EXIT_IO = 1
EXIT_VALIDATION = 2


@contextmanager
def command_errors():
    """Translate domain failures into ``CommandError`` with a stable exit status.

    1 for I/O, 2 for validation, 3 for numeric failure.
    """
    try:
        yield
    except MpcsError as exc:
        raise CommandError(str(exc), returncode=exc.exit_code) from exc
    except ValidationError as exc:
        raise CommandError(str(exc), returncode=EXIT_VALIDATION) from exc
    except json.JSONDecodeError as exc:
        raise CommandError(f"invalid JSON: {exc}", returncode=EXIT_VALIDATION) from exc
    except OSError as exc:
        raise CommandError(str(exc), returncode=EXIT_IO) from exc


def resolve_config(path: str | None) -> MpcsConfig:
    """Load ``path``, or the configured default document when it is omitted."""
    config_path = Path(path) if path else Path(settings.MPCS_DEFAULT_CONFIG)
    logger.debug("Using MPCS config %s", config_path)
    return load_config_file(config_path)


def write_output(text: str, output: str | None, stdout) -> None:
    if output:
        Path(output).write_text(text, encoding="utf-8")
    else:
        stdout.write(text)
