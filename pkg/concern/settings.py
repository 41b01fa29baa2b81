"""
Django settings for the concern project.

The project has no web surface and no database: it is driven through
management commands (``evaluate``, ``compare``, ``train``) and the
``metrics`` app.

For the full list of settings and their values, see
https://docs.djangoproject.com/en/5.2/ref/settings/
"""

from pathlib import Path
import os

from dotenv import load_dotenv

# Load .env file only if it exists (for local development)
env_path = Path(__file__).resolve().parent.parent / ".env"
if env_path.exists():
    load_dotenv(env_path)


# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent

# SECURITY WARNING: keep the secret key used in production secret!
SECRET_KEY = os.getenv("SECRET_KEY", "concern-insecure-local-key")

DEBUG = os.getenv("DEBUG", "false").lower() == "true"

ALLOWED_HOSTS = []


# Application definition

INSTALLED_APPS = [
    "metrics.apps.MetricsConfig",
]

# No database: every command works on files.
DATABASES = {}


# Internationalization
# https://docs.djangoproject.com/en/5.2/topics/i18n/

LANGUAGE_CODE = "en"

TIME_ZONE = "Europe/Belgrade"

USE_I18N = False
USE_TZ = True


# MPCS evaluation defaults

# Default torch thread count for training and evaluation commands
MPCS_THREADS = int(os.getenv("MPCS_THREADS", "1"))

# Fallback config document for commands invoked without --config
MPCS_DEFAULT_CONFIG = Path(
    os.getenv("MPCS_DEFAULT_CONFIG", str(BASE_DIR / "configs" / "case_study.json"))
)

# Where `train` writes dumps and logs when --output-dir is omitted
MPCS_OUTPUT_DIR = Path(os.getenv("MPCS_OUTPUT_DIR", str(BASE_DIR / "runs")))

MPCS_LOG_LEVEL = os.getenv("MPCS_LOG_LEVEL", "INFO").upper()


LOGGING = {
    "version": 1,
    "disable_existing_loggers": False,
    "formatters": {
        "default": {
            "format": "%(asctime)s [%(name)s] %(levelname)s: %(message)s",
        },
    },
    "handlers": {
        "console": {
            "class": "logging.StreamHandler",
            "formatter": "default",
        },
    },
    "loggers": {
        "metrics": {"handlers": ["console"], "level": MPCS_LOG_LEVEL},
        "concern": {"handlers": ["console"], "level": MPCS_LOG_LEVEL},
    },
}
