"""
Django settings for the shockstrip project.

The project hosts a single app, ``lab``, whose services build viscous shock
profiles, evolve perturbations and render strip-law verdicts. There is no web
surface: everything runs through management commands.
"""

from pathlib import Path
import os

import dj_database_url
from dotenv import load_dotenv

load_dotenv()

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent

SECRET_KEY = os.getenv('DJANGO_SECRET_KEY', 'shockstrip-local-only-key')

DEBUG = os.getenv('DJANGO_DEBUG', 'False').lower() == 'true'

ALLOWED_HOSTS = []


# Application definition

INSTALLED_APPS = [
    'django.contrib.contenttypes',
    'django.contrib.auth',
    'rest_framework',
    'lab',
]

MIDDLEWARE = []

ROOT_URLCONF = None


# Database (run ledger only)

DATABASES = {
    'default': dj_database_url.config(
        default=f"sqlite:///{BASE_DIR / 'db.sqlite3'}",
        conn_max_age=0,
    )
}


# Cache (wave profiles and operator eigendecompositions, per process)

CACHES = {
    'default': {
        'BACKEND': 'django.core.cache.backends.locmem.LocMemCache',
        'LOCATION': 'shockstrip-default',
    },
    'numerics': {
        'BACKEND': 'django.core.cache.backends.locmem.LocMemCache',
        'LOCATION': 'shockstrip-numerics',
        'TIMEOUT': None,
        'OPTIONS': {
            'MAX_ENTRIES': 32,
        },
    },
}


# Internationalization

LANGUAGE_CODE = 'en-us'

TIME_ZONE = 'UTC'

USE_I18N = False

USE_TZ = True

DEFAULT_AUTO_FIELD = 'django.db.models.BigAutoField'


# ================================================================
# LAB DEFAULTS (overridable from the environment)
# ================================================================

LAB = {
    'OUTPUT_ROOT': os.getenv('LAB_OUTPUT_ROOT', str(BASE_DIR / 'runs')),
    'SPECTRAL_FLOOR': float(os.getenv('LAB_SPECTRAL_FLOOR', '1e-13')),
    # evolution grid
    'N': int(os.getenv('LAB_N', '2048')),
    'L': float(os.getenv('LAB_L', '40.0')),
    # linear operator grid
    'LINOP_L': float(os.getenv('LAB_LINOP_L', '40.0')),
    'LINOP_DX': float(os.getenv('LAB_LINOP_DX', '0.05')),
    # integral-equation grid
    'PICARD_L': float(os.getenv('LAB_PICARD_L', '20.0')),
    'PICARD_DX': float(os.getenv('LAB_PICARD_DX', '0.025')),
    'PICARD_HORIZON': float(os.getenv('LAB_PICARD_HORIZON', '2.0')),
    'PICARD_STEPS': int(os.getenv('LAB_PICARD_STEPS', '101')),
    'PICARD_MAX_ITER': int(os.getenv('LAB_PICARD_MAX_ITER', '50')),
    'PICARD_TOL': float(os.getenv('LAB_PICARD_TOL', '1e-10')),
    'PICARD_SIGMA_MAX': float(os.getenv('LAB_PICARD_SIGMA_MAX', '0.9')),
    'PICARD_TAU_TOL': float(os.getenv('LAB_PICARD_TAU_TOL', '1e-4')),
    # wave and weights
    'SINGULARITY_MARGIN': float(os.getenv('LAB_SINGULARITY_MARGIN', '0.05')),
    'HARDY_LINES': int(os.getenv('LAB_HARDY_LINES', '32')),
    # seconds; unset keeps cached profiles and operators for the life of the process
    'PROFILE_CACHE_TIMEOUT': int(os.getenv('LAB_PROFILE_CACHE_TIMEOUT')) if os.getenv('LAB_PROFILE_CACHE_TIMEOUT') else None,
}


# ================================================================
# LOGGING
# ================================================================

LOG_DIR = os.path.join(BASE_DIR, 'logs')
os.makedirs(LOG_DIR, exist_ok=True)

LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'verbose': {
            'format': '{levelname} {asctime} {module} {message}',
            'style': '{',
        },
    },
    'handlers': {
        'console': {
            'class': 'logging.StreamHandler',
            'formatter': 'verbose',
        },
        'file': {
            'class': 'logging.FileHandler',
            'filename': os.path.join(LOG_DIR, 'lab.log'),
            'formatter': 'verbose',
        },
    },
    'loggers': {
        'django': {
            'handlers': ['console', 'file'],
            'level': 'INFO',
        },
        'lab': {
            'handlers': ['console', 'file'],
            'level': os.getenv('LAB_LOG_LEVEL', 'INFO'),
        },
    },
}
