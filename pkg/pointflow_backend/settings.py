"""
Django settings for pointflow_backend project.

The project has no web surface: Django provides the management-command CLI, template rendering
for the text reports and the test runner. Run defaults live in ``POINTFLOW``.

For more information on this file, see
https://docs.djangoproject.com/en/5.0/topics/settings/
"""

from pathlib import Path
import os

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent

# SECURITY WARNING: keep the secret key used in production secret!
SECRET_KEY = os.environ.get('POINTFLOW_SECRET_KEY', 'django-insecure-pointflow-cli-only')

DEBUG = os.environ.get('POINTFLOW_DEBUG', '0') == '1'

ALLOWED_HOSTS = []

# Application definition

INSTALLED_APPS = [
    'django.contrib.auth',
    'django.contrib.contenttypes',
    'rest_framework',
    'pointflow_app',
]

TEMPLATES = [
    {
        'BACKEND': 'django.template.backends.django.DjangoTemplates',
        'DIRS': [BASE_DIR / 'templates'],
        'APP_DIRS': True,
        'OPTIONS': {
            'context_processors': [],
        },
    },
]

# Database
# Nothing is stored in it; Django only needs one configured.

DATABASES = {
    'default': {
        'ENGINE': 'django.db.backends.sqlite3',
        'NAME': BASE_DIR / 'db.sqlite3',
    }
}

# Internationalization

LANGUAGE_CODE = 'en-us'

TIME_ZONE = 'UTC'

USE_I18N = False

USE_TZ = True

DEFAULT_AUTO_FIELD = 'django.db.models.BigAutoField'

# Logging

LOG_LEVEL = os.environ.get('POINTFLOW_LOG_LEVEL', 'INFO')

LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'verbose': {
            'format': '{asctime} {levelname} {name} {message}',
            'style': '{',
        },
    },
    'handlers': {
        'console': {
            'class': 'logging.StreamHandler',
            'formatter': 'verbose',
        },
    },
    'loggers': {
        'pointflow_app': {
            'handlers': ['console'],
            'level': LOG_LEVEL,
            'propagate': False,
        },
        'utils': {
            'handlers': ['console'],
            'level': LOG_LEVEL,
            'propagate': False,
        },
    },
}

# Run defaults. Precedence: these values < --config YAML file < command-line flags.

POINTFLOW = {
    'MODEL': {
        'n_points': 256,
        'input_dim': 2,
        'n_cfd': 3,
        'global_feature_size': 128,
        'tail_mlp': None,
    },
    'TRAIN': {
        'learning_rate': 5e-4,
        'beta1': 0.9,
        'beta2': 0.999,
        'epsilon': 1e-6,
        'batch_size': 8,
        'epochs': 200,
        'log_every': 10,
    },
    'DATA': {
        'samples': 40,
        'radius_min': 0.4,
        'radius_max': 1.2,
        'radius_step': 0.1,
        'n_surface': None,
        'stretch': 8.0,
        'extent': None,
        'jitter': 0.25,
        'rho': 1.0,
        'u_inf': 1.0,
        'p0': 0.0,
        'mu': 0.05,
    },
    'EVAL': {
        'stencil_k': 12,
        'relative_step': 1e-4,
    },
    'GRID': {
        'global_features': [256, 512, 1024, 2048],
        'batch_sizes': [64, 128, 256],
        'memory_limit_mb': 2048,
    },
    'RUNTIME': {
        'seed': 0,
        'precision': os.environ.get('POINTFLOW_PRECISION', 'f64'),
        'n_jobs': 1,
        'blas_threads': 1,
        'plots': False,
    },
}
