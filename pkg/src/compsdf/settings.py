"""
Django settings for compsdf project.

The project has no database and no web frontend: Django provides the settings layer,
logging configuration, management commands (the CLI) and the test runner.

For the full list of settings and their values, see
https://docs.djangoproject.com/en/5.2/ref/settings/
"""
import os
from pathlib import Path

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent

SECRET_KEY = os.getenv('COMPSDF_SECRET_KEY', 'compsdf-local-only')

DEBUG = False

ALLOWED_HOSTS = []


# Application definition

INSTALLED_APPS = [
    'compsdf.common.apps.CommonConfig',
    'compsdf.geometry.apps.GeometryConfig',
    'compsdf.field.apps.FieldConfig',
    'compsdf.rendering.apps.RenderingConfig',
    'compsdf.training.apps.TrainingConfig',
    'compsdf.meshing.apps.MeshingConfig',
    'compsdf.evaluation.apps.EvaluationConfig',
    'compsdf.dataio.apps.DataioConfig',
]

# Database is not used.
DATABASES = {}


# Internationalization
# https://docs.djangoproject.com/en/5.2/topics/i18n/

LANGUAGE_CODE = 'ru'

TIME_ZONE = 'Europe/Moscow'

USE_I18N = True

USE_TZ = True


# Pipeline defaults

COMPSDF_SEED = int(os.getenv('COMPSDF_SEED', 0))

COMPSDF_THREADS = int(os.getenv('COMPSDF_THREADS', 8))

COMPSDF_CHECKPOINT_VERSION = 1

COMPSDF_SLOW_TESTS = os.getenv('COMPSDF_SLOW_TESTS', '') == '1'


LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'console': {
            'format': '{asctime} {levelname} {module} {message}',
            'style': '{',
        },
    },
    'handlers': {
        'console': {
            'level': 'INFO',
            'class': 'logging.StreamHandler',
            'formatter': 'console'
        },
    },
    'loggers': {
        'django': {
            'handlers': ['console'],
            'propagate': True,
        },
        'compsdf': {
            'handlers': ['console'],
            'level': os.getenv('COMPSDF_LOG_LEVEL', 'INFO'),
        }
    }
}
