#!/usr/bin/env python
"""Django's command-line utility for administrative tasks."""
import os
import sys
from pathlib import Path

SRC_DIR = Path(__file__).resolve().parent / 'src'


def main():
    """Run administrative tasks and the compsdf pipeline commands."""
    sys.path.insert(0, str(SRC_DIR))
    os.environ.setdefault('DJANGO_SETTINGS_MODULE', 'compsdf.settings')
    try:
        from django.core.management import execute_from_command_line
    except ImportError as exc:
        raise ImportError(
            "Couldn't import Django. Are you sure it's installed and "
            "available on your PYTHONPATH environment variable? Did you "
            "forget to activate a virtual environment?"
        ) from exc
    execute_from_command_line(sys.argv)


if __name__ == '__main__':
    main()
