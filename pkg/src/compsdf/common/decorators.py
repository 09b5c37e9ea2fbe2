import gc
import logging
import time
from functools import wraps

import torch


def gc_collect(fn):
    @wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        finally:
            gc.collect()

    return wrapper


def deterministic(fn):
    """Run the wrapped function with deterministic torch kernels, restoring the previous mode."""

    @wraps(fn)
    def wrapper(*args, **kwargs):
        previous = torch.are_deterministic_algorithms_enabled()
        torch.use_deterministic_algorithms(True)
        try:
            return fn(*args, **kwargs)
        finally:
            torch.use_deterministic_algorithms(previous)

    return wrapper


def log_duration(title: str):
    """
    Log the wall time of the wrapped call into the logger of the wrapped function's module.
    :param title: Human readable step name.
    """

    def decorator(fn):
        logger = logging.getLogger(fn.__module__)

        @wraps(fn)
        def wrapper(*args, **kwargs):
            started = time.perf_counter()
            try:
                return fn(*args, **kwargs)
            finally:
                logger.info(f'{title}: {time.perf_counter() - started:.2f} с')

        return wrapper

    return decorator
