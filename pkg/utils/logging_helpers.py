import functools
import logging
import time

import psutil


def get_memory_usage():
    """
    Returns the current process's memory usage in MB.

    Returns:
        float: Memory usage in megabytes (rounded to 2 decimal places), or "UNKNOWN" if retrieval fails.
    """
    try:
        process = psutil.Process()
        memory_usage_mb = process.memory_info().rss / (1024 * 1024)  # Convert bytes to MB
        return round(memory_usage_mb, 2)
    except (psutil.NoSuchProcess, psutil.AccessDenied, psutil.ZombieProcess):
        return "UNKNOWN"  # ✅ Prevents logging failures due to permission or process errors


def track_execution_time(logger=None, level=logging.DEBUG):
    """
    Decorator that logs how long the wrapped solver call took.

    Usage:
        @track_execution_time()
        def solve_ws(...):
            ...

    The timing is emitted as `execution_time_ms` in the record's extra fields.
    """

    def decorator(func):
        log = logger or logging.getLogger(func.__module__)

        @functools.wraps(func)
        def wrapper(*args, **kwargs):
            with ExecutionTimer() as timer:
                result = func(*args, **kwargs)
            log.log(level, "%s finished", func.__name__, extra={"execution_time_ms": timer.execution_time_ms})
            return result

        return wrapper

    return decorator


class ExecutionTimer:
    """
    Context manager for measuring execution time within a code block.

    Usage:
        with ExecutionTimer() as timer:
            some_code()
        print(timer.execution_time_ms)  # Access execution time after the block ends.
    """

    def __enter__(self):
        self.start_time = time.perf_counter()
        self.execution_time_ms = None
        return self

    def __exit__(self, exc_type, exc_value, traceback):
        self.execution_time_ms = round((time.perf_counter() - self.start_time) * 1000, 2)
