import logging
import multiprocessing
import os
import queue
import sys
from contextlib import contextmanager
from logging.handlers import QueueHandler, QueueListener, RotatingFileHandler

from config.config import CONFIG_ERRORS, Settings
from utils.custom_json_formatter import CustomJSONFormatter
from utils.exceptions import LoggingConfigurationError
from utils.logging_helpers import get_memory_usage

ERROR_LOGGER_NAME = "logging_errors"


class SafeQueueListener(QueueListener):
    """
    QueueListener that wraps handler execution with error handling.
    A failing handler must not kill the listener thread mid-sweep.
    """

    def handle(self, record):
        try:
            super().handle(record)
        except Exception as e:
            print(f"❌ Logging error while processing queue record: {e}", file=sys.stderr)


def configure_logging(settings: Settings):
    """
    Configures structured JSON logging:
    - ✅ QueueHandler + SafeQueueListener so solver threads never block on I/O.
    - ✅ RotatingFileHandler with configurable rotation.
    - ✅ Separate levels for file and console output.
    - ✅ Separate error logger that replays `CONFIG_ERRORS`.

    Args:
        settings (Settings): Injected run settings.

    Returns:
        tuple[logging.Logger, SafeQueueListener]: Root logger and its running listener.
    """
    try:
        cfg = settings.logging

        for path in (cfg.log_file_path, cfg.error_log_file_path):
            log_dir = os.path.dirname(path)
            if log_dir:
                os.makedirs(log_dir, exist_ok=True)
            if not os.path.exists(path):
                open(path, "a").close()
            os.chmod(path, 0o600)

        formatter = CustomJSONFormatter(cfg)

        file_handler = RotatingFileHandler(cfg.log_file_path, maxBytes=cfg.max_log_file_size, backupCount=cfg.max_backup_files)
        file_handler.setFormatter(formatter)
        file_handler.setLevel(cfg.file_log_level)

        error_handler = RotatingFileHandler(cfg.error_log_file_path, maxBytes=cfg.max_log_file_size, backupCount=cfg.max_backup_files)
        error_handler.setFormatter(formatter)
        error_handler.setLevel(logging.ERROR)

        stream_handler = logging.StreamHandler()
        stream_handler.setFormatter(formatter)
        stream_handler.setLevel(cfg.console_log_level)

        log_queue = queue.Queue(cfg.log_queue_size)
        queue_handler = QueueHandler(log_queue)
        listener = SafeQueueListener(log_queue, file_handler, stream_handler, error_handler, respect_handler_level=True)
        listener.start()

        logger = logging.getLogger()
        if logger.hasHandlers():
            logger.handlers.clear()
        logger.addHandler(queue_handler)
        logger.setLevel(cfg.log_level)

        error_logger = logging.getLogger(ERROR_LOGGER_NAME)
        error_logger.handlers.clear()
        error_logger.addHandler(error_handler)
        error_logger.setLevel(logging.ERROR)
        error_logger.propagate = False

        for error in CONFIG_ERRORS:
            error_logger.error(f"⚠️ Configuration Error: {error}")

        if cfg.enable_memory_logging:
            logger.info("ℹ️ Logging system initialized", extra={"memory_usage_mb": get_memory_usage()})

        return logger, listener

    except Exception as e:
        raise LoggingConfigurationError(f"❌ Error configuring logging: {e}")


def shutdown_logging(listener):
    """Flushes queued records, stops the listener thread and detaches the root QueueHandler."""
    if listener is not None:
        listener.stop()
    root = logging.getLogger()
    for handler in [h for h in root.handlers if isinstance(h, QueueHandler)]:
        root.removeHandler(handler)
        handler.close()


class _LoggerDispatch(logging.Handler):
    """Replays a record from a worker process through the logger it was emitted on."""

    def emit(self, record):
        logging.getLogger(record.name).handle(record)


@contextmanager
def worker_log_forwarding():
    """
    Collects records from pool worker processes into this process's logging tree.

    Yields:
        tuple[multiprocessing.Queue, int]: The queue workers write to and the root
        level they should log at; both go to `install_worker_logging`.
    """
    log_queue = multiprocessing.Queue(-1)
    listener = SafeQueueListener(log_queue, _LoggerDispatch())
    listener.start()
    try:
        yield log_queue, logging.getLogger().getEffectiveLevel()
    finally:
        listener.stop()
        log_queue.close()
        log_queue.join_thread()


def install_worker_logging(log_queue, level):
    """Pool initializer: routes every record of the worker's root logger into `log_queue`."""
    root = logging.getLogger()
    root.handlers.clear()
    root.addHandler(QueueHandler(log_queue))
    root.setLevel(level)
