import json
import logging
import os
import socket
import time
import traceback
from datetime import datetime

import json_log_formatter

from utils.logging_helpers import get_memory_usage

RUN_CONTEXT_FIELDS = ("protocol", "drop", "eps_se", "seed")

# LogRecord attributes that are never copied into `extra`
_RESERVED = {"args", "msg", "exc_info", "exc_text", "created", "msecs", "relativeCreated", "stack_info"}
_BLANK_RECORD = logging.LogRecord("blank", logging.NOTSET, "", 0, "", (), None)


class CustomJSONFormatter(json_log_formatter.JSONFormatter):
    """
    JSON formatter for solver and sweep logs.

    Features:
    - ✅ Carries run context (`protocol`, `drop`, `eps_se`, `seed`) when passed via `extra=`.
    - ✅ Includes source details (`module`, `function`, `line`, `process`, `thread`).
    - ✅ ISO 8601 UTC timestamps with milliseconds.
    - ✅ Optional execution time and memory usage.
    - ✅ Stack traces on ERROR/CRITICAL records.
    """

    def __init__(self, logging_config=None):
        super().__init__()
        self.enable_memory_logging = getattr(logging_config, "enable_memory_logging", True)
        self.enable_execution_time_logging = getattr(logging_config, "enable_execution_time_logging", True)
        self.enable_run_metadata = getattr(logging_config, "enable_run_metadata", True)
        self.include_stack_trace = getattr(logging_config, "enable_stack_trace_logging", True)

    def format(self, record):
        message = record.getMessage()
        extra = self._extract_extra_fields(record)
        structured_record = self.json_record(message, extra, record)
        return json.dumps(structured_record, default=str)

    def json_record(self, message, extra, record):
        """
        Builds the structured dictionary for one log record.

        Args:
            message (str): The rendered log message.
            extra (dict): Fields supplied through `extra=`.
            record (logging.LogRecord): The source record.
        """
        payload = super().json_record(message, {}, record)
        payload["levelname"] = record.levelname
        payload["timestamp"] = time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime(record.created)) + f".{int(record.msecs):03d}Z"
        if isinstance(payload.get("time"), datetime):
            payload["time"] = payload["time"].isoformat()

        payload.update({
            "logger": record.name,
            "module": record.module,
            "function": record.funcName,
            "line": record.lineno,
            "process": record.process,
            "thread": record.thread,
            "hostname": socket.gethostname(),
            "environment": os.getenv("ENVIRONMENT", "development"),
        })

        if self.enable_run_metadata:
            for field in RUN_CONTEXT_FIELDS:
                if field in extra:
                    payload[field] = extra[field]

        if self.enable_execution_time_logging and "execution_time_ms" in extra:
            payload["execution_time_ms"] = extra["execution_time_ms"]

        if self.enable_memory_logging:
            payload["memory_usage_mb"] = extra.get("memory_usage_mb", get_memory_usage())

        for key, value in extra.items():
            if key not in payload and key not in RUN_CONTEXT_FIELDS and not hasattr(_BLANK_RECORD, key):
                payload[key] = value

        if self.include_stack_trace and record.levelname in ("ERROR", "CRITICAL"):
            try:
                if record.exc_info:
                    payload["stack_trace"] = "".join(traceback.format_exception(*record.exc_info))
            except Exception as e:
                payload["stack_trace"] = f"⚠️ Error retrieving stack trace: {e}"
        return payload

    def _extract_extra_fields(self, record):
        return {key: value for key, value in record.__dict__.items() if key not in _RESERVED}

