# services/citest/observability.py

import contextvars
import logging
import sys
import threading
import time
from contextlib import contextmanager
from datetime import datetime, timezone
from functools import wraps
from typing import Any, Dict, Optional, Tuple, Type

from pythonjsonlogger import jsonlogger

logger = logging.getLogger(__name__)


# --- Metrics ---
# Process-wide counters and latency lists; good enough for a CLI and for test assertions.
# Bootstrap chunks and replications update them from worker threads.
class MetricsCollector:
    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super(MetricsCollector, cls).__new__(cls)
            cls._instance._counters = {}
            cls._instance._histograms = {}
            cls._instance._lock = threading.Lock()
        return cls._instance

    def increment_counter(self, name: str, labels: Optional[Dict[str, str]] = None, value: int = 1):
        """Increment a counter metric with optional labels"""
        key = (name, frozenset((labels or {}).items()))
        with self._lock:
            self._counters[key] = self._counters.get(key, 0) + value

    def record_latency(self, name: str, seconds: float, labels: Optional[Dict[str, str]] = None):
        """Record a latency measurement"""
        key = (name, frozenset((labels or {}).items()))
        with self._lock:
            self._histograms.setdefault(key, []).append(seconds)

    def get_metrics(self) -> Dict[str, Any]:
        """Get current metrics snapshot"""
        with self._lock:
            return {
                'counters': [
                    {'name': name, 'labels': dict(labels), 'value': value}
                    for (name, labels), value in self._counters.items()
                ],
                'histograms': [
                    {'name': name, 'labels': dict(labels), 'values': list(values)}
                    for (name, labels), values in self._histograms.items()
                ]
            }

    def reset(self):
        with self._lock:
            self._counters.clear()
            self._histograms.clear()


metrics = MetricsCollector()


# --- Logging ---
_log_context: contextvars.ContextVar[Dict[str, Any]] = contextvars.ContextVar("citest_log_context", default={})


class ContextFilter(logging.Filter):
    """Copies the active log_context fields onto every record."""

    def filter(self, record: logging.LogRecord) -> bool:
        for key, value in _log_context.get().items():
            if not hasattr(record, key):
                setattr(record, key, value)
        return True


class JSONLogFormatter(jsonlogger.JsonFormatter):
    def add_fields(self, log_record: dict, record: logging.LogRecord, message_dict: dict) -> None:
        super().add_fields(log_record, record, message_dict)
        log_record['level'] = record.levelname
        log_record['logger'] = record.name
        log_record['timestamp'] = datetime.now(timezone.utc).isoformat()


def configure_logging(level: str = "INFO", stream=None) -> logging.Handler:
    """Install the JSON handler on the package logger.

    Only the CLI calls this; library users keep control of their own handlers.
    """
    package_logger = logging.getLogger("services.citest")
    for existing in list(package_logger.handlers):
        if getattr(existing, "_citest_handler", False):
            package_logger.removeHandler(existing)

    handler = logging.StreamHandler(stream or sys.stderr)
    handler.setFormatter(JSONLogFormatter())
    handler.addFilter(ContextFilter())
    handler._citest_handler = True
    package_logger.addHandler(handler)
    package_logger.setLevel(level.upper())
    package_logger.propagate = False
    return handler


@contextmanager
def log_context(**context):
    """Add context to all log messages within the block"""
    token = _log_context.set({**_log_context.get(), **context})
    try:
        yield
    finally:
        _log_context.reset(token)


def timed_operation(operation_name: str, level: int = logging.INFO,
                    expected: Tuple[Type[BaseException], ...] = (), **labels):
    """Decorator to time an operation, record its latency and log the outcome.

    Exceptions listed in ``expected`` are failures the caller handles; they are
    logged at WARNING without a traceback. Anything else is logged at ERROR.
    """
    def decorator(func):
        @wraps(func)
        def wrapper(*args, **kwargs):
            start_time = time.perf_counter()
            status = 'success'
            try:
                return func(*args, **kwargs)
            except expected as e:
                status = 'error'
                logger.warning(f"{operation_name} failed",
                               extra={'error': str(e), 'error_type': e.__class__.__name__})
                raise
            except Exception as e:
                status = 'error'
                logger.error(f"{operation_name} failed", exc_info=True,
                             extra={'error': str(e), 'error_type': e.__class__.__name__})
                raise
            finally:
                duration = time.perf_counter() - start_time
                metrics.record_latency(
                    f"{operation_name}_duration_seconds",
                    duration,
                    {**labels, 'status': status}
                )
                logger.log(
                    level,
                    f"{operation_name} completed",
                    extra={
                        'operation': operation_name,
                        'duration_seconds': duration,
                        'status': status,
                        **labels
                    }
                )
        return wrapper
    return decorator
