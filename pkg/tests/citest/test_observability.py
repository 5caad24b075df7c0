"""
Tests for metrics and structured logging.
"""
import io
import json
import logging
from concurrent.futures import ThreadPoolExecutor

import pytest

from services.citest.observability import (
    MetricsCollector,
    configure_logging,
    log_context,
    metrics,
    timed_operation,
)

logger = logging.getLogger("services.citest.tests")


class TestMetricsCollector:
    def test_singleton(self):
        assert MetricsCollector() is metrics

    def test_counters_with_labels(self, counter_value):
        metrics.increment_counter("kernel_fallback_total", {"estimator": "y_hat"})
        metrics.increment_counter("kernel_fallback_total", {"estimator": "y_hat"}, value=2)
        metrics.increment_counter("kernel_fallback_total", {"estimator": "z_hat"})
        assert counter_value("kernel_fallback_total", {"estimator": "y_hat"}) == 3
        assert counter_value("kernel_fallback_total", {"estimator": "z_hat"}) == 1
        assert counter_value("kernel_fallback_total") == 0

    def test_snapshot_and_reset(self):
        metrics.increment_counter("bootstrap_draws_total", value=5)
        metrics.record_latency("run_test_duration_seconds", 0.25)
        snapshot = metrics.get_metrics()
        assert snapshot['counters'] == [{'name': "bootstrap_draws_total", 'labels': {}, 'value': 5}]
        assert snapshot['histograms'][0]['values'] == [0.25]
        metrics.reset()
        assert metrics.get_metrics() == {'counters': [], 'histograms': []}

    def test_concurrent_increments_are_not_lost(self, counter_value):
        def bump(_):
            for _ in range(2000):
                metrics.increment_counter("bootstrap_draws_total", {"design": "C"})
                metrics.record_latency("chunk_duration_seconds", 0.001)

        with ThreadPoolExecutor(max_workers=8) as pool:
            list(pool.map(bump, range(8)))
        assert counter_value("bootstrap_draws_total", {"design": "C"}) == 8 * 2000
        assert len(metrics.get_metrics()['histograms'][0]['values']) == 8 * 2000


class TestLogging:
    def test_json_lines_carry_context(self):
        stream = io.StringIO()
        configure_logging("INFO", stream=stream)
        with log_context(design="A1 a=0.5", replication=3):
            logger.info("replication finished", extra={'rejections': 1})
        logger.info("outside")
        first, second = [json.loads(line) for line in stream.getvalue().splitlines()]
        assert first['message'] == "replication finished"
        assert first['design'] == "A1 a=0.5"
        assert first['replication'] == 3
        assert first['rejections'] == 1
        assert first['level'] == "INFO"
        assert first['logger'] == "services.citest.tests"
        assert 'timestamp' in first
        assert 'design' not in second

    def test_nested_context(self):
        stream = io.StringIO()
        configure_logging("DEBUG", stream=stream)
        with log_context(command="simulate"):
            with log_context(design="C"):
                logger.debug("inner")
        record = json.loads(stream.getvalue())
        assert (record['command'], record['design']) == ("simulate", "C")

    def test_level_filters(self):
        stream = io.StringIO()
        configure_logging("warning", stream=stream)
        logger.info("hidden")
        logger.warning("shown")
        assert [json.loads(line)['message'] for line in stream.getvalue().splitlines()] == ["shown"]

    def test_reconfiguring_replaces_handler(self):
        configure_logging("INFO", stream=io.StringIO())
        configure_logging("INFO", stream=io.StringIO())
        handlers = [h for h in logging.getLogger("services.citest").handlers if getattr(h, "_citest_handler", False)]
        assert len(handlers) == 1

    def test_unknown_level(self):
        with pytest.raises(ValueError):
            configure_logging("chatty", stream=io.StringIO())


class TestTimedOperation:
    def test_records_latency(self):
        @timed_operation("fit", model="probit")
        def fit(x):
            return x * 2

        assert fit(4) == 8
        histogram = metrics.get_metrics()['histograms'][0]
        assert histogram['name'] == "fit_duration_seconds"
        assert histogram['labels'] == {'model': "probit", 'status': "success"}
        assert histogram['values'][0] >= 0.0

    def test_reraises_and_marks_error(self, caplog):
        @timed_operation("fit")
        def fit():
            raise RuntimeError("diverged")

        with caplog.at_level(logging.INFO, logger="services.citest"):
            with pytest.raises(RuntimeError, match="diverged"):
                fit()
        assert metrics.get_metrics()['histograms'][0]['labels'] == {'status': "error"}
        assert any(record.message == "fit failed" for record in caplog.records)

    def test_expected_failures_log_a_warning(self, caplog):
        @timed_operation("fit", expected=(ValueError,))
        def fit():
            raise ValueError("separated")

        with caplog.at_level(logging.DEBUG, logger="services.citest"):
            with pytest.raises(ValueError, match="separated"):
                fit()
        failed = [record for record in caplog.records if record.message == "fit failed"]
        assert [record.levelno for record in failed] == [logging.WARNING]
        assert failed[0].exc_info is None
        assert metrics.get_metrics()['histograms'][0]['labels'] == {'status': "error"}

    def test_unexpected_failures_still_log_an_error(self, caplog):
        @timed_operation("fit", expected=(ValueError,))
        def fit():
            raise RuntimeError("diverged")

        with caplog.at_level(logging.DEBUG, logger="services.citest"):
            with pytest.raises(RuntimeError):
                fit()
        failed = [record for record in caplog.records if record.message == "fit failed"]
        assert [record.levelno for record in failed] == [logging.ERROR]
        assert failed[0].exc_info is not None
