"""
citest command line.

    python -m services.citest test --data sample.csv --y y --z z --x x1
    python -m services.citest simulate --preset table1 --reps 500 --bootstrap 200

Reports go to stdout (JSON by default, --format table for aligned text); JSON
logs go to stderr. Exit status is 0 on a completed run whatever the decision,
2 on invalid input or configuration, 1 on anything unexpected.
"""
import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from dotenv import load_dotenv
from pydantic import ValidationError

from services.citest import __version__
from services.citest.commands import simulation, testing
from services.citest.config import default_log_level, default_threads
from services.citest.errors import CITestError, ConfigError
from services.citest.observability import configure_logging
from services.citest.reporting import ReportDocument

logger = logging.getLogger(__name__)

RENDERERS = {
    "test": testing.render,
    "simulate": simulation.render,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--threads", type=int, default=None, help="Worker threads (CITEST_THREADS when omitted)")
    common.add_argument("--format", choices=["json", "table"], default="json", help="Report format on stdout")
    common.add_argument("--log-level", default=None, help="Log level (CITEST_LOG_LEVEL when omitted)")
    common.add_argument("--from-report", default=None,
                        help="Re-run the configuration echoed in a previous JSON report")

    parser = argparse.ArgumentParser(prog="citest", description="Conditional independence tests "
                                     "via empirical Rosenblatt transforms and the wild bootstrap")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    subparsers = parser.add_subparsers(dest="command", required=True)
    testing.register(subparsers, parents=[common])
    simulation.register(subparsers, parents=[common])
    return parser


def describe_validation_error(error: ValidationError) -> str:
    parts = []
    for item in error.errors():
        location = ".".join(str(p) for p in item.get("loc", ())) or "config"
        parts.append(f"{location}: {item.get('msg')}")
    return "; ".join(parts)


def load_replay(path: str, command: str) -> ReportDocument:
    try:
        document = ReportDocument.from_json(Path(path).read_text(encoding="utf-8"))
    except OSError as e:
        raise ConfigError(f"cannot read report '{path}': {e}")
    if document.command != command:
        raise ConfigError(f"report '{path}' was produced by '{document.command}', not '{command}'")
    return document


def _emit_error(code: str, message: str) -> None:
    print(json.dumps({"errorCode": code, "message": message}), file=sys.stderr)


def main(argv: Optional[Sequence[str]] = None) -> int:
    load_dotenv()
    args = build_parser().parse_args(argv)
    try:
        try:
            configure_logging(args.log_level or default_log_level())
        except ValueError:
            raise ConfigError(f"unknown log level '{args.log_level or default_log_level()}'")
        threads = args.threads if args.threads is not None else default_threads()
        if threads < 1:
            raise ConfigError(f"--threads must be at least 1, got {threads}")
        replay = load_replay(args.from_report, args.command) if args.from_report else None
        document = args.handler(args, threads=threads, replay=replay)
        output = document.to_json() if args.format == "json" else RENDERERS[document.command](document)
    except ValidationError as e:
        error = ConfigError(describe_validation_error(e))
        logger.warning("invalid configuration", extra={'error': str(error)})
        _emit_error(error.error_code, str(error))
        return 2
    except CITestError as e:
        logger.warning("run rejected", extra={'error': str(e), 'error_type': e.__class__.__name__})
        _emit_error(e.error_code, str(e))
        return 2
    except Exception as e:
        logger.error("unexpected failure", exc_info=True, extra={'error': str(e)})
        _emit_error("INTERNAL_ERROR", str(e))
        return 1

    print(output)
    return 0


if __name__ == "__main__":
    sys.exit(main())
