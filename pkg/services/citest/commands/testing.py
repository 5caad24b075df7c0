"""
The ``test`` verb: read a delimited data file and run one bootstrap test on it.
"""
import argparse
import logging
from pathlib import Path
from typing import Literal, Optional, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, model_validator

from services.citest.bootstrap import TestResult, run_test
from services.citest.config import TestConfig
from services.citest.errors import ConfigError, DataFileError
from services.citest.index import IndexModel, IndexSpec, KnownTheta, ProbitMleSpec
from services.citest.observability import log_context
from services.citest.reporting import ReportDocument, render_test_table
from services.citest.transform import ContinuousZ, DiscreteZ, Sample

logger = logging.getLogger(__name__)


class RunConfig(BaseModel):
    """Everything ``test`` needs; echoed verbatim in the report."""
    model_config = ConfigDict(frozen=True, extra="forbid")

    data: str = Field(..., description="Path of the delimited data file")
    y: str = Field(..., description="Column holding Y")
    z: str = Field(..., description="Column holding Z")
    x: Tuple[str, ...] = Field(..., min_length=1, description="Columns holding X, without an intercept")
    z_kind: Literal["continuous", "discrete"] = Field("continuous", description="How Z is treated")
    support: Optional[Tuple[float, ...]] = Field(None, description="Support of a discrete Z; observed values when omitted")
    theta: Optional[Tuple[float, ...]] = Field(None, description="Known theta, intercept first")
    estimate_theta: Optional[Literal["probit"]] = Field(None, description="Estimate theta instead of supplying it")
    index_scale: float = Field(1.0, gt=0, description="Scale of the linear index")
    test: TestConfig = Field(default_factory=TestConfig)

    @model_validator(mode="after")
    def _check_theta(self) -> "RunConfig":
        if self.theta is not None and self.estimate_theta is not None:
            raise ValueError("give either theta or estimate_theta, not both")
        if self.theta is not None and len(self.theta) != len(self.x) + 1:
            raise ValueError(f"theta needs {len(self.x) + 1} values (intercept first) for {len(self.x)} x column(s)")
        if self.theta is None and self.estimate_theta is None and len(self.x) > 1:
            raise ValueError("with several x columns give --theta or --estimate-theta probit")
        if self.estimate_theta == "probit" and self.z_kind != "discrete":
            raise ValueError("--estimate-theta probit needs --z-kind discrete")
        return self

    def index_spec(self) -> IndexSpec:
        """Known theta, probit MLE, or the identity index (0, 1) for a single covariate."""
        model = IndexModel.linear(self.index_scale)
        if self.estimate_theta == "probit":
            return IndexSpec(model, ProbitMleSpec())
        return IndexSpec(model, KnownTheta(values=self.theta if self.theta is not None else (0.0, 1.0)))


def _separator(path: Path) -> str:
    with path.open("r", encoding="utf-8") as handle:
        header = handle.readline()
    return "\t" if "\t" in header else ","


def _numeric_column(frame: pd.DataFrame, column: str) -> np.ndarray:
    if column not in frame.columns:
        raise DataFileError(f"column '{column}' not found (have: {', '.join(map(str, frame.columns))})",
                            column=column)
    raw = frame[column]
    values = pd.to_numeric(raw, errors="coerce")
    bad = values.isna()
    if bad.any():
        position = int(np.flatnonzero(bad.to_numpy())[0])
        # header is line 1
        raise DataFileError(f"non-numeric value '{raw.iloc[position]}' in column '{column}' at row {position + 2}",
                            row=position + 2, column=column)
    return values.to_numpy(dtype=float)


def load_sample(config: RunConfig) -> Sample:
    path = Path(config.data)
    if not path.is_file():
        raise DataFileError(f"data file '{config.data}' does not exist")
    try:
        frame = pd.read_csv(path, sep=_separator(path), dtype=str, keep_default_na=False, skipinitialspace=True)
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise DataFileError(f"could not parse '{config.data}': {e}")
    frame.columns = [str(c).strip() for c in frame.columns]
    y = _numeric_column(frame, config.y)
    z = _numeric_column(frame, config.z)
    x = np.column_stack([_numeric_column(frame, column) for column in config.x])
    if config.z_kind == "discrete":
        support = config.support if config.support is not None else tuple(np.unique(z))
        z_kind = DiscreteZ(support)
    else:
        z_kind = ContinuousZ()
    logger.info("data loaded", extra={'path': config.data, 'rows': int(y.shape[0]), 'x_columns': len(config.x)})
    return Sample(y=y, z=z, x=x, z_kind=z_kind)


def cmd_test(config: RunConfig, threads: int = 1) -> ReportDocument:
    with log_context(command="test", data=config.data):
        sample = load_sample(config)
        result = run_test(sample, config.index_spec(), config.test, threads=threads)
    return ReportDocument(command="test", config=config.model_dump(mode="json"),
                          result=result.model_dump(mode="json"), warnings=list(result.warnings))


def register(subparsers, parents=()) -> argparse.ArgumentParser:
    parser = subparsers.add_parser("test", parents=list(parents),
                                   help="Run the conditional independence test on a data file")
    parser.add_argument("--data", help="Delimited text file with a header row (comma or tab)")
    parser.add_argument("--y", help="Column holding Y")
    parser.add_argument("--z", help="Column holding Z")
    parser.add_argument("--x", action="append", help="Column holding one covariate; repeat for several")
    parser.add_argument("--z-kind", choices=["continuous", "discrete"], default=None)
    parser.add_argument("--support", help="Comma-separated support of a discrete Z")
    parser.add_argument("--theta", help="Known theta as 'v0,v1,...', intercept first")
    parser.add_argument("--estimate-theta", choices=["probit"], default=None)
    parser.add_argument("--index-scale", type=float, default=None, help="Scale of the linear index")
    add_test_arguments(parser)
    parser.set_defaults(handler=handle)
    return parser


def add_test_arguments(parser: argparse.ArgumentParser) -> None:
    """Flags that map onto TestConfig; shared with ``simulate``."""
    parser.add_argument("--beta", choices=["exp", "ind"], default=None)
    parser.add_argument("--functional", choices=["ks2", "cm2", "ks1", "cm1"], default=None)
    parser.add_argument("--kernel", choices=["quartic", "triweight"], default=None)
    parser.add_argument("--h-const", type=float, default=None,
                        help="Bandwidth constant for Z_hat (the propensities for discrete Z)")
    parser.add_argument("--h-const2", type=float, default=None,
                        help="Bandwidth constant for Y_hat; defaults to --h-const")
    parser.add_argument("--h-exponent", type=float, default=None, help="Bandwidth rate s in c * n^(-s)")
    parser.add_argument("--grid", type=int, default=None, help="Grid points per axis")
    parser.add_argument("--bootstrap", type=int, default=None, help="Bootstrap draws B")
    parser.add_argument("--alpha", type=float, default=None, help="Nominal level")
    parser.add_argument("--seed", type=int, default=None, help="Seed (CITEST_SEED when omitted)")


def parse_floats(text: Optional[str], flag: str) -> Optional[Tuple[float, ...]]:
    if text is None:
        return None
    try:
        return tuple(float(part) for part in text.split(",") if part.strip() != "")
    except ValueError:
        raise ConfigError(f"{flag} must be a comma-separated list of numbers, got '{text}'")


def bandwidth_fields(args) -> dict:
    fields = {}
    exponent = {} if args.h_exponent is None else {'exponent': args.h_exponent}
    if args.h_const is not None or exponent:
        fields['h_z'] = {'constant': args.h_const if args.h_const is not None else 1.0, **exponent}
    h_y = args.h_const2 if args.h_const2 is not None else args.h_const
    if h_y is not None or exponent:
        fields['h_y'] = {'constant': h_y if h_y is not None else 1.0, **exponent}
    return fields


def config_from_args(args) -> TestConfig:
    fields = {name: getattr(args, name) for name in ("beta", "functional", "kernel", "grid", "bootstrap",
                                                      "alpha", "seed")
              if getattr(args, name) is not None}
    fields.update(bandwidth_fields(args))
    return TestConfig(**fields)


def run_config_from_args(args) -> RunConfig:
    missing = [flag for flag, value in (("--data", args.data), ("--y", args.y), ("--z", args.z), ("--x", args.x))
               if not value]
    if missing:
        raise ConfigError(f"test needs {', '.join(missing)}")
    fields = {
        'data': args.data, 'y': args.y, 'z': args.z, 'x': tuple(args.x),
        'support': parse_floats(args.support, "--support"),
        'theta': parse_floats(args.theta, "--theta"),
        'estimate_theta': args.estimate_theta,
        'test': config_from_args(args),
    }
    if args.z_kind is not None:
        fields['z_kind'] = args.z_kind
    if args.index_scale is not None:
        fields['index_scale'] = args.index_scale
    return RunConfig(**fields)


def handle(args, threads: int, replay: Optional[ReportDocument] = None) -> ReportDocument:
    config = RunConfig.model_validate(replay.config) if replay is not None else run_config_from_args(args)
    return cmd_test(config, threads=threads)


def render(document: ReportDocument) -> str:
    return render_test_table(TestResult.model_validate(document.result))
