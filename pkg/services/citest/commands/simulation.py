"""
The ``simulate`` verb: Monte Carlo rejection rates for the simulation designs.

Presets table1..table5 lay out the design/bandwidth/beta cells of the five standard
rejection-rate tables; --design builds an ad-hoc set instead.
"""
import argparse
import itertools
import logging
from typing import Dict, List, Optional, Tuple

from services.citest.commands.testing import add_test_arguments, parse_floats
from services.citest.config import DEFAULT_BOOTSTRAP, DESK_BOOTSTRAP, DESK_REPLICATIONS, default_seed
from services.citest.errors import ConfigError
from services.citest.observability import log_context
from services.citest.reporting import ReportDocument, render_simulation_table
from services.citest.simulate import (
    DEFAULT_BANDWIDTH_CONSTANTS,
    DgpName,
    DgpSpec,
    SimReport,
    SimulateConfig,
    SweepGrid,
    run_simulation,
)

logger = logging.getLogger(__name__)

FULL_SCALE_REPLICATIONS = 2000
A_VALUES = (0.2, 0.5)
KAPPA_VALUES = (0.5, 1.0)
FIVE_PERCENT = (0.05,)

PRESETS = ("table1", "table2", "table3", "table4", "table5")

_EQUAL_BANDWIDTHS = tuple((c, c) for c in DEFAULT_BANDWIDTH_CONSTANTS)
# (h1, h2) = (propensity, Y_hat), h1 outer
_CROSSED_BANDWIDTHS = tuple(itertools.product(DEFAULT_BANDWIDTH_CONSTANTS, DEFAULT_BANDWIDTH_CONSTANTS))


def _continuous(names, n: int) -> Tuple[DgpSpec, ...]:
    return tuple(DgpSpec(name=name, a=a, n=n) for name in names for a in A_VALUES)


def _binary(name: DgpName, n: int) -> Tuple[DgpSpec, ...]:
    if name is DgpName.C:
        return (DgpSpec(name=name, n=n),)
    return tuple(DgpSpec(name=name, kappa=kappa, n=n) for kappa in KAPPA_VALUES)


def preset(name: str, n: int = 100) -> Tuple[Tuple[DgpSpec, ...], Dict]:
    """Designs and sweep fields of a named preset."""
    if name == "table1":
        return _continuous((DgpName.A1, DgpName.A2), n), {'bandwidths': _EQUAL_BANDWIDTHS}
    if name == "table2":
        return (_continuous((DgpName.B1, DgpName.B2, DgpName.B3, DgpName.B4), n),
                {'bandwidths': _EQUAL_BANDWIDTHS, 'levels': FIVE_PERCENT})
    if name == "table3":
        return _binary(DgpName.C, n), {'bandwidths': _CROSSED_BANDWIDTHS}
    if name == "table4":
        return _binary(DgpName.D1, n), {'bandwidths': _CROSSED_BANDWIDTHS, 'levels': FIVE_PERCENT}
    if name == "table5":
        return _binary(DgpName.D2, n), {'bandwidths': _CROSSED_BANDWIDTHS, 'levels': FIVE_PERCENT}
    raise ConfigError(f"unknown preset '{name}' (expected one of {', '.join(PRESETS)})")


def _design_name(value: str) -> DgpName:
    try:
        return DgpName(value.upper())
    except ValueError:
        raise ConfigError(f"unknown design '{value}' (expected one of {', '.join(d.value for d in DgpName)})")


def adhoc_designs(names: List[str], a_values: Optional[Tuple[float, ...]],
                  kappa_values: Optional[Tuple[float, ...]], n: int) -> Tuple[DgpSpec, ...]:
    designs = []
    for value in names:
        name = _design_name(value)
        if name is DgpName.C:
            designs.append(DgpSpec(name=name, n=n))
        elif name.binary:
            designs.extend(DgpSpec(name=name, kappa=k, n=n) for k in (kappa_values or KAPPA_VALUES))
        else:
            designs.extend(DgpSpec(name=name, a=a, n=n) for a in (a_values or A_VALUES))
    return tuple(designs)


def simulate_config_from_args(args) -> SimulateConfig:
    if args.preset is None and not args.design:
        raise ConfigError("simulate needs --preset or at least one --design")
    if args.preset is not None and args.design:
        raise ConfigError("give either --preset or --design, not both")

    if args.preset is not None:
        designs, sweep_fields = preset(args.preset, n=args.n)
    else:
        designs = adhoc_designs(args.design, parse_floats(args.a, "--a"), parse_floats(args.kappa, "--kappa"), args.n)
        sweep_fields = {}

    if args.h_const is not None:
        h_y = args.h_const2 if args.h_const2 is not None else args.h_const
        sweep_fields['bandwidths'] = ((args.h_const, h_y),)
    for field, value in (('betas', args.beta), ('functionals', args.functional)):
        if value is not None:
            sweep_fields[field] = (value,)
    if args.alpha is not None:
        sweep_fields['levels'] = (args.alpha,)
    if args.h_exponent is not None:
        sweep_fields['exponent'] = args.h_exponent
    if args.grid is not None:
        sweep_fields['grid'] = args.grid
    if args.kernel is not None:
        sweep_fields['kernel'] = args.kernel
    if args.oracle:
        sweep_fields['oracle'] = True

    reps = args.reps if args.reps is not None else (FULL_SCALE_REPLICATIONS if args.full_scale else DESK_REPLICATIONS)
    bootstrap = args.bootstrap if args.bootstrap is not None else (DEFAULT_BOOTSTRAP if args.full_scale else DESK_BOOTSTRAP)
    return SimulateConfig(
        preset=args.preset,
        designs=designs,
        sweep=SweepGrid(**sweep_fields),
        reps=reps,
        bootstrap=bootstrap,
        master_seed=args.seed if args.seed is not None else default_seed(),
    )


def cmd_simulate(config: SimulateConfig, threads: int = 1) -> ReportDocument:
    with log_context(command="simulate", preset=config.preset or "adhoc"):
        report = run_simulation(config, threads=threads)
    warnings = [f"{cell.design.label} h=({cell.h_z:g}, {cell.h_y:g}) {cell.beta.value}: "
                f"{cell.failures} of {report.reps} replications failed"
                for cell in report.cells if cell.failures]
    return ReportDocument(command="simulate", config=config.model_dump(mode="json"),
                          result=report.model_dump(mode="json"), warnings=warnings)


def register(subparsers, parents=()) -> argparse.ArgumentParser:
    parser = subparsers.add_parser("simulate", parents=list(parents),
                                   help="Monte Carlo rejection rates for the simulation designs")
    parser.add_argument("--preset", choices=PRESETS, default=None)
    parser.add_argument("--design", action="append", help="Design name (A1, A2, B1-B4, C, D1, D2); repeatable")
    parser.add_argument("--a", help="Comma-separated values of a for continuous designs")
    parser.add_argument("--kappa", help="Comma-separated values of kappa for D1/D2")
    parser.add_argument("--n", type=int, default=100, help="Sample size")
    parser.add_argument("--reps", type=int, default=None,
                        help=f"Replications per design ({DESK_REPLICATIONS}; {FULL_SCALE_REPLICATIONS} with --full-scale)")
    parser.add_argument("--full-scale", action="store_true",
                        help=f"Use {FULL_SCALE_REPLICATIONS} replications and {DEFAULT_BOOTSTRAP} bootstrap draws")
    parser.add_argument("--oracle", action="store_true", help="Use the null limit of the transforms")
    add_test_arguments(parser)
    parser.set_defaults(handler=handle)
    return parser


def handle(args, threads: int, replay: Optional[ReportDocument] = None) -> ReportDocument:
    config = SimulateConfig.model_validate(replay.config) if replay is not None else simulate_config_from_args(args)
    return cmd_simulate(config, threads=threads)


def render(document: ReportDocument) -> str:
    return render_simulation_table(SimReport.model_validate(document.result))
