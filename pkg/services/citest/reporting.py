"""
Report documents and text tables shared by the CLI verbs.

A ReportDocument is the single JSON object a command writes to stdout. It holds
the tool version, the full configuration echo (enough to replay the run), the
result and any warnings. It carries no timestamps, so equal runs give
byte-identical documents.
"""
from typing import Any, Dict, List, Literal, Sequence

from pydantic import BaseModel, ConfigDict, Field

from services.citest import __version__
from services.citest.bootstrap import TestResult
from services.citest.simulate import SimCell, SimReport
from services.citest.stats import Functional

TOOL_NAME = "citest"


class ReportDocument(BaseModel):
    model_config = ConfigDict(frozen=True)

    tool: str = Field(TOOL_NAME, description="Producing tool")
    version: str = Field(__version__, description="Tool version")
    command: Literal["test", "simulate"] = Field(..., description="Verb that produced the report")
    config: Dict[str, Any] = Field(..., description="Configuration echo; feed back with --from-report")
    result: Dict[str, Any] = Field(..., description="TestResult or SimReport")
    warnings: List[str] = Field(default_factory=list)

    def to_json(self) -> str:
        return self.model_dump_json(indent=2)

    @classmethod
    def from_json(cls, text: str) -> "ReportDocument":
        return cls.model_validate_json(text)


def _align(rows: Sequence[Sequence[str]]) -> List[str]:
    widths = [max(len(row[k]) for row in rows) for k in range(len(rows[0]))]
    return ["  ".join(cell.rjust(width) if k else cell.ljust(width)
                      for k, (cell, width) in enumerate(zip(row, widths))).rstrip()
            for row in rows]


def _number(value) -> str:
    return "n/a" if value is None else str(value)


def render_test_table(result: TestResult) -> str:
    rows = [
        ("statistic", _number(result.statistic)),
        ("critical_value", _number(result.critical_value)),
        ("p_value", _number(result.p_value)),
        ("reject", "yes" if result.reject else "no"),
        ("alpha", _number(result.alpha)),
        ("functional", result.functional.value),
        ("beta", result.config.beta.value),
        ("bootstrap", str(result.bootstrap)),
        ("n", str(result.n)),
        ("theta", ", ".join(_number(v) for v in result.theta)),
        ("h_y", _number(result.h_y)),
        ("h_z", _number(result.h_z)),
        ("grid", str(result.grid)),
        ("seed", str(result.config.seed)),
    ]
    lines = _align(rows)
    lines.extend(f"warning: {w}" for w in result.warnings)
    return "\n".join(lines)


def _design_column(cell: SimCell) -> str:
    if cell.design.a is not None:
        return f"a={cell.design.a}"
    if cell.design.kappa is not None:
        return f"kappa={cell.design.kappa}"
    return ""


def render_simulation_table(report: SimReport) -> str:
    """One block per functional: a row per (design, bandwidth pair), columns beta x level."""
    sweep = report.sweep
    blocks = []
    for functional in sweep.functionals:
        header = ["DGP", "", "h_z", "h_y"]
        header += [f"{beta.value} {level:g}" for beta in sweep.betas for level in sweep.levels]
        header += ["failures"]
        rows = [header]
        by_row: Dict[tuple, Dict[str, SimCell]] = {}
        order = []
        for cell in report.cells:
            key = (cell.design.label, cell.h_z, cell.h_y)
            if key not in by_row:
                by_row[key] = {}
                order.append(key)
            by_row[key][cell.beta.value] = cell

        previous_design = None
        for key in order:
            cells = by_row[key]
            first = next(iter(cells.values()))
            design = first.design.label
            row = [first.design.name.value if design != previous_design else "",
                   _design_column(first) if design != previous_design else "",
                   f"{first.h_z:g}", f"{first.h_y:g}"]
            for beta in sweep.betas:
                cell = cells.get(beta.value)
                for level in sweep.levels:
                    row.append("" if cell is None else _number(cell.rate(functional, level)))
            row.append(str(max(c.failures for c in cells.values())))
            rows.append(row)
            previous_design = design
        title = (f"{Functional(functional).value}: rejection rates, reps={report.reps}, "
                 f"B={report.bootstrap}, seed={report.master_seed}")
        blocks.append("\n".join([title] + _align(rows)))
    return "\n\n".join(blocks)
