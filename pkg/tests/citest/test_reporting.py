"""
Tests for report documents and the text tables.
"""
import json

import pytest
from pydantic import ValidationError

from services.citest import __version__
from services.citest.bootstrap import TestResult
from services.citest.config import TestConfig
from services.citest.reporting import ReportDocument, render_simulation_table, render_test_table
from services.citest.simulate import DgpName, DgpSpec, LevelRate, SimCell, SimReport, SweepGrid
from services.citest.stats import Functional
from services.citest.weights import BetaKind


@pytest.fixture
def test_result():
    return TestResult(statistic=1.2345678901234567, critical_value=0.9876, p_value=0.012, reject=True,
                      alpha=0.05, bootstrap=199, functional=Functional.KS2, n=100, theta=[0.0, 1.0],
                      h_y=0.398, h_z=0.398, grid=10, config=TestConfig(seed=3, bootstrap=199),
                      warnings=["y_hat: 1 of 100 observations had no kernel neighbour"])


@pytest.fixture
def sim_report():
    sweep = SweepGrid(bandwidths=((0.5, 0.5), (1.0, 1.0)), betas=(BetaKind.EXPONENTIAL, BetaKind.INDICATOR),
                      levels=(0.05, 0.1), functionals=(Functional.KS2,))
    design = DgpSpec(name=DgpName.B2, a=0.5)
    cells = []
    for k, ((h_z, h_y), beta) in enumerate([(h, b) for h in sweep.bandwidths for b in sweep.betas]):
        rates = [LevelRate(functional=Functional.KS2, alpha=level, rejections=k + j, rate=(k + j) / 8,
                           mc_se=0.1) for j, level in enumerate(sweep.levels)]
        cells.append(SimCell(design=design, h_z=h_z, h_y=h_y, beta=beta, completed=8,
                             failures=1 if k == 3 else 0, rates=rates))
    return SimReport(cells=cells, reps=9, bootstrap=99, master_seed=1, sweep=sweep)


class TestReportDocument:
    def test_round_trip(self, test_result):
        document = ReportDocument(command="test", config={'data': "x.csv"},
                                  result=test_result.model_dump(mode="json"), warnings=test_result.warnings)
        restored = ReportDocument.from_json(document.to_json())
        assert restored == document
        assert TestResult.model_validate(restored.result) == test_result

    def test_header_fields(self):
        payload = json.loads(ReportDocument(command="simulate", config={}, result={}).to_json())
        assert payload['tool'] == "citest"
        assert payload['version'] == __version__
        assert payload['warnings'] == []

    def test_floats_survive_exactly(self, test_result):
        document = ReportDocument(command="test", config={}, result=test_result.model_dump(mode="json"))
        assert json.loads(document.to_json())['result']['statistic'] == 1.2345678901234567

    def test_unknown_command(self):
        with pytest.raises(ValidationError):
            ReportDocument(command="serve", config={}, result={})


class TestRenderTestTable:
    def test_numbers_match_json(self, test_result):
        table = render_test_table(test_result)
        rows = dict(line.split(None, 1) for line in table.splitlines() if not line.startswith("warning"))
        assert float(rows['statistic']) == test_result.statistic
        assert float(rows['critical_value']) == test_result.critical_value
        assert rows['reject'] == "yes"
        assert rows['theta'] == "0.0, 1.0"
        assert table.splitlines()[-1].startswith("warning: y_hat")


class TestRenderSimulationTable:
    def test_layout(self, sim_report):
        lines = render_simulation_table(sim_report).splitlines()
        assert lines[0] == "ks2: rejection rates, reps=9, B=99, seed=1"
        assert lines[1].split() == ["DGP", "h_z", "h_y", "exp", "0.05", "exp", "0.1", "ind", "0.05", "ind", "0.1",
                                    "failures"]
        assert len(lines) == 4

    def test_rates_match_cells(self, sim_report):
        lines = render_simulation_table(sim_report).splitlines()
        first = lines[2].split()
        assert first[:4] == ["B2", "a=0.5", "0.5", "0.5"]
        assert [float(v) for v in first[4:8]] == [0.0, 0.125, 0.125, 0.25]
        second = lines[3].split()
        assert second[:2] == ["1", "1"]
        assert [float(v) for v in second[2:6]] == [0.25, 0.375, 0.375, 0.5]
        assert second[-1] == "1"
