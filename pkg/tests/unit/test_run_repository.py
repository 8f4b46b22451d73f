import json

import numpy as np
import pytest

from gmfg.exceptions import ConfigError
from gmfg.models import (
    ConvergenceRun,
    ConvergenceTable,
    DensityFlow,
    FeedbackControl,
    GradientField,
    Grids,
    MFGSolution,
    ResidualRecord,
)
from gmfg.repositories.run_repository import RunRepository, fmt
from gmfg.services.meanfield_service import initial_density

pytestmark = pytest.mark.unit


@pytest.fixture
def repo(tmp_path):
    return RunRepository(tmp_path)


@pytest.fixture
def grids():
    return Grids(horizon=0.2, n_t=2, n_x=6, x_lo=-1.0, x_hi=1.0, labels=2)


def test_fmt():
    assert fmt(True) == "1"
    assert fmt(np.int64(7)) == "7"
    assert fmt(0.1) == "0.10000000000000001"
    assert fmt(float("nan")) == "nan"
    assert fmt("w1") == "w1"


def test_rows_are_written_with_fixed_formatting(repo, tmp_path):
    repo.write_rows("table.csv", ["a", "b"], [(1, 0.5), (2, 1 / 3)])
    assert (tmp_path / "table.csv").read_text() == "a,b\n1,0.5\n2,0.33333333333333331\n"
    assert repo.read_rows("table.csv")[1] == {"a": "2", "b": "0.33333333333333331"}
    np.testing.assert_allclose(repo.read_table("table.csv"), [[1.0, 0.5], [2.0, 1 / 3]])


def test_missing_files(repo):
    with pytest.raises(ConfigError):
        repo.read_rows("absent.csv")
    with pytest.raises(ConfigError):
        repo.read_meta()


def test_solution_files(repo, tmp_path, grids):
    flow = DensityFlow.constant(grids, initial_density(grids, 0.0, 0.5))
    values = np.arange(flow.p.size, dtype=float).reshape(flow.p.shape) / 7.0
    solution = MFGSolution(
        flow=flow, gradient=GradientField(grids, values), feedback=FeedbackControl.strict(grids, -values),
        residuals=[ResidualRecord(0, float("inf"), 0.3, 1.0), ResidualRecord(1, 1e-5, 2e-5, 0.5)],
        payoff=-0.25, converged=True,
    )
    repo.save_solution(solution)
    (tmp_path / "meta.json").write_text(json.dumps({
        "status": "ok", "grids": grids.to_dict(), "solution": {"payoff": -0.25, "flags": ["boundary-mass"]},
    }))

    loaded = repo.load_solution()
    assert loaded.grids == grids
    np.testing.assert_array_equal(loaded.flow.p, flow.p)
    np.testing.assert_array_equal(loaded.gradient.v, values)
    np.testing.assert_array_equal(loaded.feedback.values, -values)
    assert loaded.converged
    assert loaded.payoff == -0.25
    assert loaded.flags == ["boundary-mass"]
    assert loaded.residuals[0].gradient_residual == float("inf")
    assert len(repo.read_rows("flow.csv")) == (grids.n_t + 1) * grids.labels * grids.n_x


def test_field_size_must_match_the_grids(repo, tmp_path, grids):
    repo.write_rows("flow.csv", ["t", "u", "x", "p"], [(0.0, 0.25, 0.0, 1.0)])
    with pytest.raises(ConfigError):
        repo._read_field("flow.csv", grids)


def test_run_without_grid_solution(repo, tmp_path):
    (tmp_path / "meta.json").write_text(json.dumps({"status": "ok"}))
    with pytest.raises(ConfigError):
        repo.load_solution()


def test_convergence_files(repo):
    table = ConvergenceTable([ConvergenceRun(10, {"w1": 0.1})], {"w1": -0.5, "gap": float("nan")})
    repo.save_convergence([(10, 0.5, "w1", 0.1), (10, float("nan"), "payoff_gap", 0.2)], table)
    rows = repo.load_convergence()
    assert [row["metric"] for row in rows] == ["w1", "payoff_gap"]
    assert rows[1]["t"] == "nan"
    assert repo.read_rows("slopes.csv") == [{"metric": "gap", "slope": "nan"}, {"metric": "w1", "slope": "-0.5"}]


def test_json(repo, tmp_path):
    repo.save_json("summary.json", {"value": np.float64(0.5), "n": 3})
    assert json.loads((tmp_path / "summary.json").read_text()) == {"n": 3, "value": 0.5}
