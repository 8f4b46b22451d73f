import json

import pytest
from freezegun import freeze_time

from gmfg import __version__
from gmfg.data.run_session import RunSession, config_hash, run_session
from gmfg.exceptions import NumericalBlowUpError
from tests.fixtures.factories import ExperimentConfigFactory

pytestmark = pytest.mark.unit


@freeze_time("2026-03-04 05:06:07.000089")
def test_directory_is_named_after_command_and_utc_time(tmp_path):
    with run_session("solve", tmp_path) as session:
        assert session.path.name == "solve-20260304T050607000089"
        assert session.path.is_dir()


@freeze_time("2026-03-04 05:06:07")
def test_existing_directories_are_never_reused(tmp_path):
    first = RunSession("solve", tmp_path).open()
    second = RunSession("solve", tmp_path).open()
    assert second.path.name == f"{first.path.name}-1"


def test_meta_records_config_and_seeds(tmp_path):
    config = ExperimentConfigFactory()
    with run_session("simulate", tmp_path, config) as session:
        session.record_seed("simulation", 7)
    meta = json.loads((session.path / "meta.json").read_text())
    assert meta["status"] == "ok"
    assert meta["version"] == __version__
    assert meta["config_hash"] == config_hash(config)
    assert meta["config"]["grids"]["n_x"] == 60
    assert meta["seeds"] == {"simulation": 7}
    assert meta["wall_seconds"] >= 0


def test_failure_is_recorded(tmp_path):
    with pytest.raises(NumericalBlowUpError):
        with run_session("solve", tmp_path) as session:
            raise NumericalBlowUpError("decoupling field exceeds v_max", {"t": 0.25})
    meta = json.loads((session.path / "meta.json").read_text())
    assert meta["status"] == "failed"
    assert "v_max" in meta["error"]
    assert meta["error_payload"] == {"t": "0.25"}


def test_status_can_be_downgraded(tmp_path):
    with run_session("solve", tmp_path) as session:
        session.status = "non-converged"
    assert json.loads(session.file("meta.json").read_text())["status"] == "non-converged"


def test_config_hash_tracks_content():
    assert config_hash(ExperimentConfigFactory()) == config_hash(ExperimentConfigFactory())
    assert config_hash(ExperimentConfigFactory()) != config_hash(ExperimentConfigFactory(simulation__seed=8))
