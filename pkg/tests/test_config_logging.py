"""
Configuration and logging tests
"""

import logging
import math

import pytest

from cognimap.core.config import (
    PipelineConfig,
    Settings,
    dump_pipeline_config,
    load_pipeline_config,
    parse_overrides,
)
from cognimap.core.exceptions import ConfigError
from cognimap.core.logging_config import StructuredLogger, setup_logging


@pytest.fixture
def restore_logging():
    yield
    setup_logging(Settings(LOG_LEVEL="WARNING", LOG_TO_FILE=False))


class TestPipelineConfig:
    def test_defaults(self, sample_config):
        assert sample_config.cadence == 20
        assert sample_config.recall_mode == "full"
        assert sample_config.d_match is None
        assert sample_config.ang_max == pytest.approx(math.pi / 4)

    def test_derived_thresholds(self, sample_config):
        assert sample_config.v_min(3) == 2
        assert sample_config.v_min(10) == 3
        assert sample_config.n_inlier(500) == 100
        assert sample_config.n_inlier(5000) == 500

    def test_overrides_are_validated(self, sample_config):
        assert sample_config.with_overrides(cadence="5").cadence == 5
        with pytest.raises(ConfigError, match="cadence"):
            sample_config.with_overrides(cadence=0)
        with pytest.raises(ConfigError, match="colour"):
            sample_config.with_overrides(colour="blue")

    def test_inlier_radius_within_correspondence_radius(self, sample_config):
        with pytest.raises(ConfigError):
            sample_config.with_overrides(icp_inlier_frac=0.2, icp_corr_frac=0.1)

    def test_assignment_is_validated(self):
        config = PipelineConfig()
        with pytest.raises(ValueError):
            config.grid_step = 0


class TestConfigLoading:
    def test_parse_overrides(self):
        assert parse_overrides(["cadence=5", " recall_mode = 2d "]) == {"cadence": "5", "recall_mode": "2d"}
        assert parse_overrides(None) == {}
        with pytest.raises(ConfigError):
            parse_overrides(["=5"])

    def test_file_and_overrides(self, tmp_path):
        path = tmp_path / "pipeline.cfg"
        path.write_text("# tuned for small scenes\ncadence=10\nvoxel_size=none\n\nseed=4\n")
        config = load_pipeline_config(path, {"seed": 9, "recall_mode": "2d3d"})
        assert config.cadence == 10
        assert config.voxel_size is None
        assert config.seed == 9
        assert config.recall_mode == "2d3d"

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            load_pipeline_config(tmp_path / "absent.cfg")

    def test_bad_value_names_the_key(self, tmp_path):
        path = tmp_path / "pipeline.cfg"
        path.write_text("recall_mode=everything\n")
        with pytest.raises(ConfigError, match="recall_mode"):
            load_pipeline_config(path)

    def test_dump_reloads_to_the_same_config(self, tmp_path, sample_config):
        config = sample_config.with_overrides(cadence=7, d_match=0.4, memory_landmarks_fixed=True)
        path = tmp_path / "dumped.cfg"
        path.write_text(dump_pipeline_config(config))
        assert load_pipeline_config(path) == config


class TestSettings:
    def test_csv_and_level_normalisation(self):
        settings = Settings(QUIET_LOGGERS="numba, PIL,", LOG_LEVEL="debug")
        assert settings.QUIET_LOGGERS == ["numba", "PIL"]
        assert settings.LOG_LEVEL == "DEBUG"

    def test_log_file_location(self, tmp_path):
        settings = Settings(LOG_DIR=str(tmp_path))
        assert settings.log_file == tmp_path / "cognimap.log"


class TestLogging:
    def test_level_applies_to_package_loggers(self, restore_logging):
        setup_logging(Settings(LOG_LEVEL="WARNING"), level="debug")
        assert logging.getLogger("cognimap").level == logging.DEBUG
        assert logging.getLogger("numba").level == logging.WARNING

    def test_file_handler(self, tmp_path, restore_logging):
        setup_logging(Settings(LOG_LEVEL="INFO", LOG_TO_FILE=True, LOG_DIR=str(tmp_path / "logs")))
        logging.getLogger("cognimap.test").info("written to file")
        for handler in logging.getLogger("cognimap").handlers:
            handler.flush()
        assert "written to file" in (tmp_path / "logs" / "cognimap.log").read_text()

    def test_structured_messages(self, caplog):
        logger = StructuredLogger("tests.structured")
        with caplog.at_level(logging.INFO, logger="tests.structured"):
            logger.info("Recall", frame=3, accepted=True)
            logger.debug("hidden", value=1)
        assert caplog.messages == ["Recall | frame=3 | accepted=True"]

    def test_errors_carry_the_exception(self, caplog):
        logger = StructuredLogger("tests.structured")
        with caplog.at_level(logging.INFO, logger="tests.structured"):
            try:
                raise ValueError("bad frame")
            except ValueError as e:
                logger.error("Stage failed", error=e, stage="segment")
        record = caplog.records[-1]
        assert record.getMessage() == "Stage failed | stage=segment"
        assert record.exc_info is not None
