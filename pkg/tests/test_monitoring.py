"""
Stage monitor tests
"""

import pytest

from cognimap.services.monitoring import StageMonitor


class TestStageMonitor:
    def test_times_accumulate_per_stage(self):
        monitor = StageMonitor(track_memory=False)
        with monitor.stage("segment", frame=0):
            pass
        with monitor.stage("segment", frame=1):
            pass
        with monitor.stage("optimize"):
            pass
        assert set(monitor.stage_times) == {"segment", "optimize"}
        assert monitor.stage_times["segment"] >= 0.0
        assert [e["metadata"] for e in monitor.events[:2]] == [{"frame": 0}, {"frame": 1}]

    def test_failing_stage_is_still_timed(self):
        monitor = StageMonitor(track_memory=False)
        with pytest.raises(RuntimeError):
            with monitor.stage("io"):
                raise RuntimeError("disk full")
        assert "io" in monitor.stage_times
        assert monitor.events[-1]["stage"] == "io"

    def test_memory_tracking(self):
        assert StageMonitor(track_memory=False).peak_rss_mb is None
        monitor = StageMonitor()
        with monitor.stage("memory"):
            payload = bytearray(8 * 1024 * 1024)
        assert len(payload) > 0
        assert monitor.peak_rss_mb > 0

    def test_summary(self):
        monitor = StageMonitor(track_memory=False)
        with monitor.stage("segment"):
            pass
        summary = monitor.summary()
        assert summary["events"] == 1
        assert summary["total_seconds"] == pytest.approx(monitor.stage_times["segment"])
        assert summary["peak_rss_mb"] is None
