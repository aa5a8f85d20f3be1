"""
Stage timing and memory monitoring for pipeline runs
"""

import logging
import time
from contextlib import contextmanager
from datetime import datetime, timezone
from typing import Any, Dict, Iterator, List, Optional

logger = logging.getLogger(__name__)

STAGES = ("segment", "memory", "optimize", "io")


class StageMonitor:
    """Accumulates wall time per stage and samples resident memory"""

    def __init__(self, track_memory: bool = True):
        self.track_memory = track_memory
        self.stage_times: Dict[str, float] = {}
        self.events: List[Dict[str, Any]] = []
        self.peak_rss_mb: Optional[float] = None
        self._process = None
        if track_memory:
            try:
                import psutil
                self._process = psutil.Process()
            except ImportError:
                logger.warning("psutil not available, memory will not be reported")
                self.track_memory = False
        self.sample_memory()

    def sample_memory(self) -> Optional[float]:
        """Current resident memory in MiB, folded into the peak"""
        if not self.track_memory or self._process is None:
            return None
        try:
            rss = self._process.memory_info().rss / (1024.0 * 1024.0)
        except Exception as e:
            logger.error(f"Failed to read process memory: {e}")
            return None
        self.peak_rss_mb = rss if self.peak_rss_mb is None else max(self.peak_rss_mb, rss)
        return rss

    @contextmanager
    def stage(self, name: str, **metadata: Any) -> Iterator[None]:
        """Time a block and add it to ``stage_times[name]``"""
        start = time.perf_counter()
        try:
            yield
        finally:
            elapsed = time.perf_counter() - start
            self.stage_times[name] = self.stage_times.get(name, 0.0) + elapsed
            self.events.append({
                "timestamp": datetime.now(timezone.utc).isoformat(),
                "stage": name,
                "seconds": elapsed,
                "metadata": metadata,
            })
            self.sample_memory()

    def summary(self) -> Dict[str, Any]:
        return {
            "stage_times": dict(self.stage_times),
            "total_seconds": sum(self.stage_times.values()),
            "peak_rss_mb": self.peak_rss_mb,
            "events": len(self.events),
        }
