"""Tests for parallel module."""

import sys
import threading
from pathlib import Path
from unittest.mock import patch

import pytest

sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from imu_preint.parallel import (
    _max_concurrent,
    chunk_bounds,
    map_ordered,
    max_workers,
    single_threaded,
)


class TestMaxConcurrent:
    """Tests for _max_concurrent."""

    def test_at_least_one(self):
        with patch("imu_preint.parallel.os.cpu_count", return_value=1):
            assert _max_concurrent() == 1

    def test_cpu_count_minus_one(self):
        with patch("imu_preint.parallel.os.cpu_count", return_value=4):
            assert _max_concurrent() == 3

    def test_cpu_count_none_uses_one(self):
        with patch("imu_preint.parallel.os.cpu_count", return_value=None):
            assert _max_concurrent() == 1


class TestMaxWorkers:
    def test_env_override(self, monkeypatch):
        monkeypatch.setenv("IMU_PREINT_THREADS", "5")
        assert max_workers() == 5

    def test_env_floor(self, monkeypatch):
        monkeypatch.setenv("IMU_PREINT_THREADS", "0")
        assert max_workers() == 1

    def test_env_garbage_ignored(self, monkeypatch, caplog):
        monkeypatch.setenv("IMU_PREINT_THREADS", "many")
        with patch("imu_preint.parallel.os.cpu_count", return_value=8):
            assert max_workers() == 7
        assert "Ignoring" in caplog.text

    def test_single_threaded_wins(self, monkeypatch):
        monkeypatch.setenv("IMU_PREINT_THREADS", "6")
        with single_threaded():
            assert max_workers() == 1
        assert max_workers() == 6

    def test_single_threaded_is_per_thread(self, monkeypatch):
        monkeypatch.setenv("IMU_PREINT_THREADS", "4")
        seen = []
        with single_threaded():
            worker = threading.Thread(target=lambda: seen.append(max_workers()))
            worker.start()
            worker.join()
        assert seen == [4]


class TestChunkBounds:
    @pytest.mark.parametrize("n,parts", [(10, 3), (7, 7), (5, 9), (1000, 4)])
    def test_covers_range(self, n, parts):
        bounds = chunk_bounds(n, parts)
        assert bounds[0][0] == 0
        assert bounds[-1][1] == n
        assert all(a[1] == b[0] for a, b in zip(bounds, bounds[1:]))
        sizes = [hi - lo for lo, hi in bounds]
        assert max(sizes) - min(sizes) <= 1
        assert len(bounds) == min(parts, n)

    def test_empty(self):
        assert chunk_bounds(0, 4) == []


class TestMapOrdered:
    def test_preserves_order(self):
        assert map_ordered(lambda x: x * x, range(50), workers=4) == [x * x for x in range(50)]

    def test_inline_with_one_worker(self):
        caller = threading.get_ident()
        idents = map_ordered(lambda _: threading.get_ident(), [1, 2, 3], workers=1)
        assert set(idents) == {caller}

    def test_propagates_errors(self):
        def boom(x):
            if x == 3:
                raise ValueError("bad item")
            return x

        with pytest.raises(ValueError, match="bad item"):
            map_ordered(boom, range(5), workers=2)
