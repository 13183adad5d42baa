"""Tests for scan module."""

import math
import sys
from pathlib import Path
from unittest.mock import patch

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from imu_preint import parallel
from imu_preint.lie_so3 import quat_distance, quat_exp, quat_mul
from imu_preint.scan import (
    PARALLEL_THRESHOLD,
    ScanTrace,
    cummatmul9,
    cumprod_so3,
    cumsum_vec3,
    inclusive_scan,
)


def _sequential_fold(quats):
    out = np.empty_like(quats)
    acc = quats[0]
    out[0] = acc
    for k in range(1, len(quats)):
        acc = quat_mul(acc, quats[k])
        out[k] = acc
    return out


def _random_quats(n, seed=0):
    return quat_exp(np.random.default_rng(seed).normal(0.0, 0.3, (n, 3)))


class TestInclusiveScanSO3:
    @pytest.mark.parametrize("n", [1, 2, 3, 7, 8, 1000, 4096])
    def test_matches_sequential_fold(self, n):
        quats = _random_quats(n, seed=n)
        trace = ScanTrace()
        scanned = cumprod_so3(quats, trace=trace)
        assert np.max(quat_distance(scanned, _sequential_fold(quats))) < 1e-9
        assert trace.layers == (math.ceil(math.log2(n)) if n > 1 else 0)

    def test_offsets_are_powers_of_two(self):
        trace = ScanTrace()
        cumprod_so3(_random_quats(20), trace=trace)
        assert trace.offsets == [1, 2, 4, 8, 16]

    def test_input_not_modified(self):
        quats = _random_quats(16)
        before = quats.copy()
        cumprod_so3(quats)
        assert np.array_equal(quats, before)

    def test_empty(self):
        out = cumprod_so3(np.zeros((0, 4)))
        assert out.shape == (0, 4)

    def test_single_element_is_itself(self):
        quats = _random_quats(1)
        assert np.allclose(cumprod_so3(quats), quats)


class TestThreading:
    def test_chunked_equals_single_worker(self):
        n = 4 * PARALLEL_THRESHOLD
        quats = _random_quats(n, seed=3)
        trace = ScanTrace()
        threaded = cumprod_so3(quats, trace=trace, workers=4)
        single = cumprod_so3(quats, workers=1)
        assert np.array_equal(threaded, single)
        assert trace.chunked_layers > 0

    def test_single_threaded_context(self):
        trace = ScanTrace()
        with parallel.single_threaded():
            cumprod_so3(_random_quats(4 * PARALLEL_THRESHOLD), trace=trace)
        assert trace.chunked_layers == 0

    def test_cpu_count_one_runs_inline(self):
        trace = ScanTrace()
        with patch("imu_preint.parallel.os.cpu_count", return_value=1):
            cumprod_so3(_random_quats(4 * PARALLEL_THRESHOLD), trace=trace)
        assert trace.chunked_layers == 0


class TestOtherMonoids:
    def test_vector_sum(self):
        v = np.random.default_rng(1).normal(size=(37, 3))
        assert np.allclose(cumsum_vec3(v), np.cumsum(v, axis=0), atol=1e-12)

    def test_matrix_prefix(self):
        mats = np.random.default_rng(2).normal(size=(9, 9, 9)) * 0.3
        out = cummatmul9(mats)
        acc = np.eye(9)
        for k in range(9):
            acc = acc @ mats[k]
            assert np.allclose(out[k], acc, atol=1e-10)

    def test_matrix_suffix(self):
        mats = np.random.default_rng(3).normal(size=(6, 9, 9)) * 0.3
        out = cummatmul9(mats, suffix=True)
        acc = np.eye(9)
        for k in range(5, -1, -1):
            acc = acc @ mats[k]
            assert np.allclose(out[k], acc, atol=1e-10)

    def test_non_commutative_order(self):
        # op(earlier, later) must keep the earlier operand on the left
        out = inclusive_scan(lambda a, b: a @ b, np.array([[[0.0, 1.0], [0.0, 0.0]], [[0.0, 0.0], [1.0, 0.0]]]))
        assert np.allclose(out[1], [[1.0, 0.0], [0.0, 0.0]])
