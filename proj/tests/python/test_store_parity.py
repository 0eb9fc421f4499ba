# SPDX-License-Identifier: Apache-2.0
import numpy as np
import pytest

import mvp_robust as mr
from mvp_robust import storefmt


@pytest.mark.parametrize("dtype", [np.float32, np.float64])
def test_python_written_store_reads_natively(tmp_path, dtype):
    a = np.random.default_rng(1).standard_normal((5, 7)).astype(dtype)
    path = tmp_path / "a.mvps"
    storefmt.write(path, a)
    b = mr.read_store(str(path))
    assert b.dtype == dtype
    np.testing.assert_array_equal(a, b)
    info = mr.inspect_store(str(path))
    assert info["rows"] == 5 and info["dim"] == 7 and info["checksum_ok"]


@pytest.mark.parametrize("dtype", [np.float32, np.float64])
def test_native_store_reads_in_python(tmp_path, dtype):
    a = np.random.default_rng(2).standard_normal((3, 4)).astype(dtype)
    path = tmp_path / "b.mvps"
    mr.write_store(str(path), a)
    np.testing.assert_array_equal(storefmt.read(path), a)
    assert path.read_bytes() == storefmt.encode(a)


def test_corruption_is_rejected_by_both(tmp_path):
    path = tmp_path / "c.mvps"
    storefmt.write(path, np.ones((2, 2), dtype=np.float32))
    data = bytearray(path.read_bytes())
    data[-1] ^= 0x01
    path.write_bytes(bytes(data))
    with pytest.raises(ValueError):
        storefmt.read(path)
    with pytest.raises(mr.MvpError, match="checksum_mismatch"):
        mr.read_store(str(path))


def test_non_finite_rejected(tmp_path):
    a = np.zeros((2, 3), dtype=np.float32)
    a[1, 2] = np.nan
    with pytest.raises(mr.MvpError, match=r"\(1, 2\)"):
        mr.write_store(str(tmp_path / "n.mvps"), a)
    with pytest.raises(ValueError):
        storefmt.encode(a)
