import numpy as np
import pytest

from domassim import kernels
from domassim._accel import HAVE_NUMBA

BACKENDS = ["numpy"] + (["numba"] if HAVE_NUMBA else [])


@pytest.fixture(params=BACKENDS)
def backend(request):
    return request.param


def test_glcm_counts_backends_agree(rng, backend):
    lv = rng.integers(0, 8, (5, 11, 9))
    offs = np.array([[3, 0], [2, 2], [0, 3], [-3, 3], [-1, 0], [-2, -2], [0, -3], [3, -3]])
    ref = kernels.get_impl("glcm_counts", "numpy")(lv, offs, 8)
    out = kernels.get_impl("glcm_counts", backend)(lv, offs, 8)
    assert out.dtype == np.int64
    np.testing.assert_array_equal(out, ref)


def test_loops_reference_matches_numpy(rng):
    # the plain-python loop bodies are the numba source; check them uninstrumented
    lv = rng.integers(0, 4, (2, 6, 7))
    offs = np.array([[1, 0], [-2, 1]])
    np.testing.assert_array_equal(kernels._LOOPS["glcm_counts"](lv, offs, 4),
                                  kernels._NUMPY["glcm_counts"](lv, offs, 4))


@pytest.mark.parametrize("stride", [1, 2, 3])
def test_im2col_col2im_backends_agree(rng, backend, stride):
    x = rng.standard_normal((2, 3, 9, 8)).astype(np.float32)
    ref = kernels.get_impl("im2col", "numpy")(x, 3, 2, stride)
    cols = kernels.get_impl("im2col", backend)(x, 3, 2, stride)
    np.testing.assert_array_equal(cols, ref)
    g = rng.standard_normal(cols.shape).astype(np.float32)
    a = kernels.get_impl("col2im", "numpy")(g, 9, 8, stride)
    b = kernels.get_impl("col2im", backend)(g, 9, 8, stride)
    np.testing.assert_allclose(a, b, rtol=1e-5, atol=1e-6)


def test_im2col_col2im_adjoint(rng):
    x = rng.standard_normal((1, 2, 7, 7))
    cols = kernels.im2col(x, 3, 3, 2)
    g = rng.standard_normal(cols.shape)
    back = kernels.col2im(g, 7, 7, 2)
    assert float((cols * g).sum()) == pytest.approx(float((x * back).sum()), rel=1e-9)


def test_maxpool_backends_agree(rng, backend):
    x = rng.standard_normal((2, 3, 8, 7)).astype(np.float32)
    x[0, 0, :2, :2] = 1.0  # tie
    o1, a1 = kernels.get_impl("maxpool_forward", "numpy")(x, 2, 2)
    o2, a2 = kernels.get_impl("maxpool_forward", backend)(x, 2, 2)
    np.testing.assert_array_equal(o1, o2)
    np.testing.assert_array_equal(a1, a2)
    assert a1[0, 0, 0, 0] == 0
    g = rng.standard_normal(o1.shape).astype(np.float32)
    np.testing.assert_array_equal(kernels.get_impl("maxpool_backward", "numpy")(g, a1, 8, 7),
                                  kernels.get_impl("maxpool_backward", backend)(g, a1, 8, 7))


def test_unknown_impl():
    with pytest.raises((KeyError, ValueError)):
        kernels.get_impl("nope", "numpy")


@pytest.mark.parametrize("flag,expected", [("1", "numpy"), ("0", "numba" if HAVE_NUMBA else "numpy")])
def test_env_flag_selects_backend(flag, expected):
    import os
    import subprocess
    import sys

    env = dict(os.environ, DOMASSIM_DISABLE_NUMBA=flag)
    out = subprocess.run([sys.executable, "-c", "from domassim import kernels; print(kernels.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == expected
