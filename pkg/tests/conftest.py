import numpy as np
import pytest

from domassim.tensor import Tensor


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def naive_glcm(levels, dx, dy, n_levels):
    """Pixel-pair enumeration straight from the co-occurrence definition."""
    h, w = len(levels), len(levels[0])
    counts = [[0] * n_levels for _ in range(n_levels)]
    for r in range(h):
        for c in range(w):
            r2, c2 = r + dy, c + dx
            if 0 <= r2 < h and 0 <= c2 < w:
                counts[levels[r][c]][levels[r2][c2]] += 1
    return np.array(counts, dtype=np.int64)


def grad_check(fn, inputs, rng, h=1e-3):
    """Norm-wise relative error between backprop and central differences.

    ``fn`` maps Tensors to a Tensor; the scalar probed is ``sum(fn(...) * r)``
    for a fixed random ``r``, accumulated in float64.
    """
    xs = [Tensor(a, requires_grad=True) for a in inputs]
    out = fn(*xs)
    r = rng.standard_normal(out.shape).astype(np.float32)
    (out * Tensor(r)).sum().backward()

    def probe():
        return float((fn(*xs).data.astype(np.float64) * r).sum())

    worst = 0.0
    for x in xs:
        num = np.zeros(x.shape)
        for i in np.ndindex(x.shape):
            old = x.data[i]
            x.data[i] = old + h
            fp = probe()
            x.data[i] = old - h
            fm = probe()
            x.data[i] = old
            num[i] = (fp - fm) / (2 * h)
        ana = x.grad if x.grad is not None else np.zeros(x.shape)
        denom = max(np.linalg.norm(num), np.linalg.norm(ana), 1e-12)
        worst = max(worst, float(np.linalg.norm(num - ana) / denom))
    return worst


def away_from_zero(rng, shape, margin=0.05):
    """Standard normal values with |v| >= margin, keeping FD probes off kinks."""
    v = rng.standard_normal(shape)
    return np.where(np.abs(v) < margin, np.sign(v + 1e-12) * margin * 2, v)


def distinct_values(rng, shape, gap=0.01):
    """Values whose pairwise gaps exceed ``gap`` so argmax never flips under a probe."""
    n = int(np.prod(shape))
    return (rng.permutation(n) * gap + rng.uniform(0, gap / 4, n)).reshape(shape) - n * gap / 2


_ACCEPTANCE = {}


@pytest.fixture
def criterion():
    """Context-manager factory recording one pass/fail line per acceptance criterion."""
    import contextlib
    import time

    @contextlib.contextmanager
    def record(number, title):
        start = time.perf_counter()
        detail = {}
        try:
            yield detail
        except BaseException as exc:
            _ACCEPTANCE[number] = (False, title, f"{type(exc).__name__}: {str(exc).splitlines()[0] if str(exc) else ''}")
            _emit(number)
            raise
        extra = detail.get("note", "")
        _ACCEPTANCE[number] = (True, title, f"{time.perf_counter() - start:.1f}s {extra}".strip())
        _emit(number)

    return record


def _line(number):
    ok, title, info = _ACCEPTANCE[number]
    return f"AC{number:<2} {'PASS' if ok else 'FAIL'}  {title}  [{info}]"


def _emit(number):
    import sys
    sys.__stdout__.write("\n" + _line(number) + "\n")
    sys.__stdout__.flush()


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        terminalreporter.write_line(_line(number))
