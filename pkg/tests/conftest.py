import numpy as np
import pytest

from flatconv.tensor import Tensor

_ACCEPTANCE: list[tuple[str, bool, str]] = []


@pytest.fixture
def criterion():
    """Record one acceptance line, then assert it."""

    def record(name: str, ok: bool, detail: str = "") -> None:
        _ACCEPTANCE.append((name, bool(ok), detail))
        assert ok, f"{name}: {detail}"

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in _ACCEPTANCE:
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {name}  {detail}")


def naive_conv(x, w, strides):
    """Brute-force same-padded correlation, one output element at a time.

    x: [N, *L, Cin], w: [*k, Cin, S]; works for any number of convolved axes.
    """
    x, w = np.asarray(x), np.asarray(w)
    m = x.ndim - 2
    ks, lens = w.shape[:m], x.shape[1:-1]
    outs = [-(-n // s) for n, s in zip(lens, strides)]
    out = np.zeros((x.shape[0], *outs, w.shape[-1]))
    for n in range(x.shape[0]):
        for o in np.ndindex(*outs):
            acc = np.zeros(w.shape[-1])
            for k in np.ndindex(*ks):
                pos = [oi * s + ki - kk // 2 for oi, s, ki, kk in zip(o, strides, k, ks)]
                if all(0 <= p < n_ for p, n_ in zip(pos, lens)):
                    for c in range(x.shape[-1]):
                        acc += x[(n, *pos, c)] * w[(*k, c)]
            out[(n, *o)] = acc
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def as_tensor(a) -> Tensor:
    return Tensor(np.asarray(a, dtype=np.float64))
