import numpy as np
import pytest

from invfold.autodiff import set_precision


@pytest.fixture(autouse=True)
def _float64():
    set_precision("f64")
    yield
    set_precision("f64")


def random_graph(rng, n, k=None, d=8, heads=4, proteins=None):
    """Random node/edge states on a k-NN-like graph where every node has in-edges."""
    k = n - 1 if k is None else k
    src, dst = [], []
    for i in range(n):
        others = [j for j in range(n) if j != i]
        for j in rng.choice(others, size=min(k, n - 1), replace=False):
            src.append(j)
            dst.append(i)
    src, dst = np.array(src, dtype=np.int64), np.array(dst, dtype=np.int64)
    pid = np.zeros(n, dtype=np.int64) if proteins is None else np.asarray(proteins)
    h = rng.normal(size=(n, d))
    e = rng.normal(size=(len(src), d))
    return h, e, src, dst, pid


def random_chain(rng, n, name="random"):
    """Backbone-shaped random walk: every atom 1.2-1.6 A from the previous one."""
    from invfold.geometry import Protein

    steps = rng.normal(size=(n * 4, 3))
    steps /= np.linalg.norm(steps, axis=1, keepdims=True)
    steps *= rng.uniform(1.2, 1.6, size=(n * 4, 1))
    coords = np.cumsum(steps, axis=0).reshape(n, 4, 3)
    return Protein(name, coords, rng.integers(0, 20, size=n))


# acceptance results, printed as one line per criterion at the end of the run
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        ok, title, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  [{number}] {title}: {detail}")
