import numpy as np
import pytest

from docnmt import autodiff as ad
from docnmt.blocks import BlockConfig
from docnmt.bpe import EOS
from docnmt.data import Triplet, make_batch
from docnmt.models import Model, ModelConfig


def numeric_grad(f, x, eps=1e-6):
    """Central differences of scalar ``f()`` w.r.t. every entry of ndarray ``x`` (perturbed in place)."""
    g = np.zeros_like(x, dtype=np.float64)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + eps
        hi = f()
        x[i] = old - eps
        lo = f()
        x[i] = old
        g[i] = (hi - lo) / (2 * eps)
    return g


def rel_error(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = max(np.linalg.norm(a) + np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / denom)


def check_op_grads(build, inputs, eps=1e-6):
    """Compare autodiff gradients of ``build(*tensors)`` with finite differences.

    ``build`` returns a scalar Tensor; ``inputs`` are float64 arrays.  Returns
    the worst relative error over all inputs.
    """
    with ad.default_dtype(np.float64):
        tensors = [ad.Tensor(x.astype(np.float64), requires_grad=True) for x in inputs]
        loss = build(*tensors)
        ad.backward(loss)
        worst = 0.0
        for t in tensors:

            def f():
                with ad.no_grad():
                    return float(build(*[ad.Tensor(u.data) for u in tensors]).item())

            num = numeric_grad(f, t.data, eps)
            worst = max(worst, rel_error(t.grad, num))
    return worst


TINY = dict(num_layers=1, d_model=8, num_heads=2, d_ffn=16, dropout=0.0, max_positions=16)


def tiny_model(arch, vocab_size=12, seed=0, alpha=0.5, aux="re_src", dtype=np.float64, **block):
    cfg = BlockConfig(vocab_size=vocab_size, **{**TINY, **block})
    with ad.default_dtype(dtype):
        return Model(ModelConfig(arch, cfg, alpha, aux), seed=seed)


def random_triplets(n, vocab_size=12, seed=0, max_len=6):
    rng = np.random.default_rng(seed)

    def seq():
        return [int(t) for t in rng.integers(6, vocab_size, size=int(rng.integers(1, max_len)))] + [EOS]

    return [Triplet(seq(), seq(), seq(), f"d{k}", k) for k in range(n)]


def random_batch(n=3, vocab_size=12, seed=0):
    return make_batch(random_triplets(n, vocab_size, seed))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# ---------------------------------------------------------------------------
# acceptance summary: one PASS/FAIL line per criterion

_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by the test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or rep.when != "call" and not (rep.when == "setup" and rep.failed):
        return
    number, title = marker.args
    detail = "; ".join(str(v) for k, v in item.user_properties if k == "detail")
    prev = _CRITERIA.get(number)
    ok = rep.passed and (prev is None or prev[1])
    details = [d for d in ((prev[2] if prev else ""), detail) if d]
    _CRITERIA[number] = (title, ok, "; ".join(details))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, ok, detail = _CRITERIA[number]
        line = f"{'PASS' if ok else 'FAIL'}  criterion {number:2d}: {title}"
        terminalreporter.write_line(line + (f"  [{detail}]" if detail else ""))


@pytest.fixture
def note(record_property):
    """Attach a measured value to the acceptance summary line."""

    def add(text):
        record_property("detail", text)
        print(text)

    return add
