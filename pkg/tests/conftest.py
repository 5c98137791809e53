import numpy as np
import pytest

from fastlogad.encoder import EncoderConfig


@pytest.fixture
def tiny_config():
    """vocab 8, L 4, dim 8, 1 layer; no dropout so finite differences are exact."""
    return EncoderConfig(vocab_size=8, max_len=4, embed_dim=8, n_layers=1, n_heads=2, ff_dim=8, dropout_rate=0.0)


def perturb(params, rng, scale=0.3):
    """Move parameters off their init so every gradient is non-trivial."""
    for name in params:
        params[name] += rng.normal(0.0, scale, params[name].shape)


def numeric_grad(loss_fn, array, h=1e-6):
    grad = np.zeros_like(array)
    for ix in np.ndindex(array.shape):
        old = array[ix]
        array[ix] = old + h
        up = loss_fn()
        array[ix] = old - h
        down = loss_fn()
        array[ix] = old
        grad[ix] = (up - down) / (2 * h)
    return grad


def rel_error(analytic, numeric, floor=1e-4):
    """Max abs difference relative to the group's gradient scale.

    Groups whose true gradient is identically zero (the key bias: a shared
    shift of every key score cancels in the softmax) only carry finite
    difference round-off of ~1e-10; the floor turns those into an absolute
    check at the 1e-8 level.
    """
    return float(np.max(np.abs(analytic - numeric)) / max(floor, np.max(np.abs(numeric)), np.max(np.abs(analytic))))


# Acceptance results, keyed by criterion; each entry is a list of (ok, detail) parts.
ACCEPTANCE: dict[str, list] = {}


def record(criterion: str, ok: bool, detail: str) -> bool:
    ACCEPTANCE.setdefault(criterion, []).append((bool(ok), detail))
    print(f"{'PASS' if ok else 'FAIL'} {criterion}: {detail}")
    return bool(ok)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for criterion, parts in ACCEPTANCE.items():
        ok = all(p for p, _ in parts)
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} {criterion}: " + "; ".join(d for _, d in parts))
