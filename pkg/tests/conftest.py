import numpy as np
import pytest
import torch


def _scalar(value) -> float:
    return float(value.detach()) if isinstance(value, torch.Tensor) else float(value)


def central_fd(fn, x: torch.Tensor, step: float = 1e-4, indices=None) -> torch.Tensor:
    """Central differences of scalar ``fn`` w.r.t. ``x`` (float64), optionally at a subset of flat indices."""
    flat = x.detach().clone().reshape(-1)
    grad = torch.zeros_like(flat)
    idx = range(flat.numel()) if indices is None else indices
    for i in idx:
        orig = flat[i].item()
        flat[i] = orig + step
        up = _scalar(fn(flat.reshape(x.shape)))
        flat[i] = orig - step
        down = _scalar(fn(flat.reshape(x.shape)))
        flat[i] = orig
        grad[i] = (up - down) / (2 * step)
    return grad.reshape(x.shape)


def autograd_of(fn, x: torch.Tensor) -> torch.Tensor:
    leaf = x.detach().clone().requires_grad_(True)
    out = fn(leaf)
    (g,) = torch.autograd.grad(out, leaf)
    return g


def rel_error(analytic: torch.Tensor, numeric: torch.Tensor) -> float:
    """Max-norm relative error, floored so exact zeros in both do not blow up."""
    diff = float((analytic - numeric).abs().max())
    scale = max(float(analytic.abs().max()), float(numeric.abs().max()), 1e-8)
    return diff / scale


def fd_check(fn, x, step=1e-4, indices=None):
    a = autograd_of(fn, x)
    n = central_fd(fn, x, step, indices)
    if indices is not None:
        sel = torch.as_tensor(list(indices))
        a, n = a.reshape(-1)[sel], n.reshape(-1)[sel]
    return rel_error(a, n)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    lines = getattr(mod, "VERDICTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
