"""Central finite-difference gradients and analytic-vs-numeric comparison."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .tensor import GraphError, Tensor, no_grad


def _scalar(value) -> float:
    data = value.data if isinstance(value, Tensor) else np.asarray(value)
    if data.size != 1:
        raise GraphError(f"function must return a scalar, got shape {data.shape}")
    return float(data.reshape(-1)[0])


def _indices(size: int, max_elements: int | None, rng: np.random.Generator) -> np.ndarray:
    if max_elements is None or size <= max_elements:
        return np.arange(size)
    return np.sort(rng.choice(size, size=max_elements, replace=False))


def finite_diff_grad(f: Callable[[], Tensor], x: Tensor, eps: float = 1e-5,
                     indices: np.ndarray | None = None) -> np.ndarray:
    """Central-difference gradient of the scalar ``f()`` with respect to ``x``.

    ``f`` closes over ``x`` and is re-evaluated after each in-place
    perturbation of ``x.data``.  Entries outside ``indices`` are left at zero.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    flat = x.data.reshape(-1)
    grad = np.zeros(flat.shape, dtype=np.float64)
    idx = np.arange(flat.size) if indices is None else indices
    with no_grad():
        for i in idx:
            orig = flat[i]
            flat[i] = orig + eps
            plus = _scalar(f())
            flat[i] = orig - eps
            minus = _scalar(f())
            flat[i] = orig
            grad[i] = (plus - minus) / (2 * eps)
    return grad.reshape(x.shape)


@dataclass
class GradCheckReport:
    name: str
    passed: bool
    max_rel_error: float
    tensor: str | None
    index: tuple[int, ...] | None
    checked: int

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        where = f" at {self.tensor}{list(self.index)}" if self.index is not None else ""
        return f"{status} {self.name}: max rel err {self.max_rel_error:.3e}{where} ({self.checked} entries)"


def grad_check(f: Callable[[], Tensor], inputs: Sequence[Tensor], *, eps: float = 1e-5,
               tol: float = 1e-4, name: str = "graph", max_elements: int | None = None,
               seed: int = 0) -> GradCheckReport:
    """Compare autodiff gradients of ``f()`` against central differences.

    Inputs must be 64-bit.  The error per entry is
    ``|analytic - numeric| / max(1e-8, |analytic| + |numeric|)``.  When
    ``max_elements`` is set, that many entries per input are sampled.
    """
    for t in inputs:
        if t.dtype != np.float64:
            raise TypeError(f"grad_check runs in 64-bit; {t.name or 'input'} is {t.dtype}")
        t.requires_grad = True
        t.grad = None
    loss = f()
    loss.backward()
    analytic = [np.zeros(t.shape) if t.grad is None else t.grad.copy() for t in inputs]

    rng = np.random.default_rng(seed)
    worst, worst_tensor, worst_index, checked = 0.0, None, None, 0
    for pos, (t, a) in enumerate(zip(inputs, analytic)):
        idx = _indices(t.size, max_elements, rng)
        numeric = finite_diff_grad(f, t, eps, idx).reshape(-1)[idx]
        an = a.reshape(-1)[idx]
        err = np.abs(an - numeric) / np.maximum(1e-8, np.abs(an) + np.abs(numeric))
        checked += len(idx)
        if err.size and err.max() > worst:
            k = int(err.argmax())
            worst = float(err[k])
            worst_tensor = t.name or f"input{pos}"
            worst_index = tuple(int(v) for v in np.unravel_index(idx[k], t.shape))
    return GradCheckReport(name, worst < tol, worst, worst_tensor, worst_index, checked)
