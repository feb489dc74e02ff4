"""Central finite differences, used as an independent check on ``backward``."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .tensor import Tensor, no_grad, record_relu_masks


def _scalar(value) -> float:
    if isinstance(value, Tensor):
        value = value.data
    return float(np.asarray(value).reshape(-1)[0])


def finite_diff_gradient(
    f: Callable[[Tensor], Tensor | float],
    x: Tensor,
    eps: float = 1e-4,
    indices: np.ndarray | None = None,
    avoid_kinks: bool = False,
) -> np.ndarray:
    """Estimate df/dx by ``(f(x + eps e_i) - f(x - eps e_i)) / (2 eps)``.

    ``x`` is perturbed in place and restored. When ``indices`` (flat
    positions) is given only those coordinates are estimated; the rest of the
    returned array is NaN.

    With ``avoid_kinks`` a probe pair that flips any ReLU relative to the
    unperturbed point is retried with a step ten times smaller (down to
    1e-8), since a difference quotient across a kink estimates neither
    one-sided derivative.
    """
    flat = x.data.reshape(-1)
    out = np.full(flat.shape, np.nan) if indices is not None else np.empty(flat.shape)
    positions = range(flat.size) if indices is None else indices
    base = None
    if avoid_kinks:
        with no_grad(), record_relu_masks() as base:
            f(x)

    def probe(i: int, step: float) -> tuple[float, bool]:
        orig = flat[i]
        with record_relu_masks() as masks:
            flat[i] = orig + step
            fp = _scalar(f(x))
            flat[i] = orig - step
            fm = _scalar(f(x))
        flat[i] = orig
        smooth = base is None or all(
            np.array_equal(m, base[j % len(base)]) for j, m in enumerate(masks)
        )
        return (fp - fm) / (2.0 * step), smooth

    with no_grad():
        for i in positions:
            step = eps
            value, smooth = probe(i, step)
            while not smooth and step > 1e-8:
                step /= 10.0
                value, smooth = probe(i, step)
            out[i] = value
    return out.reshape(x.shape)


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    """Largest ``|a_i - n_i|`` relative to the tensor's gradient scale.

    The scale is ``max(max|a|, max|n|, floor)``; NaN slots of ``numeric``
    (coordinates not estimated) are skipped. Measuring against the tensor
    scale rather than each coordinate keeps the O(eps^2) truncation error of
    tiny coordinates from dominating, and the floor lets exactly-zero
    gradients (e.g. biases feeding a batch norm) compare absolutely.
    """
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    mask = ~np.isnan(n)
    if not mask.any():
        return 0.0
    scale = max(float(np.max(np.abs(a))), float(np.max(np.abs(n[mask]))), floor)
    return float(np.max(np.abs(a[mask] - n[mask])) / scale)
