"""Elementwise inner-loop kernels shared by the solvers.

Each kernel has a vectorised numpy implementation and a fused numba
implementation with identical semantics. The module-level names are bound to
the numba versions unless numba is missing or ``DCGPSR_DISABLE_NUMBA`` is set.

Top-k selection everywhere uses the same tie rule: larger value first, then
lower index.
"""
from types import SimpleNamespace

import numpy as np

from ._accel import HAVE_NUMBA, USE_NUMBA, njit

# ---------------------------------------------------------------------------
# numpy implementations
# ---------------------------------------------------------------------------


def _np_topk_mask(a, k):
    n = a.shape[0]
    mask = np.zeros(n)
    if k <= 0:
        return mask
    if k >= n:
        mask[:] = 1.0
        return mask
    kth = np.partition(a, n - k)[n - k]
    above = a > kth
    mask[above] = 1.0
    need = k - int(np.count_nonzero(above))
    if need > 0:
        mask[np.flatnonzero(a == kth)[:need]] = 1.0
    return mask


def _np_topk_sum(a, k):
    n = a.shape[0]
    if k <= 0:
        return 0.0
    if k >= n:
        return float(np.sum(a))
    return float(np.sum(np.partition(a, n - k)[n - k:]))


def _np_dc_gradient(g, mask, rho, out):
    n = g.shape[0]
    out[:n] = g + rho * (1.0 - mask[:n])
    out[n:] = rho * (1.0 - mask[n:]) - g
    return out


def _np_project_step(z, grad, alpha, out):
    np.multiply(grad, -alpha, out=out)
    out += z
    np.maximum(out, 0.0, out=out)
    return out


def _np_soft_threshold(a, tau):
    return np.sign(a) * np.maximum(np.abs(a) - tau, 0.0)


def _np_fold(z):
    n = z.shape[0] // 2
    return z[:n] - z[n:]


# ---------------------------------------------------------------------------
# numba implementations
# ---------------------------------------------------------------------------


@njit(cache=True)
def _nb_topk_mask(a, k):
    n = a.shape[0]
    mask = np.zeros(n)
    if k <= 0:
        return mask
    if k >= n:
        mask[:] = 1.0
        return mask
    kth = np.partition(a, n - k)[n - k]
    taken = 0
    for i in range(n):
        if a[i] > kth:
            mask[i] = 1.0
            taken += 1
    for i in range(n):
        if taken >= k:
            break
        if a[i] == kth:
            mask[i] = 1.0
            taken += 1
    return mask


@njit(cache=True)
def _nb_topk_sum(a, k):
    n = a.shape[0]
    if k <= 0:
        return 0.0
    if k >= n:
        return np.sum(a)
    return np.sum(np.partition(a, n - k)[n - k:])


@njit(cache=True)
def _nb_dc_gradient(g, mask, rho, out):
    n = g.shape[0]
    for i in range(n):
        out[i] = g[i] + rho * (1.0 - mask[i])
        out[n + i] = rho * (1.0 - mask[n + i]) - g[i]
    return out


@njit(cache=True)
def _nb_project_step(z, grad, alpha, out):
    for i in range(z.shape[0]):
        v = z[i] - alpha * grad[i]
        out[i] = v if v > 0.0 else 0.0
    return out


@njit(cache=True)
def _nb_soft_threshold(a, tau):
    out = np.empty_like(a)
    for i in range(a.shape[0]):
        m = abs(a[i]) - tau
        if m > 0.0:
            out[i] = m if a[i] > 0.0 else -m
        else:
            out[i] = 0.0
    return out


@njit(cache=True)
def _nb_fold(z):
    n = z.shape[0] // 2
    out = np.empty(n)
    for i in range(n):
        out[i] = z[i] - z[n + i]
    return out


NUMPY_KERNELS = SimpleNamespace(
    name="numpy",
    topk_mask=_np_topk_mask,
    topk_sum=_np_topk_sum,
    dc_gradient=_np_dc_gradient,
    project_step=_np_project_step,
    soft_threshold=_np_soft_threshold,
    fold=_np_fold,
)

NUMBA_KERNELS = SimpleNamespace(
    name="numba",
    topk_mask=_nb_topk_mask,
    topk_sum=_nb_topk_sum,
    dc_gradient=_nb_dc_gradient,
    project_step=_nb_project_step,
    soft_threshold=_nb_soft_threshold,
    fold=_nb_fold,
) if HAVE_NUMBA else None

_NAMES = ("topk_mask", "topk_sum", "dc_gradient", "project_step", "soft_threshold", "fold")


def use_backend(name):
    """Rebind the module-level kernels to ``"numba"`` or ``"numpy"``; returns the previous name."""
    global ACTIVE, BACKEND
    if name == "numba":
        if NUMBA_KERNELS is None:
            raise RuntimeError("numba is not installed")
        table = NUMBA_KERNELS
    elif name == "numpy":
        table = NUMPY_KERNELS
    else:
        raise ValueError(f"unknown backend {name!r}; valid: numba, numpy")
    previous = globals().get("BACKEND")
    ACTIVE, BACKEND = table, table.name
    g = globals()
    for n in _NAMES:
        g[n] = getattr(table, n)
    return previous


use_backend("numba" if USE_NUMBA else "numpy")
