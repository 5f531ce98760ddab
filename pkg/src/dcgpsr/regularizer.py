"""Top-(K,1) norm, its subgradients and the DC sparsity penalty.

The sparsity constraint ``||x||_0 <= K`` holds exactly when
``||x||_1 - ||x||_{K,1} = 0``, where ``||x||_{K,1}`` is the sum of the K
largest magnitudes. Everything here is a pure function of its inputs.
"""
from dataclasses import dataclass

import numpy as np

from . import kernels


@dataclass(frozen=True)
class TopKContext:
    k: int
    n: int

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"ambient dimension must be positive, got {self.n}")
        if not 0 <= self.k <= self.n:
            raise ValueError(f"k must lie in [0, {self.n}], got {self.k}")


@dataclass(frozen=True)
class PenaltyCertificate:
    rho_star: float
    q_bound: float
    per_index_terms: np.ndarray


def _as_vector(x):
    x = np.ascontiguousarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError(f"expected a 1-D vector, got shape {x.shape}")
    return x


def _check_k(k, n):
    if isinstance(k, (bool, np.bool_)) or int(k) != k:
        raise ValueError(f"k must be an integer, got {k!r}")
    TopKContext(int(k), max(n, 1))
    if n == 0 and k != 0:
        raise ValueError("k must be 0 for an empty vector")
    return int(k)


def top_k1_norm(x, k):
    """Sum of the ``k`` largest absolute entries of ``x``."""
    x = _as_vector(x)
    k = _check_k(k, x.shape[0])
    return float(kernels.topk_sum(np.abs(x), k))


def dc_gap(x, k):
    """``||x||_1 - ||x||_{K,1}``, i.e. the sum of the ``n - k`` smallest magnitudes.

    Summing the tail directly (rather than subtracting two sums) makes the
    result exactly zero whenever ``x`` has at most ``k`` nonzeros.
    """
    x = _as_vector(x)
    n = x.shape[0]
    k = _check_k(k, n)
    if k >= n:
        return 0.0
    a = np.abs(x)
    if k == 0:
        return float(np.sum(a))
    return float(np.sum(np.partition(a, n - k - 1)[: n - k]))


def subgradient_topk_signed(x, k):
    """A subgradient of the top-(K,1) norm at ``x``.

    Entries at the ``k`` largest magnitudes carry ``sign(x_i)``; all others are
    zero. ``sign(0) = 0``, so zeros picked up by the tie rule contribute nothing.
    """
    x = _as_vector(x)
    k = _check_k(k, x.shape[0])
    mask = kernels.topk_mask(np.abs(x), k)
    return np.sign(x) * mask


def indicator_topk_nonneg(z, k):
    """0/1 vector marking the ``k`` largest entries of a nonnegative ``z``."""
    z = _as_vector(z)
    k = _check_k(k, z.shape[0])
    if np.any(z < 0):
        raise ValueError("indicator_topk_nonneg requires a nonnegative vector")
    return kernels.topk_mask(z, k)


def penalty_threshold(phi, y, q):
    """Penalty level above which every minimiser of the DC objective is K-sparse.

    ``q`` must bound the 2-norm of the penalised minimiser; it is not estimated
    here (see :func:`default_q` for a bound usable in some cases).
    """
    if not q > 0:
        raise ValueError(f"q must be positive, got {q}")
    phi = np.asarray(phi, dtype=np.float64)
    y = _as_vector(y)
    gram = phi.T @ phi
    terms = (
        q * (np.linalg.norm(gram, axis=0) + np.abs(np.diag(gram)) / 2.0)
        + np.abs(phi.T @ y)
    )
    return PenaltyCertificate(rho_star=float(terms.max()), q_bound=float(q), per_index_terms=terms)


def default_q(phi, y):
    """``2 ||y|| / sigma_min(phi)``.

    When ``phi`` has full column rank this is a genuine bound: any minimiser
    satisfies ``||y - phi x|| <= ||y||`` so ``||phi x|| <= 2 ||y||``. For a
    wide matrix of full row rank it is only a heuristic scale.
    """
    phi = np.asarray(phi, dtype=np.float64)
    y = _as_vector(y)
    s = np.linalg.svd(phi, compute_uv=False)
    rank = int(np.sum(s > s[0] * max(phi.shape) * np.finfo(float).eps)) if s.size else 0
    if rank < min(phi.shape) or rank == 0:
        raise ValueError("phi is rank deficient; supply q explicitly")
    return float(2.0 * np.linalg.norm(y) / s[rank - 1])


def lipschitz_constant(phi, tol=1e-10, max_iter=5000):
    """Largest eigenvalue of ``phi.T @ phi`` by power iteration.

    The Gram matrix is never formed; each step applies ``phi`` and ``phi.T``.
    The fixed pseudo-random start keeps the result deterministic while
    avoiding accidental orthogonality to the top eigenvector.
    """
    phi = np.asarray(phi, dtype=np.float64)
    n = phi.shape[1]
    if n == 0 or not np.any(phi):
        return 0.0
    v = np.random.default_rng(0x5EED).standard_normal(n)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(max_iter):
        w = phi.T @ (phi @ v)
        lam_new = float(v @ w)
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0
        v = w / nw
        if abs(lam_new - lam) <= tol * abs(lam_new):
            return lam_new
        lam = lam_new
    return lam


def objective_f(x, phi, y, rho, k):
    """``0.5 ||y - phi x||^2 + rho (||x||_1 - ||x||_{K,1})``."""
    x = _as_vector(x)
    r = np.asarray(y, dtype=np.float64) - np.asarray(phi, dtype=np.float64) @ x
    return float(0.5 * (r @ r) + rho * dc_gap(x, k))
