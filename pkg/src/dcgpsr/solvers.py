"""DC gradient-projection solvers and baselines for sparse least squares.

All DC solvers work on the split variable ``z = [u; v] >= 0`` with
``x = u - v`` and minimise

    F(z) = 0.5 ||y - phi (u - v)||^2 + rho (1^T z - ||z||_{K,1})

through the bound-constrained quadratic

    0.5 z^T B z - q^T z + rho 1^T z - rho m^T z,   B = [[G, -G], [-G, G]],
    G = phi^T phi,  q = [phi^T y; -phi^T y],

where ``m`` is a 0/1 indicator of the K largest entries of some iterate.
``B`` is never formed; every product with it costs one ``phi`` and one
``phi.T`` product.
"""
import time
from dataclasses import dataclass, field, fields

import numpy as np

from . import kernels
from .channel import SparseProblem
from .regularizer import lipschitz_constant

ALGORITHMS = ("dldc", "sldc_basic", "sldc_bb", "l1_gpsr", "ista", "omp")


class NumericalFailure(RuntimeError):
    """Raised when an iterate or gradient stops being finite."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace if trace is not None else []


@dataclass(frozen=True)
class SolverConfig:
    rho: float = None
    k_budget: int = None
    max_outer: int = 10000
    max_inner: int = 200
    tol_outer: float = 1e-12
    tol_inner: float = 1e-8
    alpha0: float = 1.0
    alpha_min: float = 1e-30
    alpha_max: float = 1e30
    init: str = "zeros"

    def __post_init__(self):
        if not 0 < self.alpha_min <= self.alpha_max < np.inf:
            raise ValueError("need 0 < alpha_min <= alpha_max < inf")
        if not (self.tol_outer > 0 and self.tol_inner > 0):
            raise ValueError("tolerances must be positive")
        if not self.alpha0 > 0:
            raise ValueError("alpha0 must be positive")
        if self.max_outer < 1 or self.max_inner < 1:
            raise ValueError("iteration limits must be at least 1")
        if self.init not in ("zeros", "backprojection"):
            raise ValueError(f"init must be 'zeros' or 'backprojection', got {self.init!r}")
        if self.rho is not None and not self.rho > 0:
            raise ValueError("rho must be positive")

    def to_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown solver keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class IterRecord:
    iter: int
    objective: float
    alpha: float
    beta: float
    delta_norm: float
    elapsed_seconds: float
    outer: int = 0
    marker: bool = False


@dataclass
class SolverResult:
    x_hat: np.ndarray
    z_final: np.ndarray
    trace: list
    outer_iters: int
    inner_iters_total: int
    termination: str
    algorithm: str = ""
    elapsed_seconds: float = 0.0
    flags: list = field(default_factory=list)


class SplitOperator:
    """Implicit ``B`` for a fixed ``phi`` with cached ``phi^T y`` and Lipschitz constant."""

    def __init__(self, phi, y, lipschitz=None):
        self.phi = np.ascontiguousarray(phi, dtype=np.float64)
        self.y = np.ascontiguousarray(y, dtype=np.float64)
        self.phi_t = np.ascontiguousarray(self.phi.T)
        self.phi_t_y = self.phi_t @ self.y
        self.n = self.phi.shape[1]
        self.lipschitz = lipschitz_constant(self.phi) if lipschitz is None else float(lipschitz)

    @classmethod
    def from_problem(cls, problem):
        return cls(problem.phi, problem.y)

    def gram(self, x):
        return self.phi_t @ (self.phi @ x)

    def apply_B(self, z):
        g = self.gram(kernels.fold(z))
        return np.concatenate([g, -g])

    @property
    def q(self):
        return np.concatenate([self.phi_t_y, -self.phi_t_y])

    def dense_B(self):
        g = self.phi.T @ self.phi
        return np.block([[g, -g], [-g, g]])


# ---------------------------------------------------------------------------
# small building blocks
# ---------------------------------------------------------------------------


def split(x):
    x = np.asarray(x, dtype=np.float64)
    return np.concatenate([np.maximum(x, 0.0), np.maximum(-x, 0.0)])


def recombine(z):
    return kernels.fold(np.ascontiguousarray(z, dtype=np.float64))


def project_nonneg(v):
    return np.maximum(np.asarray(v, dtype=np.float64), 0.0)


def gradient_projection_step(z, grad, alpha):
    """``(z - alpha * grad)_+``."""
    return kernels.project_step(z, grad, float(alpha), np.empty_like(z))


def _state(op, z, rho, mask):
    """Residual ``phi x - y`` and split gradient at ``z`` for an indicator ``mask``.

    ``B z - q`` is assembled from ``phi^T (phi x - y)``, which avoids the
    cancellation of subtracting the cached ``phi^T y`` afterwards.
    """
    r = op.phi @ kernels.fold(z) - op.y
    g = op.phi_t @ r
    grad = kernels.dc_gradient(g, mask, rho, np.empty_like(z))
    return r, grad


def dc_gradient(op, z, rho, k):
    """Gradient of the quadratic model of ``F`` at ``z`` (indicator taken at ``z``)."""
    z = np.ascontiguousarray(z, dtype=np.float64)
    return _state(op, z, rho, kernels.topk_mask(z, k))[1]


def _tail_sum(z, k):
    # sum of the n - k smallest entries; exactly 0 when z has at most k nonzeros
    n = z.shape[0]
    if k >= n:
        return 0.0
    if k == 0:
        return float(np.sum(z))
    return float(np.sum(np.partition(z, n - k - 1)[: n - k]))


def dc_objective_z(op, z, rho, k):
    """``F(z)`` in split form; equals the DC objective of ``u - v`` when complementary."""
    z = np.ascontiguousarray(z, dtype=np.float64)
    r = op.phi @ kernels.fold(z) - op.y
    return float(0.5 * (r @ r) + rho * _tail_sum(z, k))


def lasso_objective(x, phi, y, rho):
    r = np.asarray(y) - np.asarray(phi) @ x
    return float(0.5 * (r @ r) + rho * np.sum(np.abs(x)))


def _record(trace, rec, z, callback):
    trace.append(rec)
    if callback is not None:
        callback(rec, kernels.fold(z))


def _check_finite(name, v, trace):
    if not np.all(np.isfinite(v)):
        raise NumericalFailure(f"non-finite {name} encountered", trace)


def _resolve(problem, config):
    if not isinstance(problem, SparseProblem):
        raise TypeError("expected a SparseProblem")
    config = config or SolverConfig()
    rho = problem.rho if config.rho is None else config.rho
    k = problem.k_budget if config.k_budget is None else config.k_budget
    n = problem.phi.shape[1]
    if not 0 <= k <= n:
        raise ValueError(f"k_budget must lie in [0, {n}], got {k}")
    if not rho > 0:
        raise ValueError("rho must be positive")
    return config, float(rho), int(k)


def _initial_z(op, config, z0=None):
    if z0 is not None:
        z0 = np.array(z0, dtype=np.float64)
        if z0.shape != (2 * op.n,) or np.any(z0 < 0):
            raise ValueError(f"z0 must be a nonnegative vector of length {2 * op.n}")
        return z0
    if config.init == "backprojection":
        return split(op.phi_t_y)
    return np.zeros(2 * op.n)


# ---------------------------------------------------------------------------
# the gradient-projection engine
# ---------------------------------------------------------------------------


class _Engine:
    """Projected gradient with BB step and monotone scaling on the split BCQP.

    ``mask_mode``: ``"dynamic"`` re-selects the top-K indicator from every
    iterate, ``"fixed"`` keeps a given indicator, ``"none"`` uses zeros (plain
    l1 penalty).
    """

    def __init__(self, op, rho, k, config, mask_mode, step_rule, t0, trace, callback=None):
        self.op, self.rho, self.k, self.config = op, rho, k, config
        self.mask_mode, self.step_rule = mask_mode, step_rule
        self.t0, self.trace = t0, trace
        self.callback = callback
        self.fixed_mask = None
        self.alpha = config.alpha0
        self.inv_l = 1.0 / op.lipschitz if op.lipschitz > 0 else None

    def objective(self, z, r, mask):
        if self.mask_mode == "none":
            return float(0.5 * (r @ r) + self.rho * np.sum(z))
        return float(0.5 * (r @ r) + self.rho * _tail_sum(z, self.k))

    def mask_for(self, z):
        if self.mask_mode == "dynamic":
            return kernels.topk_mask(z, self.k)
        if self.mask_mode == "fixed":
            return self.fixed_mask
        return np.zeros_like(z)

    def bb_alpha(self, s, grad_new, grad_old, beta):
        fallback = self.inv_l if self.inv_l is not None else self.config.alpha0
        if beta == 0.0:
            return fallback
        denom = float(s @ (grad_new - grad_old))
        if not denom > 0:
            return fallback
        a = float(s @ s) / denom
        if a >= self.config.alpha_max:
            return fallback
        return max(a, self.config.alpha_min)

    def run(self, z, max_iter, tol, relative, it0=0, outer=0, record_start=True):
        """Iterate from ``z``; return (z, iterations, terminated_by_tolerance)."""
        op = self.op
        fixed = self.step_rule == "fixed"
        if fixed:
            if self.inv_l is None:
                raise ValueError("fixed 1/l step needs a nonzero phi")
            self.alpha = self.inv_l
        mask = self.mask_for(z)
        r, grad = _state(op, z, self.rho, mask)
        _check_finite("gradient", grad, self.trace)
        if record_start:
            _record(self.trace, IterRecord(it0, self.objective(z, r, mask), np.nan, np.nan, np.nan,
                                           time.perf_counter() - self.t0, outer), z, self.callback)
        ztilde = np.empty_like(z)
        for i in range(1, max_iter + 1):
            alpha = self.alpha
            kernels.project_step(z, grad, alpha, ztilde)
            if fixed:
                beta = 1.0
                z_new = ztilde.copy()
            else:
                delta = ztilde - z
                pd = op.phi @ kernels.fold(delta)
                dbd = float(pd @ pd)
                if dbd > 0.0:
                    beta = min(1.0, max(0.0, -float(delta @ grad) / dbd))
                else:
                    beta = 1.0
                z_new = ztilde.copy() if beta == 1.0 else z + beta * delta
            _check_finite("iterate", z_new, self.trace)
            step = float(np.linalg.norm(z_new - z))
            mask = self.mask_for(z_new)
            r, grad_new = _state(op, z_new, self.rho, mask)
            _check_finite("gradient", grad_new, self.trace)
            if not fixed:
                self.alpha = self.bb_alpha(z_new - z, grad_new, grad, beta)
            z, grad = z_new, grad_new
            _record(self.trace, IterRecord(it0 + i, self.objective(z, r, mask), alpha, beta, step,
                                           time.perf_counter() - self.t0, outer), z, self.callback)
            limit = tol * max(1.0, float(np.linalg.norm(z))) if relative else tol
            if step <= limit:
                return z, i, True
        return z, max_iter, False


def _finish(name, z, trace, outer, inner, converged, t0, flags=None):
    z = np.ascontiguousarray(z)
    return SolverResult(
        x_hat=kernels.fold(z),
        z_final=z,
        trace=trace,
        outer_iters=outer,
        inner_iters_total=inner,
        termination="tolerance" if converged else "max_iters",
        algorithm=name,
        elapsed_seconds=time.perf_counter() - t0,
        flags=flags or [],
    )


# ---------------------------------------------------------------------------
# DC solvers
# ---------------------------------------------------------------------------


def dldc_gpsr(problem, config=None, op=None, callback=None, z0=None):
    """Double-loop DC-GPSR.

    Outer loop: freeze the top-K indicator of the current ``z``. Inner loop:
    BB gradient projection with monotone scaling on the resulting convex BCQP,
    warm-started and stopped on a relative step tolerance.
    """
    t0 = time.perf_counter()
    config, rho, k = _resolve(problem, config)
    op = op or SplitOperator.from_problem(problem)
    trace = []
    eng = _Engine(op, rho, k, config, "fixed", "bb", t0, trace, callback)
    z = _initial_z(op, config, z0)
    eng.fixed_mask = kernels.topk_mask(z, k)
    r, _ = _state(op, z, rho, eng.fixed_mask)
    _record(trace, IterRecord(0, eng.objective(z, r, eng.fixed_mask), np.nan, np.nan, np.nan,
                              time.perf_counter() - t0, 0, True), z, callback)
    it = 0
    converged = False
    t = 0
    for t in range(1, config.max_outer + 1):
        eng.fixed_mask = kernels.topk_mask(z, k)
        z_new, n_in, _ = eng.run(z, config.max_inner, config.tol_inner, True,
                                  it0=it, outer=t, record_start=False)
        it += n_in
        step = float(np.linalg.norm(z_new - z))
        z = z_new
        last = trace[-1]
        _record(trace, IterRecord(it, dc_objective_z(op, z, rho, k), last.alpha, last.beta, step,
                                  time.perf_counter() - t0, t, True), z, callback)
        if step <= config.tol_outer:
            converged = True
            break
    return _finish("dldc", z, trace, t, it, converged, t0)


def sldc_basic(problem, config=None, op=None, callback=None, z0=None):
    """Single-loop DC-GPSR with the fixed step ``1/l``, ``l = lambda_max(phi^T phi)``."""
    t0 = time.perf_counter()
    config, rho, k = _resolve(problem, config)
    op = op or SplitOperator.from_problem(problem)
    trace = []
    eng = _Engine(op, rho, k, config, "dynamic", "fixed", t0, trace, callback)
    z, n, converged = eng.run(_initial_z(op, config, z0), config.max_outer, config.tol_outer, False)
    return _finish("sldc_basic", z, trace, n, 0, converged, t0)


def sldc_bb(problem, config=None, op=None, step_rule="bb", callback=None, z0=None):
    """Single-loop DC-GPSR with BB steps and a monotone scaling factor.

    ``step_rule="fixed"`` freezes the step at ``1/l`` with unit scaling, which
    reduces the method to :func:`sldc_basic`.
    """
    t0 = time.perf_counter()
    config, rho, k = _resolve(problem, config)
    op = op or SplitOperator.from_problem(problem)
    trace = []
    eng = _Engine(op, rho, k, config, "dynamic", step_rule, t0, trace, callback)
    z, n, converged = eng.run(_initial_z(op, config, z0), config.max_outer, config.tol_outer, False)
    return _finish("sldc_bb" if step_rule == "bb" else "sldc_basic", z, trace, n, 0, converged, t0)


# ---------------------------------------------------------------------------
# baselines
# ---------------------------------------------------------------------------


def l1_gpsr(problem, config=None, op=None, callback=None, z0=None):
    """GPSR-BB (monotone) for ``0.5 ||y - phi x||^2 + rho ||x||_1``."""
    t0 = time.perf_counter()
    config, rho, k = _resolve(problem, config)
    op = op or SplitOperator.from_problem(problem)
    trace = []
    eng = _Engine(op, rho, k, config, "none", "bb", t0, trace, callback)
    z, n, converged = eng.run(_initial_z(op, config, z0), config.max_outer, config.tol_outer, False)
    return _finish("l1_gpsr", z, trace, n, 0, converged, t0)


def soft_threshold(a, tau):
    return kernels.soft_threshold(np.ascontiguousarray(a, dtype=np.float64), float(tau))


def ista(problem, config=None, op=None, callback=None):
    """Iterative soft thresholding with step ``1/l``."""
    t0 = time.perf_counter()
    config, rho, k = _resolve(problem, config)
    op = op or SplitOperator.from_problem(problem)
    if op.lipschitz <= 0:
        raise ValueError("ista needs a nonzero phi")
    step = 1.0 / op.lipschitz
    x = op.phi_t_y.copy() if config.init == "backprojection" else np.zeros(op.n)
    r = op.phi @ x - op.y
    trace = []
    _record(trace, IterRecord(0, float(0.5 * (r @ r) + rho * np.sum(np.abs(x))), np.nan, np.nan, np.nan,
                              time.perf_counter() - t0), split(x), callback)
    converged = False
    i = 0
    for i in range(1, config.max_outer + 1):
        g = op.phi_t @ r
        _check_finite("gradient", g, trace)
        x_new = kernels.soft_threshold(x - step * g, rho * step)
        _check_finite("iterate", x_new, trace)
        d = float(np.linalg.norm(x_new - x))
        x = x_new
        r = op.phi @ x - op.y
        _record(trace, IterRecord(i, float(0.5 * (r @ r) + rho * np.sum(np.abs(x))), step, 1.0, d,
                                  time.perf_counter() - t0), split(x), callback)
        if d <= config.tol_outer:
            converged = True
            break
    return _finish("ista", split(x), trace, i, 0, converged, t0)


def omp(problem, k_budget=None, config=None, callback=None):
    """Orthogonal matching pursuit with a least-squares refit after every pick."""
    t0 = time.perf_counter()
    k = problem.k_budget if k_budget is None else int(k_budget)
    phi, y = problem.phi, problem.y
    m, n = phi.shape
    if not 0 <= k <= n:
        raise ValueError(f"k_budget must lie in [0, {n}], got {k}")
    norms = np.linalg.norm(phi, axis=0)
    norms[norms == 0] = np.inf
    x = np.zeros(n)
    r = y.copy()
    support = []
    flags = []
    trace = []
    _record(trace, IterRecord(0, float(0.5 * (r @ r)), np.nan, np.nan, np.nan, time.perf_counter() - t0),
            split(x), callback)
    stop = 1e-12 * max(1.0, float(np.linalg.norm(y)))
    converged = k == 0
    for i in range(1, k + 1):
        if np.linalg.norm(r) <= stop:
            converged = True
            break
        corr = np.abs(phi.T @ r) / norms
        corr[support] = -1.0
        support.append(int(np.argmax(corr)))
        sub = phi[:, support]
        if np.linalg.matrix_rank(sub) < len(support):
            coef = np.linalg.pinv(sub) @ y
            flags.append(f"rank_deficient_at_{i}")
        else:
            coef = np.linalg.lstsq(sub, y, rcond=None)[0]
        x_new = np.zeros(n)
        x_new[support] = coef
        d = float(np.linalg.norm(x_new - x))
        x = x_new
        r = y - phi @ x
        _record(trace, IterRecord(i, float(0.5 * (r @ r)), np.nan, np.nan, d, time.perf_counter() - t0),
                split(x), callback)
    else:
        converged = True
    result = _finish("omp", split(x), trace, len(support), 0, converged, t0, flags)
    result.x_hat = x
    return result


def ls_estimate(r, s):
    """Least-squares channel estimate ``pinv(S) R`` for a full-column-rank ``S``."""
    s = np.asarray(s)
    r = np.asarray(r)
    L, nt = s.shape
    if L < nt:
        raise ValueError(f"least squares needs L >= N_t (got L={L}, N_t={nt})")
    if np.linalg.matrix_rank(s) < nt:
        raise ValueError("S is rank deficient")
    return np.linalg.pinv(s) @ r


SOLVERS = {
    "dldc": dldc_gpsr,
    "sldc_basic": sldc_basic,
    "sldc_bb": sldc_bb,
    "l1_gpsr": l1_gpsr,
    "ista": ista,
    "omp": lambda problem, config=None, op=None, callback=None: omp(problem, config=config, callback=callback),
}


def solve(problem, algorithm, config=None, op=None, callback=None, z0=None):
    """Run ``algorithm`` on ``problem``.

    ``callback(record, x)`` is invoked for every trace record with the iterate
    it describes. ``z0`` starts the split-variable solvers from a given point.
    """
    try:
        fn = SOLVERS[algorithm]
    except KeyError:
        raise ValueError(f"unknown algorithm {algorithm!r}; valid: {', '.join(SOLVERS)}") from None
    if z0 is not None:
        if algorithm in ("ista", "omp"):
            raise ValueError(f"{algorithm} does not take a split starting point")
        return fn(problem, config=config, op=op, callback=callback, z0=z0)
    return fn(problem, config=config, op=op, callback=callback)


def write_trace_csv(result, path):
    import csv

    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["iter", "objective", "alpha", "beta", "delta_norm", "elapsed_seconds"])
        for rec in result.trace:
            w.writerow([rec.iter, repr(rec.objective), repr(rec.alpha), repr(rec.beta),
                        repr(rec.delta_norm), repr(rec.elapsed_seconds)])
