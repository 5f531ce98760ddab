"""Independent reference implementations used as test oracles.

None of these import solver code; they are deliberately naive.
"""
import itertools

import numpy as np


def topk_norm_bruteforce(x, k):
    a = np.abs(np.asarray(x, dtype=float))
    if k == 0:
        return 0.0
    return max(sum(a[list(s)]) for s in itertools.combinations(range(a.size), k))


def weighted_lasso_cd(phi, y, weights, tol=1e-15, max_sweeps=200000):
    """Coordinate descent for 0.5||y - phi x||^2 + sum_i w_i |x_i| (phi full column rank)."""
    m, n = phi.shape
    col2 = np.sum(phi**2, axis=0)
    x = np.zeros(n)
    r = y.copy()
    for _ in range(max_sweeps):
        biggest = 0.0
        for i in range(n):
            rho_i = phi[:, i] @ r + col2[i] * x[i]
            new = np.sign(rho_i) * max(abs(rho_i) - weights[i], 0.0) / col2[i]
            d = new - x[i]
            if d:
                r -= d * phi[:, i]
                x[i] = new
                biggest = max(biggest, abs(d))
        if biggest <= tol * max(1.0, np.max(np.abs(x))):
            break
    return x


def dc_global_min(phi, y, rho, k):
    """Global minimiser of 0.5||y - phi x||^2 + rho (||x||_1 - ||x||_{K,1}).

    ||x||_{K,1} is the max over K-subsets T of sum_{i in T} |x_i|, so the DC
    objective is the min over T of a weighted lasso that leaves T unpenalised;
    each of those convex problems is solved by coordinate descent.
    """
    n = phi.shape[1]
    best, best_x = np.inf, None
    for T in itertools.combinations(range(n), k):
        w = np.full(n, rho)
        w[list(T)] = 0.0
        x = weighted_lasso_cd(phi, y, w)
        r = y - phi @ x
        a = np.sort(np.abs(x))
        val = 0.5 * r @ r + rho * np.sum(a[: n - k])
        if val < best:
            best, best_x = val, x
    return best_x, best
