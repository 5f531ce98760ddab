"""Synthetic beamspace channels and the real-valued sparse problems built from them.

Conventions
-----------
* ULA steering vector: ``a(theta)[m] = exp(-2j pi (d/lambda) sin(theta) m) / sqrt(N)``.
* The beamspace basis ``U`` is the unitary DFT, ``U[i, m] = exp(-2j pi i m / N) / sqrt(N)``.
  It is symmetric, and row ``i`` (equivalently column ``i``) is the steering
  vector at normalized spatial angle ``i/N`` wrapped into ``[-1/2, 1/2)``.
* ``H_s = U_r H_a U_t^H`` and the reduced observation is ``R = S H + W`` with
  ``H = H_a^T`` (``N_t x N_r``).
"""
from dataclasses import dataclass, field

import numpy as np

from . import kernels

MEASUREMENT_KINDS = ("gaussian", "rademacher", "bernoulli01", "partial_fourier")


def _frozen(a):
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class ArrayGeometry:
    n_elements: int
    spacing_over_wavelength: float = 0.5

    def __post_init__(self):
        if int(self.n_elements) != self.n_elements or self.n_elements < 1:
            raise ValueError(f"n_elements must be a positive integer, got {self.n_elements}")
        if not self.spacing_over_wavelength > 0:
            raise ValueError("spacing_over_wavelength must be positive")


@dataclass(frozen=True)
class ChannelParams:
    n_tx: int = 256
    n_rx: int = 1
    n_paths: int = 3
    n_sparse: int = 16

    def __post_init__(self):
        for name in ("n_tx", "n_rx", "n_paths", "n_sparse"):
            v = getattr(self, name)
            if isinstance(v, bool) or int(v) != v or v < 1:
                raise ValueError(f"{name} must be a positive integer, got {v!r}")
        if self.n_sparse > self.n_tx * self.n_rx:
            raise ValueError("n_sparse cannot exceed n_tx * n_rx")


@dataclass(frozen=True)
class ChannelRealization:
    spatial: np.ndarray
    beamspace: np.ndarray
    beamspace_sparse: np.ndarray
    gains: np.ndarray = field(default=None, repr=False)
    aoa: np.ndarray = field(default=None, repr=False)
    aod: np.ndarray = field(default=None, repr=False)
    seed: int = None

    @property
    def truth(self):
        """Beamspace channel in observation orientation, ``N_t x N_r``."""
        return self.beamspace_sparse.T


@dataclass(frozen=True)
class MeasurementSetup:
    kind: str
    s_matrix: np.ndarray
    pilot: np.ndarray
    power_budget: float
    seed: int
    scale: float = 1.0


@dataclass(frozen=True)
class Observation:
    r: np.ndarray
    snr_db: float
    noise: np.ndarray
    noise_variance: float


@dataclass(frozen=True)
class SparseProblem:
    phi: np.ndarray
    y: np.ndarray
    k_budget: int
    rho: float
    noise_variance: float = 0.0
    x_true: np.ndarray = None

    def __post_init__(self):
        phi = np.asarray(self.phi, dtype=np.float64)
        y = np.asarray(self.y, dtype=np.float64)
        if phi.ndim != 2 or y.ndim != 1 or phi.shape[0] != y.shape[0]:
            raise ValueError(f"incompatible shapes phi{phi.shape} and y{y.shape}")
        if not 0 <= self.k_budget <= phi.shape[1]:
            raise ValueError(f"k_budget must lie in [0, {phi.shape[1]}], got {self.k_budget}")
        if not self.rho > 0:
            raise ValueError(f"rho must be positive, got {self.rho}")
        if self.noise_variance < 0:
            raise ValueError("noise_variance must be nonnegative")
        object.__setattr__(self, "phi", _frozen(phi))
        object.__setattr__(self, "y", _frozen(y))
        if self.x_true is not None:
            x = np.asarray(self.x_true, dtype=np.float64)
            if x.shape != (phi.shape[1],):
                raise ValueError("x_true has the wrong length")
            object.__setattr__(self, "x_true", _frozen(x))

    @property
    def shape(self):
        return self.phi.shape


# ---------------------------------------------------------------------------
# array response and beamspace basis
# ---------------------------------------------------------------------------


def steering_vector(theta, geometry):
    """ULA response at physical angle ``theta`` (radians), unit 2-norm."""
    if not -np.pi / 2 - 1e-12 <= theta <= np.pi / 2 + 1e-12:
        raise ValueError(f"theta must lie in [-pi/2, pi/2], got {theta}")
    n = geometry.n_elements
    nu = geometry.spacing_over_wavelength * np.sin(theta)
    return np.exp(-2j * np.pi * nu * np.arange(n)) / np.sqrt(n)


def virtual_angles(n, spacing_over_wavelength=0.5):
    """Physical angles whose steering vectors form the rows of ``dft_matrix(n)``.

    Normalized spatial angles are ``i/n`` wrapped into ``[-1/2, 1/2)``; when
    the spacing exceeds half a wavelength some grid points have no physical
    angle and ``nan`` is returned for them.
    """
    nu = np.arange(n) / n
    nu = np.where(nu >= 0.5, nu - 1.0, nu)
    s = nu / spacing_over_wavelength
    with np.errstate(invalid="ignore"):
        return np.where(np.abs(s) <= 1.0, np.arcsin(np.clip(s, -1, 1)), np.nan)


def dft_matrix(n):
    if n < 1:
        raise ValueError("n must be positive")
    m = np.arange(n)
    return np.exp(-2j * np.pi * np.outer(m, m) / n) / np.sqrt(n)


# ---------------------------------------------------------------------------
# channel generation
# ---------------------------------------------------------------------------


def sparsify(beamspace, n_sparse):
    """Keep the ``n_sparse`` largest-magnitude entries (row-major ties -> lower index)."""
    flat = np.asarray(beamspace).ravel()
    mask = kernels.topk_mask(np.ascontiguousarray(np.abs(flat)), int(n_sparse)).astype(bool)
    out = np.zeros_like(flat)
    out[mask] = flat[mask]
    return out.reshape(np.shape(beamspace))


def channel_from_paths(gains, aoa, aod, geometry_rx, geometry_tx, n_sparse, seed=None):
    """Saleh-Valenzuela channel for explicit path gains and angles."""
    gains = np.atleast_1d(np.asarray(gains, dtype=complex))
    aoa = np.atleast_1d(np.asarray(aoa, dtype=float))
    aod = np.atleast_1d(np.asarray(aod, dtype=float))
    if not gains.shape == aoa.shape == aod.shape:
        raise ValueError("gains, aoa and aod must have the same length")
    nr, nt = geometry_rx.n_elements, geometry_tx.n_elements
    spatial = np.zeros((nr, nt), dtype=complex)
    for g, tr, tt in zip(gains, aoa, aod):
        ar = steering_vector(tr, geometry_rx)
        at = steering_vector(tt, geometry_tx)
        spatial += g * np.outer(ar, at.conj())
    spatial *= np.sqrt(nr * nt)
    ur, ut = dft_matrix(nr), dft_matrix(nt)
    beamspace = ur.conj().T @ spatial @ ut
    return ChannelRealization(
        spatial=_frozen(spatial),
        beamspace=_frozen(beamspace),
        beamspace_sparse=_frozen(sparsify(beamspace, n_sparse)),
        gains=_frozen(gains),
        aoa=_frozen(aoa),
        aod=_frozen(aod),
        seed=seed,
    )


def generate_channel(params, geometry_rx=None, geometry_tx=None, seed=0):
    """Draw one channel: unit-variance complex Gaussian gains, uniform angles."""
    geometry_rx = geometry_rx or ArrayGeometry(params.n_rx)
    geometry_tx = geometry_tx or ArrayGeometry(params.n_tx)
    if geometry_rx.n_elements != params.n_rx or geometry_tx.n_elements != params.n_tx:
        raise ValueError("array geometries disagree with channel params")
    rng = np.random.default_rng([int(seed), 0])
    p = params.n_paths
    gains = (rng.standard_normal(p) + 1j * rng.standard_normal(p)) / np.sqrt(2.0)
    aoa = rng.uniform(-np.pi / 2, np.pi / 2, p)
    aod = rng.uniform(-np.pi / 2, np.pi / 2, p)
    return channel_from_paths(gains, aoa, aod, geometry_rx, geometry_tx, params.n_sparse, seed=int(seed))


# ---------------------------------------------------------------------------
# measurement and observation
# ---------------------------------------------------------------------------


def make_measurement_matrix(kind, L, n_tx, power_budget=None, seed=0):
    """Random measurement matrix ``S`` (``L x n_tx``) and the pilot it induces.

    ``S`` is rescaled so that ``||S||_F^2 = power_budget``; the pilot
    ``P = U_t S^T`` then carries exactly that power. The default budget ``L``
    makes an ``n_tx``-row orthonormal design have unit-norm rows.
    """
    if kind not in MEASUREMENT_KINDS:
        raise ValueError(f"unknown measurement kind {kind!r}; valid kinds: {', '.join(MEASUREMENT_KINDS)}")
    if L < 1 or n_tx < 1:
        raise ValueError("L and n_tx must be positive")
    if power_budget is None:
        power_budget = float(L)
    if power_budget < 0:
        raise ValueError("power_budget must be nonnegative")
    rng = np.random.default_rng([int(seed), 1, int(L)])
    if kind == "gaussian":
        s0 = rng.standard_normal((L, n_tx))
    elif kind == "rademacher":
        s0 = rng.choice(np.array([-1.0, 1.0]), size=(L, n_tx))
    elif kind == "bernoulli01":
        s0 = rng.integers(0, 2, size=(L, n_tx)).astype(float)
    else:
        if L > n_tx:
            raise ValueError("partial_fourier needs L <= n_tx")
        rows = np.sort(rng.choice(n_tx, size=L, replace=False))
        s0 = dft_matrix(n_tx)[rows]
    norm = np.linalg.norm(s0)
    if norm == 0:
        raise ValueError("drew an all-zero measurement matrix; use another seed")
    scale = np.sqrt(power_budget) / norm
    s = s0 * scale
    pilot = dft_matrix(n_tx) @ s.T
    return MeasurementSetup(kind, _frozen(s), _frozen(pilot), float(power_budget), int(seed), float(scale))


def _noise_stream(seed, L, snr_db):
    key = 0 if np.isinf(snr_db) else int(round((snr_db + 1000.0) * 1000))
    return np.random.default_rng([int(seed), 2, int(L), key])


def observe(setup, channel, target_snr_db, seed=None):
    """Noisy pilot observation ``R = S H + W`` at an exact per-realization SNR.

    ``W`` is a unit-variance complex Gaussian draw rescaled so that
    ``||S H||_F^2 / ||W||_F^2`` equals the target; ``+inf`` gives ``W = 0``.
    """
    s = setup.s_matrix
    h = channel.truth if isinstance(channel, ChannelRealization) else np.asarray(channel)
    if s.shape[1] != h.shape[0]:
        raise ValueError(f"S is {s.shape} but H is {h.shape}")
    sh = s @ h
    sig = float(np.linalg.norm(sh))
    if sig == 0.0:
        raise ValueError("zero signal: SNR is undefined")
    target_snr_db = float(target_snr_db)
    if np.isposinf(target_snr_db):
        w = np.zeros_like(sh, dtype=complex)
        return Observation(sh.astype(complex), np.inf, w, 0.0)
    if np.isnan(target_snr_db) or np.isneginf(target_snr_db):
        raise ValueError(f"invalid target SNR {target_snr_db}")
    if seed is None:
        seed = setup.seed
    rng = _noise_stream(seed, s.shape[0], target_snr_db)
    w0 = (rng.standard_normal(sh.shape) + 1j * rng.standard_normal(sh.shape)) / np.sqrt(2.0)
    c = sig / (np.linalg.norm(w0) * 10.0 ** (target_snr_db / 20.0))
    w = c * w0
    realized = 10.0 * np.log10(sig**2 / np.linalg.norm(w) ** 2)
    return Observation(sh + w, float(realized), w, float(c**2))


# ---------------------------------------------------------------------------
# real-valued single-vector problems
# ---------------------------------------------------------------------------


def realify(h):
    h = np.asarray(h)
    return np.concatenate([h.real, h.imag]).astype(np.float64)


def complexify(x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] % 2:
        raise ValueError(f"expected an even-length vector, got shape {x.shape}")
    n = x.shape[0] // 2
    return x[:n] + 1j * x[n:]


def stack_measurement(s):
    """``[[Re S, -Im S], [Im S, Re S]]``."""
    s = np.asarray(s)
    re, im = s.real.astype(np.float64), np.imag(s).astype(np.float64)
    return np.block([[re, -im], [im, re]])


def columnize(r, s, channel=None, noise_variance=0.0, k_budget=None, rho=1.0):
    """One real-valued sparse problem per receive-antenna column of ``R``.

    ``channel`` (a realization or an ``N_t x N_r`` array) supplies the ground
    truth attached to each problem; ``k_budget`` defaults to twice the
    complex nonzero count of each truth column.
    """
    r = np.asarray(r)
    if r.ndim == 1:
        r = r[:, None]
    s = np.asarray(s)
    if s.shape[0] != r.shape[0]:
        raise ValueError(f"S has {s.shape[0]} rows but R has {r.shape[0]}")
    if channel is None:
        truth = None
    elif isinstance(channel, ChannelRealization):
        truth = channel.truth
    else:
        truth = np.asarray(channel)
        if truth.ndim == 1:
            truth = truth[:, None]
    if truth is not None and truth.shape != (s.shape[1], r.shape[1]):
        raise ValueError(f"truth shape {truth.shape} does not match S {s.shape} and R {r.shape}")
    phi = stack_measurement(s)
    problems = []
    for i in range(r.shape[1]):
        x_true = realify(truth[:, i]) if truth is not None else None
        k = k_budget
        if k is None:
            if truth is None:
                raise ValueError("k_budget is required when no ground truth is given")
            k = 2 * int(np.count_nonzero(truth[:, i]))
        problems.append(SparseProblem(phi, realify(r[:, i]), int(k), float(rho), float(noise_variance), x_true))
    return problems


def planted_problem(m, n, k, seed=0, rho=1.0, noise_std=0.0):
    """Gaussian ``phi`` (columns of unit expected norm) and a planted ``k``-sparse ``x``."""
    rng = np.random.default_rng([int(seed), 7])
    phi = rng.standard_normal((m, n)) / np.sqrt(m)
    x = np.zeros(n)
    support = rng.choice(n, size=k, replace=False)
    x[support] = rng.choice([-1.0, 1.0], size=k) * rng.uniform(1.0, 2.0, size=k)
    y = phi @ x
    if noise_std:
        y = y + noise_std * rng.standard_normal(m)
    return SparseProblem(phi, y, k, rho, noise_std**2, x)
