"""Evaluation quantities: NMSE, system SNR and achievable spectral efficiency."""
import math
from dataclasses import asdict, dataclass

import numpy as np


@dataclass(frozen=True)
class EvaluationRecord:
    nmse: float
    snr_db: float
    snr_eff_db: float
    pilot_len: int
    coherence_len: int
    spectral_efficiency: float
    runtime_seconds: float = 0.0

    def __post_init__(self):
        if not math.isfinite(self.nmse) or self.nmse < 0:
            raise ValueError(f"nmse must be finite and nonnegative, got {self.nmse}")
        if self.spectral_efficiency < 0:
            raise ValueError("spectral efficiency cannot be negative")
        if self.pilot_len >= self.coherence_len and self.spectral_efficiency != 0.0:
            raise ValueError("no data symbols remain, spectral efficiency must be 0")
        if self.runtime_seconds < 0:
            raise ValueError("runtime cannot be negative")

    @classmethod
    def evaluate(cls, truth, estimates, snr_db, pilot_len, coherence_len, runtime_seconds=0.0):
        e = nmse(truth, estimates)
        snr = db_to_linear(snr_db)
        return cls(
            nmse=e,
            snr_db=float(snr_db),
            snr_eff_db=linear_to_db(effective_snr(snr, e)),
            pilot_len=int(pilot_len),
            coherence_len=int(coherence_len),
            spectral_efficiency=spectral_efficiency(pilot_len, coherence_len, snr, e),
            runtime_seconds=float(runtime_seconds),
        )

    def as_row(self):
        return asdict(self)


def db_to_linear(db):
    return math.inf if db == math.inf else 10.0 ** (db / 10.0)


def linear_to_db(x):
    if x == 0:
        return -math.inf
    return math.inf if x == math.inf else 10.0 * math.log10(x)


def _as_list(samples):
    if isinstance(samples, np.ndarray) and samples.ndim <= 2:
        return [samples]
    return list(samples)


def nmse(truth, estimates):
    """Mean over samples of ``||H - H_hat||_F^2 / ||H||_F^2``.

    Both arguments are sequences of equally shaped arrays; a single array is
    treated as one sample.
    """
    truth = _as_list(truth)
    estimates = _as_list(estimates)
    if len(truth) != len(estimates):
        raise ValueError(f"{len(truth)} truth samples but {len(estimates)} estimates")
    if not truth:
        raise ValueError("nmse needs at least one sample")
    ratios = []
    for i, (h, h_hat) in enumerate(zip(truth, estimates)):
        h = np.asarray(h)
        h_hat = np.asarray(h_hat)
        if h.shape != h_hat.shape:
            raise ValueError(f"sample {i}: shape {h_hat.shape} does not match truth {h.shape}")
        energy = np.vdot(h, h).real
        if energy == 0:
            raise ValueError(f"sample {i}: truth has zero norm, NMSE undefined")
        d = h - h_hat
        ratios.append(np.vdot(d, d).real / energy)
    return float(np.mean(ratios))


def system_snr(s, h, w):
    """``||S H||_F^2 / ||W||_F^2`` as a linear ratio; ``inf`` when ``W`` is zero."""
    signal = np.asarray(s) @ np.asarray(h)
    noise = np.linalg.norm(w) ** 2
    if noise == 0:
        return math.inf
    return float(np.linalg.norm(signal) ** 2 / noise)


def effective_snr(snr_linear, nmse_value):
    """Post-estimation SNR with the channel error variance clamped to 1."""
    if snr_linear < 0 or nmse_value < 0:
        raise ValueError("snr and nmse must be nonnegative")
    e = min(nmse_value, 1.0)
    if snr_linear == math.inf:
        return math.inf if e == 0 else (1.0 - e) / e
    return snr_linear * (1.0 - e) / (1.0 + snr_linear * e)


def spectral_efficiency(pilot_len, coherence_len, snr_linear, nmse_value):
    """Achievable rate per unit bandwidth, ``(1 - L/L_c) log2(1 + SNR_eff)``."""
    if coherence_len <= 0:
        raise ValueError(f"coherence length must be positive, got {coherence_len}")
    if not 0 <= pilot_len <= coherence_len:
        raise ValueError(f"pilot length {pilot_len} must lie in [0, {coherence_len}]")
    frac = 1.0 - pilot_len / coherence_len
    if frac == 0.0:
        return 0.0
    return frac * math.log2(1.0 + effective_snr(snr_linear, nmse_value))
