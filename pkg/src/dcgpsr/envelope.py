"""JSON envelope for channels, measurement setups and sparse problems.

Layout::

    {"format": "dcgpsr-envelope", "version": 1, "kind": ...,
     "meta": {...}, "layout": "row-major",
     "data": {name: {"shape": [...], "complex": bool, "b64": "..."}}}

Arrays are little-endian float64, row-major; complex arrays store
interleaved (re, im) pairs.
"""
import base64
import json
import math
import os
import tempfile
from dataclasses import asdict

import numpy as np

from .channel import ChannelParams, ChannelRealization, MeasurementSetup, SparseProblem

FORMAT = "dcgpsr-envelope"
VERSION = 1
_LE = np.dtype("<f8")


class EnvelopeError(ValueError):
    pass


def encode_array(a):
    a = np.asarray(a)
    is_complex = np.iscomplexobj(a)
    if is_complex:
        flat = np.empty(a.size * 2, dtype=_LE)
        c = np.ascontiguousarray(a, dtype=np.complex128).ravel()
        flat[0::2] = c.real
        flat[1::2] = c.imag
    else:
        flat = np.ascontiguousarray(a, dtype=_LE).ravel()
    return {
        "shape": list(a.shape),
        "complex": bool(is_complex),
        "b64": base64.b64encode(flat.tobytes()).decode("ascii"),
    }


def decode_array(entry):
    try:
        shape = tuple(int(s) for s in entry["shape"])
        raw = base64.b64decode(entry["b64"], validate=True)
        is_complex = bool(entry.get("complex", False))
    except (KeyError, TypeError, ValueError) as exc:
        raise EnvelopeError(f"malformed array entry: {exc}") from None
    flat = np.frombuffer(raw, dtype=_LE).astype(np.float64)
    count = math.prod(shape)
    expected = 2 * count if is_complex else count
    if flat.size != expected:
        raise EnvelopeError(f"array payload holds {flat.size} values, shape {shape} needs {expected}")
    if is_complex:
        return (flat[0::2] + 1j * flat[1::2]).reshape(shape)
    return flat.reshape(shape)


def _json_float(v):
    if v is None:
        return None
    v = float(v)
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return v


def _parse_float(v):
    if isinstance(v, str):
        return float(v)
    return None if v is None else float(v)


def make_envelope(kind, meta, arrays):
    return {
        "format": FORMAT,
        "version": VERSION,
        "kind": kind,
        "meta": meta,
        "layout": "row-major",
        "data": {name: encode_array(a) for name, a in arrays.items() if a is not None},
    }


def channel_to_envelope(channel, params=None):
    meta = {"seed": channel.seed}
    if params is not None:
        meta["params"] = asdict(params)
    arrays = {
        "spatial": channel.spatial,
        "beamspace": channel.beamspace,
        "beamspace_sparse": channel.beamspace_sparse,
        "gains": channel.gains,
        "aoa": channel.aoa,
        "aod": channel.aod,
    }
    return make_envelope("channel", meta, arrays)


def setup_to_envelope(setup):
    meta = {"seed": setup.seed, "kind": setup.kind, "power_budget": setup.power_budget, "scale": setup.scale}
    return make_envelope("setup", meta, {"s_matrix": setup.s_matrix, "pilot": setup.pilot})


def problem_to_envelope(problem, meta=None):
    m = dict(meta or {})
    m.update(
        {
            "k_budget": int(problem.k_budget),
            "rho": _json_float(problem.rho),
            "noise_variance": _json_float(problem.noise_variance),
        }
    )
    return make_envelope("problem", m, {"phi": problem.phi, "y": problem.y, "x_true": problem.x_true})


def _check(env, kind):
    if not isinstance(env, dict) or env.get("format") != FORMAT:
        raise EnvelopeError("not a dcgpsr envelope")
    if env.get("version") != VERSION:
        raise EnvelopeError(f"unsupported envelope version {env.get('version')!r}")
    if env.get("kind") != kind:
        raise EnvelopeError(f"expected a {kind!r} envelope, got {env.get('kind')!r}")
    if env.get("layout", "row-major") != "row-major":
        raise EnvelopeError("only row-major layout is supported")
    return env.get("meta", {}), env.get("data", {})


def _need(data, name):
    if name not in data:
        raise EnvelopeError(f"envelope is missing array {name!r}")
    return decode_array(data[name])


def channel_from_envelope(env):
    meta, data = _check(env, "channel")
    opt = {k: decode_array(data[k]) for k in ("gains", "aoa", "aod") if k in data}
    ch = ChannelRealization(
        spatial=_need(data, "spatial"),
        beamspace=_need(data, "beamspace"),
        beamspace_sparse=_need(data, "beamspace_sparse"),
        seed=meta.get("seed"),
        **opt,
    )
    params = ChannelParams(**meta["params"]) if "params" in meta else None
    return ch, params


def setup_from_envelope(env):
    meta, data = _check(env, "setup")
    return MeasurementSetup(
        kind=meta["kind"],
        s_matrix=_need(data, "s_matrix"),
        pilot=_need(data, "pilot"),
        power_budget=float(meta["power_budget"]),
        seed=int(meta["seed"]),
        scale=float(meta.get("scale", 1.0)),
    )


def problem_from_envelope(env):
    meta, data = _check(env, "problem")
    try:
        k = int(meta["k_budget"])
        rho = _parse_float(meta["rho"])
    except KeyError as exc:
        raise EnvelopeError(f"problem meta is missing {exc}") from None
    x_true = decode_array(data["x_true"]) if "x_true" in data else None
    return SparseProblem(
        phi=_need(data, "phi"),
        y=_need(data, "y"),
        k_budget=k,
        rho=rho,
        noise_variance=_parse_float(meta.get("noise_variance", 0.0)) or 0.0,
        x_true=x_true,
    )


def atomic_write_text(path, text):
    """Write via a temp file in the same directory, then rename over ``path``."""
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.chmod(tmp, 0o666 & ~_umask())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _umask():
    mask = os.umask(0)
    os.umask(mask)
    return mask


def dump(env, path):
    atomic_write_text(path, json.dumps(env, indent=1, sort_keys=True) + "\n")


def load(path):
    with open(path, encoding="utf-8") as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise EnvelopeError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
