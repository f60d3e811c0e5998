"""Raw+sidecar persistence, CSV export, manifests.

Numeric arrays are stored as little-endian float64 .raw files next to a .json
sidecar describing shape and metadata.  All writes are atomic
(write-temp-then-rename) and sidecars carry a sha256 of the raw payload.
"""

import hashlib
import json
import os
import tempfile

import numpy as np

from .grids import Seismogram


def _atomic_write_bytes(path: str, payload: bytes) -> None:
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path: str, text: str) -> None:
    _atomic_write_bytes(path, text.encode("utf-8"))


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2)


def config_hash(config: dict) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True).encode()).hexdigest()


def write_array(base_path: str, array: np.ndarray, meta: dict = None) -> dict:
    """Store array as <base>.raw plus <base>.json; returns the sidecar dict."""
    arr = np.ascontiguousarray(array, dtype="<f8")
    raw = arr.tobytes()
    _atomic_write_bytes(base_path + ".raw", raw)
    sidecar = {
        "shape": list(arr.shape),
        "dtype": "<f8",
        "order": "C",
        "sha256": hashlib.sha256(raw).hexdigest(),
    }
    if meta:
        sidecar.update(meta)
    atomic_write_text(base_path + ".json", canonical_json(sidecar))
    return sidecar


def read_array(base_path: str):
    """Load (array, sidecar) from a raw+sidecar pair, verifying the checksum."""
    with open(base_path + ".json") as f:
        sidecar = json.load(f)
    with open(base_path + ".raw", "rb") as f:
        raw = f.read()
    if hashlib.sha256(raw).hexdigest() != sidecar["sha256"]:
        raise IOError(f"checksum mismatch for {base_path}.raw")
    arr = np.frombuffer(raw, dtype="<f8").reshape(sidecar["shape"]).copy()
    return arr, sidecar


def write_seismogram(base_path: str, s: Seismogram, sources=None, receivers=None,
                     extra: dict = None) -> dict:
    meta = {
        "dt": s.dt,
        "zero_mean": bool(s.zero_mean),
        "sources": [list(p) for p in sources] if sources is not None else None,
        "receivers": [list(p) for p in receivers] if receivers is not None else None,
    }
    if extra:
        meta.update(extra)
    return write_array(base_path, s.data, meta)


def read_seismogram(base_path: str):
    arr, sidecar = read_array(base_path)
    return Seismogram(arr, sidecar["dt"], zero_mean=sidecar.get("zero_mean", False)), sidecar


def export_traces_csv(path: str, s: Seismogram) -> None:
    """One column of time plus one column per (source, receiver) trace."""
    ns, nr, nt = s.data.shape
    t = np.arange(nt) * s.dt
    header = "t," + ",".join(f"s{i}_r{j}" for i in range(ns) for j in range(nr))
    table = np.column_stack([t, s.data.reshape(ns * nr, nt).T])
    lines = [header]
    for row in table:
        lines.append(",".join(repr(float(v)) for v in row))
    atomic_write_text(path, "\n".join(lines) + "\n")


def export_field_csv(path: str, field: np.ndarray) -> None:
    lines = []
    for row in np.asarray(field):
        lines.append(",".join(repr(float(v)) for v in row))
    atomic_write_text(path, "\n".join(lines) + "\n")


def write_manifest(directory: str, config: dict, seed: int, extra: dict = None) -> dict:
    import numba
    import scipy

    from . import __version__

    manifest = {
        "config_hash": config_hash(config),
        "seed": seed,
        "versions": {
            "bayfwi": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "numba": numba.__version__,
        },
    }
    if extra:
        manifest.update(extra)
    atomic_write_text(os.path.join(directory, "manifest.json"), canonical_json(manifest))
    return manifest
