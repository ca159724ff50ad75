"""File formats: a small binary array container and the CSV/text interchange files.

Container layout (all little endian)::

    8 bytes   magic  b"SHCORR01"
    u32       number of arrays
    per array:
        u16 + utf-8   name
        u32           ndim
        u64 * ndim    shape
        f64 * size    data, row-major
"""

from __future__ import annotations

import csv
import struct
from pathlib import Path

import numpy as np
from scipy import sparse

from .errors import DimensionMismatch, ParseError
from .operators import ReducedOperator
from .spectral import DescriptorSet, SpectralBasis

MAGIC = b"SHCORR01"
_OP_KINDS = ("multiplicative", "orientation")


def write_container(path, arrays: dict) -> None:
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(arrays)))
        for name, arr in arrays.items():
            a = np.ascontiguousarray(arr, dtype="<f8")
            key = name.encode()
            fh.write(struct.pack("<H", len(key)) + key)
            fh.write(struct.pack("<I", a.ndim))
            fh.write(struct.pack(f"<{a.ndim}Q", *a.shape))
            fh.write(a.tobytes())


def read_container(path) -> dict:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc}") from exc
    if data[:8] != MAGIC:
        raise ParseError(f"{path}: not an array container (bad magic)")
    try:
        pos = 8
        (count,) = struct.unpack_from("<I", data, pos)
        pos += 4
        out = {}
        for _ in range(count):
            (ln,) = struct.unpack_from("<H", data, pos)
            pos += 2
            name = data[pos : pos + ln].decode()
            pos += ln
            (ndim,) = struct.unpack_from("<I", data, pos)
            pos += 4
            shape = struct.unpack_from(f"<{ndim}Q", data, pos)
            pos += 8 * ndim
            size = int(np.prod(shape, dtype=np.int64))
            if pos + 8 * size > len(data):
                raise ParseError(f"{path}: truncated array {name!r}")
            out[name] = np.frombuffer(data, dtype="<f8", count=size, offset=pos).reshape(shape).astype(np.float64)
            pos += 8 * size
    except struct.error as exc:
        raise ParseError(f"{path}: truncated header") from exc
    return out


def save_basis(path, basis: SpectralBasis) -> None:
    W = sparse.coo_matrix(basis.stiffness)
    write_container(
        path,
        {
            "phi": basis.phi,
            "evals": basis.evals,
            "mass": basis.mass_diag,
            "stiffness": np.vstack([W.row, W.col, W.data]),
        },
    )


def load_basis(path) -> SpectralBasis:
    a = read_container(path)
    try:
        phi, evals, mass, w = a["phi"], a["evals"], a["mass"], a["stiffness"]
    except KeyError as exc:
        raise ParseError(f"{path}: missing array {exc}") from exc
    n = phi.shape[0]
    if mass.shape != (n,) or evals.shape != (phi.shape[1],):
        raise DimensionMismatch(f"{path}: inconsistent basis arrays")
    W = sparse.csr_matrix((w[2], (w[0].astype(np.int64), w[1].astype(np.int64))), shape=(n, n))
    return SpectralBasis(phi, evals, sparse.diags(mass), W)


def save_descriptors(path, desc: DescriptorSet) -> None:
    write_container(path, {"raw": desc.raw, "reduced": desc.reduced})


def load_descriptors(path) -> DescriptorSet:
    a = read_container(path)
    return DescriptorSet(a["raw"], a["reduced"])


def save_operator(path, op: ReducedOperator) -> None:
    meta = [_OP_KINDS.index(op.kind), -1 if op.column is None else op.column]
    write_container(path, {"matrix": op.matrix, "meta": np.array(meta, dtype=np.float64)})


def load_operator(path) -> ReducedOperator:
    a = read_container(path)
    kind, col = (int(x) for x in a["meta"])
    return ReducedOperator(a["matrix"], _OP_KINDS[kind], None if col < 0 else col)


# ---------------------------------------------------------------------------
# text formats


def save_matrix_csv(path, A) -> None:
    np.savetxt(path, np.atleast_2d(A), delimiter=",", fmt="%.17g")


def load_matrix_csv(path) -> np.ndarray:
    try:
        A = np.loadtxt(path, delimiter=",", ndmin=2, comments="#")
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc}") from exc
    except ValueError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    if not np.all(np.isfinite(A)):
        raise ParseError(f"{path}: non-finite entries")
    return A


def save_pointmap(path, T) -> None:
    Path(path).write_text("".join(f"{int(t)}\n" for t in T))


def load_pointmap(path, n_src: int | None = None, n_tgt: int | None = None) -> np.ndarray:
    """One 0-based target index per line. Length and range are checked when given."""
    try:
        lines = Path(path).read_text().split()
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc}") from exc
    try:
        T = np.array([int(s) for s in lines], dtype=np.int64)
    except ValueError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    if n_src is not None and T.size != n_src:
        raise DimensionMismatch(f"{path}: {T.size} entries, expected {n_src}")
    if T.size and T.min() < 0:
        raise DimensionMismatch(f"{path}: negative index")
    if n_tgt is not None and T.size and T.max() >= n_tgt:
        raise DimensionMismatch(f"{path}: index {T.max()} out of range [0, {n_tgt})")
    return T


def load_descriptor_csv(path, n_vertices: int) -> np.ndarray:
    """External per-vertex descriptors, one row per vertex."""
    D = load_matrix_csv(path)
    if D.shape[0] != n_vertices:
        raise DimensionMismatch(f"{path}: {D.shape[0]} rows, mesh has {n_vertices} vertices")
    return D


def write_diagnostics_csv(path, rows, fields) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(fields), extrasaction="ignore")
        w.writeheader()
        for r in rows:
            w.writerow({k: (f"{v:.10g}" if isinstance(v, float) else v) for k, v in r.items()})
