"""Dense binary matrix dumps and solver-state (de)serialization.

File layout: a 16-byte header ``struct "<8sII"`` (magic ``b"AMPDENSE"``, rows,
cols) followed by ``rows * cols`` little-endian float64 values in row-major
order. CSV files (comma separated, no header) are accepted on import.

A state dump is a (K + N) x 7 matrix with columns
``s_hat, tau, kappa, tilt, site, m, y``; the first K rows describe x (``m``
and ``y`` are NaN there) and the last N rows describe z.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import DomainError
from .solvers import EpState, GampState

MAGIC = b"AMPDENSE"
HEADER = struct.Struct("<8sII")
STATE_COLUMNS = ("s_hat", "tau", "kappa", "tilt", "site", "m", "y")


def write_dense(path, M) -> None:
    M = np.asarray(M, dtype=float)
    if M.ndim != 2:
        raise DomainError("only 2-d arrays can be dumped")
    with open(path, "wb") as fh:
        fh.write(HEADER.pack(MAGIC, *M.shape))
        fh.write(np.ascontiguousarray(M, dtype="<f8").tobytes())


def read_dense(path) -> np.ndarray:
    """Read a binary dump, or a headerless CSV if the magic is absent."""
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        try:
            return np.loadtxt(path, delimiter=",", ndmin=2)
        except ValueError as exc:
            raise DomainError(f"{path}: neither a dense dump nor numeric CSV ({exc})") from None
    if len(raw) < HEADER.size:
        raise DomainError(f"{path}: truncated header")
    _, rows, cols = HEADER.unpack_from(raw)
    payload = raw[HEADER.size:]
    if len(payload) != 8 * rows * cols:
        raise DomainError(f"{path}: expected {rows}x{cols} payload, got {len(payload)} bytes")
    return np.frombuffer(payload, dtype="<f8").reshape(rows, cols).astype(float)


def state_to_matrix(state: GampState, y) -> np.ndarray:
    K, N = state.x_hat.size, state.m.size
    site_x = 1.0 / state.tau_x - state.L_x
    site_z = 1.0 / state.tau_z - state.L_z
    if isinstance(state, EpState) and state.Lambda_x is not None:
        site_x, site_z = state.Lambda_x, state.Lambda_z
    nan_k = np.full(K, np.nan)
    top = np.column_stack([state.x_hat, state.tau_x, state.kappa_x, state.L_x, site_x, nan_k, nan_k])
    bottom = np.column_stack([state.z_hat, state.tau_z, state.kappa_z, state.L_z, site_z,
                              state.m, np.asarray(y, dtype=float)])
    return np.vstack([top, bottom])


def matrix_to_state(M, K: int):
    """Inverse of :func:`state_to_matrix`; returns ``(EpState, y)``."""
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[1] != len(STATE_COLUMNS):
        raise DomainError(f"state dump needs {len(STATE_COLUMNS)} columns, got shape {M.shape}")
    if not 0 < K < M.shape[0]:
        raise DomainError(f"K={K} incompatible with a state dump of {M.shape[0]} rows")
    x, z = M[:K], M[K:]
    st = EpState(
        x_hat=x[:, 0].copy(), tau_x=x[:, 1].copy(), kappa_x=x[:, 2].copy(), L_x=x[:, 3].copy(),
        z_hat=z[:, 0].copy(), tau_z=z[:, 1].copy(), kappa_z=z[:, 2].copy(), L_z=z[:, 3].copy(),
        m=z[:, 5].copy(), tau_m=np.full(z.shape[0], np.nan),
        Lambda_x=x[:, 4].copy(), Lambda_z=z[:, 4].copy(),
    )
    return st.refresh_natural(), z[:, 6].copy()


def write_state(path, state: GampState, y) -> None:
    write_dense(path, state_to_matrix(state, y))


def read_state(path, K: int):
    return matrix_to_state(read_dense(path), K)
