"""Empirical spectra, Stieltjes and R-transforms, and the additive free convolution fixed point.

Conventions: ``G(s) = sum_i w_i / (atom_i - s)`` and ``R(w) = G^{-1}(-w) - 1/w``,
so a point mass at ``c`` has ``R == c``. On the real axis ``G`` is strictly
increasing left of the support (values in ``(0, inf)``) and right of it (values
in ``(-inf, 0)``); ``r_transform_real`` inverts the left branch for ``w < 0``
and the right branch for ``w > 0``. For a discrete spectrum both branches are
onto, so every finite ``w`` is admissible, and ``R(0)`` is the first moment.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np
from scipy.optimize import brentq

from .errors import DomainError, NumericError


@dataclass(frozen=True)
class EmpiricalSpectrum:
    atoms: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        atoms = np.asarray(self.atoms, dtype=float).ravel()
        weights = np.asarray(self.weights, dtype=float).ravel()
        if atoms.shape != weights.shape or atoms.size == 0:
            raise DomainError("atoms and weights must be non-empty and of equal length")
        if np.any(weights <= 0) or not np.all(np.isfinite(atoms)):
            raise DomainError("weights must be positive and atoms finite")
        if abs(weights.sum() - 1.0) > 1e-12:
            raise DomainError(f"weights sum to {weights.sum()!r}, not 1")
        order = np.argsort(atoms, kind="stable")
        atoms, weights = atoms[order], weights[order]
        atoms.setflags(write=False)
        weights.setflags(write=False)
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "weights", weights)

    @classmethod
    def from_eigenvalues(cls, eigenvalues) -> "EmpiricalSpectrum":
        ev = np.asarray(eigenvalues, dtype=float).ravel()
        return cls(ev, np.full(ev.size, 1.0 / ev.size))

    @classmethod
    def dirac(cls, c: float) -> "EmpiricalSpectrum":
        return cls(np.array([float(c)]), np.array([1.0]))

    @property
    def support_min(self) -> float:
        return float(self.atoms[0])

    @property
    def support_max(self) -> float:
        return float(self.atoms[-1])

    def moment(self, k: int = 1) -> float:
        return float(np.dot(self.weights, self.atoms ** k))

    def scaled(self, c: float) -> "EmpiricalSpectrum":
        """Spectrum of ``c X``."""
        return EmpiricalSpectrum(c * self.atoms, self.weights)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["atom", "weight"])
            for a, p in zip(self.atoms, self.weights):
                w.writerow([repr(float(a)), repr(float(p))])

    @classmethod
    def from_csv(cls, path) -> "EmpiricalSpectrum":
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(data[:, 0], data[:, 1])


def spectrum_of_symmetric(M, tol: float = 1e-10) -> EmpiricalSpectrum:
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise DomainError(f"need a square matrix, got shape {M.shape}")
    asym = np.max(np.abs(M - M.T)) if M.size else 0.0
    if asym > tol:
        raise DomainError(f"matrix is not symmetric (max asymmetry {asym:.3g})")
    return EmpiricalSpectrum.from_eigenvalues(np.linalg.eigvalsh(0.5 * (M + M.T)))


def stieltjes(spec: EmpiricalSpectrum, s):
    s = complex(s) if np.iscomplexobj(s) else float(s)
    diff = spec.atoms - s
    if np.any(diff == 0):
        raise DomainError(f"s = {s!r} is an atom of the spectrum (pole)")
    return np.sum(spec.weights / diff)


class RealRTransformQuery(NamedTuple):
    omega: float
    value: float
    converged: bool


def r_transform_query(spec: EmpiricalSpectrum, omega: float, tol: float = 1e-12) -> RealRTransformQuery:
    """Real-axis R-transform with a convergence flag instead of an exception."""
    omega = float(omega)
    if not np.isfinite(omega):
        raise DomainError("omega must be finite; a discrete spectrum admits every real omega")
    lo, hi = spec.support_min, spec.support_max
    if omega == 0.0 or hi == lo:
        return RealRTransformQuery(omega, spec.moment(1) if omega == 0.0 else lo, True)

    g = -omega
    inv_g = 1.0 / g
    atoms, weights = spec.atoms, spec.weights

    def h(r):
        # G(s) - g with s = r - 1/g, i.e. solved directly for the transform value
        return np.sum(weights / (atoms - r + inv_g)) - g

    # R lies in [lo, hi]; the branch condition keeps s off the support
    if g > 0:
        a, b = lo, min(hi, lo + inv_g)
    else:
        a, b = max(lo, hi + inv_g), hi
    span = hi - lo
    # back off from the pole at the open end
    eps = 4 * np.finfo(float).eps * max(abs(a), abs(b), span)
    if g > 0 and b == lo + inv_g:
        b = b - eps
    if g < 0 and a == hi + inv_g:
        a = a + eps
    fa, fb = h(a), h(b)
    if fa > 0:
        r = a
    elif fb < 0:
        r = b
    else:
        r = brentq(h, a, b, xtol=1e-15 * max(span, abs(a), 1e-300), rtol=4 * np.finfo(float).eps,
                   maxiter=500)
        # Newton polish; h is increasing in r
        for _ in range(2):
            d = atoms - r + inv_g
            slope = np.sum(weights / d ** 2)
            step = (np.sum(weights / d) - g) / slope
            cand = r - step
            if a <= cand <= b:
                r = cand
    resid = abs(h(r))
    return RealRTransformQuery(omega, float(r), bool(resid <= tol * max(abs(g), 1.0)))


def r_transform_real(spec: EmpiricalSpectrum, omega: float) -> float:
    q = r_transform_query(spec, omega)
    if not q.converged:
        # the root is exact to rounding; a failed residual means a pole-adjacent
        # target that float64 cannot resolve
        raise NumericError(f"R-transform inversion at omega={omega} did not reach 1e-12", q.value)
    return q.value


def omega_domain(spec: EmpiricalSpectrum) -> tuple:
    """Admissible real ``omega`` for :func:`r_transform_real` (open interval)."""
    return (-np.inf, np.inf)


def remark1_q(spec: EmpiricalSpectrum, tol: float = 1e-9) -> float:
    """``q = int x^-1 dP(x)``; checks ``1/q == R(-q)``."""
    if spec.support_min <= 0:
        raise DomainError("needs a spectrum with strictly positive atoms")
    q = float(np.sum(spec.weights / spec.atoms))
    r = r_transform_real(spec, -q)
    if abs(1.0 / q - r) > tol / q:
        raise NumericError(f"1/q = {1/q!r} but R(-q) = {r!r}", abs(1.0 / q - r))
    return q


class AdfResult(NamedTuple):
    q: float
    iterations: int
    residual: float


def solve_adf(lambda_x_diag, r_jz: Callable[[float], float], q0: float = 1.0,
              damping: float = 0.5, tol: float = 1e-10, max_iter: int = 10000) -> AdfResult:
    """Solve ``q = mean(1 / (Lambda_x + R_Jz(-q)))`` by damped fixed-point iteration.

    The first step is undamped; later steps move ``damping`` of the way to the
    map value. The returned ``q`` is the last map value.
    """
    lam = np.asarray(lambda_x_diag, dtype=float)
    if not q0 > 0:
        raise DomainError("q0 must be > 0")
    q = float(q0)
    resid = np.inf
    for it in range(1, max_iter + 1):
        denom = lam + r_jz(-q)
        if np.any(denom <= 0):
            raise DomainError(f"Lambda_x + R(-q) is not positive at q={q!r}")
        f = float(np.mean(1.0 / denom))
        resid = abs(f - q)
        if resid <= tol:
            return AdfResult(f, it, resid)
        q = f if it == 1 else q + damping * (f - q)
    raise NumericError(f"adf fixed point did not converge in {max_iter} iterations", resid)


def solve_adf_fixed_point(lambda_x_diag, r_jz, q0: float = 1.0, **kw) -> float:
    return solve_adf(lambda_x_diag, r_jz, q0, **kw).q


def r_mp_jz(lambda_z_diag, alpha: float, omega: float) -> float:
    """Large-system R-transform of ``A^T Lambda_z A`` for iid ``A`` with entry variance 1/N."""
    lam = np.asarray(lambda_z_diag, dtype=float)
    with np.errstate(divide="ignore"):
        denom = 1.0 / lam - omega / alpha
    if np.any(~(denom > 0)):
        raise DomainError("1/Lambda_z - omega/alpha must be positive")
    return float(np.mean(1.0 / denom))


def r_mp_jx(lambda_x_diag, alpha: float, omega: float) -> float:
    """Large-system R-transform of ``A Lambda_x^{-1} A^T`` for iid ``A``."""
    lam = np.asarray(lambda_x_diag, dtype=float)
    denom = lam - omega
    if np.any(~(denom > 0)):
        raise DomainError("Lambda_x - omega must be positive")
    return float(np.mean(1.0 / denom) / alpha)
