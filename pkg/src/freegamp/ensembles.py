"""Measurement-matrix ensembles and synthetic problem instances."""
from __future__ import annotations

import zlib
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from .channels import Channel
from .errors import DomainError

KINDS = ("iid-gaussian", "right-invariant", "left-invariant", "bi-invariant", "row-orthogonal")


def make_rng(seed: int, *tags) -> np.random.Generator:
    """Counter-based generator keyed on ``seed`` and any ints/strings in ``tags``."""
    words = [int(seed) & 0xFFFFFFFFFFFFFFFF]
    for t in tags:
        words.append(zlib.crc32(t.encode()) if isinstance(t, str) else int(t))
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(words)))


@dataclass(frozen=True)
class EnsembleSpec:
    """Ensemble description.

    ``singular_values`` is ``"marchenko-pastur"`` (singular values of an iid
    Gaussian draw with entry variance 1/N), a float (constant profile) or an
    explicit sequence of length ``min(N, K)``. It is ignored for
    ``iid-gaussian`` and ``row-orthogonal``.
    """

    kind: str
    N: int
    K: int
    singular_values: Union[str, float, Sequence[float]] = "marchenko-pastur"
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DomainError(f"unknown ensemble kind {self.kind!r}; known: {KINDS}")
        if self.N < 1 or self.K < 1:
            raise DomainError("N and K must be positive")
        if self.kind == "row-orthogonal" and self.N > self.K:
            raise DomainError("row-orthogonal ensemble needs N <= K")
        sv = self.singular_values
        if isinstance(sv, str):
            if sv != "marchenko-pastur":
                raise DomainError(f"unknown singular-value profile {sv!r}")
        elif np.ndim(sv) == 0:
            if float(sv) < 0:
                raise DomainError("singular values must be >= 0")
        else:
            arr = np.asarray(sv, dtype=float)
            if arr.shape != (min(self.N, self.K),):
                raise DomainError(f"need {min(self.N, self.K)} singular values, got {arr.shape}")
            if np.any(arr < 0):
                raise DomainError("singular values must be >= 0")
            # tuples keep the spec hashable
            object.__setattr__(self, "singular_values", tuple(float(s) for s in arr))

    @property
    def alpha(self) -> float:
        return self.N / self.K


@dataclass
class SampledMatrix:
    """A sampled matrix with its factors ``A = U diag(d) V`` when they exist."""

    A: np.ndarray
    U: Optional[np.ndarray] = None
    singular_values: Optional[np.ndarray] = None
    V: Optional[np.ndarray] = None

    def reconstruct(self) -> np.ndarray:
        N, K = self.A.shape
        D = np.zeros((N, K))
        r = min(N, K)
        D[np.arange(r), np.arange(r)] = self.singular_values
        U = np.eye(N) if self.U is None else self.U
        V = np.eye(K) if self.V is None else self.V
        return U @ D @ V


def haar_orthogonal(T: int, rng: np.random.Generator | int) -> np.ndarray:
    """Haar-distributed T x T orthogonal matrix (QR with R-diagonal sign fix)."""
    if T < 1:
        raise DomainError("dimension must be >= 1")
    if not isinstance(rng, np.random.Generator):
        rng = make_rng(rng, "haar")
    Z = rng.standard_normal((T, T))
    Q, R = np.linalg.qr(Z)
    signs = np.sign(np.diag(R))
    signs[signs == 0] = 1.0
    return Q * signs


def _profile(spec: EnsembleSpec, rng) -> np.ndarray:
    r = min(spec.N, spec.K)
    sv = spec.singular_values
    if isinstance(sv, str):
        G = rng.standard_normal((spec.N, spec.K)) / np.sqrt(spec.N)
        return np.linalg.svd(G, compute_uv=False)
    if np.ndim(sv) == 0:
        return np.full(r, float(sv))
    return np.asarray(sv, dtype=float)


def sample_matrix(spec: EnsembleSpec, rng: np.random.Generator | None = None,
                  keep_factors: bool = False):
    """Draw ``A`` from the ensemble; returns a :class:`SampledMatrix` if ``keep_factors``."""
    if rng is None:
        rng = make_rng(spec.seed, "matrix")
    N, K = spec.N, spec.K
    if spec.kind == "iid-gaussian":
        A = rng.standard_normal((N, K)) / np.sqrt(N)
        if keep_factors:
            U, d, V = np.linalg.svd(A)
            return SampledMatrix(A, U, d, V)
        return A

    if spec.kind == "row-orthogonal":
        d = np.ones(N)
    else:
        d = _profile(spec, rng)
    U = haar_orthogonal(N, rng) if spec.kind in ("left-invariant", "bi-invariant") else None
    V = (haar_orthogonal(K, rng)
         if spec.kind in ("right-invariant", "bi-invariant", "row-orthogonal") else None)
    r = min(N, K)
    # U D V without forming D
    B = np.zeros((N, K))
    if V is None:
        B[:r, :r] = np.diag(d)
    else:
        B[:r] = d[:, None] * V[:r]
    A = B if U is None else U @ B
    if keep_factors:
        return SampledMatrix(A, U, d, V)
    return A


@dataclass
class ProblemInstance:
    A: np.ndarray
    x_true: np.ndarray
    z_true: np.ndarray
    y: np.ndarray
    prior: Channel
    likelihood: Channel
    ensemble: Optional[EnsembleSpec] = None
    _singular_values: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def singular_values(self) -> np.ndarray:
        """Singular values of ``A`` (length ``min(N, K)``), computed on first use."""
        if self._singular_values is None:
            self._singular_values = np.linalg.svd(self.A, compute_uv=False)
        return self._singular_values

    @property
    def N(self) -> int:
        return self.A.shape[0]

    @property
    def K(self) -> int:
        return self.A.shape[1]

    @property
    def alpha(self) -> float:
        return self.N / self.K


def synthesize_problem(spec: EnsembleSpec, prior: Channel, likelihood: Channel,
                       seed: int | None = None, A: np.ndarray | None = None) -> ProblemInstance:
    """Draw ``A`` (unless given), ``x ~ prior`` iid, ``z = A x`` and ``y ~ p(y|z)``.

    Every random stream is keyed on ``seed`` (default ``spec.seed``) and a
    purpose tag, so the same seed always yields the same instance.
    """
    if prior.role != "prior" or likelihood.role != "likelihood":
        raise DomainError("need a prior channel and a likelihood channel")
    seed = spec.seed if seed is None else seed
    sv = None
    if A is None:
        if spec.kind == "iid-gaussian":
            A = sample_matrix(spec, make_rng(seed, "matrix"))
        else:
            sampled = sample_matrix(spec, make_rng(seed, "matrix"), keep_factors=True)
            A, sv = sampled.A, np.sort(sampled.singular_values)[::-1]
    x = prior.sample(make_rng(seed, "signal"), spec.K)
    z = A @ x
    y = likelihood.sample(make_rng(seed, "noise"), z)
    return ProblemInstance(A, x, z, y, prior, likelihood, spec, sv)
