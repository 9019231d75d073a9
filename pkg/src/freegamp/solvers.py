"""GAMP first-order sweep with pluggable second-order (precision) updates.

One iteration ``t`` runs

    L_z   <- strategy.update_z(state)            precisions seen by the likelihood
    k_z   =  A x - m_prev / L_z
    z, tz =  likelihood tilted moments at (k_z, L_z)
    m     =  L_z (z - k_z)                       damped against m_prev
    L_x   <- strategy.update_x(state)            precisions seen by the prior
    k_x   =  A^T m / L_x + x
    x, tx =  prior tilted moments at (k_x, L_x)  x damped against x_prev

Strategies: ``gamp-full`` (row/column sums of A∘A), ``gamp-iid`` (scalar
precisions for iid matrices), ``exact-ep`` (dense Gaussian belief, one K x K
factorization per iteration) and ``samp-rtransform`` (scalar precisions solved
from R-transforms of A^T Lambda_z A and A Lambda_x^{-1} A^T).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, List, Optional

import numpy as np
from scipy.linalg import LinAlgError, cholesky, solve_triangular

from . import freeprob as fp
from .ensembles import ProblemInstance
from .errors import DivergedError, DomainError, ImproperBeliefError, NumericError

log = logging.getLogger(__name__)

STRATEGIES = ("gamp-full", "gamp-iid", "exact-ep", "samp-rtransform")


@dataclass
class GampState:
    x_hat: np.ndarray
    tau_x: np.ndarray
    m: np.ndarray
    tau_m: np.ndarray
    kappa_x: np.ndarray
    kappa_z: np.ndarray
    z_hat: np.ndarray
    tau_z: np.ndarray
    L_x: np.ndarray
    L_z: np.ndarray
    iteration: int = 0
    clip_count: int = 0
    inner_residual: float = 0.0

    def copy(self):
        out = replace(self)
        for k, v in vars(out).items():
            if isinstance(v, np.ndarray):
                setattr(out, k, v.copy())
        return out


@dataclass
class EpState(GampState):
    Lambda_x: Optional[np.ndarray] = None
    Lambda_z: Optional[np.ndarray] = None
    gamma_x: Optional[np.ndarray] = None
    gamma_z: Optional[np.ndarray] = None
    rho_x: Optional[np.ndarray] = None
    rho_z: Optional[np.ndarray] = None
    sigma_x_diag: Optional[np.ndarray] = None
    sigma_z_diag: Optional[np.ndarray] = None

    def refresh_natural(self):
        """Recompute rho = L kappa and gamma = (Lambda + L) s_hat - rho."""
        self.rho_x = self.L_x * self.kappa_x
        self.rho_z = self.L_z * self.kappa_z
        self.gamma_x = (self.Lambda_x + self.L_x) * self.x_hat - self.rho_x
        self.gamma_z = (self.Lambda_z + self.L_z) * self.z_hat - self.rho_z
        return self


def initial_state(problem: ProblemInstance, ep: bool = False) -> GampState:
    """Prior mean and variance for x, m = 0; precisions start at 0 (no message yet)."""
    N, K = problem.A.shape
    prior = problem.prior
    zeros_k, zeros_n = np.zeros(K), np.zeros(N)
    nan_n = np.full(N, np.nan)
    kw = dict(
        x_hat=np.full(K, float(prior.prior_mean)), tau_x=np.full(K, float(prior.prior_variance)),
        m=zeros_n.copy(), tau_m=nan_n.copy(), kappa_x=zeros_k.copy(), kappa_z=nan_n.copy(),
        z_hat=nan_n.copy(), tau_z=nan_n.copy(), L_x=zeros_k.copy(), L_z=zeros_n.copy(),
    )
    if not ep:
        return GampState(**kw)
    return EpState(**kw, Lambda_x=np.full(K, 1.0 / prior.prior_variance),
                   Lambda_z=zeros_n.copy())


def _clip(values, floor, state):
    values = np.asarray(values, dtype=float)
    low = ~(values >= floor)
    n = int(np.count_nonzero(low))
    if n:
        state.clip_count += n
        values = np.where(low, floor, values)
    return values


# ---------------------------------------------------------------- second order

def second_order_gamp_full(state: GampState, A, eps_prec: float = 1e-8, A2=None):
    """(L_z, tau_m, L_x) from the row/column sums of A∘A; uses ``state.tau_x``, ``state.tau_z``."""
    A2 = A * A if A2 is None else A2
    s = A2 @ state.tau_x
    if np.any(s == 0):
        raise DomainError("(A∘A) tau_x has a zero entry")
    L_z = 1.0 / s
    tau_m = L_z * (1.0 - L_z * state.tau_z)
    L_x = A2.T @ tau_m
    return _clip(L_z, eps_prec, state), tau_m, _clip(L_x, eps_prec, state)


def second_order_iid(state: GampState, alpha: float, eps_prec: float = 1e-8):
    """Scalar (L_z, L_x) for iid matrices with entry variance 1/N."""
    mtx = float(np.mean(state.tau_x))
    if not mtx > 0:
        raise DomainError("<tau_x> must be > 0")
    L_z = alpha / mtx
    tau_m = L_z * (1.0 - L_z * state.tau_z)
    L_x = float(np.mean(tau_m))
    return float(_clip(L_z, eps_prec, state)), float(_clip(L_x, eps_prec, state))


def _gaussian_belief(Lambda_x, Lambda_z, A, sign=1.0):
    """diag(Sigma_x) and diag(A Sigma_x A^T) for Sigma_x = (Lambda_x + sign A^T Lambda_z A)^-1."""
    P = (A.T * Lambda_z) @ A
    if sign < 0:
        P = -P
    P[np.diag_indices_from(P)] += Lambda_x
    try:
        C = cholesky(P, lower=True)
    except LinAlgError:
        raise ImproperBeliefError(
            "Lambda_x + A^T Lambda_z A is not positive definite; increase damping") from None
    Cinv = solve_triangular(C, np.eye(P.shape[0]), lower=True)
    sigma_x = np.sum(Cinv ** 2, axis=0)
    W = Cinv @ A.T
    sigma_z = np.sum(W ** 2, axis=0)
    return sigma_x, sigma_z


def second_order_exact_ep(state: EpState, A, eps_prec: float = 1e-8, sign: float = 1.0) -> EpState:
    """One EP precision update from the latest tilted variances; returns a new state.

    Both site precisions are refreshed first (Lambda_z = 1/tau_z - L_z,
    Lambda_x = 1/tau_x - L_x), then Sigma_x = (Lambda_x + A^T Lambda_z A)^-1 is
    factorized once and the cavity precisions follow from its marginals:
    L_z = 1/diag(A Sigma_x A^T) - Lambda_z, L_x = 1/diag(Sigma_x) - Lambda_x.

    Site precisions may be negative (non-log-concave channels); they are
    clipped to ``eps_prec`` only when the belief would otherwise be improper.
    Cavity precisions are always clipped. Clips are added to ``clip_count``.
    """
    s = state.copy()
    s.Lambda_z = 1.0 / s.tau_z - s.L_z
    s.Lambda_x = 1.0 / s.tau_x - s.L_x
    try:
        s.sigma_x_diag, s.sigma_z_diag = _gaussian_belief(s.Lambda_x, s.Lambda_z, A, sign)
    except ImproperBeliefError:
        s.Lambda_z = _clip(s.Lambda_z, eps_prec, s)
        s.Lambda_x = _clip(s.Lambda_x, eps_prec, s)
        s.sigma_x_diag, s.sigma_z_diag = _gaussian_belief(s.Lambda_x, s.Lambda_z, A, sign)
    s.L_z = _clip(1.0 / s.sigma_z_diag - s.Lambda_z, eps_prec, s)
    s.L_x = _clip(1.0 / s.sigma_x_diag - s.Lambda_x, eps_prec, s)
    return s


def _damped_scalar_fixed_point(f, x0, damping, tol, max_iter, what):
    x = float(x0)
    for _ in range(max_iter):
        fx = f(x)
        if not np.isfinite(fx) or fx <= 0:
            raise NumericError(f"{what}: inner map left the positive reals ({fx!r})")
        resid = abs(fx - x) / abs(fx)
        if resid <= tol:
            return fx, resid
        x = x + damping * (fx - x)
    raise NumericError(f"{what}: inner iteration did not converge in {max_iter} steps", resid)


def samp_update_x(r_jz, x_hat, At_m, prior, L0, damping=0.5, tol=1e-10, max_iter=500):
    """Solve ``L_x = R_Jz(-<sigma_x(A^T m / L_x + x; L_x)>)`` for scalar ``L_x``."""
    def f(L):
        _, var = prior.tilted_moments(At_m / L + x_hat, L)
        return r_jz(-float(np.mean(var)))
    return _damped_scalar_fixed_point(f, L0, damping, tol, max_iter, "S-AMP L_x")


def samp_update_z(r_jx, Ax, m_prev, y, likelihood, L0, damping=0.5, tol=1e-10, max_iter=500):
    """Solve ``L_z = 1 / R_Jx(-<tau_m>)``, ``tau_m = L_z (1 - L_z sigma_z(A x - m/L_z; L_z))``."""
    def f(L):
        _, var = likelihood.tilted_moments(Ax - m_prev / L, L, y=y)
        return 1.0 / r_jx(-float(np.mean(L * (1.0 - L * var))))
    return _damped_scalar_fixed_point(f, L0, damping, tol, max_iter, "S-AMP L_z")


def second_order_samp(state: GampState, problem: ProblemInstance, r_jz, r_jx,
                      damping=0.5, tol=1e-10, max_iter=500):
    """Scalar (L_x, L_z) from the two R-transform identities, each solved by inner iteration.

    ``r_jz``/``r_jx`` are callables ``omega -> R(omega)``. Uses the state's
    current ``x_hat``, ``m`` and precisions as starting points.
    """
    A = problem.A
    Lz, _ = samp_update_z(r_jx, A @ state.x_hat, state.m, problem.y, problem.likelihood,
                          float(np.mean(state.L_z)) or 1.0, damping, tol, max_iter)
    Lx, _ = samp_update_x(r_jz, state.x_hat, A.T @ state.m, problem.prior,
                          float(np.mean(state.L_x)) or 1.0, damping, tol, max_iter)
    return Lx, Lz


# ------------------------------------------------------------- R providers

class RProvider:
    """Maps the current site precisions (Lambda_z or Lambda_x diagonal) to ``omega -> R(omega)``."""

    def bind(self, site_precision: np.ndarray) -> Callable[[float], float]:
        raise NotImplementedError


@dataclass
class ConstantR(RProvider):
    value: float

    def bind(self, site_precision):
        return lambda omega: self.value


@dataclass
class MarchenkoPasturJz(RProvider):
    alpha: float

    def bind(self, lambda_z):
        return lambda omega: fp.r_mp_jz(lambda_z, self.alpha, omega)


@dataclass
class MarchenkoPasturJx(RProvider):
    alpha: float

    def bind(self, lambda_x):
        return lambda omega: fp.r_mp_jx(lambda_x, self.alpha, omega)


@dataclass
class ScaledSpectrumJz(RProvider):
    """``A^T Lambda_z A`` with Lambda_z ∝ I: ``R(w) = c R_{A^T A}(c w)``, c = <Lambda_z>."""

    gram: fp.EmpiricalSpectrum  # spectrum of A^T A

    def bind(self, lambda_z):
        c = float(np.mean(lambda_z))
        return lambda omega: c * fp.r_transform_real(self.gram, c * omega)


@dataclass
class ScaledSpectrumJx(RProvider):
    """``A Lambda_x^{-1} A^T`` with Lambda_x ∝ I: ``R(w) = c R_{A A^T}(c w)``, c = 1/<Lambda_x>."""

    outer: fp.EmpiricalSpectrum  # spectrum of A A^T

    def bind(self, lambda_x):
        c = 1.0 / float(np.mean(lambda_x))
        return lambda omega: c * fp.r_transform_real(self.outer, c * omega)


@dataclass
class RespectralizedJz(RProvider):
    """Eigendecomposition of ``A^T Lambda_z A`` on every bind (O(K^3), validation use)."""

    A: np.ndarray

    def bind(self, lambda_z):
        spec = fp.spectrum_of_symmetric((self.A.T * lambda_z) @ self.A, tol=np.inf)
        return lambda omega: fp.r_transform_real(spec, omega)


@dataclass
class RespectralizedJx(RProvider):
    """Eigendecomposition of ``A Lambda_x^{-1} A^T`` on every bind (O(N^3), validation use)."""

    A: np.ndarray

    def bind(self, lambda_x):
        spec = fp.spectrum_of_symmetric((self.A / lambda_x) @ self.A.T, tol=np.inf)
        return lambda omega: fp.r_transform_real(spec, omega)


def gram_spectra(singular_values, N: int, K: int):
    """Spectra of ``A^T A`` (K atoms) and ``A A^T`` (N atoms) from the singular values of A."""
    d2 = np.asarray(singular_values, dtype=float) ** 2
    ata = np.concatenate([d2, np.zeros(K - d2.size)])
    aat = np.concatenate([d2, np.zeros(N - d2.size)])
    return fp.EmpiricalSpectrum.from_eigenvalues(ata), fp.EmpiricalSpectrum.from_eigenvalues(aat)


def make_provider(name: str, side: str, problem: ProblemInstance) -> RProvider:
    """``name`` in {mp, scaled, respectral} or a number (constant R); ``side`` in {jz, jx}."""
    N, K = problem.A.shape
    try:
        return ConstantR(float(name))
    except (TypeError, ValueError):
        pass
    if name == "mp":
        return MarchenkoPasturJz(N / K) if side == "jz" else MarchenkoPasturJx(N / K)
    if name == "scaled":
        ata, aat = gram_spectra(problem.singular_values, N, K)
        return ScaledSpectrumJz(ata) if side == "jz" else ScaledSpectrumJx(aat)
    if name == "respectral":
        return RespectralizedJz(problem.A) if side == "jz" else RespectralizedJx(problem.A)
    raise DomainError(f"unknown R provider {name!r}")


# ------------------------------------------------------------- strategies

@dataclass
class SecondOrderStrategy:
    """Tagged choice of precision update.

    ``r_jz``/``r_jx`` name the R-transform providers used by ``samp-rtransform``
    (``mp``, ``scaled``, ``respectral`` or a constant); ``ep_sign`` = -1 selects
    the ``(Lambda_x - A^T Lambda_z A)^-1`` variant of the EP covariance.
    """

    kind: str = "gamp-full"
    eps_prec: float = 1e-8
    r_jz: str = "mp"
    r_jx: str = "mp"
    inner_damping: float = 0.5
    inner_tol: float = 1e-10
    inner_max_iter: int = 500
    ep_sign: float = 1.0

    def __post_init__(self):
        if self.kind not in STRATEGIES:
            raise DomainError(f"unknown strategy {self.kind!r}; known: {STRATEGIES}")
        if not self.eps_prec > 0:
            raise DomainError("eps_prec must be > 0")


@dataclass
class SolverConfig:
    max_iterations: int = 500
    tolerance: float = 1e-8
    damping: float = 0.7
    strategy: SecondOrderStrategy = field(default_factory=SecondOrderStrategy)
    record_residuals: bool = False
    init: str = "prior"

    def __post_init__(self):
        if not 0 < self.damping <= 1:
            raise DomainError("damping must lie in (0, 1]")
        if self.max_iterations < 0:
            raise DomainError("max_iterations must be >= 0")
        if self.init != "prior":
            raise DomainError("only the 'prior' initialization is supported")


class _Updater:
    """Binds a strategy to one problem; owns caches such as A∘A and providers."""

    def __init__(self, strategy: SecondOrderStrategy, problem: ProblemInstance):
        self.s = strategy
        self.problem = problem
        self.A = problem.A
        self.alpha = problem.alpha
        self.A2 = self.A * self.A if strategy.kind == "gamp-full" else None
        self._pending_Lx = None
        if strategy.kind == "samp-rtransform":
            self.pjz = make_provider(strategy.r_jz, "jz", problem)
            self.pjx = make_provider(strategy.r_jx, "jx", problem)

    def update_z(self, st: GampState):
        s, eps = self.s, self.s.eps_prec
        N = self.A.shape[0]
        if s.kind == "gamp-full":
            return _clip(1.0 / (self.A2 @ st.tau_x), eps, st)
        if s.kind == "gamp-iid":
            return np.full(N, float(_clip(self.alpha / np.mean(st.tau_x), eps, st)))
        if s.kind == "exact-ep":
            if st.iteration == 0:
                # no likelihood site yet: Lambda_z = 0
                sx, sz = _gaussian_belief(st.Lambda_x, st.Lambda_z, self.A, s.ep_sign)
                st.sigma_x_diag, st.sigma_z_diag = sx, sz
                return _clip(1.0 / sz - st.Lambda_z, eps, st)
            new = second_order_exact_ep(st, self.A, eps, s.ep_sign)
            for k in ("Lambda_x", "Lambda_z", "sigma_x_diag", "sigma_z_diag"):
                setattr(st, k, getattr(new, k))
            st.clip_count = new.clip_count
            self._pending_Lx = new.L_x
            return new.L_z
        # samp-rtransform
        lam_x = _clip(1.0 / st.tau_x - st.L_x, eps, st)
        r_jx = self.pjx.bind(lam_x)
        L0 = float(np.mean(st.L_z)) if st.iteration else self.alpha / float(np.mean(st.tau_x))
        Lz, res = samp_update_z(r_jx, self.A @ st.x_hat, st.m, self.problem.y,
                                self.problem.likelihood, L0, s.inner_damping, s.inner_tol,
                                s.inner_max_iter)
        st.inner_residual = max(st.inner_residual, res)
        return np.full(N, float(_clip(Lz, eps, st)))

    def update_x(self, st: GampState, At_m):
        s, eps = self.s, self.s.eps_prec
        K = self.A.shape[1]
        tau_m = st.L_z * (1.0 - st.L_z * st.tau_z)
        st.tau_m = tau_m
        if s.kind == "gamp-full":
            return _clip(self.A2.T @ tau_m, eps, st)
        if s.kind == "gamp-iid":
            return np.full(K, float(_clip(np.mean(tau_m), eps, st)))
        if s.kind == "exact-ep":
            if st.iteration == 0:
                # first likelihood site: refresh the belief before forming the x cavity
                st.Lambda_z = 1.0 / st.tau_z - st.L_z
                sx, sz = _gaussian_belief(st.Lambda_x, st.Lambda_z, self.A, s.ep_sign)
                st.sigma_x_diag, st.sigma_z_diag = sx, sz
                return _clip(1.0 / sx - st.Lambda_x, eps, st)
            Lx, self._pending_Lx = self._pending_Lx, None
            return Lx
        lam_z = _clip(1.0 / st.tau_z - st.L_z, eps, st)
        r_jz = self.pjz.bind(lam_z)
        L0 = float(np.mean(st.L_x)) if st.iteration else float(np.mean(tau_m))
        if not L0 > 0:
            L0 = 1.0
        Lx, res = samp_update_x(r_jz, st.x_hat, At_m, self.problem.prior, L0,
                                s.inner_damping, s.inner_tol, s.inner_max_iter)
        st.inner_residual = max(st.inner_residual, res)
        return np.full(K, float(_clip(Lx, eps, st)))


def gamp_first_order_sweep(state: GampState, problem: ProblemInstance,
                           strategy: SecondOrderStrategy | _Updater, damping: float = 1.0) -> GampState:
    """One iteration of the first-order recursion with the strategy's precision updates."""
    upd = strategy if isinstance(strategy, _Updater) else _Updater(strategy, problem)
    A = problem.A
    st = state.copy()
    st.inner_residual = 0.0
    t = st.iteration
    x_old, m_old = state.x_hat, state.m

    st.L_z = upd.update_z(st)
    st.kappa_z = A @ x_old - m_old / st.L_z
    st.z_hat, st.tau_z = problem.likelihood.tilted_moments(st.kappa_z, st.L_z, y=problem.y)
    m_new = st.L_z * (st.z_hat - st.kappa_z)
    st.m = m_new if damping == 1.0 else damping * m_new + (1.0 - damping) * m_old

    At_m = A.T @ st.m
    st.L_x = upd.update_x(st, At_m)
    st.kappa_x = At_m / st.L_x + x_old
    x_new, st.tau_x = problem.prior.tilted_moments(st.kappa_x, st.L_x)
    st.x_hat = x_new if damping == 1.0 else damping * x_new + (1.0 - damping) * x_old
    st.iteration = t + 1

    for name in ("x_hat", "tau_x", "m", "z_hat", "tau_z", "L_x", "L_z"):
        if not np.all(np.isfinite(getattr(st, name))):
            raise DivergedError(f"non-finite {name} at iteration {t}", t)
    if isinstance(st, EpState) and st.Lambda_x is not None:
        st.refresh_natural()
    return st


# ------------------------------------------------------------- driver

@dataclass
class IterationRecord:
    iteration: int
    mse: float
    nmse_db: float
    residual_f1: float
    residual_f2: float
    clip_count: int
    change: float
    inner_residual: float = 0.0


@dataclass
class Trajectory:
    records: List[IterationRecord] = field(default_factory=list)
    converged: bool = False
    x_hat: Optional[np.ndarray] = None

    @property
    def iterations(self) -> int:
        return len(self.records)

    def __len__(self):
        return len(self.records)


def nmse_db(x_hat, x_true) -> float:
    num = float(np.sum((x_hat - x_true) ** 2))
    den = float(np.sum(x_true ** 2))
    with np.errstate(divide="ignore"):
        return float(10.0 * np.log10(num / den)) if den > 0 else float("nan")


def _rel_change(new, old) -> float:
    """``|new - old| / |old|`` in L2; 0 if nothing moved, inf if ``old`` is zero."""
    d = float(np.linalg.norm(new - old))
    if d == 0:
        return 0.0
    n = float(np.linalg.norm(old))
    return d / n if n > 0 else float("inf")


def run(problem: ProblemInstance, config: SolverConfig):
    """Iterate from the prior until x_hat and m stop moving.

    The recorded change is ``|x_t - x_{t-1}| / |x_{t-1}|``; convergence also
    requires the same relative change of ``m`` to be below the tolerance.

    Returns ``(trajectory, final_state)``. On non-finite values a
    :class:`DivergedError` carrying the partial trajectory is raised.
    """
    strat = config.strategy
    state = initial_state(problem, ep=strat.kind == "exact-ep")
    traj = Trajectory(x_hat=state.x_hat)
    if config.max_iterations == 0:
        return traj, state
    upd = _Updater(strat, problem)
    check = None
    if config.record_residuals:
        from .oracle import check_fixed_point
        check = check_fixed_point
    x_true = problem.x_true
    for _ in range(config.max_iterations):
        try:
            new = gamp_first_order_sweep(state, problem, upd, config.damping)
        except (DivergedError, NumericError, DomainError) as exc:
            it = getattr(exc, "iteration", state.iteration)
            raise DivergedError(f"{strat.kind}: {exc}", it, traj) from exc
        change = _rel_change(new.x_hat, state.x_hat)
        # x_hat alone can stall for a sweep while m still moves
        settled = change <= config.tolerance and _rel_change(new.m, state.m) <= config.tolerance
        state = new
        r1 = r2 = float("nan")
        if check is not None:
            rep = check_fixed_point(state, problem.A, problem.prior, problem.likelihood, problem.y)
            r1, r2 = rep.f1, rep.f2
        traj.records.append(IterationRecord(
            state.iteration, float(np.mean((state.x_hat - x_true) ** 2)),
            nmse_db(state.x_hat, x_true), r1, r2, state.clip_count, change,
            float(state.inner_residual)))
        if settled:
            traj.converged = True
            break
    traj.x_hat = state.x_hat
    return traj, state
