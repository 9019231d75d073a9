"""Dense reference computations used to validate solver states.

Nothing here shares code with the iterative solvers beyond the state
containers: covariances are formed and factorized explicitly, and tilted
moments are re-evaluated from the channels.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .errors import DomainError, ImproperBeliefError
from .solvers import EpState, GampState


def _spd_inverse(P):
    try:
        c = cho_factor(P, lower=True)
    except LinAlgError:
        raise ImproperBeliefError("matrix is not positive definite") from None
    return cho_solve(c, np.eye(P.shape[0]))


def lmmse(A, y, prior_var: float, noise_var: float):
    """Posterior mean and covariance of ``x ~ N(0, v0 I)``, ``y = A x + N(0, s2 I)``."""
    if not (prior_var > 0 and noise_var > 0):
        raise DomainError("prior and noise variances must be > 0")
    A = np.asarray(A, dtype=float)
    K = A.shape[1]
    P = np.eye(K) / prior_var + A.T @ A / noise_var
    Sigma = _spd_inverse(P)
    x = Sigma @ (A.T @ np.asarray(y, dtype=float)) / noise_var
    return x, Sigma


def as_ep_state(state: GampState) -> EpState:
    """Site precisions and natural means implied by a GAMP state.

    ``Lambda = 1/tau - L`` and ``gamma = (Lambda + L) s_hat - L kappa``; EP states
    are returned unchanged (their stored sites are used as is).
    """
    if isinstance(state, EpState) and state.gamma_x is not None:
        return state
    kw = {k: v for k, v in vars(state).items()}
    ep = EpState(**kw)
    ep.Lambda_x = 1.0 / state.tau_x - state.L_x
    ep.Lambda_z = 1.0 / state.tau_z - state.L_z
    return ep.refresh_natural()


@dataclass
class FixedPointReport:
    residual_f1_mean: float
    residual_f1_moment_match: float
    residual_f2_precision: float
    residual_f2_variance: float
    residual_m: float

    @property
    def max(self) -> float:
        return max(asdict(self).values())

    @property
    def f1(self) -> float:
        return max(self.residual_f1_mean, self.residual_f1_moment_match)

    @property
    def f2(self) -> float:
        return max(self.residual_f2_precision, self.residual_f2_variance)

    def to_text(self) -> str:
        rows = asdict(self)
        rows["max"] = self.max
        return "\n".join(f"{k}={v:.6e}" for k, v in rows.items())


def check_fixed_point(state: GampState, A, prior, likelihood, y) -> FixedPointReport:
    """Evaluate the moment-consistency identities densely for ``state``.

    ``residual_f1_mean`` also includes ``|s_state - s_dense|`` so that a
    solver estimate disagreeing with the Gaussian belief is detected.
    """
    st = as_ep_state(state)
    A = np.asarray(A, dtype=float)
    N, K = A.shape
    if st.x_hat.shape != (K,) or st.m.shape != (N,):
        raise DomainError("state dimensions do not match A")

    P = (A.T * st.Lambda_z) @ A + np.diag(st.Lambda_x)
    Sigma_x = _spd_inverse(P)
    Sz_diag = np.einsum("nk,kj,nj->n", A, Sigma_x, A)
    x_dense = Sigma_x @ (st.gamma_x + A.T @ st.gamma_z)
    z_dense = A @ x_dense
    s_dense = np.concatenate([x_dense, z_dense])
    s_state = np.concatenate([st.x_hat, st.z_hat])
    diag = np.concatenate([np.diag(Sigma_x), Sz_diag])
    gamma = np.concatenate([st.gamma_x, st.gamma_z])
    rho = np.concatenate([st.L_x * st.kappa_x, st.L_z * st.kappa_z])
    Lam = np.concatenate([st.Lambda_x, st.Lambda_z])
    tilt = np.concatenate([st.L_x, st.L_z])

    mu_x, var_x = prior.tilted_moments(st.kappa_x, st.L_x)
    mu_z, var_z = likelihood.tilted_moments(st.kappa_z, st.L_z, y=y)
    mu = np.concatenate([mu_x, mu_z])
    var = np.concatenate([var_x, var_z])

    def norm(v):
        return float(np.max(np.abs(v))) if v.size else 0.0

    return FixedPointReport(
        residual_f1_mean=max(norm(s_dense - diag * (gamma + rho)), norm(s_state - s_dense)),
        residual_f1_moment_match=norm(s_dense - mu),
        residual_f2_precision=norm(diag - 1.0 / (Lam + tilt)),
        residual_f2_variance=norm(diag - var),
        residual_m=norm(st.m - st.L_z * (z_dense - st.kappa_z)),
    )


def check_woodbury(A, lambda_x_diag, lambda_z_diag) -> float:
    """Max |Lz - Lz^2 [A (Lx + A^T Lz A)^-1 A^T]_nn - [(Lz^-1 + A Lx^-1 A^T)^-1]_nn|."""
    A = np.asarray(A, dtype=float)
    lx = np.asarray(lambda_x_diag, dtype=float)
    lz = np.asarray(lambda_z_diag, dtype=float)
    if np.any(lx <= 0) or np.any(lz <= 0):
        raise DomainError("Lambda_x and Lambda_z must be positive")
    inner = _spd_inverse(np.diag(lx) + (A.T * lz) @ A)
    left = lz - lz ** 2 * np.einsum("nk,kj,nj->n", A, inner, A)
    right = np.diag(_spd_inverse(np.diag(1.0 / lz) + (A / lx) @ A.T))
    return float(np.max(np.abs(left - right)))


def tilde_tau_m_dense(A, lambda_x_diag, lambda_z_diag):
    A = np.asarray(A, dtype=float)
    lz = np.asarray(lambda_z_diag, dtype=float)
    inner = _spd_inverse(np.diag(lambda_x_diag) + (A.T * lz) @ A)
    return lz - lz ** 2 * np.einsum("nk,kj,nj->n", A, inner, A)


def check_tilde_tau_m(state: GampState, A) -> float:
    """Dense tilde-tau_m against ``L_z (1 - L_z sigma_z)`` with the state's sigma_z."""
    st = as_ep_state(state)
    dense = tilde_tau_m_dense(A, st.Lambda_x, st.Lambda_z)
    channel = st.L_z * (1.0 - st.L_z * st.tau_z)
    return float(np.max(np.abs(dense - channel)))
