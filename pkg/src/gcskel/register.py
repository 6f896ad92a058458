"""Oriented point-set registration.

EM over a mixture whose components couple an isotropic Gaussian on position
with a Von Mises-Fisher term on the point normal. The moving set Y is mapped
onto the fixed set X by a similarity transform, T(y) = (s R y_p + t, R y_n).
No uniform noise component is included.

The M-step minimizes

    Q(psi, s, alpha, sigma) =
        (K2 - 2 s tr(A^T R) + s^2 K1) / (2 sigma^2)
        - alpha tr(B^T R)
        + 3 n log(sigma)
        + n log(2 sinh(alpha) / alpha)

over a quaternion chart psi (stereographic projection of the unit-quaternion
sphere onto a 3D hyperplane), log-scale, a logistic-bounded concentration
alpha in (0, cap], and log-sigma, with BFGS and analytic gradients. The
translation then follows in closed form, t = xbar - s R ybar_w, which is also
what reduces Q to the profile form above.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit, logsumexp

from .cloud import PointCloud


class RegistrationError(RuntimeError):
    """Registration refused or diverged; may carry .last_params."""


# ---------------------------------------------------------------------------
# quaternion chart
# ---------------------------------------------------------------------------

def chart_to_quaternion(psi: np.ndarray) -> np.ndarray:
    """q(psi) = (2x, 2y, 2z, 1 - b2) / (b2 + 1), b2 = x^2 + y^2 + z^2."""
    x, y, z = (float(c) for c in psi)
    b2 = x * x + y * y + z * z
    return np.array([2.0 * x, 2.0 * y, 2.0 * z, 1.0 - b2], dtype=np.float64) / (b2 + 1.0)


def quaternion_to_chart(q: np.ndarray) -> np.ndarray:
    """Inverse chart; undefined at q3 = -1 (the projection pole)."""
    q0, q1, q2, q3 = (float(c) for c in q)
    if q3 <= -1.0 + 1e-12:
        raise ValueError("chart inverse undefined at q3 = -1")
    b2 = (1.0 - q3) / (1.0 + q3)
    return 0.5 * (b2 + 1.0) * np.array([q0, q1, q2], dtype=np.float64)


def quaternion_to_rotation(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    if abs(float(q @ q) - 1.0) > 1e-6:
        raise ValueError(f"quaternion norm {float(np.linalg.norm(q)):.9f}, must be unit")
    q0, q1, q2, q3 = (float(c) for c in q)
    return np.array([
        [q0 * q0 + q1 * q1 - q2 * q2 - q3 * q3, 2.0 * (q1 * q2 - q0 * q3), 2.0 * (q1 * q3 + q0 * q2)],
        [2.0 * (q1 * q2 + q0 * q3), q0 * q0 - q1 * q1 + q2 * q2 - q3 * q3, 2.0 * (q2 * q3 - q0 * q1)],
        [2.0 * (q1 * q3 - q0 * q2), 2.0 * (q2 * q3 + q0 * q1), q0 * q0 - q1 * q1 - q2 * q2 + q3 * q3],
    ], dtype=np.float64)


def chart_rotation(psi: np.ndarray) -> np.ndarray:
    return quaternion_to_rotation(chart_to_quaternion(psi))


def quaternion_derivatives(q: np.ndarray) -> np.ndarray:
    """dR/dq_j for the free (unconstrained) quaternion, shaped (4, 3, 3)."""
    q0, q1, q2, q3 = (float(c) for c in q)
    d = np.empty((4, 3, 3), dtype=np.float64)
    d[0] = [[q0, -q3, q2], [q3, q0, -q1], [-q2, q1, q0]]
    d[1] = [[q1, q2, q3], [q2, -q1, -q0], [q3, q0, -q1]]
    d[2] = [[-q2, q1, q0], [q1, q2, q3], [-q0, q3, -q2]]
    d[3] = [[-q3, -q0, q1], [q0, -q3, q2], [q1, q2, q3]]
    return 2.0 * d


def chart_jacobian(psi: np.ndarray) -> np.ndarray:
    """dq_j / dpsi_u, shaped (3, 4): row u is the derivative along psi_u."""
    x, y, z = (float(c) for c in psi)
    b2 = x * x + y * y + z * z
    denom = (b2 + 1.0) ** 2
    two = 2.0 * (b2 + 1.0)
    jac = np.array([
        [two - 4.0 * x * x, -4.0 * x * y, -4.0 * x * z, -4.0 * x],
        [-4.0 * x * y, two - 4.0 * y * y, -4.0 * y * z, -4.0 * y],
        [-4.0 * x * z, -4.0 * y * z, two - 4.0 * z * z, -4.0 * z],
    ], dtype=np.float64)
    return jac / denom


def rotation_chart_jacobian(psi: np.ndarray) -> np.ndarray:
    """dR/dpsi_u via the chain rule, shaped (3, 3, 3); index u first."""
    q = chart_to_quaternion(psi)
    dR_dq = quaternion_derivatives(q)          # (4, 3, 3)
    dq_dpsi = chart_jacobian(psi)              # (3, 4)
    return np.einsum("uj,jab->uab", dq_dpsi, dR_dq)


# ---------------------------------------------------------------------------
# parameters, correspondences
# ---------------------------------------------------------------------------

@dataclass
class RegConfig:
    """Knobs for one registration; defaults follow the shipped pipeline."""

    max_iterations: int = 100
    tol: float = 1e-6                  # relative change of the NLL
    bfgs_max_iter: int = 50
    bfgs_gtol: float = 1e-8
    alpha0: float = 1.0
    alpha_cap: float = 10.0
    use_normals: bool = True
    select_dist_factor: float = 1.5    # matched-point gate, units of sigma
    select_angle_deg: float = 20.0
    chart_recenter_norm: float = 1e3
    sigma_floor_rel: float = 1e-4      # of the initial sigma; below this the
                                       # quadratic statistics in m_step lose
                                       # precision faster than the fit gains
    trace_path: str | None = None      # per-iteration CSV dump when set


@dataclass
class RegistrationParams:
    rotation: np.ndarray
    scale: float
    translation: np.ndarray
    alpha: float
    sigma: float

    def validate(self, alpha_cap: float = 10.0) -> None:
        R = self.rotation
        if np.linalg.norm(R.T @ R - np.eye(3)) >= 1e-6 or np.linalg.det(R) <= 0:
            raise ValueError("rotation is not a proper rotation")
        if not 0.0 < self.alpha <= alpha_cap:
            raise ValueError(f"alpha {self.alpha} outside (0, {alpha_cap}]")
        if self.sigma <= 0.0 or self.scale <= 0.0:
            raise ValueError("sigma and scale must be positive")

    def apply(self, positions: np.ndarray) -> np.ndarray:
        return self.scale * positions @ self.rotation.T + self.translation


def identity_params(alpha: float, sigma: float) -> RegistrationParams:
    return RegistrationParams(np.eye(3), 1.0, np.zeros(3), alpha, sigma)


@dataclass
class RegistrationReport:
    params: RegistrationParams
    P: np.ndarray                      # (M, N) posteriors, columns sum to 1
    mean_best_match_angle: float       # degrees
    iterations: int
    converged: bool
    nll_history: list[float] = field(default_factory=list)


# ---------------------------------------------------------------------------
# E-step and likelihood
# ---------------------------------------------------------------------------

def _exponents(X: PointCloud, Y: PointCloud, params: RegistrationParams, use_normals: bool) -> np.ndarray:
    """(M, N) log-kernel e_ji = -|x_i - sRy_j - t|^2/(2 s2) + a x_n_i.R y_n_j."""
    ty = params.apply(Y.positions)
    # pairwise differences, not the norm expansion: exact-copy fits drive
    # sigma low enough that the expansion's cancellation noise swamps the
    # true d2, and dividing by 2 sigma^2 turns that into NLL garbage
    diff = ty[:, None, :] - X.positions[None, :, :]
    d2 = np.einsum("jik,jik->ji", diff, diff)
    E = -d2 / (2.0 * params.sigma ** 2)
    if use_normals:
        E += params.alpha * (Y.normals @ params.rotation.T) @ X.normals.T
    if not np.isfinite(E).all():
        raise RegistrationError("non-finite exponent in correspondence computation")
    return E


def e_step(X: PointCloud, Y: PointCloud, params: RegistrationParams, use_normals: bool = True) -> np.ndarray:
    """Posterior p_ji, softmax over components j for each observation i."""
    E = _exponents(X, Y, params, use_normals)
    E -= E.max(axis=0, keepdims=True)
    P = np.exp(E)
    P /= P.sum(axis=0, keepdims=True)
    return P


def _log_sinhc(alpha: float) -> float:
    # log(2 sinh(a) / a); series below 1e-6 where the ratio cancels
    if alpha < 1e-6:
        return math.log(2.0) + alpha * alpha / 6.0
    return math.log(2.0 * math.sinh(alpha) / alpha)


def _coth_minus_inv(alpha: float) -> float:
    # coth(a) - 1/a, the derivative of log(sinh(a)/a)
    if alpha < 1e-6:
        return alpha / 3.0
    return math.cosh(alpha) / math.sinh(alpha) - 1.0 / alpha


def negative_log_likelihood(X: PointCloud, Y: PointCloud, params: RegistrationParams,
                            use_normals: bool = True) -> float:
    """Exact mixture NLL under equal component weights 1/M."""
    E = _exponents(X, Y, params, use_normals)
    n, m = E.shape[1], E.shape[0]
    total = -float(logsumexp(E, axis=0).sum())
    total += n * math.log(m)
    total += 1.5 * n * math.log(2.0 * math.pi * params.sigma ** 2)
    if use_normals:
        total += n * (math.log(2.0 * math.pi) + _log_sinhc(params.alpha))
    return total


# ---------------------------------------------------------------------------
# M-step
# ---------------------------------------------------------------------------

@dataclass
class MStepConstants:
    """Sufficient statistics of (X, Y, P); frozen while BFGS runs.

    A couples centered positions, B couples normals, K1/K2 are the weighted
    squared spreads of the centered moving/fixed sets, n the observation
    count, and the means give the closed-form translation.
    """

    A: np.ndarray
    B: np.ndarray
    K1: float
    K2: float
    n: int
    x_mean: np.ndarray
    y_wmean: np.ndarray


def mstep_constants(X: PointCloud, Y: PointCloud, P: np.ndarray) -> MStepConstants:
    row_sum = P.sum(axis=1)            # length M
    col_sum = P.sum(axis=0)            # length N, each ~1
    n = P.shape[1]
    x_mean = X.positions.T @ col_sum / n
    y_wmean = Y.positions.T @ row_sum / n
    xhat = X.positions - x_mean
    yhat = Y.positions - y_wmean
    A = xhat.T @ (P.T @ yhat)
    B = X.normals.T @ (P.T @ Y.normals) if X.has_normals and Y.has_normals else np.zeros((3, 3))
    K1 = float(np.einsum("j,ji,ji->", row_sum, yhat, yhat))
    K2 = float(np.einsum("i,ij,ij->", col_sum, xhat, xhat))
    return MStepConstants(A=A, B=B, K1=K1, K2=K2, n=n, x_mean=x_mean, y_wmean=y_wmean)


def q_objective(psi: np.ndarray, s: float, alpha: float, sigma: float,
                const: MStepConstants, use_normals: bool = True) -> float:
    R = chart_rotation(psi)
    tr_ar = float(np.einsum("ij,ij->", const.A, R))
    value = (const.K2 - 2.0 * s * tr_ar + s * s * const.K1) / (2.0 * sigma ** 2)
    value += 3.0 * const.n * math.log(sigma)
    if use_normals:
        tr_br = float(np.einsum("ij,ij->", const.B, R))
        value += -alpha * tr_br + const.n * _log_sinhc(alpha)
    return value


def q_gradient(psi: np.ndarray, s: float, alpha: float, sigma: float,
               const: MStepConstants, use_normals: bool = True) -> np.ndarray:
    """(dQ/dpsi_x, dQ/dpsi_y, dQ/dpsi_z, dQ/ds, dQ/dalpha, dQ/dsigma)."""
    R = chart_rotation(psi)
    J = rotation_chart_jacobian(psi)
    tr_ar = float(np.einsum("ij,ij->", const.A, R))
    g = np.zeros(6, dtype=np.float64)
    g[:3] = (-s / sigma ** 2) * np.einsum("ij,uij->u", const.A, J)
    if use_normals:
        g[:3] += -alpha * np.einsum("ij,uij->u", const.B, J)
        tr_br = float(np.einsum("ij,ij->", const.B, R))
        g[4] = -tr_br + const.n * _coth_minus_inv(alpha)
    g[3] = (-tr_ar + s * const.K1) / sigma ** 2
    g[5] = -(const.K2 - 2.0 * s * tr_ar + s * s * const.K1) / sigma ** 3 + 3.0 * const.n / sigma
    return g


def stationary_sigma(psi: np.ndarray, s: float, const: MStepConstants) -> float:
    """The sigma zeroing dQ/dsigma at fixed (psi, s)."""
    R = chart_rotation(psi)
    tr_ar = float(np.einsum("ij,ij->", const.A, R))
    val = (const.K2 - 2.0 * s * tr_ar + s * s * const.K1) / (3.0 * const.n)
    return math.sqrt(max(val, 0.0))


_CHART_CENTER = np.array([1.0, 0.0, 0.0])  # chart point of the identity rotation


def _pack(s: float, alpha: float, sigma: float, cfg: RegConfig, floor: float) -> np.ndarray:
    a = min(max(alpha, 1e-9), cfg.alpha_cap * (1.0 - 1e-12))
    u = math.log(a / (cfg.alpha_cap - a))
    return np.array([*_CHART_CENTER, math.log(s), u, math.log(max(sigma - floor, 1e-300))])


def m_step(X: PointCloud, Y: PointCloud, P: np.ndarray, warm: RegistrationParams,
           config: RegConfig | None = None) -> RegistrationParams:
    """One generalized M-step: BFGS over (psi, s, alpha, sigma), closed-form t.

    The chart is centered on the warm rotation, so BFGS always starts at the
    well-conditioned identity chart point; scale and sigma are optimized in
    log space and alpha through a logistic squashed to (0, cap]. The result
    never scores worse than the warm start (profile objective compared, warm
    kept on any regression).
    """
    cfg = config or RegConfig()
    use_normals = cfg.use_normals
    const = mstep_constants(X, Y, P)
    floor = cfg.sigma_floor_rel * warm.sigma

    def run(base_rotation: np.ndarray, start: RegistrationParams):
        local = replace(const, A=const.A @ base_rotation.T, B=const.B @ base_rotation.T)

        def unpack(z: np.ndarray):
            psi = z[:3]
            # line searches probe wild log-space points; cap the log so the
            # squares taken downstream stay finite instead of raising
            s = math.exp(min(z[3], 250.0))
            alpha = cfg.alpha_cap * float(expit(z[4]))
            sigma = floor + math.exp(min(z[5], 250.0))
            return psi, s, alpha, sigma

        def fun(z: np.ndarray) -> float:
            psi, s, alpha, sigma = unpack(z)
            if not (np.isfinite(s) and np.isfinite(sigma)) or alpha <= 0.0:
                return np.inf
            return q_objective(psi, s, alpha, sigma, local, use_normals)

        def jac(z: np.ndarray) -> np.ndarray:
            psi, s, alpha, sigma = unpack(z)
            with np.errstate(over="ignore", invalid="ignore"):
                g = q_gradient(psi, s, alpha, sigma, local, use_normals)
                out = np.empty(6, dtype=np.float64)
                out[:3] = g[:3]
                out[3] = g[3] * s
                out[4] = g[4] * alpha * (1.0 - alpha / cfg.alpha_cap)
                out[5] = g[5] * (sigma - floor)
            return out

        z0 = _pack(start.scale, start.alpha, start.sigma, cfg, floor)
        res = minimize(fun, z0, jac=jac, method="BFGS",
                       options={"maxiter": cfg.bfgs_max_iter, "gtol": cfg.bfgs_gtol})
        return z0, res, unpack, fun

    base = warm.rotation
    z0, res, unpack, fun = run(base, warm)
    psi, s, alpha, sigma = unpack(res.x)
    if np.linalg.norm(psi) > cfg.chart_recenter_norm:
        # approaching the chart pole: fold the found rotation into the base
        # and retry once from a fresh chart center
        base = chart_rotation(psi) @ base
        mid = RegistrationParams(base, s, warm.translation, alpha, sigma)
        z0, res, unpack, fun = run(base, mid)
        psi, s, alpha, sigma = unpack(res.x)

    f_res, f_warm = fun(res.x), fun(z0)
    if not (np.isfinite(f_res) or np.isfinite(f_warm)):
        err = RegistrationError("M-step objective non-finite from both warm start and BFGS result")
        err.last_params = warm
        raise err
    if not np.isfinite(f_res) or f_res > f_warm:
        psi, s, alpha, sigma = unpack(z0)

    rotation = chart_rotation(psi) @ base
    translation = const.x_mean - s * rotation @ const.y_wmean
    return RegistrationParams(rotation, s, translation, alpha, sigma)


# ---------------------------------------------------------------------------
# full EM and derived quantities
# ---------------------------------------------------------------------------

def _initial_sigma(X: PointCloud, Y: PointCloud) -> float:
    xm = np.einsum("ij,ij->i", X.positions, X.positions).mean()
    ym = np.einsum("ij,ij->i", Y.positions, Y.positions).mean()
    cross = float(X.positions.mean(axis=0) @ Y.positions.mean(axis=0))
    msd = float(xm + ym - 2.0 * cross)
    return math.sqrt(max(msd / 3.0, 1e-12))


def mean_best_match_angle(X: PointCloud, Y: PointCloud, params: RegistrationParams, P: np.ndarray) -> float:
    """Mean angle (degrees) between x_n_i and R y_n at i's best match."""
    best = np.argmax(P, axis=0)
    rotated = Y.normals[best] @ params.rotation.T
    dots = np.clip(np.einsum("ij,ij->i", X.normals, rotated), -1.0, 1.0)
    return float(np.degrees(np.arccos(dots)).mean())


def _check_registrable(X: PointCloud) -> None:
    if len(X) < 3:
        raise RegistrationError(f"need at least 3 source points, got {len(X)}")
    centered = X.positions - X.positions.mean(axis=0)
    sv = np.linalg.svd(centered, compute_uv=False)
    if sv[1] <= 1e-12 * max(sv[0], 1e-300):
        raise RegistrationError("source points are rank-deficient (collinear or coincident)")


def register(X: PointCloud, Y: PointCloud, config: RegConfig | None = None) -> RegistrationReport:
    """Alternate e_step and m_step from the identity initialization.

    Stops when the relative NLL change drops below config.tol or after
    config.max_iterations; converged=false in the latter case and the caller
    decides what that means.
    """
    cfg = config or RegConfig()
    if not (X.has_normals and Y.has_normals):
        raise RegistrationError("registration needs normals on both clouds")
    _check_registrable(X)
    if len(Y) < 1:
        raise RegistrationError("empty destination cloud")

    params = identity_params(cfg.alpha0, _initial_sigma(X, Y))
    nll_prev = negative_log_likelihood(X, Y, params, cfg.use_normals)
    history = [nll_prev]
    converged = False
    iterations = 0
    trace: list[tuple] = []
    for iterations in range(1, cfg.max_iterations + 1):
        P = e_step(X, Y, params, cfg.use_normals)
        params = m_step(X, Y, P, params, cfg)
        nll = negative_log_likelihood(X, Y, params, cfg.use_normals)
        history.append(nll)
        if cfg.trace_path is not None:
            trace.append((iterations, nll, params.sigma, params.scale, params.alpha))
        if abs(nll - nll_prev) <= cfg.tol * max(1.0, abs(nll_prev)):
            converged = True
            break
        nll_prev = nll

    params.validate(cfg.alpha_cap)
    P = e_step(X, Y, params, cfg.use_normals)
    angle = mean_best_match_angle(X, Y, params, P)
    if cfg.trace_path is not None:
        with open(cfg.trace_path, "w", encoding="utf-8") as fh:
            fh.write("iteration,nll,sigma,scale,alpha\n")
            for row in trace:
                fh.write(",".join(repr(v) for v in row) + "\n")
    return RegistrationReport(params=params, P=P, mean_best_match_angle=angle,
                              iterations=iterations, converged=converged, nll_history=history)


def select_matched_points(X: PointCloud, Y: PointCloud, report: RegistrationReport,
                          config: RegConfig | None = None) -> np.ndarray:
    """Indices into Y with a sufficiently close, similarly oriented X point.

    y_j survives iff some x_i lies within dist_factor * sigma of the
    transformed y_j AND the angle between x_i's normal and R y_j's normal is
    under the angle gate.
    """
    cfg = config or RegConfig()
    params = report.params
    ty = params.apply(Y.positions)
    d2 = (
        np.einsum("ij,ij->i", ty, ty)[:, None]
        - 2.0 * ty @ X.positions.T
        + np.einsum("ij,ij->i", X.positions, X.positions)[None, :]
    )
    np.maximum(d2, 0.0, out=d2)
    close = d2 <= (cfg.select_dist_factor * params.sigma) ** 2
    dots = (Y.normals @ params.rotation.T) @ X.normals.T
    aligned = dots > math.cos(math.radians(cfg.select_angle_deg))
    hit = (close & aligned).any(axis=1)
    return np.where(hit)[0].astype(np.intp)
