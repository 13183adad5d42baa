"""IMU/GPS pose graph and its Levenberg-Marquardt solver.

Every node is a NavState with tangent [dphi, dv, dp]; the retraction is
R <- R exp(dphi), v <- v + dv, p <- p + dp. IMU factors constrain consecutive nodes with a
preintegrated increment and its covariance, GPS factors pull a node's position toward a fix.
The objective is the sum of squared residuals whitened by each factor's covariance.

Residual sign convention: predicted minus observed,

    r_phi = log(R_j^T R_i dR)
    r_v   = v_i + g dt + R_i dv - v_j
    r_p   = p_i + v_i dt + 1/2 g dt^2 + R_i dp - p_j
    r_gps = p_hat - p_i
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import linalg

from imu_preint.correction import CorrectionModel, UncertaintyModel, apply_correction, uncertainty_of
from imu_preint.config import SolverConfig
from imu_preint.covariance import StateCov, transitions, window_covariance, window_transition
from imu_preint.errors import InvalidArgumentError, SolverFailureError
from imu_preint.lie_so3 import (
    Rotation,
    hat,
    quat_conj,
    quat_exp,
    quat_log,
    quat_mul,
    quat_rotate,
    quat_to_matrix,
    right_jacobian_inv,
)
from imu_preint.preintegration import (
    DEFAULT_GRAVITY,
    ImuSequence,
    Increments,
    NavState,
    Trajectory,
    integrate_increments,
    predict_state,
)
from imu_preint.sim import GpsStream
from imu_preint.utils import as_vec3

logger = logging.getLogger(__name__)

DIM = 9
REGULARIZATION = 1e-12
TIME_TOL = 1e-9
DIAG_FLOOR = 1e-12


@dataclass(frozen=True, eq=False)
class ImuFactor:
    i: int
    j: int
    inc: Increments
    cov: StateCov
    # window transition and noise-only covariance, kept for re-seeding sigma0
    transition: np.ndarray | None = None
    noise_cov: np.ndarray | None = None


@dataclass(frozen=True, eq=False)
class GpsFactor:
    i: int
    p_hat: np.ndarray
    cov: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "p_hat", as_vec3(self.p_hat, "p_hat"))
        cov = np.asarray(self.cov, dtype=float)
        if cov.shape != (3, 3):
            raise InvalidArgumentError(f"GPS covariance must be 3x3, got {cov.shape}")
        object.__setattr__(self, "cov", cov)

    @classmethod
    def isotropic(cls, i: int, p_hat, sigma: float) -> "GpsFactor":
        """Covariance sigma^2 I; the information matrix is its inverse."""
        return cls(i, p_hat, sigma**2 * np.eye(3))


@dataclass(eq=False)
class PoseGraph:
    nodes: list[NavState]
    imu_factors: list[ImuFactor] = field(default_factory=list)
    gps_factors: list[GpsFactor] = field(default_factory=list)
    gravity: np.ndarray = field(default_factory=lambda: DEFAULT_GRAVITY.copy())
    fixed: frozenset[int] = frozenset()

    def validate(self) -> None:
        n = len(self.nodes)
        if n == 0:
            raise InvalidArgumentError("pose graph has no nodes")
        for f in self.imu_factors:
            if not (0 <= f.i < n and 0 <= f.j < n) or f.i == f.j:
                raise InvalidArgumentError(f"IMU factor ({f.i}, {f.j}) references invalid nodes")
        for f in self.gps_factors:
            if not 0 <= f.i < n:
                raise InvalidArgumentError(f"GPS factor references invalid node {f.i}")
        if any(not 0 <= k < n for k in self.fixed):
            raise InvalidArgumentError("fixed node index out of range")
        if not self.gps_factors and not self.fixed:
            raise InvalidArgumentError("pose graph needs a GPS factor or a fixed node")
        for f in self.imu_factors:
            _whitener(f.cov.m)
        for f in self.gps_factors:
            _whitener(f.cov)

    def trajectory(self) -> Trajectory:
        return Trajectory.from_states(self.nodes)


@dataclass
class SolveReport:
    iterations: int = 0
    initial_cost: float = float("nan")
    final_cost: float = float("nan")
    converged: bool = False
    termination: str = ""
    damping: list[float] = field(default_factory=list)
    accepted: list[bool] = field(default_factory=list)
    costs: list[float] = field(default_factory=list)
    jacobian_error: float | None = None
    marginals: np.ndarray | None = None

    def to_dict(self) -> dict:
        return {
            "iterations": self.iterations,
            "initial_cost": self.initial_cost,
            "final_cost": self.final_cost,
            "converged": self.converged,
            "termination": self.termination,
            "damping": list(self.damping),
            "accepted": list(self.accepted),
            "costs": list(self.costs),
            "jacobian_error": self.jacobian_error,
        }


def _whitener(cov: np.ndarray) -> np.ndarray:
    """L^-1 with L L^T = cov + 1e-12 I."""
    reg = np.asarray(cov, dtype=float) + REGULARIZATION * np.eye(len(cov))
    try:
        lower = linalg.cholesky(reg, lower=True)
    except linalg.LinAlgError as exc:
        raise InvalidArgumentError("factor covariance is not positive definite") from exc
    return linalg.solve_triangular(lower, np.eye(len(cov)), lower=True)


def retract(x: NavState, delta) -> NavState:
    delta = np.asarray(delta, dtype=float)
    return NavState(
        r=Rotation(quat_mul(x.r.q, quat_exp(delta[0:3]))),
        v=x.v + delta[3:6],
        p=x.p + delta[6:9],
        t=x.t,
    )


def _imu_residuals_batch(qi, vi, pi, qj, vj, pj, dq, dv, dp, dt, g):
    e = quat_mul(quat_mul(quat_conj(qj), qi), dq)
    r_phi = quat_log(e)
    dt_ = dt[:, None]
    r_v = vi + g * dt_ + quat_rotate(qi, dv) - vj
    r_p = pi + vi * dt_ + 0.5 * g * dt_**2 + quat_rotate(qi, dp) - pj
    return np.concatenate([r_phi, r_v, r_p], axis=-1), e


def _imu_jacobians_batch(qi, r, e, dq, dv, dp, dt):
    n = len(qi)
    jr_inv = right_jacobian_inv(r[:, 0:3])
    r_i = quat_to_matrix(qi)
    eye = np.eye(3)
    J_i = np.zeros((n, DIM, DIM))
    J_j = np.zeros((n, DIM, DIM))
    J_i[:, 0:3, 0:3] = jr_inv @ np.swapaxes(quat_to_matrix(dq), -1, -2)
    J_j[:, 0:3, 0:3] = -jr_inv @ np.swapaxes(quat_to_matrix(e), -1, -2)
    J_i[:, 3:6, 0:3] = -r_i @ hat(dv)
    J_i[:, 3:6, 3:6] = eye
    J_j[:, 3:6, 3:6] = -eye
    J_i[:, 6:9, 0:3] = -r_i @ hat(dp)
    J_i[:, 6:9, 3:6] = eye * dt[:, None, None]
    J_i[:, 6:9, 6:9] = eye
    J_j[:, 6:9, 6:9] = -eye
    return J_i, J_j


def _single(x_i: NavState, x_j: NavState, inc: Increments, gravity):
    g = as_vec3(gravity, "gravity")
    args = (
        x_i.r.q[None], x_i.v[None], x_i.p[None],
        x_j.r.q[None], x_j.v[None], x_j.p[None],
        inc.dR.q[None], inc.dv[None], inc.dp[None], np.array([inc.dt]),
    )
    r, e = _imu_residuals_batch(*args, g)
    return r, e, args


def imu_residual(x_i: NavState, x_j: NavState, inc: Increments, gravity=DEFAULT_GRAVITY) -> np.ndarray:
    return _single(x_i, x_j, inc, gravity)[0][0]


def imu_jacobians(x_i: NavState, x_j: NavState, inc: Increments, gravity=DEFAULT_GRAVITY):
    """Analytic (d r / d x_i, d r / d x_j), each 9x9, on the retraction tangent."""
    r, e, args = _single(x_i, x_j, inc, gravity)
    J_i, J_j = _imu_jacobians_batch(args[0], r, e, args[6], args[7], args[8], args[9])
    return J_i[0], J_j[0]


def numeric_imu_jacobians(x_i: NavState, x_j: NavState, inc: Increments, gravity=DEFAULT_GRAVITY, eps: float = 1e-6):
    """Central finite-difference counterpart of `imu_jacobians`."""
    J_i = np.zeros((DIM, DIM))
    J_j = np.zeros((DIM, DIM))
    for k in range(DIM):
        d = np.zeros(DIM)
        d[k] = eps
        J_i[:, k] = (
            imu_residual(retract(x_i, d), x_j, inc, gravity) - imu_residual(retract(x_i, -d), x_j, inc, gravity)
        ) / (2 * eps)
        J_j[:, k] = (
            imu_residual(x_i, retract(x_j, d), inc, gravity) - imu_residual(x_i, retract(x_j, -d), inc, gravity)
        ) / (2 * eps)
    return J_i, J_j


def gps_residual(x_i: NavState, p_hat) -> np.ndarray:
    return as_vec3(p_hat, "p_hat") - x_i.p


class _Problem:
    """Stacked factor data and whiteners for one graph."""

    def __init__(self, graph: PoseGraph):
        graph.validate()
        self.graph = graph
        self.g = as_vec3(graph.gravity, "gravity")
        n = len(graph.nodes)
        self.col = -np.ones(n, dtype=int)
        free = [k for k in range(n) if k not in graph.fixed]
        self.col[free] = np.arange(len(free)) * DIM
        self.dim = len(free) * DIM

        imu = graph.imu_factors
        self.ii = np.array([f.i for f in imu], dtype=int)
        self.jj = np.array([f.j for f in imu], dtype=int)
        self.dq = np.array([f.inc.dR.q for f in imu]).reshape(-1, 4)
        self.dv = np.array([f.inc.dv for f in imu]).reshape(-1, 3)
        self.dp = np.array([f.inc.dp for f in imu]).reshape(-1, 3)
        self.dt = np.array([f.inc.dt for f in imu], dtype=float)
        self.w_imu = np.array([_whitener(f.cov.m) for f in imu]).reshape(-1, DIM, DIM)

        gps = graph.gps_factors
        self.gi = np.array([f.i for f in gps], dtype=int)
        self.p_hat = np.array([f.p_hat for f in gps]).reshape(-1, 3)
        self.w_gps = np.array([_whitener(f.cov) for f in gps]).reshape(-1, 3, 3)

    @staticmethod
    def arrays(nodes: list[NavState]):
        return (
            np.array([x.r.q for x in nodes]),
            np.array([x.v for x in nodes]),
            np.array([x.p for x in nodes]),
        )

    def whitened(self, nodes: list[NavState], with_jacobians: bool):
        q, v, p = self.arrays(nodes)
        i, j = self.ii, self.jj
        out = {}
        if len(i):
            r, e = _imu_residuals_batch(
                q[i], v[i], p[i], q[j], v[j], p[j], self.dq, self.dv, self.dp, self.dt, self.g
            )
            out["imu_r"] = np.einsum("fab,fb->fa", self.w_imu, r)
            if with_jacobians:
                J_i, J_j = _imu_jacobians_batch(q[i], r, e, self.dq, self.dv, self.dp, self.dt)
                out["imu_Ji"] = self.w_imu @ J_i
                out["imu_Jj"] = self.w_imu @ J_j
        if len(self.gi):
            r_gps = self.p_hat - p[self.gi]
            out["gps_r"] = np.einsum("fab,fb->fa", self.w_gps, r_gps)
            if with_jacobians:
                # d r_gps / d p = -I
                out["gps_J"] = -self.w_gps
        return out

    def cost(self, nodes: list[NavState]) -> float:
        w = self.whitened(nodes, with_jacobians=False)
        total = 0.0
        for key in ("imu_r", "gps_r"):
            if key in w:
                total += float(np.sum(w[key] ** 2))
        return total

    def normal_equations(self, nodes: list[NavState]):
        w = self.whitened(nodes, with_jacobians=True)
        H = np.zeros((self.dim, self.dim))
        b = np.zeros(self.dim)
        cost = 0.0
        if "imu_r" in w:
            cost += float(np.sum(w["imu_r"] ** 2))
            for f in range(len(self.ii)):
                r = w["imu_r"][f]
                blocks = ((self.col[self.ii[f]], w["imu_Ji"][f]), (self.col[self.jj[f]], w["imu_Jj"][f]))
                for ca, Ja in blocks:
                    if ca < 0:
                        continue
                    b[ca : ca + DIM] += Ja.T @ r
                    for cb, Jb in blocks:
                        if cb >= 0:
                            H[ca : ca + DIM, cb : cb + DIM] += Ja.T @ Jb
        if "gps_r" in w:
            cost += float(np.sum(w["gps_r"] ** 2))
            for f in range(len(self.gi)):
                c = self.col[self.gi[f]]
                if c < 0:
                    continue
                J = w["gps_J"][f]
                H[c + 6 : c + 9, c + 6 : c + 9] += J.T @ J
                b[c + 6 : c + 9] += J.T @ w["gps_r"][f]
        return H, b, cost

    def update(self, nodes: list[NavState], delta: np.ndarray) -> list[NavState]:
        out = list(nodes)
        for k, c in enumerate(self.col):
            if c >= 0:
                out[k] = retract(nodes[k], delta[c : c + DIM])
        return out

    def jacobian_check(self, nodes: list[NavState]) -> float:
        worst = 0.0
        for f in self.graph.imu_factors:
            a_i, a_j = imu_jacobians(nodes[f.i], nodes[f.j], f.inc, self.g)
            n_i, n_j = numeric_imu_jacobians(nodes[f.i], nodes[f.j], f.inc, self.g)
            for a, n in ((a_i, n_i), (a_j, n_j)):
                worst = max(worst, float(np.abs(a - n).max() / max(np.abs(n).max(), 1.0)))
        return worst


def _damped_solve(H: np.ndarray, b: np.ndarray, lam: float) -> np.ndarray:
    diag = np.maximum(np.diag(H), DIAG_FLOOR * max(float(np.diag(H).max(initial=0.0)), 1.0))
    c = linalg.cho_factor(H + lam * np.diag(diag), lower=True)
    return -linalg.cho_solve(c, b)


def _levenberg_marquardt(problem: _Problem, nodes: list[NavState], cfg: SolverConfig, report: SolveReport):
    lam = cfg.lambda0
    H, b, cost = problem.normal_equations(nodes)
    report.initial_cost = cost
    report.costs.append(cost)
    if cfg.check_jacobians:
        report.jacobian_error = problem.jacobian_check(nodes)
        logger.info("max relative Jacobian mismatch %.3e", report.jacobian_error)
    if problem.dim == 0:
        report.final_cost = cost
        report.converged = True
        report.termination = "all_fixed"
        return nodes

    for it in range(cfg.max_iters):
        report.iterations = it + 1
        report.damping.append(lam)
        try:
            delta = _damped_solve(H, b, lam)
        except linalg.LinAlgError:
            report.accepted.append(False)
            lam *= cfg.lambda_up
            if lam > cfg.lambda_max:
                report.final_cost = cost
                report.termination = "singular"
                raise SolverFailureError("normal equations singular after damping", report)
            continue

        if np.linalg.norm(delta) < cfg.step_tol:
            report.accepted.append(False)
            report.converged = True
            report.termination = "step_tol"
            break

        candidate = problem.update(nodes, delta)
        new_cost = problem.cost(candidate)
        if np.isfinite(new_cost) and new_cost <= cost:
            decrease = (cost - new_cost) / max(cost, np.finfo(float).tiny)
            nodes, cost = candidate, new_cost
            report.accepted.append(True)
            report.costs.append(cost)
            lam = max(lam * cfg.lambda_down, np.finfo(float).tiny)
            logger.debug("LM iter %d accepted, cost %.6e, lambda %.2e", it + 1, cost, lam)
            if decrease < cfg.cost_tol:
                report.converged = True
                report.termination = "cost_tol"
                break
            H, b, cost = problem.normal_equations(nodes)
        else:
            report.accepted.append(False)
            lam *= cfg.lambda_up
            logger.debug("LM iter %d rejected, cost %.6e, lambda %.2e", it + 1, new_cost, lam)
            if lam > cfg.lambda_max:
                report.termination = "lambda_max"
                break
    else:
        report.termination = "max_iters"

    report.final_cost = cost
    return nodes


def _marginals(problem: _Problem, nodes: list[NavState]) -> np.ndarray:
    """Per-node 9x9 blocks of the inverse Gauss-Newton information at `nodes`."""
    out = np.zeros((len(nodes), DIM, DIM))
    if problem.dim == 0:
        return out
    H, _, _ = problem.normal_equations(nodes)
    factor = linalg.cho_factor(H + REGULARIZATION * np.eye(problem.dim), lower=True)
    cov = linalg.cho_solve(factor, np.eye(problem.dim))
    for k, c in enumerate(problem.col):
        if c >= 0:
            out[k] = cov[c : c + DIM, c : c + DIM]
    return out


def solve(
    graph: PoseGraph,
    options: SolverConfig | None = None,
    *,
    compute_marginals: bool = False,
) -> tuple[PoseGraph, SolveReport]:
    """Minimize the whitened IMU + GPS objective. Returns a new graph and the report.

    With `reseed_sigma0` the IMU factor covariances are rebuilt from the first solution's
    node marginals and the problem is solved once more from that solution.
    """
    cfg = options or SolverConfig()
    problem = _Problem(graph)
    report = SolveReport()
    nodes = _levenberg_marquardt(problem, list(graph.nodes), cfg, report)

    if cfg.reseed_sigma0:
        graph = reseed_imu_covariances(replace(graph, nodes=nodes), _marginals(problem, nodes))
        problem = _Problem(graph)
        second = SolveReport()
        nodes = _levenberg_marquardt(problem, nodes, cfg, second)
        second.iterations += report.iterations
        second.initial_cost = report.initial_cost
        second.jacobian_error = report.jacobian_error
        report = second

    if compute_marginals:
        report.marginals = _marginals(problem, nodes)

    logger.info(
        "PGO %s after %d iterations: cost %.6e -> %.6e (%s)",
        "converged" if report.converged else "stopped",
        report.iterations, report.initial_cost, report.final_cost, report.termination,
    )
    return replace(graph, nodes=nodes), report


def reseed_imu_covariances(graph: PoseGraph, marginals: np.ndarray) -> PoseGraph:
    """IMU factor covariances recomputed with sigma0 set to the start node's marginal."""
    factors = []
    for f in graph.imu_factors:
        if f.transition is None or f.noise_cov is None:
            factors.append(f)
            continue
        m = f.transition @ marginals[f.i] @ f.transition.T + f.noise_cov
        factors.append(replace(f, cov=StateCov(0.5 * (m + m.T))))
    return replace(graph, imu_factors=factors)


def keyframe_graph(
    samples: ImuSequence,
    correction: CorrectionModel,
    uncertainty: UncertaintyModel,
    gps: GpsStream,
    *,
    initial_state: NavState | None = None,
    gravity=DEFAULT_GRAVITY,
) -> PoseGraph:
    """One node per GPS epoch linked by IMU factors preintegrated between epochs.

    Nodes after the first are dead-reckoned. Without `initial_state` the first node takes the
    first fix, identity attitude and the velocity between the first two fixes.
    """
    if len(gps) == 0:
        raise InvalidArgumentError("GPS stream is empty")
    if len(samples) == 0:
        raise InvalidArgumentError("IMU stream is empty")
    g = as_vec3(gravity, "gravity")
    t_lo, t_hi = samples.t[0], samples.end_time()
    if gps.t[0] < t_lo - TIME_TOL or gps.t[-1] > t_hi + TIME_TOL:
        raise InvalidArgumentError(
            f"GPS epochs [{gps.t[0]}, {gps.t[-1]}] fall outside the IMU range [{t_lo}, {t_hi}]"
        )

    corrected = apply_correction(samples, correction)
    eta = uncertainty_of(samples, uncertainty)

    if initial_state is None:
        v0 = np.zeros(3)
        if len(gps) > 1:
            v0 = (gps.p[1] - gps.p[0]) / (gps.t[1] - gps.t[0])
        initial_state = NavState(Rotation.identity(), v0, gps.p[0], float(gps.t[0]))
    else:
        initial_state = replace(initial_state, t=float(gps.t[0]))

    nodes = [initial_state]
    factors: list[ImuFactor] = []
    for k in range(len(gps) - 1):
        idx, start, dt = corrected.window_indices(gps.t[k], gps.t[k + 1])
        win = ImuSequence(start, corrected.w[idx], corrected.a[idx], dt=dt, t0_ns=samples.t0_ns)
        series = integrate_increments(win)
        A, Q = transitions(series, win, eta.subset(idx))
        inc = series.last()
        noise_cov = window_covariance(A, Q)
        factors.append(
            ImuFactor(k, k + 1, inc, StateCov(noise_cov), transition=window_transition(A), noise_cov=noise_cov)
        )
        nodes.append(replace(predict_state(nodes[-1], inc, g), t=float(gps.t[k + 1])))

    gps_factors = [GpsFactor.isotropic(k, gps.p[k], float(gps.sigma[k])) for k in range(len(gps))]
    logger.info("built pose graph: %d nodes, %d IMU factors, %d GPS factors", len(nodes), len(factors), len(gps_factors))
    return PoseGraph(nodes, factors, gps_factors, g)
