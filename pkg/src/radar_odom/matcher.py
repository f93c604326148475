"""Weighted point-to-distribution NDT matching with Newton's method and a failure ladder."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from radar_odom.core import Pose2
from radar_odom.errors import ConfigError, EmptyMap
from radar_odom.ndt import NdtMap, shifted_weight
from radar_odom.submap import Submap, WeightedPoint

NONE, MOTION_PRIOR, EMPTY_MAP, DIVERGED = "none", "motion_prior", "empty_map", "diverged"


@dataclass
class MatchConfig:
    max_newton_iterations: int = 50
    convergence_epsilon: float = 1e-4
    max_step_halvings: int = 10
    # a stalled line search still counts as converged below this step norm
    stall_tolerance: float = 1e-2
    # PD floor for the cost Hessian, relative to its largest |eigenvalue|
    hessian_floor: float = 1e-3
    max_acceleration: float = 8.0
    grid_escalation_step: float = 2.5
    grid_ceiling: float = 12.5
    shift_halvings_max: int = 2
    low_speed_grid: float = 1.5
    low_speed_threshold: float = 1.5 / 3.6
    uncertainty_weighting: bool = True

    def __post_init__(self) -> None:
        for name in ("max_newton_iterations", "convergence_epsilon", "max_acceleration",
                     "grid_escalation_step", "grid_ceiling", "low_speed_grid", "low_speed_threshold",
                     "hessian_floor", "stall_tolerance"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"match.{name} must be positive")
        if self.max_step_halvings < 0 or self.shift_halvings_max < 0:
            raise ConfigError("halving counts must be non-negative")


@dataclass
class MatchResult:
    relative_pose: Pose2
    score: float
    iterations: int
    converged: bool
    grid_size_used: float
    shift_used: float
    failure_reason: str = NONE
    attempts: list[dict] = field(default_factory=list)

    @property
    def grid_escalations(self) -> int:
        return sum(1 for a, b in zip(self.attempts, self.attempts[1:]) if b["grid_size"] > a["grid_size"])

    @property
    def shift_halvings(self) -> int:
        return sum(1 for a, b in zip(self.attempts, self.attempts[1:]) if b["shift"] < a["shift"])


def matching_weight(power, s: float, point_cov) -> float | np.ndarray:
    """``max(p - s, 0) * exp(-(sigma_x + sigma_y) / 2)``; absent power counts as weight 1."""
    cov = np.asarray(point_cov, dtype=float)
    spread = np.sqrt(np.maximum(cov[..., 0, 0], 0.0)) + np.sqrt(np.maximum(cov[..., 1, 1], 0.0))
    w = shifted_weight(power, s) * np.exp(-0.5 * spread)
    return float(w) if np.ndim(w) == 0 else w


def _as_submap(points) -> Submap:
    if isinstance(points, Submap):
        return points
    return Submap.from_points(list(points))


def point_weights(points: Submap, s: float, uncertainty_weighting: bool = True) -> np.ndarray:
    power = np.where(points.has_power, points.weights, np.nan)
    if uncertainty_weighting:
        return matching_weight(power, s, points.covs)
    return shifted_weight(power, s)


def _evaluate(ndt: NdtMap, pos: np.ndarray, w: np.ndarray, pose: np.ndarray, order: int = 2):
    """Score and its derivatives with respect to (x, y, theta)."""
    x, y, th = pose
    c, s = math.cos(th), math.sin(th)
    px, py = pos[:, 0], pos[:, 1]
    moved = np.stack([c * px - s * py + x, s * px + c * py + y], axis=1)
    jth = np.stack([-s * px - c * py, c * px - s * py], axis=1)   # d moved / d theta
    hth = np.stack([-c * px + s * py, -s * px - c * py], axis=1)  # d^2 moved / d theta^2

    score = 0.0
    grad = np.zeros(3)
    hess = np.zeros((3, 3))
    hits = 0
    for layer in range(len(ndt.layers)):
        idx = ndt.lookup(layer, moved)
        ok = idx >= 0
        if not ok.any():
            continue
        hits += int(ok.sum())
        lay = ndt.layers[layer]
        k = idx[ok]
        d = moved[ok] - lay.means[k]
        a = lay.cov_inverses[k]
        ad = np.einsum("nij,nj->ni", a, d)
        f = w[ok] * np.exp(-0.5 * np.einsum("ni,ni->n", d, ad))
        score += float(f.sum())
        if order < 1:
            continue
        jt = jth[ok]
        proj = np.stack([ad[:, 0], ad[:, 1], np.einsum("ni,ni->n", ad, jt)], axis=1)
        grad -= f @ proj
        if order < 2:
            continue
        # d_k^T A d_l for the constant Jacobian columns e_x, e_y, j_theta
        cols = np.stack([np.broadcast_to([1.0, 0.0], jt.shape), np.broadcast_to([0.0, 1.0], jt.shape), jt], axis=2)
        acol = np.einsum("nij,njk->nik", a, cols)
        jaj = np.einsum("nik,nil->nkl", cols, acol)
        second = np.zeros((len(f), 3, 3))
        second[:, 2, 2] = np.einsum("ni,ni->n", ad, hth[ok])
        hess += np.einsum("n,nkl->kl", f, proj[:, :, None] * proj[:, None, :] - jaj - second)
    return score, grad, hess, hits


def ndt_score(ndt: NdtMap, points, pose: Pose2, s: float, uncertainty_weighting: bool = True) -> float:
    """Sum over points and layers of ``w_i exp(-d^T Sigma^-1 d / 2)``; the matching cost is its negative."""
    pts = _as_submap(points)
    w = point_weights(pts, s, uncertainty_weighting)
    return _evaluate(ndt, pts.positions, w, pose.as_array(), order=0)[0]


def ndt_score_derivatives(ndt: NdtMap, points, pose: Pose2, s: float,
                          uncertainty_weighting: bool = True) -> tuple[float, np.ndarray, np.ndarray]:
    """Score, gradient and Hessian with respect to ``(x, y, theta)``."""
    pts = _as_submap(points)
    w = point_weights(pts, s, uncertainty_weighting)
    score, grad, hess, _ = _evaluate(ndt, pts.positions, w, pose.as_array(), order=2)
    return score, grad, hess


def ndt_match(ndt: NdtMap, points, initial_guess: Pose2, cfg: MatchConfig | None = None,
              s: float = 0.0) -> MatchResult:
    """Minimise the negative score by damped Newton steps with a halving line search."""
    cfg = cfg or MatchConfig()
    pts = _as_submap(points)
    w = point_weights(pts, s, cfg.uncertainty_weighting)
    pos = pts.positions
    p = initial_guess.as_array()
    score, grad, hess, hits = _evaluate(ndt, pos, w, p)
    converged = False
    it = 0
    for it in range(1, cfg.max_newton_iterations + 1):
        if hits == 0 or score <= 0.0:
            break
        g_cost, h_cost = -grad, -hess
        lam = np.linalg.eigvalsh(h_cost)
        # an indefinite Hessian keeps |lambda_min| as curvature along that direction,
        # otherwise the shifted system would allow a huge step there
        floor = max(cfg.hessian_floor * max(np.abs(lam).max(), 1e-12), -lam[0])
        if lam[0] < floor:
            h_cost = h_cost + (floor - lam[0]) * np.eye(3)
        step = -np.linalg.solve(h_cost, g_cost)
        if np.linalg.norm(step) < cfg.convergence_epsilon:
            converged = True
            break
        alpha = 1.0
        for _ in range(cfg.max_step_halvings + 1):
            cand = p + alpha * step
            c_score, c_grad, c_hess, c_hits = _evaluate(ndt, pos, w, cand)
            if c_score > score:
                break
            alpha *= 0.5
        else:
            converged = bool(np.linalg.norm(step) < cfg.stall_tolerance)
            break
        p, score, grad, hess, hits = cand, c_score, c_grad, c_hess, c_hits
        if np.linalg.norm(alpha * step) < cfg.convergence_epsilon:
            converged = True
            break
    return MatchResult(Pose2.from_array(p), float(score), it, converged, ndt.grid_size, s,
                       NONE if converged else DIVERGED)


def implied_acceleration(relative_pose: Pose2, prev_velocity: float, dt: float) -> float:
    return abs(math.hypot(relative_pose.x, relative_pose.y) / dt - prev_velocity) / dt


def match_with_escalation(map_builder: Callable[[float, float], NdtMap], points, initial_guess: Pose2,
                          predicted_motion: Pose2 | None, prev_velocity: float | None, dt: float,
                          cfg: MatchConfig | None = None, s0: float = 0.0,
                          base_grid: float = 3.0) -> MatchResult:
    """Match, retrying on larger grids and then smaller power shifts when the result looks wrong.

    A match fails when Newton does not converge, the map is empty, or the
    translation implies an acceleration above ``cfg.max_acceleration``
    relative to ``prev_velocity`` (skipped when that is None). Failed
    attempts grow the grid by ``grid_escalation_step`` up to
    ``grid_ceiling``; past the ceiling the grid resets and ``s`` is halved.
    When every rung fails the prediction (or the initial guess) is returned
    with ``failure_reason='motion_prior'``.
    """
    cfg = cfg or MatchConfig()
    if not dt > 0:
        raise ValueError("dt must be positive")
    pts = _as_submap(points)
    g0 = base_grid
    if prev_velocity is not None and prev_velocity < cfg.low_speed_threshold:
        g0 = cfg.low_speed_grid
    attempts: list[dict] = []
    s = s0
    for halving in range(cfg.shift_halvings_max + 1):
        if halving:
            if s == 0.0:
                break
            s = s / 2.0
        g = g0
        while g <= cfg.grid_ceiling + 1e-9:
            try:
                res = ndt_match(map_builder(g, s), pts, initial_guess, cfg, s)
                reason = res.failure_reason
                if res.converged and prev_velocity is not None and \
                        implied_acceleration(res.relative_pose, prev_velocity, dt) > cfg.max_acceleration:
                    reason = MOTION_PRIOR
            except EmptyMap:
                res, reason = None, EMPTY_MAP
            attempts.append({"grid_size": g, "shift": s, "failure_reason": reason,
                             "iterations": res.iterations if res else 0})
            if res is not None and reason == NONE:
                res.attempts = attempts
                return res
            g += cfg.grid_escalation_step
    fallback = predicted_motion if predicted_motion is not None else initial_guess
    last = attempts[-1]
    return MatchResult(fallback, 0.0, sum(a["iterations"] for a in attempts), False,
                       last["grid_size"], last["shift"], MOTION_PRIOR, attempts)


def cost_surface(ndt: NdtMap, points, s: float, axis_a: Sequence[float], axis_b: Sequence[float],
                 axes: str = "x-theta", base: Pose2 = Pose2(), uncertainty_weighting: bool = True) -> np.ndarray:
    """Cost (negative score) on a lattice; rows follow ``axis_a``, columns ``axis_b``.

    ``axes`` is ``"x-theta"`` (x in metres, theta in radians) or ``"x-y"``.
    """
    pts = _as_submap(points)
    w = point_weights(pts, s, uncertainty_weighting)
    out = np.empty((len(axis_a), len(axis_b)))
    for i, a in enumerate(axis_a):
        for j, b in enumerate(axis_b):
            if axes == "x-theta":
                p = np.array([base.x + a, base.y, base.theta + b])
            elif axes == "x-y":
                p = np.array([base.x + a, base.y + b, base.theta])
            else:
                raise ValueError(f"unknown axes {axes!r}")
            out[i, j] = -_evaluate(ndt, pts.positions, w, p, order=0)[0]
    return out


def as_weighted_points(positions, power=None, covs=None) -> list[WeightedPoint]:
    positions = np.asarray(positions, dtype=float).reshape(-1, 2)
    n = len(positions)
    covs = np.zeros((n, 2, 2)) if covs is None else np.asarray(covs, dtype=float)
    if power is None:
        return [WeightedPoint(positions[i], 1.0, covs[i], False) for i in range(n)]
    return [WeightedPoint(positions[i], float(power[i]), covs[i], True) for i in range(n)]
