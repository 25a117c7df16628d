"""Depth-corridor construction and the constrained minimum-variation solve.

The ordered keypoint chain is densified in sparse regions, local
least-squares lines over the ordered depths define a lower/upper depth
corridor, a degree-4 spline is initialized on the corridor centerline, and
the depth control coordinates are then optimized to minimize the variation
of the depth-graph curvature subject to the corridor and endpoint-line
constraints. The x/y control coordinates stay frozen at their initial fit.

The objective integrand is (d kappa / du)^2 / sqrt(1 + z'(u)^2) with kappa
the planar curvature of (u, z(u)); both the objective gradient and all
constraint Jacobians are analytic, so the solve is deterministic and cheap.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from .bspline import FitResult, SplineCurve, basis_matrix, fit_least_squares, span_quadrature
from .errors import ConfigurationError, ReconstructionError
from .keypoints import KeypointChain, _bfs_from_cluster, label_image
from .stereo import DepthField, StereoRig

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class FitParams:
    """Densification, corridor and solver parameters.

    Attributes:
        n_control: Spline control point count.
        degree: Spline degree.
        gap_threshold: Segmented-pixel count between consecutive keypoints
            above which extra points are inserted (one per full multiple).
        local_window_fraction: Keypoint-window half-extent for the local
            depth lines, as a fraction of the keypoint count (>= 1 keypoint).
        boundary_factor: Corridor half-width as a multiple of the local
            line's deviation from the keypoint depth.
        min_halfwidth: Minimum corridor half-width in depth units; None
            derives it as 1% of the median keypoint depth.
        constraint_samples: Number of parameters at which the corridor
            inequality is enforced.
        max_iterations: Optimizer iteration cap.
        tolerance: Optimizer convergence tolerance.
        constraint_tol: Maximum accepted constraint violation of the result.
    """

    n_control: int = 15
    degree: int = 4
    gap_threshold: int = 20
    local_window_fraction: float = 0.1
    boundary_factor: float = 1.5
    min_halfwidth: float | None = None
    constraint_samples: int = 100
    max_iterations: int = 200
    tolerance: float = 1e-12
    constraint_tol: float = 1e-6

    def __post_init__(self):
        if self.n_control <= self.degree:
            raise ConfigurationError("n_control must exceed degree")
        if self.boundary_factor <= 0:
            raise ConfigurationError("boundary_factor must be positive")


@dataclass
class OrderedPoints:
    """Ordered chain points (keypoints plus densified extras).

    ``points`` rows are (pixel x, pixel y, depth) in chain order; the order
    index of a row is its position. ``keypoint_positions`` marks which rows
    are keypoints, in increasing order; first and last rows always are.
    """

    points: np.ndarray  # (n, 3)
    keypoint_positions: np.ndarray  # (k,) int


def densify(
    chain: KeypointChain,
    mask: np.ndarray,
    field: DepthField,
    params: FitParams,
) -> OrderedPoints:
    """Insert extra ordered points where keypoints are far apart.

    For each consecutive keypoint pair the unclustered segmented pixels
    reachable from both clusters form the connecting path; when the path
    holds more than ``gap_threshold`` pixels, ``count // gap_threshold``
    extra points are taken at uniform positions along it (ordered by BFS
    distance from the earlier cluster), each with the raw stereo depth of
    its pixel regardless of reliability.
    """
    labels = label_image(chain.clusters, mask.shape)
    by_id = {c.id: c for c in chain.clusters}
    reach_cache: dict[int, dict[tuple[int, int], int]] = {}

    def reach(cid: int) -> dict[tuple[int, int], int]:
        if cid not in reach_cache:
            reach_cache[cid], _ = _bfs_from_cluster(
                by_id[cid], labels, mask, traverse_own=False
            )
        return reach_cache[cid]

    rows: list[np.ndarray] = []
    keypoint_positions: list[int] = []
    order = chain.order
    for pair_idx, cid in enumerate(order):
        keypoint_positions.append(len(rows))
        rows.append(np.asarray(by_id[cid].centroid, dtype=float))
        if pair_idx == len(order) - 1:
            break
        nxt = order[pair_idx + 1]
        here, there = reach(cid), reach(nxt)
        path = [p for p in here if p in there]
        count = len(path)
        if count <= params.gap_threshold:
            continue
        extras = count // params.gap_threshold
        path.sort(key=lambda p: (here[p], p[1], p[0]))
        valid_sorted = [p for p in path if field.valid[p[1], p[0]]]
        if not valid_sorted:
            continue
        for j in range(1, extras + 1):
            idx = int(round(j / (extras + 1) * (count - 1)))
            px = path[idx]
            if not field.valid[px[1], px[0]]:
                # fall back to the nearest valid pixel along the path
                px = min(
                    valid_sorted,
                    key=lambda q: abs(here[q] - here[path[idx]]),
                )
            rows.append(
                np.array([float(px[0]), float(px[1]), field.depth[px[1], px[0]]])
            )
    return OrderedPoints(
        points=np.vstack(rows), keypoint_positions=np.array(keypoint_positions)
    )


@dataclass
class DepthCorridor:
    """Piecewise-linear depth bounds anchored at the ordered keypoints.

    Bounds are linear in the order index between keypoint anchors. The raw
    (pre-widening) bounds are kept for diagnostics; ``lower``/``upper`` are
    the widened bounds actually enforced.
    """

    anchor_positions: np.ndarray  # (k,) order indices of the keypoints
    lower: np.ndarray  # (k,)
    upper: np.ndarray  # (k,)
    lower_raw: np.ndarray
    upper_raw: np.ndarray
    line_values: np.ndarray  # local line evaluated at its keypoint
    line_slopes: np.ndarray  # depth change per order index
    min_halfwidth: float

    def bounds_at(self, h) -> tuple[np.ndarray, np.ndarray]:
        h = np.asarray(h, dtype=float)
        return (
            np.interp(h, self.anchor_positions, self.lower),
            np.interp(h, self.anchor_positions, self.upper),
        )

    def center_at(self, h) -> np.ndarray:
        lo, hi = self.bounds_at(h)
        return 0.5 * (lo + hi)


def build_corridor(ordered: OrderedPoints, params: FitParams) -> DepthCorridor:
    """Fit local depth lines at each keypoint and derive corridor bounds.

    Each keypoint's line is a least-squares fit of depth versus order index
    over the ordered points between the keypoints ``r_k`` positions away on
    either side (clamped), with r_k = max(1, round(k * fraction)). The bound
    half-width is ``boundary_factor`` times the line's deviation from the
    keypoint depth; intervals narrower than twice ``min_halfwidth`` are
    widened symmetrically.
    """
    kp = ordered.keypoint_positions
    k = len(kp)
    if k < 2:
        raise ReconstructionError("insufficient keypoints for depth corridor")
    depths = ordered.points[:, 2]
    r_k = max(1, round(k * params.local_window_fraction))

    line_values = np.empty(k)
    line_slopes = np.empty(k)
    for i in range(k):
        lo = kp[max(0, i - r_k)]
        hi = kp[min(k - 1, i + r_k)]
        h = np.arange(lo, hi + 1, dtype=float)
        z = depths[lo : hi + 1]
        if len(h) < 2 or np.ptp(h) == 0:
            slope, intercept = 0.0, float(z.mean())
        else:
            slope, intercept = np.polyfit(h, z, 1)
        line_values[i] = slope * kp[i] + intercept
        line_slopes[i] = slope

    kz = depths[kp]
    halfwidth = params.boundary_factor * np.abs(line_values - kz)
    lower_raw = kz - halfwidth
    upper_raw = kz + halfwidth

    min_halfwidth = params.min_halfwidth
    if min_halfwidth is None:
        min_halfwidth = 0.01 * float(np.median(kz))
    narrow = (upper_raw - lower_raw) < 2.0 * min_halfwidth
    lower = np.where(narrow, kz - min_halfwidth, lower_raw)
    upper = np.where(narrow, kz + min_halfwidth, upper_raw)

    return DepthCorridor(
        anchor_positions=kp.astype(float),
        lower=lower,
        upper=upper,
        lower_raw=lower_raw,
        upper_raw=upper_raw,
        line_values=line_values,
        line_slopes=line_slopes,
        min_halfwidth=float(min_halfwidth),
    )


def init_spline(
    ordered: OrderedPoints, corridor: DepthCorridor, params: FitParams
) -> FitResult:
    """Least-squares spline through the corridor-centered point set.

    Depths are replaced by the corridor centerline at each order index; the
    x, y fit of this result is frozen for the subsequent optimization.
    """
    n = len(ordered.points)
    centered = ordered.points.copy()
    centered[:, 2] = corridor.center_at(np.arange(n, dtype=float))
    return fit_least_squares(centered, params.n_control, params.degree)


@dataclass
class MVSProblem:
    """Assembled optimization problem over the depth control coordinates."""

    initial: SplineCurve
    parameter_assignment: np.ndarray
    corridor: DepthCorridor
    constraint_u: np.ndarray
    lower_u: np.ndarray
    upper_u: np.ndarray
    end_values: np.ndarray  # (2,) depth targets at u = 0 and u = l
    end_slopes: np.ndarray  # (2,) d(depth)/du targets at the ends


def build_problem(
    fit: FitResult, corridor: DepthCorridor, params: FitParams
) -> MVSProblem:
    """Map the corridor into parameter space and fix endpoint targets.

    The corridor is a function of order index; composing with the fit's
    parameter assignment gives bounds at any parameter. Endpoint slopes are
    converted from per-order-index to per-parameter via the parameter
    spacing of the first and last chain segments.
    """
    u = fit.parameter_assignment
    n = len(u)
    spline = fit.spline
    constraint_u = np.linspace(0.0, spline.domain_end, params.constraint_samples)
    h_at = np.interp(constraint_u, u, np.arange(n, dtype=float))
    lower_u, upper_u = corridor.bounds_at(h_at)
    end_values = np.array([corridor.line_values[0], corridor.line_values[-1]])
    end_slopes = np.array(
        [
            corridor.line_slopes[0] / (u[1] - u[0]),
            corridor.line_slopes[-1] / (u[-1] - u[-2]),
        ]
    )
    return MVSProblem(
        initial=spline,
        parameter_assignment=u,
        corridor=corridor,
        constraint_u=constraint_u,
        lower_u=lower_u,
        upper_u=upper_u,
        end_values=end_values,
        end_slopes=end_slopes,
    )


@dataclass
class MVSSolution:
    """Solver output: the smoothed spline plus convergence diagnostics."""

    spline: SplineCurve
    initial_objective: float
    objective: float
    trace: list[tuple[int, float, float]]  # (iteration, objective, max violation)


def variation_objective(
    z: np.ndarray,
    b1: np.ndarray,
    b2: np.ndarray,
    b3: np.ndarray,
    weights: np.ndarray,
) -> tuple[float, np.ndarray]:
    """Curvature-variation energy and its gradient in the depth controls.

    With p = z', q = z'', r = z''' at the quadrature nodes, the integrand is
    N^2 / (1 + p^2)^(11/2) where N = r (1 + p^2) - 3 p q^2, which equals
    (d kappa/du)^2 / sqrt(1 + p^2).
    """
    p = b1 @ z
    q = b2 @ z
    r = b3 @ z
    one_p2 = 1.0 + p * p
    big_n = r * one_p2 - 3.0 * p * q * q
    denom = one_p2**5.5
    value = float(weights @ (big_n * big_n / denom))
    d_big_n = (
        b3 * one_p2[:, None]
        + (2.0 * r * p)[:, None] * b1
        - 3.0 * (q * q)[:, None] * b1
        - 6.0 * (p * q)[:, None] * b2
    )
    grad_rows = (2.0 * big_n / denom)[:, None] * d_big_n - (
        11.0 * big_n * big_n * p / one_p2**6.5
    )[:, None] * b1
    return value, weights @ grad_rows


def solve_mvs(problem: MVSProblem, params: FitParams) -> MVSSolution:
    """Minimize curvature variation of the depth graph within the corridor.

    Only the depth coordinates of the control points move. The initial
    point is first projected onto the constraint set (minimum-norm change);
    the returned spline is the feasible candidate with the lowest objective,
    so the result never degrades the projected initialization.

    Raises:
        ReconstructionError: "MVS infeasible" when no feasible point is
            found (contradictory corridor/endpoint constraints), or the
            optimizer cannot reach the feasibility tolerance.
    """
    spline = problem.initial
    knots, degree = spline.knots, spline.degree
    z0 = spline.control_points[:, 2].copy()
    m = len(z0)
    domain = np.array([0.0, spline.domain_end])

    nodes, weights = span_quadrature(knots)
    b1 = basis_matrix(knots, degree, nodes, 1)
    b2 = basis_matrix(knots, degree, nodes, 2)
    b3 = basis_matrix(knots, degree, nodes, 3)
    b0c = basis_matrix(knots, degree, problem.constraint_u)
    b0e = basis_matrix(knots, degree, domain)
    b1e = basis_matrix(knots, degree, domain, 1)

    a_eq = np.vstack([b0e[0], b1e[0], b0e[1], b1e[1]])
    rhs_eq = np.array(
        [
            problem.end_values[0],
            problem.end_slopes[0],
            problem.end_values[1],
            problem.end_slopes[1],
        ]
    )
    a_in = np.vstack([b0c, -b0c])
    rhs_in = np.concatenate([problem.lower_u, -problem.upper_u])

    def max_violation(z: np.ndarray) -> float:
        ineq = float(np.max(rhs_in - a_in @ z, initial=0.0))
        eq = float(np.max(np.abs(a_eq @ z - rhs_eq), initial=0.0))
        return max(ineq, eq)

    constraints = [
        {"type": "eq", "fun": lambda z: a_eq @ z - rhs_eq, "jac": lambda z: a_eq},
        {"type": "ineq", "fun": lambda z: a_in @ z - rhs_in, "jac": lambda z: a_in},
    ]

    def project(start: np.ndarray) -> np.ndarray:
        res = minimize(
            lambda z: (0.5 * float((z - start) @ (z - start)), z - start),
            start,
            jac=True,
            method="SLSQP",
            constraints=constraints,
            options={"maxiter": 300, "ftol": 1e-16},
        )
        return res.x

    projected = project(z0)
    if max_violation(projected) > params.constraint_tol:
        raise ReconstructionError("MVS infeasible")

    def objective(z: np.ndarray) -> tuple[float, np.ndarray]:
        return variation_objective(z, b1, b2, b3, weights)

    initial_objective = objective(projected)[0]
    candidates = [(initial_objective, projected)]
    trace: list[tuple[int, float, float]] = [
        (0, initial_objective, max_violation(projected))
    ]

    def callback(z: np.ndarray) -> None:
        value = objective(z)[0]
        violation = max_violation(z)
        trace.append((len(trace), value, violation))
        if violation <= params.constraint_tol:
            candidates.append((value, z.copy()))

    result = minimize(
        objective,
        projected,
        jac=True,
        method="SLSQP",
        constraints=constraints,
        callback=callback,
        options={"maxiter": params.max_iterations, "ftol": params.tolerance},
    )
    final = result.x
    if max_violation(final) > params.constraint_tol:
        # polish: nearest feasible point to the optimizer result
        final = project(final)
    if max_violation(final) <= params.constraint_tol:
        candidates.append((objective(final)[0], final))

    best_value, best_z = min(candidates, key=lambda c: c[0])
    trace.append((len(trace), best_value, max_violation(best_z)))

    dense_u = np.linspace(0.0, spline.domain_end, 1000)
    dense_b0 = basis_matrix(knots, degree, dense_u)
    dense_h = np.interp(
        dense_u, problem.parameter_assignment, np.arange(len(problem.parameter_assignment), dtype=float)
    )
    dense_lo, dense_hi = problem.corridor.bounds_at(dense_h)
    dense_z = dense_b0 @ best_z
    overshoot = max(
        float(np.max(dense_lo - dense_z, initial=0.0)),
        float(np.max(dense_z - dense_hi, initial=0.0)),
    )
    if overshoot > params.constraint_tol:
        logger.warning(
            "corridor exceeded by %.3g between constraint samples", overshoot
        )

    return MVSSolution(
        spline=spline.with_z(best_z),
        initial_objective=initial_objective,
        objective=best_value,
        trace=trace,
    )


def to_camera_frame(spline: SplineCurve, rig: StereoRig) -> SplineCurve:
    """Transform control points from pixel-depth to the metric camera frame.

    Each control point (x, y, z) maps to z * (G^-1 [x, y, 1]^T), i.e. the
    deprojected ray scaled by depth.
    """
    try:
        g_inv = np.linalg.inv(rig.G)
    except np.linalg.LinAlgError as exc:
        raise ConfigurationError("G matrix is singular") from exc
    ctrl = spline.control_points
    homog = np.column_stack([ctrl[:, 0], ctrl[:, 1], np.ones(len(ctrl))])
    rays = homog @ g_inv.T
    cam = rays * ctrl[:, 2][:, None]
    return SplineCurve(
        degree=spline.degree,
        knots=spline.knots,
        control_points=cam,
        frame="camera",
    )


def to_pixel_frame(spline: SplineCurve, rig: StereoRig) -> SplineCurve:
    """Inverse of :func:`to_camera_frame` (exact for nonzero depths)."""
    ctrl = spline.control_points
    w = ctrl @ rig.G.T
    z = w[:, 2]
    if np.any(z == 0):
        raise ConfigurationError("zero-depth control point cannot be deprojected")
    pix = np.column_stack([w[:, 0] / z, w[:, 1] / z, z])
    return SplineCurve(
        degree=spline.degree,
        knots=spline.knots,
        control_points=pix,
        frame="pixel-depth",
    )
