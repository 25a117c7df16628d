"""Self-contained B-spline algebra on clamped uniform knot vectors.

Provides Cox-de Boor basis evaluation with derivatives, least-squares
fitting of ordered 3D points, planar curvature of the depth graph
(u, z(u)), and Gauss-Legendre arc length. Everything is deterministic
and pure; splines are immutable dataclasses.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import FitError
from .ioutil import dump_stable, load_json

# Frame labels for serialized splines
FRAME_PIXEL = "pixel-depth"
FRAME_CAMERA = "camera"

# Gauss-Legendre points per knot span; exact for polynomial integrands of
# degree <= 31, far above anything a degree-4 spline produces.
QUAD_POINTS_PER_SPAN = 16


def uniform_clamped_knots(n_control: int, degree: int, domain_end: float) -> np.ndarray:
    """Clamped knot vector with uniformly spaced interior knots on [0, end].

    Args:
        n_control: Number of control points (must exceed degree).
        degree: Spline degree.
        domain_end: Last parameter value (must be positive).

    Returns:
        Knot vector of length ``n_control + degree + 1``.
    """
    if n_control <= degree:
        raise ValueError(f"need more than degree={degree} control points, got {n_control}")
    if domain_end <= 0:
        raise ValueError("domain_end must be positive")
    n_interior = n_control - degree - 1
    interior = np.linspace(0.0, domain_end, n_interior + 2)[1:-1]
    return np.concatenate(
        [np.zeros(degree + 1), interior, np.full(degree + 1, domain_end)]
    )


def basis_matrix(
    knots: np.ndarray, degree: int, u: np.ndarray, derivative_order: int = 0
) -> np.ndarray:
    """Evaluate all B-spline basis functions (or a derivative) at parameters u.

    Uses the Cox-de Boor recursion for values and the standard derivative
    ladder for higher orders. The rightmost nonempty knot interval is closed
    so the domain endpoint evaluates cleanly.

    Args:
        knots: Nondecreasing knot vector.
        degree: Spline degree.
        u: Parameter values, shape (n,).
        derivative_order: Derivative order (0 = values).

    Returns:
        Matrix of shape (n, n_basis) with n_basis = len(knots) - degree - 1.
        Zero matrix when derivative_order exceeds the degree.
    """
    t = np.asarray(knots, dtype=float)
    uu = np.atleast_1d(np.asarray(u, dtype=float))
    n_basis = len(t) - degree - 1
    if derivative_order > degree:
        return np.zeros((len(uu), n_basis))

    # Degree-0 indicators over half-open intervals [t_i, t_{i+1}).
    lo, hi = t[:-1], t[1:]
    basis = ((uu[:, None] >= lo[None, :]) & (uu[:, None] < hi[None, :])).astype(float)
    at_end = uu == t[-1]
    if at_end.any():
        nonempty = np.nonzero((hi == t[-1]) & (lo < hi))[0]
        if nonempty.size:
            basis[at_end, :] = 0.0
            basis[at_end, nonempty[-1]] = 1.0

    def _ratio(num: np.ndarray, den: np.ndarray) -> np.ndarray:
        out = np.zeros_like(num)
        np.divide(num, den, out=out, where=den > 0)
        return out

    # Raise to degree (degree - derivative_order) with the value recursion.
    for d in range(1, degree - derivative_order + 1):
        cols = len(t) - d - 1
        left = (uu[:, None] - t[None, :cols]) * _ratio(
            basis[:, :cols], (t[d : d + cols] - t[:cols])[None, :]
        )
        right = (t[None, d + 1 : d + 1 + cols] - uu[:, None]) * _ratio(
            basis[:, 1 : cols + 1], (t[d + 1 : d + 1 + cols] - t[1 : cols + 1])[None, :]
        )
        basis = left + right

    # Derivative ladder from degree (degree - order) up to full degree.
    for d in range(degree - derivative_order + 1, degree + 1):
        cols = len(t) - d - 1
        left = d * _ratio(basis[:, :cols], (t[d : d + cols] - t[:cols])[None, :])
        right = d * _ratio(
            basis[:, 1 : cols + 1], (t[d + 1 : d + 1 + cols] - t[1 : cols + 1])[None, :]
        )
        basis = left - right

    return basis[:, :n_basis]


def span_quadrature(
    knots: np.ndarray, n_points: int = QUAD_POINTS_PER_SPAN
) -> tuple[np.ndarray, np.ndarray]:
    """Composite Gauss-Legendre nodes/weights over the distinct knot spans."""
    x, w = np.polynomial.legendre.leggauss(n_points)
    breaks = np.unique(np.asarray(knots, dtype=float))
    nodes, weights = [], []
    for a, b in zip(breaks[:-1], breaks[1:]):
        half = 0.5 * (b - a)
        nodes.append(0.5 * (a + b) + half * x)
        weights.append(half * w)
    if not nodes:
        return np.zeros(0), np.zeros(0)
    return np.concatenate(nodes), np.concatenate(weights)


@dataclass(frozen=True)
class SplineCurve:
    """A clamped B-spline curve in R^3.

    Coordinates are (x, y, z); in the pixel-depth frame x, y are left-image
    pixel coordinates and z is metric depth, in the camera frame all three
    are metric. The parameter domain is [0, knots[-1]].

    Attributes:
        degree: Polynomial degree.
        knots: Clamped, nondecreasing knot vector (n_control + degree + 1,).
        control_points: Control points, shape (n_control, 3).
        frame: Coordinate frame label, "pixel-depth" or "camera".
    """

    degree: int
    knots: np.ndarray
    control_points: np.ndarray
    frame: str = FRAME_PIXEL

    def __post_init__(self):
        knots = np.asarray(self.knots, dtype=float)
        ctrl = np.asarray(self.control_points, dtype=float)
        if ctrl.ndim != 2 or ctrl.shape[1] != 3:
            raise ValueError("control_points must have shape (m, 3)")
        if len(knots) != len(ctrl) + self.degree + 1:
            raise ValueError(
                f"knot count {len(knots)} != m + degree + 1 = {len(ctrl) + self.degree + 1}"
            )
        if np.any(np.diff(knots) < 0):
            raise ValueError("knots must be nondecreasing")
        k = self.degree + 1
        if not (np.all(knots[:k] == knots[0]) and np.all(knots[-k:] == knots[-1])):
            raise ValueError("knots must be clamped (end knots repeated degree+1 times)")
        object.__setattr__(self, "knots", knots)
        object.__setattr__(self, "control_points", ctrl)

    @property
    def n_control(self) -> int:
        return len(self.control_points)

    @property
    def domain_end(self) -> float:
        return float(self.knots[-1])

    def _check_domain(self, u: np.ndarray) -> None:
        if np.any(u < self.knots[0]) or np.any(u > self.knots[-1]):
            raise ValueError(
                f"parameter outside domain [{self.knots[0]}, {self.knots[-1]}]"
            )

    def evaluate(self, u, derivative_order: int = 0) -> np.ndarray:
        """Evaluate the curve or one of its parameter derivatives.

        Args:
            u: Scalar or array of parameters in [0, domain_end].
            derivative_order: Derivative order; orders above the degree
                return exact zeros.

        Returns:
            Point(s) in R^3: shape (3,) for scalar u, else (n, 3).
        """
        if derivative_order < 0:
            raise ValueError("derivative_order must be >= 0")
        uu = np.asarray(u, dtype=float)
        scalar = uu.ndim == 0
        uu = np.atleast_1d(uu)
        self._check_domain(uu)
        values = basis_matrix(self.knots, self.degree, uu, derivative_order) @ self.control_points
        return values[0] if scalar else values

    def graph_curvature(self, u) -> np.ndarray:
        """Planar curvature of the depth graph (u, z(u)).

        kappa(u) = z''(u) / (1 + z'(u)^2)^(3/2); the denominator is >= 1 so
        this is defined everywhere on the domain.
        """
        uu = np.asarray(u, dtype=float)
        scalar = uu.ndim == 0
        uu = np.atleast_1d(uu)
        self._check_domain(uu)
        dz = basis_matrix(self.knots, self.degree, uu, 1) @ self.control_points[:, 2]
        ddz = basis_matrix(self.knots, self.degree, uu, 2) @ self.control_points[:, 2]
        kappa = ddz / (1.0 + dz * dz) ** 1.5
        return float(kappa[0]) if scalar else kappa

    def arc_length(self) -> float:
        """Arc length of the 3D curve via composite Gauss-Legendre quadrature."""
        nodes, weights = span_quadrature(self.knots)
        if nodes.size == 0:
            return 0.0
        deriv = basis_matrix(self.knots, self.degree, nodes, 1) @ self.control_points
        speed = np.linalg.norm(deriv, axis=1)
        return float(weights @ speed)

    def with_z(self, z_control: np.ndarray) -> "SplineCurve":
        """Copy of this spline with replaced z control coordinates."""
        ctrl = self.control_points.copy()
        ctrl[:, 2] = np.asarray(z_control, dtype=float)
        return replace(self, control_points=ctrl)

    def to_dict(self) -> dict:
        """Serializable form; key order is part of the wire format."""
        return {
            "degree": int(self.degree),
            "knots": [float(k) for k in self.knots],
            "control_points": [[float(c) for c in row] for row in self.control_points],
            "frame": self.frame,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SplineCurve":
        return cls(
            degree=int(data["degree"]),
            knots=np.asarray(data["knots"], dtype=float),
            control_points=np.asarray(data["control_points"], dtype=float),
            frame=str(data["frame"]),
        )

    def save(self, path: str | Path) -> None:
        dump_stable(self.to_dict(), path)

    @classmethod
    def load(cls, path: str | Path) -> "SplineCurve":
        return cls.from_dict(load_json(path))


@dataclass(frozen=True)
class FitResult:
    """Least-squares fit output.

    Attributes:
        spline: Fitted curve.
        residual_rms: RMS of per-point Euclidean residuals, input units.
        parameter_assignment: Strictly increasing parameter per input point.
    """

    spline: SplineCurve
    residual_rms: float
    parameter_assignment: np.ndarray


def chord_parameters(points: np.ndarray, domain_end: float) -> np.ndarray:
    """Chord-length parameters rescaled to [0, domain_end], strictly increasing."""
    pts = np.asarray(points, dtype=float)
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    total = seg.sum()
    if total <= 0.0:
        return np.linspace(0.0, domain_end, len(pts))
    # Coincident points would stall the parameter; keep a tiny positive step.
    seg = np.maximum(seg, 1e-12 * total)
    u = np.concatenate([[0.0], np.cumsum(seg)])
    return u / u[-1] * domain_end


def fit_least_squares(points: np.ndarray, n_control: int, degree: int) -> FitResult:
    """Fit a clamped uniform-knot B-spline to ordered 3D points.

    Minimizes the sum of squared distances between the points and the spline
    at chord-length parameters spanning [0, len(points) - 1].

    Args:
        points: Ordered points, shape (n, 3), n >= n_control.
        n_control: Number of control points.
        degree: Spline degree (n_control must exceed it).

    Returns:
        FitResult with the spline, RMS residual and parameter assignment.

    Raises:
        FitError: Fewer points than control points, or a rank-deficient
            basis system (points too unevenly parameterized).
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError("points must have shape (n, 3)")
    if n_control <= degree:
        raise ValueError(f"n_control={n_control} must exceed degree={degree}")
    if len(pts) < n_control:
        raise FitError(
            f"insufficient points for spline: {len(pts)} < {n_control} control points"
        )

    domain_end = float(len(pts) - 1)
    knots = uniform_clamped_knots(n_control, degree, domain_end)
    params = chord_parameters(pts, domain_end)
    design = basis_matrix(knots, degree, params)
    coeffs, _, rank, _ = np.linalg.lstsq(design, pts, rcond=None)
    if rank < n_control:
        raise FitError(
            f"rank-deficient fit: design matrix rank {rank} < {n_control} control points"
        )
    residuals = design @ coeffs - pts
    rms = float(np.sqrt(np.mean(np.sum(residuals**2, axis=1))))
    spline = SplineCurve(degree=degree, knots=knots, control_points=coeffs)
    return FitResult(spline=spline, residual_rms=rms, parameter_assignment=params)
