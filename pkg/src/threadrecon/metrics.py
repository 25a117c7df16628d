"""Reconstruction quality metrics against dense ground-truth polylines.

Curve errors use exact point-to-segment distances against the full
polyline; reprojection errors use a precomputed Euclidean distance
transform of each segmentation mask.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import distance_transform_edt

from .bspline import SplineCurve
from .stereo import StereoRig

logger = logging.getLogger(__name__)

N_CURVE_SAMPLES = 1000


@dataclass
class MetricsReport:
    """All per-scene evaluation numbers.

    Curve and length errors are in the rig's spatial units; reprojection
    errors are in pixels. ``success`` is False for failed reconstructions,
    in which case the numeric fields are NaN.
    """

    e_s: float
    e_s_max: float
    e_len: float
    e2d_mean_left: float
    e2d_max_left: float
    e2d_mean_right: float
    e2d_max_right: float
    success: bool

    @classmethod
    def failed(cls) -> "MetricsReport":
        nan = float("nan")
        return cls(nan, nan, nan, nan, nan, nan, nan, False)


def polyline_length(polyline: np.ndarray) -> float:
    """Total length of a polyline given as (n, 3) vertices."""
    return float(np.linalg.norm(np.diff(polyline, axis=0), axis=1).sum())


def points_to_polyline_distance(
    points: np.ndarray, polyline: np.ndarray, chunk: int = 128
) -> np.ndarray:
    """Exact distance from each query point to the nearest polyline segment.

    Args:
        points: Query points, shape (q, 3).
        polyline: Vertices, shape (n, 3), n >= 2.
        chunk: Query batch size bounding the (chunk, n) temporaries.

    Returns:
        Distances, shape (q,).
    """
    a = polyline[:-1]
    ab = polyline[1:] - a
    ab_sq = np.einsum("ij,ij->i", ab, ab)
    ab_sq_safe = np.where(ab_sq > 0, ab_sq, 1.0)
    out = np.empty(len(points))
    for start in range(0, len(points), chunk):
        p = points[start : start + chunk]
        ap = p[:, None, :] - a[None, :, :]
        t = np.clip(np.einsum("qnd,nd->qn", ap, ab) / ab_sq_safe, 0.0, 1.0)
        closest = ap - t[:, :, None] * ab[None, :, :]
        d2 = np.einsum("qnd,qnd->qn", closest, closest)
        out[start : start + len(p)] = np.sqrt(d2.min(axis=1))
    return out


def curve_errors(
    reconstruction: SplineCurve, truth: np.ndarray, n_samples: int = N_CURVE_SAMPLES
) -> tuple[float, float]:
    """Mean and max distance from the reconstruction to the ground truth.

    The reconstruction is sampled at ``n_samples`` uniform parameters; each
    sample's distance to the nearest point of the truth polyline is exact.
    """
    samples = reconstruction.evaluate(
        np.linspace(0.0, reconstruction.domain_end, n_samples)
    )
    d = points_to_polyline_distance(samples, truth)
    return float(d.mean()), float(d.max())


def length_error(reconstruction: SplineCurve, truth: np.ndarray) -> float:
    """Absolute arc-length difference between reconstruction and truth."""
    return abs(reconstruction.arc_length() - polyline_length(truth))


def _mask_distances(points_xy: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Distance from float pixel positions to the nearest mask pixel.

    Uses the exact Euclidean distance transform of the mask for the nearest
    mask pixel index, then measures the float distance to that pixel center.
    Out-of-bounds queries are clamped for the lookup, so their distance
    grows with how far outside they fall.
    """
    h, w = mask.shape
    _, (iy, ix) = distance_transform_edt(~mask, return_indices=True)
    qx = np.clip(np.round(points_xy[:, 0]).astype(int), 0, w - 1)
    qy = np.clip(np.round(points_xy[:, 1]).astype(int), 0, h - 1)
    nx, ny = ix[qy, qx], iy[qy, qx]
    return np.hypot(points_xy[:, 0] - nx, points_xy[:, 1] - ny)


def reprojection_error(
    reconstruction: SplineCurve,
    left_mask: np.ndarray,
    right_mask: np.ndarray,
    rig: StereoRig,
    n_samples: int = N_CURVE_SAMPLES,
) -> tuple[float, float, float, float]:
    """Pixel distance from the reprojected curve to each segmentation.

    The camera-frame spline is sampled at ``n_samples`` parameters and
    projected into both views with the intrinsics and the rig baseline.
    Samples behind the camera count as the image diagonal and are flagged
    in the log.

    Returns:
        (mean_left, max_left, mean_right, max_right) in pixels.
    """
    if reconstruction.frame != "camera":
        raise ValueError("reprojection expects a camera-frame spline")
    pts = reconstruction.evaluate(
        np.linspace(0.0, reconstruction.domain_end, n_samples)
    )
    baseline = rig.baseline
    h, w = left_mask.shape
    diagonal = float(np.hypot(w, h))

    results = []
    for mask, offset in ((left_mask, 0.0), (right_mask, baseline)):
        shifted = pts.copy()
        shifted[:, 0] -= offset
        homog = shifted @ rig.G.T
        in_front = homog[:, 2] > 0
        if not in_front.all():
            logger.warning(
                "%d projected samples behind the camera", int((~in_front).sum())
            )
        dists = np.full(len(pts), diagonal)
        if in_front.any():
            proj = homog[in_front, :2] / homog[in_front, 2:3]
            dists[in_front] = _mask_distances(proj, mask)
        results.extend([float(dists.mean()), float(dists.max())])
    return tuple(results)  # type: ignore[return-value]


def evaluate_reconstruction(
    reconstruction: SplineCurve,
    truth: np.ndarray,
    left_mask: np.ndarray,
    right_mask: np.ndarray,
    rig: StereoRig,
) -> MetricsReport:
    """Full per-scene metric set for a successful reconstruction."""
    e_s, e_s_max = curve_errors(reconstruction, truth)
    e_len = length_error(reconstruction, truth)
    l_mean, l_max, r_mean, r_max = reprojection_error(
        reconstruction, left_mask, right_mask, rig
    )
    return MetricsReport(
        e_s=e_s,
        e_s_max=e_s_max,
        e_len=e_len,
        e2d_mean_left=l_mean,
        e2d_max_left=l_max,
        e2d_mean_right=r_mean,
        e2d_max_right=r_max,
        success=True,
    )
