"""Procedural stereo scenes of thin curves with exact ground truth.

Each scene is a random smooth 3D curve inside the stereo frustum, rendered
as a thin anti-alias-free stroke into a rectified 640x480 pair. Masks are
the exact stroke footprints, stroke intensity is graded by depth (which
also gives the matcher texture along the curve), and the dense centerline
polyline is kept as ground truth. Generation is deterministic per seed.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .bspline import SplineCurve, uniform_clamped_knots
from .errors import GenerationError
from .ioutil import format_float, read_gray, read_mask, write_gray, write_mask
from .stereo import StereoRig, make_pinhole_rig


@dataclass(frozen=True)
class GenerationConfig:
    """Scene generation ranges and rendering parameters.

    The defaults reproduce a desk-scale endoscopic regime: 640x480 images,
    800 px focal length, 5 mm baseline, curves 60-140 mm long at 80-160 mm
    depth, rendered 1-3 px wide.
    """

    width: int = 640
    height: int = 480
    focal: float = 800.0
    cx: float = 320.0
    cy: float = 240.0
    baseline: float = 5.0
    units: str = "mm"
    depth_range: tuple[float, float] = (80.0, 160.0)
    length_range: tuple[float, float] = (60.0, 140.0)
    stroke_width_range: tuple[float, float] = (1.5, 3.0)
    intensity_range: tuple[float, float] = (40.0, 200.0)
    noise_sigma: float = 0.0
    n_vertices: int = 12000
    margin_px: float = 12.0
    max_curvature: float = 0.08  # 1/mm
    min_image_separation: float = 8.0  # px, between arc-distant samples
    separation_arc_gap: float = 12.0  # mm of arc distance treated as distant
    control_point_range: tuple[int, int] = (5, 8)
    max_turn_deg: float = 38.0
    max_attempts: int = 80

    def rig(self) -> StereoRig:
        return make_pinhole_rig(self.focal, self.cx, self.cy, self.baseline, self.units)


@dataclass
class SyntheticScene:
    """A rendered stereo scene with its exact ground truth.

    Attributes:
        ground_truth: Dense centerline polyline in the camera frame, (n, 3).
        arc: Cumulative arc length per vertex, (n,).
        left_image, right_image: Rendered grayscale views, uint8.
        left_mask, right_mask: Exact stroke footprints.
        rig: Stereo rig used for rendering.
        curve_length: Total polyline length, spatial units.
        stroke_width: Rendered stroke diameter in pixels.
        left_vertex_index: Per left-mask-pixel index of the nearest
            ground-truth vertex (-1 outside the mask); diagnostic only,
            not part of the on-disk bundle.
    """

    ground_truth: np.ndarray
    arc: np.ndarray
    left_image: np.ndarray
    right_image: np.ndarray
    left_mask: np.ndarray
    right_mask: np.ndarray
    rig: StereoRig
    curve_length: float
    stroke_width: float
    left_vertex_index: np.ndarray


def _project(points: np.ndarray, config: GenerationConfig, x_offset: float = 0.0):
    """Pinhole projection; x_offset shifts the camera along the baseline."""
    x = config.focal * (points[:, 0] - x_offset) / points[:, 2] + config.cx
    y = config.focal * points[:, 1] / points[:, 2] + config.cy
    return x, y


def _polyline_curvature(points: np.ndarray) -> np.ndarray:
    """Discrete curvature via circumradius of consecutive vertex triples."""
    a = points[:-2]
    b = points[1:-1]
    c = points[2:]
    ab = np.linalg.norm(b - a, axis=1)
    bc = np.linalg.norm(c - b, axis=1)
    ca = np.linalg.norm(c - a, axis=1)
    cross = np.linalg.norm(np.cross(b - a, c - b), axis=1)
    denom = ab * bc * ca
    with np.errstate(divide="ignore", invalid="ignore"):
        kappa = np.where(denom > 0, 2.0 * cross / denom, 0.0)
    return kappa


def _shift_into(lo_v: float, hi_v: float, lo: float, hi: float) -> float | None:
    """Smallest shift placing [lo_v, hi_v] inside [lo, hi]; None if too wide."""
    if hi_v - lo_v > hi - lo:
        return None
    if lo_v < lo:
        return lo - lo_v
    if hi_v > hi:
        return hi - hi_v
    return 0.0


def _sample_curve(rng: np.random.Generator, config: GenerationConfig):
    """One random curve attempt; returns dense vertices or None if rejected."""
    z_lo, z_hi = config.depth_range
    n_ctrl = int(rng.integers(config.control_point_range[0], config.control_point_range[1] + 1))
    target = float(rng.uniform(*config.length_range))
    # Long curves only fit the frustum at larger depths; bias accordingly.
    span = config.length_range[1] - config.length_range[0]
    frac = 0.22 + 0.58 * (target - config.length_range[0]) / span + rng.uniform(-0.08, 0.08)
    z_mid = z_lo + float(np.clip(frac, 0.15, 0.85)) * (z_hi - z_lo)

    # Lateral extent that keeps the midpoint depth plane inside both views.
    half_x = (config.cx - config.margin_px - config.focal * config.baseline / z_mid) / config.focal * z_mid
    half_y = (config.cy - config.margin_px) / config.focal * z_mid
    start = np.array(
        [
            rng.uniform(-0.5, 0.5) * half_x,
            rng.uniform(-0.5, 0.5) * half_y,
            z_mid + rng.uniform(-0.1, 0.1) * (z_hi - z_lo),
        ]
    )

    # Random walk with bounded turning; depth component damped so the curve
    # stays near its depth plane.
    direction = rng.normal(size=3)
    direction[2] *= 0.35
    direction /= np.linalg.norm(direction)
    step = target / (n_ctrl - 1)
    controls = [start]
    max_turn = np.deg2rad(config.max_turn_deg)
    for _ in range(n_ctrl - 1):
        perp = rng.normal(size=3)
        perp[2] *= 0.35
        perp -= direction * (perp @ direction)
        norm = np.linalg.norm(perp)
        if norm > 0:
            angle = rng.uniform(0.0, max_turn)
            direction = direction * np.cos(angle) + perp / norm * np.sin(angle)
            direction /= np.linalg.norm(direction)
        controls.append(controls[-1] + step * direction)
    ctrl = np.array(controls)

    degree = 3
    spline = SplineCurve(
        degree=degree,
        knots=uniform_clamped_knots(n_ctrl, degree, float(n_ctrl - 1)),
        control_points=ctrl,
        frame="camera",
    )
    dense = spline.evaluate(np.linspace(0.0, spline.domain_end, config.n_vertices))
    seg = np.linalg.norm(np.diff(dense, axis=0), axis=1)
    length = float(seg.sum())
    if length <= 0:
        return None
    # Uniform scaling about the centroid scales arc length exactly.
    centroid = dense.mean(axis=0)
    dense = centroid + (dense - centroid) * (target / length)

    shift_z = _shift_into(dense[:, 2].min(), dense[:, 2].max(), z_lo, z_hi)
    if shift_z is None:
        return None
    dense[:, 2] += shift_z

    # Translate laterally (minimal correction) until both projections fit.
    m = config.margin_px
    for _ in range(4):
        xl, yl = _project(dense, config)
        xr, _ = _project(dense, config, x_offset=config.baseline)
        shift_x = _shift_into(
            min(xl.min(), xr.min()), max(xl.max(), xr.max()), m, config.width - 1 - m
        )
        shift_y = _shift_into(yl.min(), yl.max(), m, config.height - 1 - m)
        if shift_x is None or shift_y is None:
            return None
        if shift_x == 0.0 and shift_y == 0.0:
            break
        z_bar = dense[:, 2].mean()
        dense[:, 0] += shift_x * z_bar / config.focal
        dense[:, 1] += shift_y * z_bar / config.focal
    else:
        return None

    coarse = dense[:: max(1, config.n_vertices // 400)]
    if _polyline_curvature(coarse).max() > config.max_curvature:
        return None

    # Reject image-space self-overlap: arc-distant samples must stay apart.
    sub = slice(None, None, max(1, config.n_vertices // 300))
    arc = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(dense, axis=0), axis=1))])
    sx, sy, sa = xl[sub], yl[sub], arc[sub]
    d_img = np.hypot(sx[:, None] - sx[None, :], sy[:, None] - sy[None, :])
    d_arc = np.abs(sa[:, None] - sa[None, :])
    close = (d_img < config.min_image_separation) & (d_arc > config.separation_arc_gap)
    if close.any():
        return None
    return dense


def _render_view(
    points: np.ndarray,
    intensity: np.ndarray,
    config: GenerationConfig,
    stroke_width: float,
    x_offset: float,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Rasterize the curve into one view.

    Every pixel whose center lies within half the stroke width of a
    projected vertex is part of the stroke and takes the intensity of its
    nearest vertex (the sampling is dense enough that vertex distance and
    curve distance agree to well under a tenth of a pixel).

    Returns:
        (image, mask, vertex_index) arrays.
    """
    h, w = config.height, config.width
    x, y = _project(points, config, x_offset)
    radius = stroke_width / 2.0
    box = int(np.ceil(radius + 0.5))
    offs = np.arange(-box, box + 1)
    ox, oy = np.meshgrid(offs, offs)
    ox, oy = ox.ravel(), oy.ravel()

    base_x = np.round(x).astype(np.int64)
    base_y = np.round(y).astype(np.int64)
    px = (base_x[:, None] + ox[None, :]).ravel()
    py = (base_y[:, None] + oy[None, :]).ravel()
    n = len(points)
    vidx = np.repeat(np.arange(n, dtype=np.int64), len(ox))
    d2 = (px - np.repeat(x, len(ox))) ** 2 + (py - np.repeat(y, len(ox))) ** 2

    inb = (px >= 0) & (px < w) & (py >= 0) & (py < h) & (d2 <= radius * radius)
    px, py, vidx, d2 = px[inb], py[inb], vidx[inb], d2[inb]
    pid = py * w + px
    order = np.lexsort((vidx, d2, pid))
    pid, vidx, d2 = pid[order], vidx[order], d2[order]
    first = np.ones(len(pid), dtype=bool)
    first[1:] = pid[1:] != pid[:-1]

    image = np.full(h * w, 255, dtype=np.uint8)
    mask = np.zeros(h * w, dtype=bool)
    vertex_index = np.full(h * w, -1, dtype=np.int64)
    sel = pid[first]
    mask[sel] = True
    image[sel] = intensity[vidx[first]]
    vertex_index[sel] = vidx[first]
    return image.reshape(h, w), mask.reshape(h, w), vertex_index.reshape(h, w)


def generate_scene(seed: int, config: GenerationConfig | None = None) -> SyntheticScene:
    """Generate one deterministic synthetic scene.

    Args:
        seed: RNG seed; identical seeds give bit-identical scenes.
        config: Generation ranges (defaults reproduce the standard dataset).

    Returns:
        SyntheticScene with images, masks, rig and dense ground truth.

    Raises:
        GenerationError: No curve satisfying the frustum, curvature and
            separation constraints was found within ``max_attempts``.
    """
    config = config or GenerationConfig()
    rng = np.random.default_rng(seed)
    dense = None
    for _ in range(config.max_attempts):
        dense = _sample_curve(rng, config)
        if dense is not None:
            break
    if dense is None:
        raise GenerationError(
            f"no valid curve after {config.max_attempts} attempts (seed {seed})"
        )

    z_lo, z_hi = config.depth_range
    i_lo, i_hi = config.intensity_range
    intensity = np.clip(
        np.round(i_lo + (dense[:, 2] - z_lo) / (z_hi - z_lo) * (i_hi - i_lo)),
        0,
        254,
    ).astype(np.uint8)
    stroke_width = float(rng.uniform(*config.stroke_width_range))

    left_image, left_mask, left_vidx = _render_view(dense, intensity, config, stroke_width, 0.0)
    right_image, right_mask, _ = _render_view(
        dense, intensity, config, stroke_width, config.baseline
    )

    if config.noise_sigma > 0:
        for img in (left_image, right_image):
            noise = rng.normal(0.0, config.noise_sigma, img.shape)
            np.clip(img + noise, 0, 255, out=noise)
            img[:] = noise.astype(np.uint8)

    seg = np.linalg.norm(np.diff(dense, axis=0), axis=1)
    arc = np.concatenate([[0.0], np.cumsum(seg)])
    return SyntheticScene(
        ground_truth=dense,
        arc=arc,
        left_image=left_image,
        right_image=right_image,
        left_mask=left_mask,
        right_mask=right_mask,
        rig=config.rig(),
        curve_length=float(arc[-1]),
        stroke_width=stroke_width,
        left_vertex_index=left_vidx,
    )


# ---------------------------------------------------------------------------
# Scene bundles on disk
# ---------------------------------------------------------------------------

BUNDLE_FILES = (
    "left.png",
    "right.png",
    "mask_left.png",
    "mask_right.png",
    "rig.json",
    "truth.csv",
)


def write_scene(scene: SyntheticScene, directory: str | Path) -> None:
    """Write the fixed scene bundle layout into ``directory``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_gray(directory / "left.png", scene.left_image)
    write_gray(directory / "right.png", scene.right_image)
    write_mask(directory / "mask_left.png", scene.left_mask)
    write_mask(directory / "mask_right.png", scene.right_mask)
    scene.rig.save(directory / "rig.json")
    unit = scene.rig.units
    with open(directory / "truth.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"x_{unit}", f"y_{unit}", f"z_{unit}"])
        for row in scene.ground_truth:
            writer.writerow([format_float(v) for v in row])


@dataclass
class SceneBundle:
    """A scene as loaded back from disk (no generator-only diagnostics)."""

    left_image: np.ndarray
    right_image: np.ndarray
    left_mask: np.ndarray
    right_mask: np.ndarray
    rig: StereoRig
    ground_truth: np.ndarray


def read_scene(directory: str | Path) -> SceneBundle:
    """Load a scene bundle written by :func:`write_scene`."""
    directory = Path(directory)
    truth = np.loadtxt(directory / "truth.csv", delimiter=",", skiprows=1, dtype=float)
    return SceneBundle(
        left_image=read_gray(directory / "left.png"),
        right_image=read_gray(directory / "right.png"),
        left_mask=read_mask(directory / "mask_left.png"),
        right_mask=read_mask(directory / "mask_right.png"),
        rig=StereoRig.load(directory / "rig.json"),
        ground_truth=truth,
    )
