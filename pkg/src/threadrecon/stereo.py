"""Reliability-weighted block matching on lifted segmented stereo pairs.

The matcher operates only on segmented pixels: images are "lifted" so that
everything outside the mask reads as background 255, which prevents window
costs from locking onto unsegmented content. Disparities are integer,
searched exhaustively per pixel, and each pixel carries a reliability score
comparing its best and second-best match energies.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, ReconstructionError
from .ioutil import dump_stable, load_json

BACKGROUND = 255


@dataclass(frozen=True)
class MatchParams:
    """Block-matching and reliability parameters.

    Attributes:
        alpha: Maximum disparity searched, inclusive.
        window_radius: Half-extent of the square matching window
            (radius 2 = 5x5), intersected with the left mask.
        eps1, eps2, eps3: Scale/shift constants of the sigmoid reliability.
        reliability_threshold: Pixels with score strictly above this are
            considered reliable.
        emin_floor: Lower bound on the best energy used in the reliability
            denominator, so perfect matches stay well-defined.
    """

    alpha: int = 80
    window_radius: int = 2
    eps1: float = 8.0
    eps2: float = 5.0
    eps3: float = 0.8
    reliability_threshold: float = 0.9
    emin_floor: float = 1.0

    def __post_init__(self):
        if self.alpha < 4:
            raise ConfigurationError(
                f"alpha={self.alpha} leaves no admissible second-best disparity"
            )
        if self.window_radius < 1:
            raise ConfigurationError("window_radius must be >= 1")
        if not 0.0 < self.reliability_threshold < 1.0:
            raise ConfigurationError("reliability_threshold must be in (0, 1)")
        if self.emin_floor <= 0.0:
            raise ConfigurationError("emin_floor must be positive")


@dataclass(frozen=True)
class StereoRig:
    """Disparity-to-depth matrix Q and camera intrinsics G.

    Attributes:
        Q: 4x4 matrix mapping (x, y, d, 1) homogeneously to 3D.
        G: 3x3 camera intrinsics (invertible).
        units: Spatial unit label, e.g. "mm".
    """

    Q: np.ndarray
    G: np.ndarray
    units: str = "mm"

    def __post_init__(self):
        Q = np.asarray(self.Q, dtype=float)
        G = np.asarray(self.G, dtype=float)
        if Q.shape != (4, 4):
            raise ConfigurationError("Q must be 4x4")
        if G.shape != (3, 3):
            raise ConfigurationError("G must be 3x3")
        for name, mat in (("Q", Q), ("G", G)):
            if abs(np.linalg.det(mat)) < 1e-12:
                raise ConfigurationError(f"{name} matrix is singular")
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "G", G)

    @property
    def baseline(self) -> float:
        """Stereo baseline in spatial units, derived from Q's disparity row."""
        if self.Q[3, 2] == 0.0:
            raise ConfigurationError("Q[3,2] is zero; cannot derive baseline")
        return 1.0 / self.Q[3, 2]

    def to_dict(self) -> dict:
        return {
            "Q": [[float(v) for v in row] for row in self.Q],
            "G": [[float(v) for v in row] for row in self.G],
            "units": self.units,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "StereoRig":
        return cls(
            Q=np.asarray(data["Q"], dtype=float),
            G=np.asarray(data["G"], dtype=float),
            units=str(data["units"]),
        )

    def save(self, path: str | Path) -> None:
        dump_stable(self.to_dict(), path)

    @classmethod
    def load(cls, path: str | Path) -> "StereoRig":
        return cls.from_dict(load_json(path))


def make_pinhole_rig(
    focal: float, cx: float, cy: float, baseline: float, units: str = "mm"
) -> StereoRig:
    """Canonical rectified rig: Q maps disparity d to depth focal*baseline/d."""
    Q = np.array(
        [
            [1.0, 0.0, 0.0, -cx],
            [0.0, 1.0, 0.0, -cy],
            [0.0, 0.0, 0.0, focal],
            [0.0, 0.0, 1.0 / baseline, 0.0],
        ]
    )
    G = np.array([[focal, 0.0, cx], [0.0, focal, cy], [0.0, 0.0, 1.0]])
    return StereoRig(Q=Q, G=G, units=units)


@dataclass(frozen=True)
class SegmentedImage:
    """A rectified grayscale image with its segmentation mask, lifted.

    ``lifted`` equals the input intensities on mask pixels and 255 elsewhere.
    """

    intensities: np.ndarray  # (H, W) uint8
    mask: np.ndarray  # (H, W) bool
    lifted: np.ndarray  # (H, W) uint8

    @property
    def height(self) -> int:
        return self.intensities.shape[0]

    @property
    def width(self) -> int:
        return self.intensities.shape[1]


def lift(image: np.ndarray, mask: np.ndarray) -> SegmentedImage:
    """Lift a segmented image: keep mask pixels, set the rest to 255.

    Args:
        image: Grayscale image, shape (H, W), uint8.
        mask: Boolean mask of segmented pixels, same shape.

    Returns:
        SegmentedImage with the lifted intensity array.

    Raises:
        ReconstructionError: The mask contains no pixels.
    """
    img = np.asarray(image)
    msk = np.asarray(mask, dtype=bool)
    if img.shape != msk.shape:
        raise ValueError(f"image shape {img.shape} != mask shape {msk.shape}")
    if not msk.any():
        raise ReconstructionError("empty segmentation")
    lifted = np.where(msk, img, BACKGROUND).astype(np.uint8)
    return SegmentedImage(intensities=img.astype(np.uint8), mask=msk, lifted=lifted)


@dataclass
class DepthField:
    """Per-pixel stereo matching output over the left mask.

    All arrays are full-image (H, W); entries outside ``mask`` are
    meaningless. ``valid`` marks mask pixels whose disparity produced a
    finite positive-parallax depth.
    """

    mask: np.ndarray  # (H, W) bool, the left segmentation
    disparity: np.ndarray  # (H, W) int32, best disparity
    disparity_next: np.ndarray  # (H, W) int32, second-best (band-excluded)
    e_min: np.ndarray  # (H, W) float64
    e_next: np.ndarray  # (H, W) float64
    depth: np.ndarray  # (H, W) float64
    reliability: np.ndarray  # (H, W) float64 in (0, 1)
    valid: np.ndarray  # (H, W) bool


def _window_slices(x: int, y: int, radius: int, width: int, height: int):
    x0, x1 = max(0, x - radius), min(width - 1, x + radius)
    y0, y1 = max(0, y - radius), min(height - 1, y + radius)
    return x0, x1, y0, y1


def match_energy(
    left: SegmentedImage,
    right: SegmentedImage,
    pixel: tuple[int, int],
    disparity: int,
    params: MatchParams,
) -> float:
    """Sum of squared lifted-intensity differences over the matching window.

    The window is the (2r+1)^2 square centered at ``pixel`` intersected with
    the left mask; right-image lookups shifted off the left edge read as
    background 255.

    Args:
        pixel: (x, y) with ``pixel`` in the left mask.
        disparity: Horizontal shift tested, >= 0.
    """
    x, y = pixel
    if not left.mask[y, x]:
        raise ValueError(f"pixel {pixel} not in left mask")
    r = params.window_radius
    x0, x1, y0, y1 = _window_slices(x, y, r, left.width, left.height)
    win_mask = left.mask[y0 : y1 + 1, x0 : x1 + 1]
    lvals = left.lifted[y0 : y1 + 1, x0 : x1 + 1].astype(np.int64)

    xs = np.arange(x0, x1 + 1) - disparity
    rvals = np.full((y1 - y0 + 1, x1 - x0 + 1), BACKGROUND, dtype=np.int64)
    inb = xs >= 0
    if inb.any():
        rvals[:, inb] = right.lifted[y0 : y1 + 1, xs[inb]].astype(np.int64)
    diff2 = (lvals - rvals) ** 2
    return float(diff2[win_mask].sum())


def best_disparities(
    left: SegmentedImage,
    right: SegmentedImage,
    pixel: tuple[int, int],
    params: MatchParams,
) -> tuple[int, float, int, float]:
    """Exhaustive best and second-best disparity for one left-mask pixel.

    The best disparity minimizes the window energy over [0, alpha] (ties
    toward smaller d); the second-best minimizes over disparities more than
    2 levels away from the best.

    Returns:
        (d_min, e_min, d_next, e_next).
    """
    energies = np.array(
        [match_energy(left, right, pixel, d, params) for d in range(params.alpha + 1)]
    )
    d_min = int(np.argmin(energies))
    admissible = np.abs(np.arange(params.alpha + 1) - d_min) > 2
    if not admissible.any():
        raise ConfigurationError(
            f"alpha={params.alpha} leaves no admissible second-best disparity "
            f"for best d={d_min}"
        )
    masked = np.where(admissible, energies, np.inf)
    d_next = int(np.argmin(masked))
    return d_min, float(energies[d_min]), d_next, float(energies[d_next])


def reliability(e_min: float, e_next: float, params: MatchParams):
    """Sigmoid reliability comparing best and second-best match energies.

    score = sigmoid(eps1 * ((e_next - e_min) / (eps2 * max(e_min, floor)) - eps3))

    Accepts scalars or arrays; e_next >= e_min >= 0 is assumed.
    """
    denom = params.eps2 * np.maximum(e_min, params.emin_floor)
    arg = params.eps1 * ((e_next - e_min) / denom - params.eps3)
    return 1.0 / (1.0 + np.exp(-arg))


def _energy_stack(
    left: SegmentedImage, right: SegmentedImage, params: MatchParams
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Window energies for every mask pixel and disparity, exactly.

    Returns (ys, xs, energies) with energies of shape (alpha+1, n_mask) in
    exact integer arithmetic (int64), matching ``match_energy`` bit for bit.
    """
    h, w = left.lifted.shape
    r = params.window_radius
    lvals = left.lifted.astype(np.int64)
    rvals = right.lifted.astype(np.int64)
    mask = left.mask
    ys, xs = np.nonzero(mask)
    energies = np.empty((params.alpha + 1, len(ys)), dtype=np.int64)

    for d in range(params.alpha + 1):
        shifted = np.full_like(rvals, BACKGROUND)
        if d < w:
            shifted[:, d:] = rvals[:, : w - d]
        diff2 = np.where(mask, (lvals - shifted) ** 2, 0)
        # Padded integral image: window sums with zero contribution outside
        # bounds, exactly as the mask intersection prescribes.
        integral = np.zeros((h + 1, w + 1), dtype=np.int64)
        np.cumsum(diff2, axis=0, out=integral[1:, 1:])
        np.cumsum(integral[1:, 1:], axis=1, out=integral[1:, 1:])
        y0 = np.clip(ys - r, 0, h)
        y1 = np.clip(ys + r + 1, 0, h)
        x0 = np.clip(xs - r, 0, w)
        x1 = np.clip(xs + r + 1, 0, w)
        energies[d] = (
            integral[y1, x1] - integral[y0, x1] - integral[y1, x0] + integral[y0, x0]
        )
    return ys, xs, energies


def depth_map(
    left: SegmentedImage,
    right: SegmentedImage,
    rig: StereoRig,
    params: MatchParams,
) -> DepthField:
    """Dense disparity, depth and reliability over the left mask.

    For every left-mask pixel the full [0, alpha] disparity range is
    evaluated; depth comes from the homogeneous product Q (x, y, d, 1)^T.
    Pixels with zero disparity or a non-finite depth ratio are flagged
    invalid. Images must be rectified (horizontal epipolar lines); this is
    the caller's responsibility.

    Args:
        left, right: Lifted segmented images of identical size.
        rig: Stereo rig with invertible Q.
        params: Matching parameters.

    Returns:
        DepthField over the left mask.
    """
    if left.lifted.shape != right.lifted.shape:
        raise ValueError("left/right image sizes differ")
    ys, xs, energies = _energy_stack(left, right, params)
    n = len(ys)
    d_range = np.arange(params.alpha + 1)

    d_min = np.argmin(energies, axis=0)  # first occurrence = smallest d
    e_min = energies[d_min, np.arange(n)].astype(float)
    band = np.abs(d_range[:, None] - d_min[None, :]) > 2
    if n and (~band.any(axis=0)).any():
        raise ConfigurationError(
            f"alpha={params.alpha} leaves no admissible second-best disparity"
        )
    masked = np.where(band, energies, np.iinfo(np.int64).max)
    d_next = np.argmin(masked, axis=0)
    e_next = energies[d_next, np.arange(n)].astype(float)

    scores = reliability(e_min, e_next, params)

    homog = rig.Q @ np.stack(
        [xs.astype(float), ys.astype(float), d_min.astype(float), np.ones(n)]
    )
    with np.errstate(divide="ignore", invalid="ignore"):
        depths = homog[2] / homog[3]
    good = (d_min > 0) & np.isfinite(depths)

    h, w = left.lifted.shape
    field = DepthField(
        mask=left.mask.copy(),
        disparity=np.zeros((h, w), dtype=np.int32),
        disparity_next=np.zeros((h, w), dtype=np.int32),
        e_min=np.zeros((h, w)),
        e_next=np.zeros((h, w)),
        depth=np.full((h, w), np.nan),
        reliability=np.zeros((h, w)),
        valid=np.zeros((h, w), dtype=bool),
    )
    field.disparity[ys, xs] = d_min
    field.disparity_next[ys, xs] = d_next
    field.e_min[ys, xs] = e_min
    field.e_next[ys, xs] = e_next
    field.depth[ys, xs] = depths
    field.reliability[ys, xs] = scores
    field.valid[ys, xs] = good
    return field
