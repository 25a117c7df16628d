"""Exception types shared across the reconstruction pipeline."""


class ThreadReconError(Exception):
    """Base class for all package errors."""


class ConfigurationError(ThreadReconError):
    """Invalid parameters or rig data (singular matrices, bad ranges).

    Raised before any per-scene computation; maps to CLI exit code 2.
    """


class ReconstructionError(ThreadReconError):
    """A per-scene reconstruction failure (a result, not a crash).

    The message is the failure reason, e.g. "empty segmentation",
    "no reliable pixels", "fragmented thread", "MVS infeasible".
    """


class FitError(ReconstructionError):
    """Spline fitting failed (too few points or rank-deficient system)."""


class GenerationError(ThreadReconError):
    """Synthetic scene generation could not satisfy its constraints."""
