"""SRRD: synthesis, registration, regression and diagnosis on digital knee phantoms."""

from srrd.volume import PatchPair, PatchSpec, PiecewiseWarp, RigidTransform3D, Volume, resample

__version__ = "0.1.0"

__all__ = [
    "Volume",
    "RigidTransform3D",
    "PiecewiseWarp",
    "PatchSpec",
    "PatchPair",
    "resample",
    "__version__",
]
