"""Volumes, rigid transforms, resampling and patch extraction.

Geometry conventions used throughout the package:

- arrays are indexed ``[ix, iy, iz]`` and grids are axis aligned,
  ``world = origin + index * spacing`` (mm);
- ``RigidTransform3D`` maps points ``p -> R @ p + t`` in world millimeters;
- ``resample(vol, ..., transform=T)`` samples the input at ``T(x_out)`` for every
  output grid point ``x_out`` (ITK convention: the transform maps the output/fixed
  grid into the input/moving volume). Callers holding a moving->fixed transform
  pass its inverse.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage

from srrd.errors import (
    InvalidArgumentError,
    InvalidTransformError,
    OutOfFovError,
    RejectedCenterError,
)

ORTHO_TOL = 1e-6


@dataclass(frozen=True)
class RigidTransform3D:
    """Rotation + translation in physical millimeter space."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        rot = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        tra = np.asarray(self.translation, dtype=np.float64).reshape(3)
        err = np.abs(rot @ rot.T - np.eye(3)).max()
        if err > 1e-5 or abs(np.linalg.det(rot) - 1.0) > 1e-5:
            raise InvalidTransformError(
                f"rotation is not orthonormal with det +1 (max |R R^T - I| = {err:.2e})"
            )
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", tra)

    @staticmethod
    def identity() -> "RigidTransform3D":
        return RigidTransform3D(np.eye(3), np.zeros(3))

    @staticmethod
    def from_euler(
        rx: float,
        ry: float,
        rz: float,
        translation=(0.0, 0.0, 0.0),
        degrees: bool = True,
        center=None,
    ) -> "RigidTransform3D":
        """Rotation about x, then y, then z axes, optionally about ``center``."""
        if degrees:
            rx, ry, rz = np.deg2rad([rx, ry, rz])
        cx, sx = np.cos(rx), np.sin(rx)
        cy, sy = np.cos(ry), np.sin(ry)
        cz, sz = np.cos(rz), np.sin(rz)
        rmx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
        rmy = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
        rmz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
        rot = rmz @ rmy @ rmx
        t = np.asarray(translation, dtype=np.float64)
        if center is not None:
            c = np.asarray(center, dtype=np.float64)
            t = t + c - rot @ c
        return RigidTransform3D(rot, t)

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform an (..., 3) array of world points."""
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self.rotation.T + self.translation

    def compose(self, other: "RigidTransform3D") -> "RigidTransform3D":
        """Return ``self ∘ other`` (``other`` applied first)."""
        return RigidTransform3D(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def inverse(self) -> "RigidTransform3D":
        rt = self.rotation.T
        return RigidTransform3D(rt, -rt @ self.translation)

    def magnitude(self) -> tuple[float, float]:
        """(translation norm in mm, rotation angle in degrees)."""
        angle = np.rad2deg(np.arccos(np.clip((np.trace(self.rotation) - 1.0) / 2.0, -1.0, 1.0)))
        return float(np.linalg.norm(self.translation)), float(angle)

    def as_flat(self) -> list[float]:
        """12 floats: row-major rotation followed by translation."""
        return [*self.rotation.reshape(9).tolist(), *self.translation.tolist()]

    @staticmethod
    def from_flat(values) -> "RigidTransform3D":
        values = np.asarray(values, dtype=np.float64).reshape(12)
        return RigidTransform3D(values[:9].reshape(3, 3), values[9:])

    def is_identity(self, tol: float = ORTHO_TOL) -> bool:
        return (
            np.abs(self.rotation - np.eye(3)).max() <= tol
            and np.abs(self.translation).max() <= tol
        )


@dataclass
class Volume:
    """3D scalar grid with physical spacing/origin and optional integer labels."""

    data: np.ndarray
    spacing: tuple[float, float, float]
    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)
    labels: np.ndarray | None = None

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.ndim != 3:
            raise InvalidArgumentError(f"volume data must be 3D, got shape {self.data.shape}")
        self.spacing = tuple(float(s) for s in self.spacing)
        self.origin = tuple(float(o) for o in self.origin)
        if len(self.spacing) != 3 or len(self.origin) != 3:
            raise InvalidArgumentError("spacing and origin must be length-3")
        if any(s <= 0 for s in self.spacing):
            raise InvalidArgumentError(f"spacing must be strictly positive, got {self.spacing}")
        if self.labels is not None:
            self.labels = np.asarray(self.labels)
            if self.labels.shape != self.data.shape:
                raise InvalidArgumentError(
                    f"labels shape {self.labels.shape} != data shape {self.data.shape}"
                )

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    def index_to_world(self, index: np.ndarray) -> np.ndarray:
        return np.asarray(index, dtype=np.float64) * np.array(self.spacing) + np.array(self.origin)

    def world_to_index(self, world: np.ndarray) -> np.ndarray:
        return (np.asarray(world, dtype=np.float64) - np.array(self.origin)) / np.array(self.spacing)

    def center_world(self) -> np.ndarray:
        return self.index_to_world((np.array(self.shape) - 1) / 2.0)

    def grid_world(self) -> np.ndarray:
        """(nx*ny*nz, 3) world coordinates of every voxel center, C order."""
        idx = np.indices(self.shape).reshape(3, -1).T
        return self.index_to_world(idx)

    def sample_world(
        self,
        points: np.ndarray,
        interpolation: str = "linear",
        fill: float = 0.0,
        array: np.ndarray | None = None,
    ) -> np.ndarray:
        """Sample intensities (or ``array``) at (N, 3) world points."""
        src = self.data if array is None else array
        coords = self.world_to_index(points).T
        order = {"linear": 1, "nearest": 0}.get(interpolation)
        if order is None:
            raise InvalidArgumentError(f"unknown interpolation '{interpolation}'")
        return ndimage.map_coordinates(
            src, coords, order=order, mode="constant", cval=fill, prefilter=False
        )

    def contains_world(self, points: np.ndarray, margin_vox: float = 0.0) -> np.ndarray:
        idx = self.world_to_index(points)
        shape = np.array(self.shape)
        return np.all((idx >= margin_vox) & (idx <= shape - 1 - margin_vox), axis=-1)

    def copy(self) -> "Volume":
        return replace(
            self,
            data=self.data.copy(),
            labels=None if self.labels is None else self.labels.copy(),
        )


@dataclass(frozen=True)
class PiecewiseWarp:
    """Per-bone rigid transforms; component c of the partition moves with its own transform."""

    component_transforms: dict[int, RigidTransform3D]
    label_source: Volume | None = None

    def __post_init__(self):
        if not self.component_transforms:
            raise InvalidArgumentError("piecewise warp needs at least one component transform")
        if self.label_source is not None and self.label_source.labels is not None:
            present = set(np.unique(self.label_source.labels).tolist()) - {0}
            missing = present - set(self.component_transforms)
            if missing:
                raise InvalidArgumentError(f"no transform for label(s) {sorted(missing)}")

    def apply(self, points: np.ndarray, component: int) -> np.ndarray:
        if component not in self.component_transforms:
            raise InvalidArgumentError(f"unknown component {component}")
        return self.component_transforms[component].apply(points)

    def components(self) -> list[int]:
        return sorted(self.component_transforms)

    @staticmethod
    def identity(components=(1, 2)) -> "PiecewiseWarp":
        return PiecewiseWarp({c: RigidTransform3D.identity() for c in components})

    def to_dict(self) -> dict:
        return {str(c): t.as_flat() for c, t in self.component_transforms.items()}

    @staticmethod
    def from_dict(d: dict) -> "PiecewiseWarp":
        return PiecewiseWarp({int(c): RigidTransform3D.from_flat(v) for c, v in d.items()})


@dataclass(frozen=True)
class PatchSpec:
    """Physical center plus the fixed CT/MR patch shapes."""

    center_world: tuple[float, float, float]
    ct_shape: tuple[int, int, int] = (12, 12, 12)
    mr_shape: tuple[int, int, int] = (48, 48, 16)


@dataclass
class PatchPair:
    """Anatomically corresponding (CT patch, MR patch) with provenance."""

    ct_patch: Volume
    mr_patch: Volume
    subject_id: str
    bone: int
    center_world: tuple[float, float, float]
    subregion: int | None = None
    label: "object | None" = field(default=None, repr=False)


def resample(
    vol: Volume,
    target_spacing,
    target_shape,
    transform: RigidTransform3D | None = None,
    interpolation: str = "linear",
    fill: float = 0.0,
    target_origin=None,
    resample_labels: bool = True,
) -> Volume:
    """Resample ``vol`` onto a new axis-aligned grid.

    ``transform`` maps output-grid world points into the input volume's world
    space (identity when omitted). Labels, when present, are carried along with
    nearest-neighbor interpolation.
    """
    target_spacing = tuple(float(s) for s in target_spacing)
    if any(s <= 0 for s in target_spacing):
        raise InvalidArgumentError(f"target spacing must be positive, got {target_spacing}")
    target_shape = tuple(int(n) for n in target_shape)
    if any(n <= 0 for n in target_shape):
        raise InvalidArgumentError(f"target shape must be positive, got {target_shape}")
    if transform is None:
        transform = RigidTransform3D.identity()
    if not isinstance(transform, RigidTransform3D):
        raise InvalidTransformError("transform must be a RigidTransform3D")
    if interpolation == "linear" and np.issubdtype(vol.data.dtype, np.integer):
        raise InvalidArgumentError("use interpolation='nearest' when resampling label data")

    origin = tuple(vol.origin) if target_origin is None else tuple(float(o) for o in target_origin)
    out = Volume(np.zeros(target_shape, dtype=np.float32), target_spacing, origin)
    pts = transform.apply(out.grid_world())
    data = vol.sample_world(pts, interpolation=interpolation, fill=fill)
    out.data = data.reshape(target_shape).astype(np.float32)
    if vol.labels is not None and resample_labels:
        lab = vol.sample_world(pts, interpolation="nearest", fill=0, array=vol.labels)
        out.labels = lab.reshape(target_shape).astype(vol.labels.dtype)
    return out


def _crop_grid(vol: Volume, center_world, shape) -> tuple[np.ndarray, np.ndarray]:
    """Start index and integer index ranges of a centered crop; raises when out of domain."""
    center_idx = vol.world_to_index(np.asarray(center_world, dtype=np.float64))
    start = np.round(center_idx - (np.array(shape) - 1) / 2.0).astype(int)
    stop = start + np.array(shape)
    if np.any(start < 0) or np.any(stop > np.array(vol.shape)):
        raise OutOfFovError(
            f"patch of shape {tuple(shape)} at {tuple(np.round(center_world, 2))} mm "
            f"exceeds the volume domain (start {start.tolist()}, shape {vol.shape})"
        )
    return start, stop


def extract_patch_pair(
    ct: Volume,
    mr: Volume,
    warp: PiecewiseWarp,
    spec: PatchSpec,
    subject_id: str = "",
    fill: float = 0.0,
) -> PatchPair:
    """Extract the CT crop at ``spec.center_world`` and the matching warped MR patch.

    The MR patch samples the CT patch's physical box through the inverse of the
    bone's MR->CT transform, on a 48x48x16 grid axis-aligned in CT space, so the
    two patches correspond voxel-wise over the same physical box.
    """
    if ct.labels is None:
        raise InvalidArgumentError("CT volume needs labels to validate the patch center")
    center = np.asarray(spec.center_world, dtype=np.float64)
    cidx = np.round(ct.world_to_index(center)).astype(int)
    if np.any(cidx < 0) or np.any(cidx >= np.array(ct.shape)):
        raise RejectedCenterError(f"center {tuple(center)} mm outside the CT volume")
    bone = int(ct.labels[tuple(cidx)])
    if bone == 0:
        raise RejectedCenterError(f"center {tuple(center)} mm is not inside a labeled bone")

    start, stop = _crop_grid(ct, center, spec.ct_shape)
    ct_patch = Volume(
        np.ascontiguousarray(ct.data[start[0]:stop[0], start[1]:stop[1], start[2]:stop[2]]).astype(
            np.float32
        ),
        ct.spacing,
        tuple(ct.index_to_world(start)),
    )

    box_origin = ct.index_to_world(start - 0.5)  # physical box edge, not first voxel center
    box_extent = np.array(spec.ct_shape) * np.array(ct.spacing)
    mr_spacing = box_extent / np.array(spec.mr_shape)
    mr_origin = box_origin + mr_spacing / 2.0
    grid = Volume(np.zeros(spec.mr_shape, dtype=np.float32), tuple(mr_spacing), tuple(mr_origin))
    to_mr = warp.component_transforms[bone].inverse()
    pts_mr = to_mr.apply(grid.grid_world())
    if not np.all(mr.contains_world(pts_mr)):
        raise OutOfFovError(
            f"warped MR region for patch at {tuple(np.round(center, 2))} mm exceeds the MR domain"
        )
    grid.data = mr.sample_world(pts_mr, interpolation="linear", fill=fill).reshape(
        spec.mr_shape
    ).astype(np.float32)

    return PatchPair(
        ct_patch=ct_patch,
        mr_patch=grid,
        subject_id=subject_id,
        bone=bone,
        center_world=tuple(float(c) for c in center),
    )


def sample_patch_centers(
    ct: Volume,
    n_per_bone: int,
    rng: np.random.Generator,
    margin_mm: float = 2.0,
    bones=(1, 2),
) -> list[tuple[float, float, float]]:
    """Draw patch centers uniformly from each bone's eroded label mask.

    Centers are chosen so the CT patch box stays inside the CT domain; corners are
    not otherwise constrained. Deterministic given ``rng``.
    """
    if ct.labels is None:
        raise InvalidArgumentError("CT volume has no labels to sample from")
    spacing = np.array(ct.spacing)
    half = (np.array((12, 12, 12)) / 2.0) * spacing
    centers: list[tuple[float, float, float]] = []
    for bone in bones:
        mask = ct.labels == bone
        erosion_vox = np.maximum(np.round(margin_mm / spacing).astype(int), 1)
        mask = ndimage.binary_erosion(mask, structure=np.ones((3, 3, 3)), iterations=int(erosion_vox.max()))
        idx = np.argwhere(mask)
        if idx.size == 0:
            warnings.warn(f"bone {bone}: no interior voxels to sample patch centers from")
            continue
        world = ct.index_to_world(idx)
        lo = np.array(ct.origin) + half
        hi = ct.index_to_world(np.array(ct.shape) - 1) - half
        ok = np.all((world >= lo) & (world <= hi), axis=1)
        world = world[ok]
        if len(world) == 0:
            warnings.warn(f"bone {bone}: interior too small for 12^3 patches")
            continue
        take = rng.choice(len(world), size=min(n_per_bone, len(world)), replace=False)
        centers.extend(tuple(map(float, w)) for w in world[take])
    return centers
