"""Trabecular morphometry: BV/TV, Tb.Th, Tb.Sp, Tb.N from binary masks.

Tb.Th/Tb.Sp use the model-independent local-thickness definition (mean over the
phase of the diameter of the largest inscribed sphere covering each voxel).
Spheres are fit on a 2x oversampled grid so an isolated voxel reads one voxel
diameter and a slab reads its physical thickness; the array edge truncates
spheres, which is why a guard margin is excluded from the mean.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from numba import njit
from scipy import ndimage
from skimage.filters import threshold_otsu

from srrd.errors import DegenerateInputError, InvalidArgumentError
from srrd.volume import Volume

OVERSAMPLE = 2


@dataclass(frozen=True)
class TrabecularParams:
    """The regressed 4-vector. bvtv dimensionless, tbth/tbsp in mm, tbn in 1/mm."""

    bvtv: float
    tbth: float
    tbsp: float
    tbn: float
    flags: tuple[str, ...] = field(default=())

    def as_array(self) -> np.ndarray:
        return np.array([self.bvtv, self.tbth, self.tbsp, self.tbn], dtype=np.float64)

    @staticmethod
    def names() -> tuple[str, str, str, str]:
        return ("bvtv", "tbth", "tbsp", "tbn")


def binarize(patch, method: str = "otsu", threshold: float | None = None,
             bone: str = "bright") -> np.ndarray:
    """Bone mask of a patch. ``bone`` states which side of the threshold is bone."""
    data = patch.data if isinstance(patch, Volume) else np.asarray(patch)
    if bone not in ("bright", "dark"):
        raise InvalidArgumentError(f"bone polarity must be 'bright' or 'dark', got {bone!r}")
    if method == "fixed":
        if threshold is None:
            raise InvalidArgumentError("fixed binarization needs a threshold")
        thr = float(threshold)
    elif method == "otsu":
        if np.ptp(data) == 0:
            raise DegenerateInputError("otsu binarization of a constant patch")
        thr = float(threshold_otsu(data.astype(np.float64), nbins=256))
    else:
        raise InvalidArgumentError(f"unknown binarization method {method!r}")
    return data >= thr if bone == "bright" else data <= thr


def bvtv(mask: np.ndarray) -> float:
    """Bone volume fraction: foreground voxels over total voxels."""
    mask = np.asarray(mask)
    if mask.size == 0:
        raise DegenerateInputError("empty mask array")
    return float(np.count_nonzero(mask) / mask.size)


@njit(cache=True)
def _paint_spheres(out, centers, radii, spacing):
    nx, ny, nz = out.shape
    sx, sy, sz = spacing[0], spacing[1], spacing[2]
    for k in range(centers.shape[0]):
        ci, cj, ck = centers[k, 0], centers[k, 1], centers[k, 2]
        r = radii[k]
        d = 2.0 * r
        r2 = r * r
        i0 = max(ci - int(np.ceil(r / sx)), 0)
        i1 = min(ci + int(np.ceil(r / sx)) + 1, nx)
        j0 = max(cj - int(np.ceil(r / sy)), 0)
        j1 = min(cj + int(np.ceil(r / sy)) + 1, ny)
        k0 = max(ck - int(np.ceil(r / sz)), 0)
        k1 = min(ck + int(np.ceil(r / sz)) + 1, nz)
        for i in range(i0, i1):
            dx = (i - ci) * sx
            for j in range(j0, j1):
                dy = (j - cj) * sy
                dxy = dx * dx + dy * dy
                if dxy > r2:
                    continue
                for kk in range(k0, k1):
                    dz = (kk - ck) * sz
                    if dxy + dz * dz <= r2 and out[i, j, kk] < d:
                        out[i, j, kk] = d
    return out


def _distance_ridge(dist: np.ndarray, spacing) -> np.ndarray:
    """Keep sphere centers not contained in a 26-neighbor's sphere."""
    keep = dist > 0
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            for dk in (-1, 0, 1):
                if di == dj == dk == 0:
                    continue
                step = np.linalg.norm(np.array([di, dj, dk]) * np.asarray(spacing))
                shifted = np.full_like(dist, -np.inf)
                src = [slice(max(d, 0), dist.shape[a] + min(d, 0)) for a, d in enumerate((di, dj, dk))]
                dst = [slice(max(-d, 0), dist.shape[a] + min(-d, 0)) for a, d in enumerate((di, dj, dk))]
                shifted[tuple(dst)] = dist[tuple(src)]
                keep &= shifted < dist + step
    return keep


def local_thickness_map(mask: np.ndarray, spacing, phase: str = "bone") -> tuple[np.ndarray, tuple]:
    """Local thickness (mm) of the selected phase on the 2x oversampled grid.

    Returns the fine-grid thickness map and the fine spacing. The array edge
    counts as the opposite phase, truncating spheres there.
    """
    mask = np.asarray(mask).astype(bool)
    if phase == "background":
        mask = ~mask
    elif phase != "bone":
        raise InvalidArgumentError(f"phase must be 'bone' or 'background', got {phase!r}")
    if not mask.any():
        raise DegenerateInputError(f"phase '{phase}' is empty")
    fine = np.repeat(np.repeat(np.repeat(mask, OVERSAMPLE, 0), OVERSAMPLE, 1), OVERSAMPLE, 2)
    fine_spacing = tuple(s / OVERSAMPLE for s in spacing)
    padded = np.pad(fine, 1, constant_values=False)
    dist = ndimage.distance_transform_edt(padded, sampling=fine_spacing)
    dist = dist[1:-1, 1:-1, 1:-1]
    ridge = _distance_ridge(dist, fine_spacing)
    centers = np.argwhere(ridge)
    radii = dist[ridge]
    order = np.argsort(radii)  # ascending: big spheres overwrite last
    out = np.zeros(fine.shape, dtype=np.float64)
    _paint_spheres(out, centers[order].astype(np.int64), radii[order].astype(np.float64),
                   np.asarray(fine_spacing, dtype=np.float64))
    out[~fine] = 0.0
    return out, fine_spacing


def _coarsen(fine_map: np.ndarray) -> np.ndarray:
    s = OVERSAMPLE
    nx, ny, nz = (n // s for n in fine_map.shape)
    return fine_map.reshape(nx, s, ny, s, nz, s).mean(axis=(1, 3, 5))


def local_thickness(mask: np.ndarray, spacing, phase: str = "bone", guard: int = 2) -> float:
    """Mean local thickness (mm) of the phase, guard voxels excluded from the mean."""
    mask = np.asarray(mask).astype(bool)
    fine_map, _ = local_thickness_map(mask, spacing, phase=phase)
    coarse = _coarsen(fine_map)
    phase_mask = mask if phase == "bone" else ~mask
    sel = np.zeros_like(phase_mask)
    g = guard
    if any(n <= 2 * g for n in mask.shape):
        raise DegenerateInputError(f"mask shape {mask.shape} too small for guard {g}")
    sel[g:-g or None, g:-g or None, g:-g or None] = True
    sel &= phase_mask
    if not sel.any():
        raise DegenerateInputError(f"phase '{phase}' empty inside the guard margin")
    return float(coarse[sel].mean())


def tbn(bvtv_value: float, tbth_value: float) -> float:
    """Plate-model trabecular number, BV/TV divided by Tb.Th (1/mm)."""
    if tbth_value <= 0 or not np.isfinite(tbth_value):
        if bvtv_value > 0:
            warnings.warn("Tb.N degenerate: Tb.Th is zero with nonzero BV/TV")
        return 0.0
    return float(bvtv_value / tbth_value)


def compute_params(patch: Volume, bone: str = "dark", method: str = "otsu",
                   threshold: float | None = None, guard: int = 2) -> TrabecularParams:
    """Binarize an MR-resolution patch and compute all four trabecular parameters."""
    mask = binarize(patch, method=method, threshold=threshold, bone=bone)
    flags: list[str] = []
    frac = bvtv(mask)
    if mask.all():
        tbth_v = local_thickness(mask, patch.spacing, phase="bone", guard=guard)
        tbsp_v = float("nan")
        flags.append("tbsp_degenerate")
    elif not mask.any():
        tbth_v = float("nan")
        tbsp_v = local_thickness(mask, patch.spacing, phase="background", guard=guard)
        flags.append("tbth_degenerate")
    else:
        tbth_v = local_thickness(mask, patch.spacing, phase="bone", guard=guard)
        tbsp_v = local_thickness(mask, patch.spacing, phase="background", guard=guard)
    tbn_v = tbn(frac, tbth_v if np.isfinite(tbth_v) else 0.0)
    return TrabecularParams(frac, tbth_v, tbsp_v, tbn_v, flags=tuple(flags))
