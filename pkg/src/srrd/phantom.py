"""Procedural paired MR/CT knee phantoms with known microstructure and misalignment.

Anatomy lives on a high-resolution "micro" grid in MR world coordinates: two
half-ellipsoid bones (femur above, tibia below) with a 1 mm cortical shell and a
trabecular interior carved from a thresholded band-limited Gaussian random
field. The MR volume renders that anatomy in place (trabeculae dark, marrow
bright); the CT volume renders each bone through its own rigid offset
(trabeculae bright), with modality-matched partial-volume blur and noise. The
per-bone offsets are the ground-truth MR->CT warp.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import ndimage
from scipy.stats import norm

from srrd import nifti
from srrd.errors import InvalidConfigError
from srrd.morphometry import TrabecularParams, compute_params
from srrd.volume import PiecewiseWarp, RigidTransform3D, Volume

GRADES = ("normal", "mild", "advanced")
FEMUR, TIBIA = 1, 2


@dataclass(frozen=True)
class GradeSpec:
    """Grade-conditional sampling distribution of the true microstructure."""

    bvtv_mean: float
    bvtv_sd: float
    corr_length_mm: float


DEFAULT_GRADES = {
    "normal": GradeSpec(0.35, 0.03, 0.35),
    "mild": GradeSpec(0.28, 0.03, 0.40),
    "advanced": GradeSpec(0.20, 0.03, 0.46),
}


@dataclass(frozen=True)
class PhantomConfig:
    seed: int = 0
    grade: str = "normal"
    fov_mm: float = 48.0
    micro_spacing: float = 0.25
    mr_spacing: tuple[float, float, float] = (0.234, 0.234, 1.5)
    ct_spacing: tuple[float, float, float] = (0.977, 0.977, 1.0)
    grade_specs: dict = field(default_factory=lambda: dict(DEFAULT_GRADES))
    translation_mm: float = 5.0
    rotation_deg: float = 10.0
    mr_noise: float = 0.03
    ct_noise: float = 0.02
    intensity_jitter: float = 0.05
    mr_intensity: tuple[float, float, float] = (0.15, 0.85, 0.05)  # bone, marrow, air
    ct_intensity: tuple[float, float, float] = (0.95, 0.25, 0.02)
    shell_mm: float = 1.0
    n_landmarks_per_bone: int = 8
    landmark_min_sep_mm: float = 5.0

    def __post_init__(self):
        if self.grade not in GRADES:
            raise InvalidConfigError(f"unknown grade {self.grade!r}")
        means = [self.grade_specs[g].bvtv_mean for g in GRADES]
        if not (means[0] > means[1] > means[2]):
            raise InvalidConfigError(
                f"grade BV/TV means must decrease normal > mild > advanced, got {means}"
            )

    def mr_shape(self) -> tuple[int, int, int]:
        return tuple(int(round(self.fov_mm / s)) for s in self.mr_spacing)

    def ct_shape(self) -> tuple[int, int, int]:
        # slightly smaller FOV than MR, offset by ct_origin
        return tuple(int(round((self.fov_mm - 4.0) / s)) for s in self.ct_spacing)

    def ct_origin(self) -> tuple[float, float, float]:
        return (2.0, 2.0, 2.0)


@dataclass
class PhantomSubject:
    subject_id: str
    grade: str
    mr: Volume
    ct: Volume
    true_warp: PiecewiseWarp
    landmarks_mr: np.ndarray
    landmarks_ct: np.ndarray
    landmark_bones: np.ndarray
    micro: Volume  # binary lattice in MR world; labels mark per-bone trabecular regions
    true_bvtv: float
    seed: int

    def true_params(self, center_world, box_mm) -> TrabecularParams:
        """Oracle morphometry of the micro lattice inside an axis-aligned MR-world box."""
        h = self.micro.spacing[0]
        center = np.asarray(center_world, dtype=np.float64)
        half = np.asarray(box_mm, dtype=np.float64) / 2.0
        lo = np.maximum(np.round((center - half) / h).astype(int), 0)
        hi = np.minimum(np.round((center + half) / h).astype(int), np.array(self.micro.shape))
        crop = self.micro.data[lo[0]:hi[0], lo[1]:hi[1], lo[2]:hi[2]]
        patch = Volume(crop.astype(np.float32), self.micro.spacing)
        return compute_params(patch, bone="bright", method="fixed", threshold=0.5)


def _ellipsoid(coords, center, semi) -> np.ndarray:
    x, y, z = coords
    cx, cy, cz = center
    ax, ay, az = semi
    return ((x - cx) / ax) ** 2 + ((y - cy) / ay) ** 2 + ((z - cz) / az) ** 2 <= 1.0


def _bone_supports(cfg: PhantomConfig, coords):
    f = cfg.fov_mm
    femur_center = (0.50 * f, 0.50 * f, 0.70 * f)
    tibia_center = (0.50 * f, 0.50 * f, 0.30 * f)
    semi_f = (0.34 * f, 0.27 * f, 0.23 * f)
    semi_t = (0.32 * f, 0.26 * f, 0.23 * f)
    gap = 0.042 * f
    femur = _ellipsoid(coords, femur_center, semi_f) & (coords[2] >= 0.5 * f + gap / 2)
    tibia = _ellipsoid(coords, tibia_center, semi_t) & (coords[2] <= 0.5 * f - gap / 2)
    return {FEMUR: (femur, femur_center), TIBIA: (tibia, tibia_center)}


def _pick_landmarks(field_vals, trab_mask, spacing, n, min_sep, rng):
    """Greedy non-max-suppressed picks of the strongest lattice features."""
    vals = np.where(trab_mask, field_vals, -np.inf)
    flat = np.argpartition(vals.ravel(), -5000)[-5000:]
    flat = flat[np.argsort(vals.ravel()[flat])[::-1]]
    cand = np.stack(np.unravel_index(flat, vals.shape), axis=1) * spacing
    picked: list[np.ndarray] = []
    sep = min_sep
    while len(picked) < n and sep > 0.5:
        for p in cand:
            if len(picked) >= n:
                break
            if all(np.linalg.norm(p - q) >= sep for q in picked):
                picked.append(p)
        sep *= 0.7
    return np.array(picked[:n])


def generate_subject(
    cfg: PhantomConfig,
    subject_id: str | None = None,
    transforms: dict[int, RigidTransform3D] | None = None,
) -> PhantomSubject:
    """Deterministic paired phantom for (config, seed).

    ``transforms`` overrides the randomly drawn per-bone MR->CT offsets (used to
    inject known misalignments in controlled experiments).
    """
    rng = np.random.default_rng(cfg.seed)
    spec: GradeSpec = cfg.grade_specs[cfg.grade]
    h = cfg.micro_spacing
    n_micro = int(round(cfg.fov_mm / h))
    shape = (n_micro, n_micro, n_micro)

    ax = (np.arange(n_micro) * h).astype(np.float32)
    coords = np.meshgrid(ax, ax, ax, indexing="ij", sparse=True)
    bones = _bone_supports(cfg, coords)
    support = {b: m for b, (m, _) in bones.items()}
    centers = {b: np.array(c) for b, (_, c) in bones.items()}

    # band-limited random field -> binary lattice at a grade-dependent threshold
    grf = ndimage.gaussian_filter(
        rng.standard_normal(shape).astype(np.float32), sigma=spec.corr_length_mm / h
    )
    grf -= grf.mean()
    grf /= grf.std()
    target_bvtv = float(np.clip(rng.normal(spec.bvtv_mean, spec.bvtv_sd), 0.05, 0.6))
    tau = norm.ppf(1.0 - target_bvtv)
    lattice = grf > tau

    shell_vox = max(int(round(cfg.shell_mm / h)), 1)
    any_support = support[FEMUR] | support[TIBIA]
    interior = ndimage.binary_erosion(any_support, iterations=shell_vox)
    shell = any_support & ~interior
    bone_matrix = (lattice & interior) | shell
    trab_labels = np.zeros(shape, dtype=np.uint8)
    trab_labels[interior & support[FEMUR]] = FEMUR
    trab_labels[interior & support[TIBIA]] = TIBIA
    true_bvtv = float(bone_matrix[interior].mean())

    # per-bone rigid offsets (MR -> CT), rotation about the x axis through the bone center
    drawn = {}
    for b in (FEMUR, TIBIA):
        rx = rng.uniform(-cfg.rotation_deg, cfg.rotation_deg)
        t = rng.uniform(-cfg.translation_mm, cfg.translation_mm, 3)
        drawn[b] = RigidTransform3D.from_euler(rx, 0.0, 0.0, t, center=centers[b])
    if transforms is not None:
        drawn.update(transforms)
    transforms = drawn
    true_warp = PiecewiseWarp(transforms)

    # modality intensity models on the micro grid, then modality-matched blur
    mr_bone, mr_marrow, mr_air = cfg.mr_intensity
    ct_bone, ct_marrow, ct_air = cfg.ct_intensity
    bone_f = bone_matrix.astype(np.float32)
    img_mr = np.full(shape, mr_air, dtype=np.float32)
    img_mr[any_support] = mr_marrow
    img_mr += (mr_bone - mr_marrow) * bone_f * any_support
    img_ct = np.full(shape, ct_air, dtype=np.float32)
    img_ct[any_support] = ct_marrow
    img_ct += (ct_bone - ct_marrow) * bone_f * any_support
    blur_mr = np.array(cfg.mr_spacing) * 0.5 / h
    blur_ct = np.array(cfg.ct_spacing) * 0.5 / h
    img_mr = ndimage.gaussian_filter(img_mr, sigma=blur_mr)
    img_ct = ndimage.gaussian_filter(img_ct, sigma=blur_ct)

    micro_world_scale = 1.0 / h

    def sample(img, pts, order, cval):
        return ndimage.map_coordinates(
            img, (pts * micro_world_scale).T, order=order, mode="constant", cval=cval,
            prefilter=False,
        )

    # MR volume: anatomy in place
    mr_shape = cfg.mr_shape()
    mr_vol = Volume(np.zeros(mr_shape, dtype=np.float32), cfg.mr_spacing)
    pts = mr_vol.grid_world()
    mr_data = sample(img_mr, pts, 1, mr_air).astype(np.float32)
    mr_labels = np.zeros(mr_shape, dtype=np.int16).ravel()
    for b in (FEMUR, TIBIA):
        inb = sample(support[b].astype(np.float32), pts, 0, 0.0) > 0.5
        mr_labels[inb] = b
    scale_mr = 1.0 + cfg.intensity_jitter * rng.uniform(-1, 1)
    mr_data = mr_data * scale_mr
    if cfg.mr_noise > 0:
        g1 = rng.standard_normal(mr_data.shape) * cfg.mr_noise
        g2 = rng.standard_normal(mr_data.shape) * cfg.mr_noise
        mr_data = np.sqrt((mr_data + g1) ** 2 + g2 ** 2).astype(np.float32)
    mr_vol.data = mr_data.reshape(mr_shape)
    mr_vol.labels = mr_labels.reshape(mr_shape)

    # CT volume: each bone sampled through the inverse of its own offset
    ct_shape = cfg.ct_shape()
    ct_vol = Volume(np.zeros(ct_shape, dtype=np.float32), cfg.ct_spacing, cfg.ct_origin())
    pts_ct = ct_vol.grid_world()
    ct_data = np.full(pts_ct.shape[0], ct_air, dtype=np.float64)
    ct_labels = np.zeros(pts_ct.shape[0], dtype=np.int16)
    for b in (TIBIA, FEMUR):  # femur painted last wins any overlap
        back = transforms[b].inverse().apply(pts_ct)
        inb = sample(support[b].astype(np.float32), back, 0, 0.0) > 0.5
        vals = sample(img_ct, back, 1, ct_air)
        ct_data[inb] = vals[inb]
        ct_labels[inb] = b
    scale_ct = 1.0 + cfg.intensity_jitter * rng.uniform(-1, 1)
    ct_data = ct_data * scale_ct
    if cfg.ct_noise > 0:
        ct_data = ct_data + rng.standard_normal(ct_data.shape) * cfg.ct_noise
    ct_vol.data = ct_data.reshape(ct_shape).astype(np.float32)
    ct_vol.labels = ct_labels.reshape(ct_shape)

    # landmarks at lattice-feature extrema, exact correspondence by construction
    lm_mr, lm_ct, lm_bones = [], [], []
    for b in (FEMUR, TIBIA):
        margin = ndimage.binary_erosion(trab_labels == b, iterations=shell_vox * 2)
        pts_b = _pick_landmarks(
            grf, margin, h, cfg.n_landmarks_per_bone, cfg.landmark_min_sep_mm, rng
        )
        lm_mr.append(pts_b)
        lm_ct.append(transforms[b].apply(pts_b))
        lm_bones.extend([b] * len(pts_b))

    micro = Volume(bone_matrix.astype(np.uint8), (h, h, h), labels=trab_labels)
    return PhantomSubject(
        subject_id=subject_id or f"subj{cfg.seed:04d}",
        grade=cfg.grade,
        mr=mr_vol,
        ct=ct_vol,
        true_warp=true_warp,
        landmarks_mr=np.concatenate(lm_mr),
        landmarks_ct=np.concatenate(lm_ct),
        landmark_bones=np.asarray(lm_bones),
        micro=micro,
        true_bvtv=true_bvtv,
        seed=cfg.seed,
    )


def generate_cohort(
    n_per_grade: int,
    base_seed: int = 0,
    cfg: PhantomConfig | None = None,
    counts: dict[str, int] | None = None,
) -> list[PhantomSubject]:
    """Balanced cohort; subject i uses seed base_seed + i and grade i mod 3."""
    if counts is None:
        if n_per_grade < 1:
            raise InvalidConfigError("n_per_grade must be >= 1")
        counts = {g: n_per_grade for g in GRADES}
    base = cfg or PhantomConfig()
    schedule: list[str] = []
    remaining = dict(counts)
    while any(v > 0 for v in remaining.values()):
        for g in GRADES:
            if remaining.get(g, 0) > 0:
                schedule.append(g)
                remaining[g] -= 1
    subjects = []
    for i, grade in enumerate(schedule):
        c = replace(base, seed=base_seed + i, grade=grade)
        subjects.append(generate_subject(c, subject_id=f"subj{base_seed + i:04d}"))
    return subjects


def save_subject(subj: PhantomSubject, out_dir) -> Path:
    out = Path(out_dir) / subj.subject_id
    nifti.write_volume(subj.mr, out / "mr.nii.gz")
    nifti.write_volume(subj.ct, out / "ct.nii.gz")
    nifti.write_volume(subj.micro, out / "micro.nii.gz")
    nifti.write_json(
        {
            "subject_id": subj.subject_id,
            "grade": subj.grade,
            "seed": subj.seed,
            "true_warp": subj.true_warp.to_dict(),
            "landmarks_mr": subj.landmarks_mr.tolist(),
            "landmarks_ct": subj.landmarks_ct.tolist(),
            "landmark_bones": subj.landmark_bones.tolist(),
            "true_bvtv": subj.true_bvtv,
        },
        out / "meta.json",
    )
    return out


def load_subject(subj_dir) -> PhantomSubject:
    subj_dir = Path(subj_dir)
    meta = nifti.read_json(subj_dir / "meta.json")
    return PhantomSubject(
        subject_id=meta["subject_id"],
        grade=meta["grade"],
        mr=nifti.read_volume(subj_dir / "mr.nii.gz"),
        ct=nifti.read_volume(subj_dir / "ct.nii.gz"),
        true_warp=PiecewiseWarp.from_dict(meta["true_warp"]),
        landmarks_mr=np.asarray(meta["landmarks_mr"], dtype=np.float64),
        landmarks_ct=np.asarray(meta["landmarks_ct"], dtype=np.float64),
        landmark_bones=np.asarray(meta["landmark_bones"], dtype=np.int64),
        micro=nifti.read_volume(subj_dir / "micro.nii.gz"),
        true_bvtv=float(meta["true_bvtv"]),
        seed=int(meta["seed"]),
    )
