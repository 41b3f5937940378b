"""Rigid MR->CT registration: coarse whole-image stage, per-bone refined stage, TRE.

Both stages maximize Parzen-histogram mutual information with a derivative-free
coordinate search (shrinking steps, fixed evaluation budget). The coarse stage
runs a 3-level multiresolution pyramid on the full image; the refined stage
runs per bone on a dilated label mask against the synthesized CT.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from srrd.errors import ComponentTooSmallError, InvalidArgumentError
from srrd.mi import MIMetricConfig, mutual_information
from srrd.volume import PiecewiseWarp, RigidTransform3D, Volume, resample


@dataclass(frozen=True)
class RegistrationConfig:
    pyramid: tuple[int, ...] = (4, 2, 1)
    init_step_mm: float = 4.0
    init_step_deg: float = 4.0
    tol_mm: float = 0.1
    tol_deg: float = 0.1
    max_evals_per_level: int = 500
    metric: MIMetricConfig = field(default_factory=MIMetricConfig)
    fill: float = 0.0
    min_overlap: float = 0.5
    mask_dilation_vox: int = 3
    min_component_voxels: int = 100


@dataclass
class RegistrationResult:
    transform: RigidTransform3D
    final_metric: float
    n_iterations: int
    converged: bool
    initial_metric: float = float("nan")


def _params_to_transform(params, center) -> RigidTransform3D:
    tx, ty, tz, rx, ry, rz = params
    return RigidTransform3D.from_euler(rx, ry, rz, (tx, ty, tz), center=center)


def _coordinate_descent(metric_fn, params0, cfg: RegistrationConfig):
    """Greedy +-step search per parameter with halving steps. Maximizes metric_fn."""
    best_p = np.asarray(params0, dtype=np.float64).copy()
    best_m = metric_fn(best_p)
    evals = 1
    step_mm, step_deg = cfg.init_step_mm, cfg.init_step_deg
    budget = cfg.max_evals_per_level
    while (step_mm >= cfg.tol_mm or step_deg >= cfg.tol_deg) and evals < budget:
        improved = False
        for i in range(6):
            step = step_mm if i < 3 else step_deg
            tol = cfg.tol_mm if i < 3 else cfg.tol_deg
            if step < tol:
                continue
            for sign in (1.0, -1.0):
                if evals >= budget:
                    break
                cand = best_p.copy()
                cand[i] += sign * step
                m = metric_fn(cand)
                evals += 1
                if m > best_m + 1e-12:
                    best_p, best_m = cand, m
                    improved = True
                    break
            if evals >= budget:
                break
        if not improved:
            step_mm /= 2.0
            step_deg /= 2.0
    tolerance_reached = step_mm < cfg.tol_mm and step_deg < cfg.tol_deg
    return best_p, best_m, evals, tolerance_reached


def _downsample(vol: Volume, factor: int) -> Volume:
    if factor == 1:
        return vol
    sm = vol.copy()
    sm.data = ndimage.gaussian_filter(vol.data.astype(np.float32), sigma=factor / 2.0)
    spacing = tuple(s * factor for s in vol.spacing)
    shape = tuple(max(int(np.ceil(n / factor)), 2) for n in vol.shape)
    return resample(sm, spacing, shape, resample_labels=False)


def _fixed_samples(fixed: Volume, fraction: float, seed: int):
    pts = fixed.grid_world()
    vals = fixed.data.reshape(-1)
    n = vals.size
    if fraction < 1.0:
        k = max(int(n * fraction), 512)
        if k < n:
            idx = np.random.default_rng(seed).choice(n, size=k, replace=False)
            return pts[idx], vals[idx]
    return pts, vals


def _mi_of_params(params, center, moving, fixed_pts, fixed_vals, cfg):
    t = _params_to_transform(params, center)
    moved = moving.sample_world(t.inverse().apply(fixed_pts), fill=cfg.fill)
    return mutual_information(
        fixed_vals, moved,
        MIMetricConfig(cfg.metric.n_bins, 1.0, cfg.metric.smoothing),
    )


def coarse_register(
    mr: Volume, ct: Volume, cfg: RegistrationConfig = RegistrationConfig()
) -> tuple[Volume, RegistrationResult]:
    """Single rigid MR->CT transform from a multiresolution MI search; returns crMR too."""
    center = ct.center_world()
    params = np.zeros(6)
    total_evals = 0
    all_tol = True
    init_metric = final_metric = float("nan")
    for li, factor in enumerate(cfg.pyramid):
        fixed = _downsample(ct, factor)
        fixed_pts, fixed_vals = _fixed_samples(fixed, cfg.metric.sampling_fraction, cfg.metric.seed + li)

        def metric_fn(p):
            return _mi_of_params(p, center, mr, fixed_pts, fixed_vals, cfg)

        if factor == min(cfg.pyramid):
            # report initial/final on the finest level; never start it below identity
            init_metric = metric_fn(np.zeros(6))
            total_evals += 1
            if metric_fn(params) < init_metric:
                params = np.zeros(6)
        params, final_metric, evals, tol_ok = _coordinate_descent(metric_fn, params, cfg)
        total_evals += evals
        all_tol &= tol_ok

    t = _params_to_transform(params, center)
    # overlap sanity: the warped MR domain must still cover the CT foreground
    fg_thr = np.quantile(ct.data, 0.9)
    fg_pts = ct.grid_world()[(ct.data > fg_thr).reshape(-1)]
    coverage = float(mr.contains_world(t.inverse().apply(fg_pts)).mean()) if len(fg_pts) else 0.0
    converged = bool(all_tol and coverage >= cfg.min_overlap)
    crmr = resample(mr, ct.spacing, ct.shape, transform=t.inverse(),
                    target_origin=ct.origin, fill=cfg.fill, resample_labels=False)
    result = RegistrationResult(t, float(final_metric), total_evals, converged, float(init_metric))
    return crmr, result


def refined_register(
    sct: Volume,
    ct: Volume,
    labels: np.ndarray | Volume,
    t_coarse: RigidTransform3D,
    cfg: RegistrationConfig = RegistrationConfig(),
) -> tuple[PiecewiseWarp, dict[int, RegistrationResult]]:
    """Per-bone rigid sCT->CT registration on dilated label masks, composed with t_coarse.

    Returns the full MR->CT piecewise warp (component b maps p -> dT_b(T_coarse(p)))
    and the per-bone optimizer results.
    """
    lab = labels.labels if isinstance(labels, Volume) and labels.labels is not None else labels
    lab = lab.data if isinstance(lab, Volume) else np.asarray(lab)
    if lab.shape != ct.shape:
        raise InvalidArgumentError("labels must live on the CT grid")
    bones = sorted(int(b) for b in np.unique(lab) if b != 0)
    if len(bones) < 2:
        raise ComponentTooSmallError(f"expected two labeled bones, found {bones}")

    components: dict[int, RigidTransform3D] = {}
    results: dict[int, RegistrationResult] = {}
    grid = ct.grid_world()
    for b in bones:
        mask = lab == b
        if mask.sum() < cfg.min_component_voxels:
            raise ComponentTooSmallError(
                f"bone {b} mask has {int(mask.sum())} voxels (< {cfg.min_component_voxels})"
            )
        mask = ndimage.binary_dilation(mask, iterations=cfg.mask_dilation_vox)
        sel = mask.reshape(-1)
        pts = grid[sel]
        vals = ct.data.reshape(-1)[sel]
        if cfg.metric.sampling_fraction < 1.0 and len(vals) > 2048:
            k = max(int(len(vals) * cfg.metric.sampling_fraction), 2048)
            idx = np.random.default_rng(cfg.metric.seed + b).choice(len(vals), size=min(k, len(vals)), replace=False)
            pts, vals = pts[idx], vals[idx]
        center = pts.mean(axis=0)

        def metric_fn(p):
            return _mi_of_params(p, center, sct, pts, vals, cfg)

        init_m = metric_fn(np.zeros(6))
        params, final_m, evals, tol_ok = _coordinate_descent(metric_fn, np.zeros(6), cfg)
        dt = _params_to_transform(params, center)
        components[b] = dt.compose(t_coarse)
        results[b] = RegistrationResult(dt, float(final_m), evals, bool(tol_ok), float(init_m))
    return PiecewiseWarp(components), results


def tre(
    landmarks_moving: np.ndarray,
    landmarks_fixed: np.ndarray,
    warp,
    bones: np.ndarray | None = None,
) -> tuple[float, float]:
    """Mean +- SD Euclidean distance (mm) between warped moving and fixed landmarks."""
    moving = np.asarray(landmarks_moving, dtype=np.float64)
    fixed = np.asarray(landmarks_fixed, dtype=np.float64)
    if moving.size == 0 or moving.shape != fixed.shape:
        raise InvalidArgumentError("landmark lists must be equal-length and nonempty")
    if isinstance(warp, PiecewiseWarp):
        if bones is None:
            raise InvalidArgumentError("piecewise warp TRE needs per-landmark bone ids")
        warped = np.empty_like(moving)
        for b in np.unique(bones):
            sel = bones == b
            warped[sel] = warp.apply(moving[sel], int(b))
    else:
        warped = warp.apply(moving)
    d = np.linalg.norm(warped - fixed, axis=1)
    return float(d.mean()), float(d.std())


def segment_bones_oracle(ct: Volume) -> Volume:
    """Ground-truth labels carried by the phantom CT volume."""
    if ct.labels is None:
        raise InvalidArgumentError("oracle segmentation needs a CT volume with labels")
    return Volume(ct.data, ct.spacing, ct.origin, labels=ct.labels.copy())
