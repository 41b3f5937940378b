import numpy as np
import pytest

from srrd.errors import ComponentTooSmallError, InvalidArgumentError
from srrd.phantom import FEMUR, TIBIA, PhantomConfig, generate_subject
from srrd.registration import (
    RegistrationConfig,
    coarse_register,
    refined_register,
    segment_bones_oracle,
    tre,
)
from srrd.volume import PiecewiseWarp, RigidTransform3D, Volume


@pytest.fixture(scope="module")
def aligned_subject():
    return generate_subject(PhantomConfig(seed=21, translation_mm=0.0, rotation_deg=0.0))


@pytest.fixture(scope="module")
def misaligned_subject():
    return generate_subject(PhantomConfig(seed=22))


class TestTre:
    def test_true_warp_zero(self, misaligned_subject):
        s = misaligned_subject
        mean, sd = tre(s.landmarks_mr, s.landmarks_ct, s.true_warp, s.landmark_bones)
        assert mean < 1e-9 and sd < 1e-9

    def test_identity_on_offset_landmarks(self):
        moving = np.zeros((5, 3))
        fixed = np.tile([2.0, 0.0, 0.0], (5, 1))
        mean, sd = tre(moving, fixed, RigidTransform3D.identity())
        assert mean == pytest.approx(2.0) and sd == pytest.approx(0.0)

    def test_identity_equals_injected_magnitude_for_translation(self, aligned_subject):
        s = aligned_subject
        shift = np.array([3.0, -1.0, 2.0])
        mean, _ = tre(s.landmarks_mr, s.landmarks_mr + shift, RigidTransform3D.identity())
        assert mean == pytest.approx(np.linalg.norm(shift), rel=1e-9)

    def test_empty_rejected(self):
        with pytest.raises(InvalidArgumentError):
            tre(np.zeros((0, 3)), np.zeros((0, 3)), RigidTransform3D.identity())


class TestCoarse:
    def test_pure_translation_recovered(self, aligned_subject):
        s = aligned_subject
        # shift the CT origin: anatomy and FOV move together by (5, 0, 0) mm
        ct = Volume(s.ct.data, s.ct.spacing,
                    tuple(np.array(s.ct.origin) + [5.0, 0.0, 0.0]), labels=s.ct.labels)
        crmr, res = coarse_register(s.mr, ct)
        lm_ct = s.landmarks_ct + [5.0, 0.0, 0.0]
        mean, _ = tre(s.landmarks_mr, lm_ct, res.transform)
        assert mean < 1.0  # one CT voxel
        assert res.converged

    def test_already_aligned_recovers_identity(self, aligned_subject):
        crmr, res = coarse_register(aligned_subject.mr, aligned_subject.ct)
        t_norm, r_deg = res.transform.magnitude()
        assert t_norm < 0.5 and r_deg < 0.5
        assert res.final_metric >= res.initial_metric

    def test_beyond_capture_range_flagged(self, aligned_subject):
        # a 40 mm FOV offset leaves no bone overlap; the search cannot recover it
        s = aligned_subject
        mr = Volume(s.mr.data, s.mr.spacing,
                    tuple(np.array(s.mr.origin) - [40.0, 0.0, 0.0]))
        cfg = RegistrationConfig()
        crmr, res = coarse_register(mr, s.ct, cfg)
        assert not res.converged

    def test_crmr_on_ct_grid(self, aligned_subject):
        crmr, _ = coarse_register(aligned_subject.mr, aligned_subject.ct)
        assert crmr.shape == aligned_subject.ct.shape
        assert crmr.spacing == aligned_subject.ct.spacing


class TestRefined:
    def test_femur_only_rotation_recovered(self):
        base = PhantomConfig(seed=23, translation_mm=0.0, rotation_deg=0.0)
        probe = generate_subject(base)
        femur_center = probe.landmarks_mr[probe.landmark_bones == FEMUR].mean(axis=0)
        inject = {
            FEMUR: RigidTransform3D.from_euler(7.0, 0, 0, (0, 0, 0), center=femur_center),
            TIBIA: RigidTransform3D.identity(),
        }
        s = generate_subject(base, transforms=inject)
        crmr, res = coarse_register(s.mr, s.ct)
        warp, details = refined_register(crmr, s.ct, s.ct.labels, res.transform)
        _, femur_angle = warp.component_transforms[FEMUR].magnitude()
        assert femur_angle == pytest.approx(7.0, abs=0.5)
        # "tibia near identity": assert its displacement, not the Euler angle, since
        # small rotations trade off against translations at equal metric value
        tib = s.landmark_bones == TIBIA
        tib_mean, _ = tre(s.landmarks_mr[tib], s.landmarks_ct[tib],
                          warp.component_transforms[TIBIA])
        assert tib_mean < 0.5
        mean, _ = tre(s.landmarks_mr, s.landmarks_ct, warp, s.landmark_bones)
        assert mean < 1.0

    def test_common_displacement_gives_equal_components(self):
        base = PhantomConfig(seed=24, translation_mm=0.0, rotation_deg=0.0)
        shared = RigidTransform3D.from_euler(0, 0, 0, (2.0, -1.0, 1.5))
        s = generate_subject(base, transforms={FEMUR: shared, TIBIA: shared})
        crmr, res = coarse_register(s.mr, s.ct)
        warp, _ = refined_register(crmr, s.ct, s.ct.labels, res.transform)
        tf = warp.component_transforms[FEMUR]
        tt = warp.component_transforms[TIBIA]
        assert np.abs(tf.translation - tt.translation).max() < 0.7
        mean, _ = tre(s.landmarks_mr, s.landmarks_ct, warp, s.landmark_bones)
        assert mean < 1.0

    def test_missing_bone_raises(self, misaligned_subject):
        s = misaligned_subject
        labels = s.ct.labels.copy()
        labels[labels == TIBIA] = 0
        with pytest.raises(ComponentTooSmallError):
            refined_register(s.ct, s.ct, labels, RigidTransform3D.identity())

    def test_tiny_component_raises(self, misaligned_subject):
        s = misaligned_subject
        labels = s.ct.labels.copy()
        idx = np.argwhere(labels == TIBIA)
        labels[labels == TIBIA] = 0
        labels[tuple(idx[:50].T)] = TIBIA  # 50 voxels < 100 minimum
        with pytest.raises(ComponentTooSmallError):
            refined_register(s.ct, s.ct, labels, RigidTransform3D.identity())


class TestOracleSegmentation:
    def test_oracle_returns_phantom_labels(self, misaligned_subject):
        seg = segment_bones_oracle(misaligned_subject.ct)
        assert np.array_equal(seg.labels, misaligned_subject.ct.labels)

    def test_oracle_without_labels_rejected(self):
        vol = Volume(np.zeros((4, 4, 4), dtype=np.float32), (1, 1, 1))
        with pytest.raises(InvalidArgumentError):
            segment_bones_oracle(vol)
