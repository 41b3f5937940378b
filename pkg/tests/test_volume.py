import numpy as np
import pytest

from srrd.errors import (
    InvalidArgumentError,
    InvalidTransformError,
    OutOfFovError,
    RejectedCenterError,
)
from srrd.volume import (
    PatchSpec,
    PiecewiseWarp,
    RigidTransform3D,
    Volume,
    extract_patch_pair,
    resample,
)


def make_volume(shape=(16, 16, 16), spacing=(1.0, 1.0, 1.0), seed=0, labels=False):
    rng = np.random.default_rng(seed)
    data = rng.random(shape, dtype=np.float32)
    lab = np.ones(shape, dtype=np.int16) if labels else None
    return Volume(data, spacing, labels=lab)


class TestRigidTransform:
    def test_identity_neutral(self):
        t = RigidTransform3D.from_euler(12, -7, 30, (4, 5, 6))
        i = RigidTransform3D.identity()
        for composed in (t.compose(i), i.compose(t)):
            assert np.allclose(composed.rotation, t.rotation, atol=1e-12)
            assert np.allclose(composed.translation, t.translation, atol=1e-12)

    def test_inverse_roundtrip(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            angles = rng.uniform(-90, 90, 3)
            t = RigidTransform3D.from_euler(*angles, rng.uniform(-10, 10, 3))
            c = t.compose(t.inverse())
            assert np.abs(c.rotation - np.eye(3)).max() < 1e-6
            assert np.abs(c.translation).max() < 1e-6
            tt = t.inverse().inverse()
            assert np.abs(tt.rotation - t.rotation).max() < 1e-6

    def test_compose_associative(self):
        rng = np.random.default_rng(4)
        a, b, c = (
            RigidTransform3D.from_euler(*rng.uniform(-40, 40, 3), rng.uniform(-5, 5, 3))
            for _ in range(3)
        )
        lhs = a.compose(b).compose(c)
        rhs = a.compose(b.compose(c))
        assert np.abs(lhs.rotation - rhs.rotation).max() < 1e-12
        assert np.abs(lhs.translation - rhs.translation).max() < 1e-10

    def test_apply_matches_compose(self):
        rng = np.random.default_rng(5)
        a = RigidTransform3D.from_euler(10, 20, 30, (1, 2, 3))
        b = RigidTransform3D.from_euler(-5, 15, 0, (0, -1, 2))
        pts = rng.uniform(-10, 10, (50, 3))
        assert np.allclose(a.compose(b).apply(pts), a.apply(b.apply(pts)), atol=1e-10)

    def test_rejects_non_orthonormal(self):
        with pytest.raises(InvalidTransformError):
            RigidTransform3D(np.eye(3) * 1.01, np.zeros(3))

    def test_flat_roundtrip(self):
        t = RigidTransform3D.from_euler(9, 8, 7, (0.1, 0.2, 0.3))
        t2 = RigidTransform3D.from_flat(t.as_flat())
        assert np.allclose(t.rotation, t2.rotation)
        assert np.allclose(t.translation, t2.translation)


class TestResample:
    def test_identity_is_bitwise(self):
        v = make_volume()
        out = resample(v, v.spacing, v.shape)
        assert np.array_equal(out.data, v.data)

    def test_constant_stays_constant(self):
        v = Volume(np.full((20, 20, 20), 7.0, dtype=np.float32), (1, 1, 1))
        t = RigidTransform3D.from_euler(5, 0, 0, (1.0, 0.5, 0.0), center=v.center_world())
        out = resample(v, v.spacing, (8, 8, 8), transform=t, target_origin=(6, 6, 6))
        assert np.allclose(out.data, 7.0)

    def test_downsample_ramp_matches_analytic(self):
        # doubling the spacing doubles the per-voxel increment of a linear ramp
        x = np.arange(32, dtype=np.float32)
        v = Volume(np.broadcast_to(x[:, None, None], (32, 16, 16)).copy(), (0.5, 1.0, 1.0))
        out = resample(v, (1.0, 1.0, 1.0), (16, 16, 16))
        expect = np.arange(16, dtype=np.float64) * 2.0
        assert np.allclose(out.data[:, 0, 0], expect, atol=1e-5)

    def test_out_of_domain_fill(self):
        v = make_volume((8, 8, 8))
        out = resample(v, v.spacing, (8, 8, 8), target_origin=(100, 0, 0), fill=-3.0)
        assert np.allclose(out.data, -3.0)

    def test_rejects_bad_spacing(self):
        v = make_volume((4, 4, 4))
        with pytest.raises(InvalidArgumentError):
            resample(v, (0.0, 1, 1), (4, 4, 4))

    def test_rejects_linear_on_integer_labels(self):
        lab = Volume(np.ones((4, 4, 4), dtype=np.int16), (1, 1, 1))
        with pytest.raises(InvalidArgumentError):
            resample(lab, (1, 1, 1), (4, 4, 4), interpolation="linear")


class TestVolumeInvariants:
    def test_spacing_positive(self):
        with pytest.raises(InvalidArgumentError):
            Volume(np.zeros((2, 2, 2)), (1.0, -1.0, 1.0))

    def test_labels_shape_checked(self):
        with pytest.raises(InvalidArgumentError):
            Volume(np.zeros((2, 2, 2)), (1, 1, 1), labels=np.zeros((3, 2, 2), dtype=int))

    def test_world_index_roundtrip(self):
        v = Volume(np.zeros((5, 6, 7)), (0.5, 0.7, 1.1), (-3.0, 2.0, 9.0))
        idx = np.array([[1.0, 2.0, 3.0], [0.0, 0.0, 0.0]])
        assert np.allclose(v.world_to_index(v.index_to_world(idx)), idx)


class TestPatchExtraction:
    def _subject(self, warp=None):
        shape = (40, 40, 40)
        rng = np.random.default_rng(11)
        ct = Volume(rng.random(shape, dtype=np.float32), (1, 1, 1),
                    labels=np.ones(shape, dtype=np.int16))
        mr = Volume(np.zeros((80, 80, 80), dtype=np.float32), (0.5, 0.5, 0.5),
                    origin=(-10, -10, -10))
        return ct, mr, warp or PiecewiseWarp.identity(components=(1,))

    def test_identity_warp_same_box(self):
        ct, mr, warp = self._subject()
        # single bright MR voxel at a known world position lands in the patch center
        mr.data[60, 60, 60] = 100.0  # world (20, 20, 20)
        spec = PatchSpec(center_world=(20.0, 20.0, 20.0))
        pair = extract_patch_pair(ct, mr, warp, spec, subject_id="s0")
        peak = np.unravel_index(np.argmax(pair.mr_patch.data), pair.mr_patch.shape)
        peak_world = pair.mr_patch.index_to_world(np.array(peak))
        assert np.abs(peak_world - 20.0).max() <= max(pair.mr_patch.spacing)
        assert pair.ct_patch.shape == (12, 12, 12)
        assert pair.mr_patch.shape == (48, 48, 16)
        assert pair.bone == 1

    def test_translation_warp_tracks_landmark(self):
        ct, mr, _ = self._subject()
        warp = PiecewiseWarp({1: RigidTransform3D(np.eye(3), np.array([5.0, 0.0, 0.0]))})
        # MR voxel at world (15, 20, 20) maps to CT world (20, 20, 20)
        mr.data[50, 60, 60] = 100.0
        spec = PatchSpec(center_world=(20.0, 20.0, 20.0))
        pair = extract_patch_pair(ct, mr, warp, spec)
        peak = np.unravel_index(np.argmax(pair.mr_patch.data), pair.mr_patch.shape)
        peak_world = pair.mr_patch.index_to_world(np.array(peak))
        assert np.abs(peak_world - 20.0).max() <= max(pair.mr_patch.spacing)

    def test_center_near_boundary_out_of_fov(self):
        ct, mr, warp = self._subject()
        with pytest.raises(OutOfFovError):
            extract_patch_pair(ct, mr, warp, PatchSpec(center_world=(4.0, 20.0, 20.0)))

    def test_center_outside_bone_rejected(self):
        ct, mr, warp = self._subject()
        ct.labels[:, :, :] = 0
        with pytest.raises(RejectedCenterError):
            extract_patch_pair(ct, mr, warp, PatchSpec(center_world=(20.0, 20.0, 20.0)))

    def test_warped_region_outside_mr_domain(self):
        ct, mr, _ = self._subject()
        warp = PiecewiseWarp({1: RigidTransform3D(np.eye(3), np.array([-60.0, 0.0, 0.0]))})
        with pytest.raises(OutOfFovError):
            extract_patch_pair(ct, mr, warp, PatchSpec(center_world=(20.0, 20.0, 20.0)))


class TestPiecewiseWarp:
    def test_requires_transform_per_label(self):
        lab = np.zeros((4, 4, 4), dtype=np.int16)
        lab[0] = 1
        lab[2] = 2
        vol = Volume(np.zeros((4, 4, 4)), (1, 1, 1), labels=lab)
        with pytest.raises(InvalidArgumentError):
            PiecewiseWarp({1: RigidTransform3D.identity()}, label_source=vol)

    def test_apply_uses_component_transform(self):
        warp = PiecewiseWarp({
            1: RigidTransform3D(np.eye(3), np.array([1.0, 0, 0])),
            2: RigidTransform3D(np.eye(3), np.array([0, 2.0, 0])),
        })
        p = np.array([[0.0, 0.0, 0.0]])
        assert np.allclose(warp.apply(p, 1), [[1, 0, 0]])
        assert np.allclose(warp.apply(p, 2), [[0, 2, 0]])

    def test_dict_roundtrip(self):
        warp = PiecewiseWarp({1: RigidTransform3D.from_euler(3, 2, 1, (9, 8, 7))})
        warp2 = PiecewiseWarp.from_dict(warp.to_dict())
        assert np.allclose(
            warp.component_transforms[1].rotation, warp2.component_transforms[1].rotation
        )
