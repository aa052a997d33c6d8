"""Cloud container, PLY round trips, camera model, and activations."""

import numpy as np
import pytest

from mesongs.errors import DataError, FormatError
from mesongs.gaussian_model import (Camera, GaussianCloud, activate,
                                    load_cameras, load_ply, ply_nbytes,
                                    save_cameras, save_ply, sh_rest_width)
from mesongs.synthetic import orbit_cameras, synthetic_cloud


class TestCloudValidation:
    def test_shapes_enforced(self):
        cloud = synthetic_cloud(10, seed=0)
        with pytest.raises(ValueError):
            GaussianCloud(positions=cloud.positions[:, :2],
                          rotations=cloud.rotations,
                          log_scales=cloud.log_scales,
                          opacity_logits=cloud.opacity_logits,
                          sh_dc=cloud.sh_dc, sh_rest=cloud.sh_rest, sh_degree=3)

    def test_sh_rest_width_by_degree(self):
        assert [sh_rest_width(d) for d in range(4)] == [0, 9, 24, 45]

    def test_wrong_sh_width_rejected(self):
        cloud = synthetic_cloud(5, seed=1)
        with pytest.raises(ValueError):
            GaussianCloud(positions=cloud.positions, rotations=cloud.rotations,
                          log_scales=cloud.log_scales,
                          opacity_logits=cloud.opacity_logits,
                          sh_dc=cloud.sh_dc, sh_rest=cloud.sh_rest[:, :10],
                          sh_degree=3)

    def test_non_unit_quaternion_rejected(self):
        cloud = synthetic_cloud(5, seed=2)
        rot = cloud.rotations.copy()
        rot[2] *= 1.5
        with pytest.raises(ValueError):
            GaussianCloud(positions=cloud.positions, rotations=rot,
                          log_scales=cloud.log_scales,
                          opacity_logits=cloud.opacity_logits,
                          sh_dc=cloud.sh_dc, sh_rest=cloud.sh_rest, sh_degree=3)

    def test_arrays_read_only(self):
        cloud = synthetic_cloud(4, seed=3)
        with pytest.raises(ValueError):
            cloud.positions[0, 0] = 9.9

    def test_take_subsets_rows(self):
        cloud = synthetic_cloud(20, seed=4)
        sub = cloud.take(np.array([3, 7, 11]))
        assert len(sub) == 3
        np.testing.assert_array_equal(sub.positions, cloud.positions[[3, 7, 11]])
        np.testing.assert_array_equal(sub.sh_rest, cloud.sh_rest[[3, 7, 11]])


class TestActivate:
    def test_opacity_sigmoid(self):
        cloud = synthetic_cloud(3, seed=5)
        object.__setattr__(cloud, "opacity_logits",
                           np.array([0.0, 100.0, -100.0]))
        _, opacity = activate(cloud)
        np.testing.assert_allclose(opacity, [0.5, 1.0, 0.0], atol=1e-12)

    def test_scales_exponential(self):
        cloud = synthetic_cloud(6, seed=6)
        scales, _ = activate(cloud)
        np.testing.assert_allclose(scales, np.exp(cloud.log_scales))


class TestPlyRoundTrip:
    def test_save_load_identity(self, tmp_path):
        cloud = synthetic_cloud(100, seed=7)
        path = tmp_path / "cloud.ply"
        save_ply(cloud, path)
        back = load_ply(path)
        np.testing.assert_array_equal(back.positions, cloud.positions)
        np.testing.assert_array_equal(back.rotations, cloud.rotations)
        np.testing.assert_array_equal(back.log_scales, cloud.log_scales)
        np.testing.assert_array_equal(back.opacity_logits, cloud.opacity_logits)
        np.testing.assert_array_equal(back.sh_dc, cloud.sh_dc)
        np.testing.assert_array_equal(back.sh_rest, cloud.sh_rest)
        assert back.sh_degree == cloud.sh_degree

    def test_load_save_bytes_identical(self, tmp_path):
        cloud = synthetic_cloud(60, seed=8)
        a, b = tmp_path / "a.ply", tmp_path / "b.ply"
        save_ply(cloud, a)
        save_ply(load_ply(a), b)
        assert a.read_bytes() == b.read_bytes()

    def test_reported_size_matches_file(self, tmp_path):
        cloud = synthetic_cloud(31, seed=9)
        path = tmp_path / "c.ply"
        save_ply(cloud, path)
        assert ply_nbytes(cloud) == path.stat().st_size

    def test_property_order_in_header(self, tmp_path):
        path = tmp_path / "d.ply"
        save_ply(synthetic_cloud(2, seed=10), path)
        header = path.read_bytes().split(b"end_header")[0].decode()
        names = [line.split()[-1] for line in header.splitlines()
                 if line.startswith("property")]
        expect = (["x", "y", "z"] + [f"f_dc_{i}" for i in range(3)]
                  + [f"f_rest_{i}" for i in range(45)] + ["opacity"]
                  + [f"scale_{i}" for i in range(3)]
                  + [f"rot_{i}" for i in range(4)])
        assert names == expect

    def test_extra_properties_ignored(self, tmp_path):
        cloud = synthetic_cloud(8, seed=11)
        path = tmp_path / "e.ply"
        save_ply(cloud, path)
        raw = path.read_bytes()
        header, body = raw.split(b"end_header\n", 1)
        n = len(cloud)
        rows = np.frombuffer(body, dtype="<f4").reshape(n, 59)
        with_normals = np.concatenate(
            [rows[:, :3], np.zeros((n, 3), dtype="<f4"), rows[:, 3:]], axis=1)
        lines = header.decode().splitlines()
        at = lines.index("property float z") + 1
        lines[at:at] = ["property float nx", "property float ny",
                        "property float nz"]
        path.write_bytes("\n".join(lines).encode() + b"\nend_header\n"
                         + with_normals.astype("<f4").tobytes())
        back = load_ply(path)
        np.testing.assert_array_equal(back.positions, cloud.positions)
        np.testing.assert_array_equal(back.sh_rest, cloud.sh_rest)

    def test_missing_property_named_in_error(self, tmp_path):
        cloud = synthetic_cloud(4, seed=12)
        path = tmp_path / "f.ply"
        save_ply(cloud, path)
        raw = path.read_bytes().replace(b"property float opacity\n", b"")
        path.write_bytes(raw)
        with pytest.raises(FormatError, match="missing property 'opacity'"):
            load_ply(path)

    def test_non_finite_reports_row(self, tmp_path):
        cloud = synthetic_cloud(10, seed=13)
        path = tmp_path / "g.ply"
        save_ply(cloud, path)
        raw = bytearray(path.read_bytes())
        header_len = raw.index(b"end_header\n") + len(b"end_header\n")
        # poison x of row 6
        start = header_len + 6 * 59 * 4
        raw[start:start + 4] = np.array([np.nan], dtype="<f4").tobytes()
        path.write_bytes(bytes(raw))
        with pytest.raises(DataError, match="6"):
            load_ply(path)

    def test_oversized_rotation_normalized(self, tmp_path):
        cloud = synthetic_cloud(3, seed=14)
        path = tmp_path / "h.ply"
        save_ply(cloud, path)
        raw = bytearray(path.read_bytes())
        header_len = raw.index(b"end_header\n") + len(b"end_header\n")
        rot_off = header_len + (0 * 59 + 55) * 4
        raw[rot_off:rot_off + 16] = np.array([2, 0, 0, 0], dtype="<f4").tobytes()
        path.write_bytes(bytes(raw))
        back = load_ply(path)
        np.testing.assert_allclose(back.rotations[0], [1, 0, 0, 0])

    def test_zero_rotation_rejected(self, tmp_path):
        cloud = synthetic_cloud(3, seed=15)
        path = tmp_path / "i.ply"
        save_ply(cloud, path)
        raw = bytearray(path.read_bytes())
        header_len = raw.index(b"end_header\n") + len(b"end_header\n")
        rot_off = header_len + (1 * 59 + 55) * 4
        raw[rot_off:rot_off + 16] = np.zeros(4, dtype="<f4").tobytes()
        path.write_bytes(bytes(raw))
        with pytest.raises(DataError):
            load_ply(path)

    def test_truncated_body_rejected(self, tmp_path):
        cloud = synthetic_cloud(5, seed=16)
        path = tmp_path / "j.ply"
        save_ply(cloud, path)
        path.write_bytes(path.read_bytes()[:-8])
        with pytest.raises(FormatError):
            load_ply(path)

    def test_ascii_ply_rejected(self, tmp_path):
        path = tmp_path / "k.ply"
        path.write_bytes(b"ply\nformat ascii 1.0\nelement vertex 0\nend_header\n")
        with pytest.raises(FormatError):
            load_ply(path)


class TestCamera:
    def test_position_inverts_extrinsics(self):
        cams = orbit_cameras(4)
        for cam in cams:
            # world-space camera center maps to the origin in camera space
            p = cam.rotation @ cam.position + cam.translation
            np.testing.assert_allclose(p, 0.0, atol=1e-12)

    def test_non_orthonormal_rotation_rejected(self):
        cam = orbit_cameras(1)[0]
        with pytest.raises(ValueError):
            Camera(width=cam.width, height=cam.height, fx=cam.fx, fy=cam.fy,
                   cx=cam.cx, cy=cam.cy, rotation=cam.rotation * 1.01,
                   translation=cam.translation)

    def test_json_round_trip(self, tmp_path):
        cams = orbit_cameras(5, width=32, height=24)
        path = tmp_path / "cameras.json"
        save_cameras(cams, path)
        back = load_cameras(path)
        assert len(back) == 5
        for a, b in zip(cams, back):
            assert (a.width, a.height) == (b.width, b.height)
            np.testing.assert_allclose(a.rotation, b.rotation)
            np.testing.assert_allclose(a.translation, b.translation)
            assert (a.fx, a.fy, a.cx, a.cy) == (b.fx, b.fy, b.cx, b.cy)
