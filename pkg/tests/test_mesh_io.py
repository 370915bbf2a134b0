import numpy as np
import pytest

from partseg.errors import EmptyMesh, ParseError
from partseg.geometry import SampledCloud, TriMesh
from partseg.mesh_io import (
    load_geometry,
    load_mesh,
    parse_mesh_bytes,
    save_labeled_cloud_ply,
    save_mesh_ply,
)


def write(tmp_path, name, text):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


class TestObj:
    def test_single_triangle(self, tmp_path):
        path = write(tmp_path, "t.obj", "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n")
        mesh = load_mesh(path)
        assert len(mesh.vertices) == 3 and mesh.n_faces == 1

    def test_quad_fan_triangulation(self, tmp_path):
        path = write(tmp_path, "q.obj",
                     "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n")
        mesh = load_mesh(path)
        assert mesh.n_faces == 2
        shared = set(mesh.faces[0]) & set(mesh.faces[1])
        assert len(shared) == 2   # the fan diagonal

    def test_cube_equal_areas_after_normalization(self, cube_obj):
        mesh = load_mesh(cube_obj)
        assert len(mesh.vertices) == 8 and mesh.n_faces == 12
        assert np.allclose(mesh.face_areas, 0.5)

    def test_slash_forms_and_comments(self, tmp_path):
        path = write(tmp_path, "s.obj",
                     "# comment\nvt 0 0\nvn 0 0 1\n"
                     "v 0 0 0\nv 1 0 0\nv 0 1 0\n"
                     "f 1/1/1 2/1/1 3//1\n")
        assert load_mesh(path).n_faces == 1

    def test_negative_indices(self, tmp_path):
        path = write(tmp_path, "n.obj", "v 0 0 0\nv 1 0 0\nv 0 1 0\nf -3 -2 -1\n")
        assert load_mesh(path).n_faces == 1

    def test_parse_error_bad_float(self, tmp_path):
        path = write(tmp_path, "bad.obj", "v 0 zero 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n")
        with pytest.raises(ParseError):
            load_mesh(path)

    def test_parse_error_index_out_of_range(self, tmp_path):
        path = write(tmp_path, "oob.obj", "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 9\n")
        with pytest.raises(ParseError):
            load_mesh(path)

    def test_empty_mesh(self, tmp_path):
        path = write(tmp_path, "pts.obj", "v 0 0 0\nv 1 0 0\n")
        with pytest.raises(EmptyMesh):
            load_mesh(path)


PLY_ASCII = """ply
format ascii 1.0
element vertex 4
property float x
property float y
property float z
element face 2
property list uchar int vertex_indices
end_header
0 0 0
1 0 0
1 1 0
0 1 0
3 0 1 2
4 0 1 2 3
"""


class TestPly:
    def test_ascii_with_fan(self, tmp_path):
        path = write(tmp_path, "a.ply", PLY_ASCII)
        mesh = load_mesh(path)
        assert len(mesh.vertices) == 4
        assert mesh.n_faces == 3   # one triangle + one fan-triangulated quad

    def test_binary_roundtrip(self, tmp_path):
        v = np.random.default_rng(0).uniform(-1, 1, (10, 3))
        f = [[0, 1, 2], [3, 4, 5], [6, 7, 8]]
        mesh = TriMesh.from_arrays(v, f, normalize=True)
        path = str(tmp_path / "m.ply")
        save_mesh_ply(path, mesh)
        back = load_mesh(path)
        assert back.n_faces == 3
        assert np.allclose(back.vertices, mesh.normalized().vertices, atol=1e-6)
        assert (back.faces == mesh.faces).all()

    def test_points_only_is_cloud(self, tmp_path):
        text = ("ply\nformat ascii 1.0\nelement vertex 3\n"
                "property float x\nproperty float y\nproperty float z\n"
                "end_header\n0 0 0\n1 0 0\n0 1 0\n")
        path = write(tmp_path, "c.ply", text)
        geo = load_geometry(path)
        assert isinstance(geo, SampledCloud)
        assert geo.n_points == 3
        assert (geo.normals == 0).all()
        with pytest.raises(EmptyMesh):
            load_mesh(path)

    def test_points_with_normals(self, tmp_path):
        text = ("ply\nformat ascii 1.0\nelement vertex 2\n"
                "property float x\nproperty float y\nproperty float z\n"
                "property float nx\nproperty float ny\nproperty float nz\n"
                "end_header\n0 0 0 0 0 2\n1 0 0 3 0 0\n")
        geo = load_geometry(write(tmp_path, "n.ply", text))
        assert np.allclose(np.linalg.norm(geo.normals, axis=1), 1.0)

    def test_labeled_cloud_roundtrip(self, tmp_path):
        pts = np.random.default_rng(1).uniform(-0.5, 0.5, (20, 3))
        labels = np.arange(20) % 4 + 1
        path = str(tmp_path / "l.ply")
        save_labeled_cloud_ply(path, pts, labels)
        raw = open(path, "rb").read()
        assert b"property uint label" in raw.split(b"end_header")[0]

    def test_unsupported_format(self, tmp_path):
        path = write(tmp_path, "b.ply",
                     "ply\nformat binary_big_endian 1.0\nelement vertex 0\nend_header\n")
        with pytest.raises(ParseError):
            load_mesh(path)


class TestUploadParsing:
    def test_obj_bytes(self):
        geo = parse_mesh_bytes(b"v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n", "model/obj")
        assert isinstance(geo, TriMesh)

    def test_ply_bytes(self):
        geo = parse_mesh_bytes(PLY_ASCII.encode(), "application/octet-stream")
        assert isinstance(geo, TriMesh) and geo.n_faces == 3

    def test_garbage_rejected(self):
        with pytest.raises((ParseError, EmptyMesh)):
            parse_mesh_bytes(b"\x00\x01\x02 garbage", "application/octet-stream")
