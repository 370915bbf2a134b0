import numpy as np
import pytest

from partseg.geometry import TriMesh

# Filled by test_acceptance.py; printed as a per-criterion summary at the end.
ACCEPTANCE_RESULTS = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_RESULTS:
        terminalreporter.write_sep("=", "acceptance criteria")
        for name, passed, detail in ACCEPTANCE_RESULTS:
            status = "PASS" if passed else "FAIL"
            terminalreporter.write_line(f"[{status}] {name}: {detail}")


def make_box(center, half=0.1, half_extents=None):
    """Axis-aligned box mesh (12 triangles) for fixtures."""
    h = np.asarray(half_extents if half_extents is not None else [half] * 3, dtype=float)
    c = np.asarray(center, dtype=float)
    v = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)]) * h + c
    f = np.array([
        [0, 1, 3], [0, 3, 2], [4, 6, 7], [4, 7, 5],
        [0, 4, 5], [0, 5, 1], [2, 3, 7], [2, 7, 6],
        [0, 2, 6], [0, 6, 4], [1, 5, 7], [1, 7, 3],
    ])
    return v, f


def merge_meshes(*parts):
    """Concatenate (V, F) pairs into one TriMesh plus per-face source index."""
    verts, faces, src = [], [], []
    offset = 0
    for i, (v, f) in enumerate(parts):
        verts.append(v)
        faces.append(np.asarray(f) + offset)
        src.append(np.full(len(f), i))
        offset += len(v)
    mesh = TriMesh.from_arrays(np.concatenate(verts), np.concatenate(faces))
    return mesh, np.concatenate(src)


@pytest.fixture
def cube_obj(tmp_path):
    path = tmp_path / "cube.obj"
    v, f = make_box([0, 0, 0], half=0.5)
    lines = [f"v {x} {y} {z}" for x, y, z in v]
    lines += [f"f {a+1} {b+1} {c+1}" for a, b, c in f]
    path.write_text("\n".join(lines) + "\n")
    return str(path)
