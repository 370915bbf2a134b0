"""Loading and writing ASCII OBJ and ASCII / binary little-endian PLY files."""

import os
import struct

import numpy as np

from .errors import EmptyMesh, ParseError
from .geometry import SampledCloud, TriMesh

_PLY_TYPES = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}


def _fan_triangulate(indices):
    """Split a polygon into a triangle fan anchored at its first vertex."""
    return [(indices[0], indices[i], indices[i + 1]) for i in range(1, len(indices) - 1)]


def _parse_obj(text):
    vertices = []
    triangles = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        tokens = line.split()
        tag = tokens[0]
        if tag == "v":
            if len(tokens) < 4:
                raise ParseError(f"line {lineno}: vertex needs 3 coordinates")
            try:
                vertices.append([float(t) for t in tokens[1:4]])
            except ValueError as exc:
                raise ParseError(f"line {lineno}: bad vertex coordinate") from exc
        elif tag == "f":
            if len(tokens) < 4:
                raise ParseError(f"line {lineno}: face needs at least 3 vertices")
            idx = []
            for tok in tokens[1:]:
                head = tok.split("/")[0]
                try:
                    i = int(head)
                except ValueError as exc:
                    raise ParseError(f"line {lineno}: bad face index {tok!r}") from exc
                # OBJ indices are 1-based; negative means relative to the end.
                i = i - 1 if i > 0 else len(vertices) + i
                if i < 0 or i >= len(vertices):
                    raise ParseError(f"line {lineno}: face index {tok!r} out of range")
                idx.append(i)
            triangles.extend(_fan_triangulate(idx))
        # vt / vn / usemtl / mtllib / o / g / s are ignored on purpose.
    return np.array(vertices, dtype=np.float64), np.array(triangles, dtype=np.int64).reshape(-1, 3)


def _parse_ply_header(data):
    end = data.find(b"end_header\n")
    if not data.startswith(b"ply") or end < 0:
        raise ParseError("not a PLY file")
    header = data[:end].decode("ascii", errors="replace").splitlines()
    body = data[end + len(b"end_header\n"):]
    fmt = None
    elements = []   # (name, count, [(prop_name, dtype) | (prop_name, count_t, item_t)])
    for line in header[1:]:
        tokens = line.split()
        if not tokens or tokens[0] == "comment":
            continue
        if tokens[0] == "format":
            if tokens[1] not in ("ascii", "binary_little_endian"):
                raise ParseError(f"unsupported PLY format {tokens[1]!r}")
            fmt = tokens[1]
        elif tokens[0] == "element":
            elements.append((tokens[1], int(tokens[2]), []))
        elif tokens[0] == "property":
            if not elements:
                raise ParseError("property before any element")
            if tokens[1] == "list":
                elements[-1][2].append((tokens[4], _PLY_TYPES[tokens[2]], _PLY_TYPES[tokens[3]]))
            else:
                elements[-1][2].append((tokens[2], _PLY_TYPES[tokens[1]]))
    if fmt is None:
        raise ParseError("PLY header has no format line")
    return fmt, elements, body


def _read_ply_ascii(elements, body):
    tokens = body.decode("ascii", errors="replace").split()
    pos = 0
    out = {}
    for name, count, props in elements:
        rows = []
        for _ in range(count):
            row = {}
            for prop in props:
                if len(prop) == 3:
                    n = int(tokens[pos]); pos += 1
                    row[prop[0]] = [float(tokens[pos + i]) for i in range(n)]
                    pos += n
                else:
                    row[prop[0]] = float(tokens[pos]); pos += 1
            rows.append(row)
        out[name] = rows
    return out


def _read_ply_binary(elements, body):
    out = {}
    offset = 0
    for name, count, props in elements:
        rows = []
        fixed = all(len(p) == 2 for p in props)
        if fixed and count:
            dt = np.dtype([(p[0], "<" + p[1]) for p in props])
            arr = np.frombuffer(body, dtype=dt, count=count, offset=offset)
            offset += dt.itemsize * count
            rows = arr
        else:
            for _ in range(count):
                row = {}
                for prop in props:
                    if len(prop) == 3:
                        cnt_t = np.dtype("<" + prop[1])
                        n = int(np.frombuffer(body, cnt_t, 1, offset)[0])
                        offset += cnt_t.itemsize
                        item_t = np.dtype("<" + prop[2])
                        row[prop[0]] = np.frombuffer(body, item_t, n, offset).tolist()
                        offset += item_t.itemsize * n
                    else:
                        dt = np.dtype("<" + prop[1])
                        row[prop[0]] = float(np.frombuffer(body, dt, 1, offset)[0])
                        offset += dt.itemsize
                rows.append(row)
        out[name] = rows
    return out


def _parse_ply(data):
    fmt, elements, body = _parse_ply_header(data)
    try:
        table = _read_ply_ascii(elements, body) if fmt == "ascii" else _read_ply_binary(elements, body)
    except (IndexError, ValueError, KeyError) as exc:
        raise ParseError(f"malformed PLY body: {exc}") from exc

    names = [e[0] for e in elements]
    if "vertex" not in names:
        raise ParseError("PLY has no vertex element")
    vrows = table["vertex"]
    if isinstance(vrows, np.ndarray):
        vertices = np.stack([vrows["x"], vrows["y"], vrows["z"]], axis=1).astype(np.float64)
        normals = None
        if "nx" in vrows.dtype.names:
            normals = np.stack([vrows["nx"], vrows["ny"], vrows["nz"]], axis=1).astype(np.float64)
    else:
        vertices = np.array([[r["x"], r["y"], r["z"]] for r in vrows], dtype=np.float64)
        normals = None
        if vrows and "nx" in vrows[0]:
            normals = np.array([[r["nx"], r["ny"], r["nz"]] for r in vrows], dtype=np.float64)

    triangles = []
    for key in ("face",):
        if key in table:
            for row in table[key]:
                idx = [int(i) for i in (row.get("vertex_indices") or row.get("vertex_index") or [])]
                if len(idx) < 3:
                    raise ParseError("face with fewer than 3 vertices")
                triangles.extend(_fan_triangulate(idx))
    faces = np.array(triangles, dtype=np.int64).reshape(-1, 3)
    return vertices, faces, normals


def _sniff_format(path, data):
    ext = os.path.splitext(path)[1].lower()
    if ext == ".obj":
        return "obj"
    if ext == ".ply" or data.startswith(b"ply"):
        return "ply"
    if ext == "":
        return "ply" if data.startswith(b"ply") else "obj"
    raise ParseError(f"cannot tell the format of {path!r}")


def load_geometry(path, format=None):
    """Load a mesh or a bare point cloud, normalized to the unit cube.

    Returns a TriMesh when the file has faces, otherwise a SampledCloud
    (PLY vertex-only input). Normals in faceless PLY files are kept if
    present, zeros otherwise.
    """
    with open(path, "rb") as fh:
        data = fh.read()
    format = format or _sniff_format(path, data)
    if format == "obj":
        try:
            text = data.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ParseError("OBJ file is not valid text") from exc
        vertices, faces, normals = *_parse_obj(text), None
    elif format == "ply":
        vertices, faces, normals = _parse_ply(data)
    else:
        raise ParseError(f"unknown format {format!r}")

    if len(vertices) == 0:
        raise EmptyMesh(f"{path}: no vertices")
    if len(faces) == 0:
        from .geometry import normalize_to_unit_cube
        points = normalize_to_unit_cube(vertices)
        if normals is None:
            normals = np.zeros_like(points)
        else:
            length = np.linalg.norm(normals, axis=1, keepdims=True)
            normals = np.where(length > 0, normals / np.maximum(length, 1e-30), 0.0)
        return SampledCloud(points, normals)
    return TriMesh.from_arrays(vertices, faces, normalize=True)


def load_mesh(path, format=None):
    """Load a triangle mesh; raises EmptyMesh when the file has no faces."""
    geo = load_geometry(path, format=format)
    if isinstance(geo, SampledCloud):
        raise EmptyMesh(f"{path}: no faces")
    return geo


def save_mesh_ply(path, mesh):
    """Write a TriMesh as binary little-endian PLY."""
    n_v, n_f = len(mesh.vertices), len(mesh.faces)
    header = (
        "ply\nformat binary_little_endian 1.0\n"
        f"element vertex {n_v}\n"
        "property float x\nproperty float y\nproperty float z\n"
        f"element face {n_f}\n"
        "property list uchar int vertex_indices\n"
        "end_header\n"
    )
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(mesh.vertices.astype("<f4").tobytes())
        face_dt = np.dtype([("n", "u1"), ("idx", "<i4", 3)])
        rec = np.empty(n_f, dtype=face_dt)
        rec["n"] = 3
        rec["idx"] = mesh.faces.astype("<i4")
        fh.write(rec.tobytes())


def save_labeled_cloud_ply(path, points, labels):
    """Write points with a per-point uint label property (binary LE PLY)."""
    points = np.asarray(points, dtype=np.float64)
    labels = np.asarray(labels)
    header = (
        "ply\nformat binary_little_endian 1.0\n"
        f"element vertex {len(points)}\n"
        "property float x\nproperty float y\nproperty float z\n"
        "property uint label\n"
        "end_header\n"
    )
    dt = np.dtype([("x", "<f4"), ("y", "<f4"), ("z", "<f4"), ("label", "<u4")])
    rec = np.empty(len(points), dtype=dt)
    rec["x"], rec["y"], rec["z"] = points[:, 0], points[:, 1], points[:, 2]
    rec["label"] = labels.astype("<u4")
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(rec.tobytes())


def parse_mesh_bytes(data, content_type=None):
    """Parse an in-memory OBJ or PLY payload (used by the HTTP upload route)."""
    ct = (content_type or "").lower()
    if data.startswith(b"ply"):
        fmt = "ply"
    elif "obj" in ct or "text" in ct:
        fmt = "obj"
    else:
        fmt = "obj"   # last resort: OBJ is the only text format we accept
    if fmt == "obj":
        try:
            vertices, faces = _parse_obj(data.decode("utf-8"))
            normals = None
        except UnicodeDecodeError as exc:
            raise ParseError("body is neither PLY nor text OBJ") from exc
    else:
        vertices, faces, normals = _parse_ply(data)
    if len(vertices) == 0:
        raise EmptyMesh("no vertices in upload")
    if len(faces) == 0:
        from .geometry import normalize_to_unit_cube
        points = normalize_to_unit_cube(vertices)
        if normals is None:
            normals = np.zeros_like(points)
        return SampledCloud(points, normals)
    return TriMesh.from_arrays(vertices, faces, normalize=True)
