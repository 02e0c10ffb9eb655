"""Triangle meshes: box clipping, welding, stitching, and PLY/OBJ files.

Region surfaces are cut back to their unexpanded partition boxes with a
polygon clipper, concatenated, and welded so that coincident boundary
vertices (guaranteed by the shared voxel lattice) merge exactly.  The
PLY writer emits binary little-endian files with float32 positions and
uint32 triangle indices; the reader also accepts ascii files and
face-less point clouds.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    DimensionMismatch,
    InvalidValue,
    IoFailure,
    MalformedLine,
    MissingFile,
)
from .partition import SceneBounds


@dataclass
class Mesh:
    """Indexed triangle surface with optional per-vertex normals."""

    vertices: np.ndarray  # (n, 3) float64
    faces: np.ndarray  # (m, 3) int64
    normals: np.ndarray | None = None

    def __post_init__(self) -> None:
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if self.faces.size:
            if self.faces.min() < 0 or self.faces.max() >= len(self.vertices):
                raise InvalidValue("face index out of range")
        if self.normals is not None:
            self.normals = np.asarray(self.normals, dtype=np.float64).reshape(-1, 3)
            if self.normals.shape != self.vertices.shape:
                raise DimensionMismatch("normal count differs from vertex count")

    @classmethod
    def empty(cls) -> "Mesh":
        return cls(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))

    @property
    def num_vertices(self) -> int:
        return len(self.vertices)

    @property
    def num_faces(self) -> int:
        return len(self.faces)

    def triangle_areas(self) -> np.ndarray:
        a, b, c = (self.vertices[self.faces[:, i]] for i in range(3))
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)


def _compact(
    vertices: np.ndarray, faces: np.ndarray, normals: np.ndarray | None
) -> Mesh:
    """Drop vertices no face references, preserving first-use order."""
    if not len(faces):
        return Mesh(np.zeros((0, 3)), faces.reshape(-1, 3))
    used, inverse = np.unique(faces.reshape(-1), return_inverse=True)
    return Mesh(
        vertices[used],
        inverse.reshape(-1, 3),
        None if normals is None else normals[used],
    )


def _clip_polygon(points, normals, axis: int, value: float, keep_upper: bool):
    """One Sutherland-Hodgman pass against an axis-aligned plane.

    Keeps coordinate >= value when keep_upper, else <= value; boundary
    points count as inside so shared cut edges reproduce exactly.
    """
    out_p: list[np.ndarray] = []
    out_n: list[np.ndarray] = []
    count = len(points)
    for i in range(count):
        a, b = points[i], points[(i + 1) % count]
        da = a[axis] - value
        db = b[axis] - value
        if not keep_upper:
            da, db = -da, -db
        if da >= 0.0:
            out_p.append(a)
            if normals is not None:
                out_n.append(normals[i])
        if (da >= 0.0) != (db >= 0.0):
            t = da / (da - db)
            cut = a + t * (b - a)
            cut[axis] = value  # exactly on the plane, so re-clipping is a no-op
            out_p.append(cut)
            if normals is not None:
                blend = normals[i] + t * (normals[(i + 1) % count] - normals[i])
                norm = np.linalg.norm(blend)
                out_n.append(blend / norm if norm > 0 else normals[i])
    return out_p, (out_n if normals is not None else None)


def clip_mesh_to_bounds(mesh: Mesh, bounds: SceneBounds) -> Mesh:
    """Cut the mesh to a closed axis-aligned box.

    Fully inside faces pass through untouched; straddling triangles are
    clipped plane by plane and fan-triangulated; outside faces drop.
    """
    if not mesh.num_faces:
        return Mesh.empty()
    verts = mesh.vertices
    inside = bounds.contains(verts)
    face_inside = inside[mesh.faces]
    keep_whole = face_inside.all(axis=1)

    planes = []
    for axis in range(3):
        planes.append((axis, float(bounds.min_corner[axis]), True))
        planes.append((axis, float(bounds.max_corner[axis]), False))

    # Straddlers are rare (only triangles touching the six box planes).
    new_vertices = [verts[f] for f in mesh.faces[keep_whole]]
    out_faces = []
    out_normals = [] if mesh.normals is not None else None
    offset = 0
    for tri in mesh.faces[keep_whole]:
        out_faces.append([offset, offset + 1, offset + 2])
        if out_normals is not None:
            out_normals.extend(mesh.normals[tri])
        offset += 3
    new_vertices = [v for f in new_vertices for v in f]

    for tri in mesh.faces[~keep_whole]:
        poly = [verts[i] for i in tri]
        poly_n = [mesh.normals[i] for i in tri] if mesh.normals is not None else None
        for axis, value, keep_upper in planes:
            poly, poly_n = _clip_polygon(poly, poly_n, axis, value, keep_upper)
            if len(poly) < 3:
                break
        if len(poly) < 3:
            continue
        base = offset
        new_vertices.extend(poly)
        if out_normals is not None:
            out_normals.extend(poly_n)
        offset += len(poly)
        for k in range(1, len(poly) - 1):
            out_faces.append([base, base + k, base + k + 1])

    if not out_faces:
        return Mesh.empty()
    clipped = Mesh(
        np.array(new_vertices),
        np.array(out_faces, dtype=np.int64),
        np.array(out_normals) if out_normals is not None else None,
    )
    # Duplicate-free vertex table: exact-coincidence weld (tolerance 0
    # buckets) restores shared edges split by the per-face expansion.
    return weld_vertices(clipped, tol=0.0)


def remove_degenerate_faces(mesh: Mesh) -> Mesh:
    """Drop faces with repeated indices or exactly zero area."""
    if not mesh.num_faces:
        return mesh
    f = mesh.faces
    distinct = (f[:, 0] != f[:, 1]) & (f[:, 1] != f[:, 2]) & (f[:, 0] != f[:, 2])
    keep = distinct & (mesh.triangle_areas() > 0.0)
    return _compact(mesh.vertices, f[keep], mesh.normals)


def weld_vertices(mesh: Mesh, tol: float) -> Mesh:
    """Merge vertices whose tol-quantized positions coincide.

    tol = 0 merges exactly coincident vertices only.  Faces collapsing
    to fewer than three distinct vertices are removed, as are duplicate
    faces over the same vertex triple (first occurrence wins).
    """
    if not mesh.num_vertices:
        return mesh
    if tol > 0.0:
        keys = np.round(mesh.vertices / tol).astype(np.int64)
    else:
        keys = mesh.vertices
    _, first, inverse = np.unique(
        keys, axis=0, return_index=True, return_inverse=True
    )
    vertices = mesh.vertices[first]
    normals = mesh.normals[first] if mesh.normals is not None else None
    faces = inverse.reshape(-1)[mesh.faces] if mesh.num_faces else mesh.faces

    if len(faces):
        distinct = (
            (faces[:, 0] != faces[:, 1])
            & (faces[:, 1] != faces[:, 2])
            & (faces[:, 0] != faces[:, 2])
        )
        faces = faces[distinct]
    if len(faces):
        unordered = np.sort(faces, axis=1)
        _, keep_idx = np.unique(unordered, axis=0, return_index=True)
        faces = faces[np.sort(keep_idx)]
    return _compact(vertices, faces, normals)


def concatenate_meshes(meshes) -> Mesh:
    """Stack meshes into one, offsetting face indices."""
    meshes = [m for m in meshes if m.num_vertices]
    if not meshes:
        return Mesh.empty()
    offsets = np.cumsum([0] + [m.num_vertices for m in meshes[:-1]])
    vertices = np.concatenate([m.vertices for m in meshes])
    faces = np.concatenate(
        [m.faces + off for m, off in zip(meshes, offsets)]
    )
    if all(m.normals is not None for m in meshes):
        normals = np.concatenate([m.normals for m in meshes])
    else:
        normals = None
    return Mesh(vertices, faces, normals)


def crop_and_stitch(pairs, weld_tol: float) -> Mesh:
    """Clip each (mesh, bounds) pair to its box and weld the union.

    Adjacent boxes tiling space produce exactly coincident cut vertices,
    so the weld closes every seam; duplicate coincident faces (geometry
    lying exactly in a shared boundary plane) collapse to one.
    """
    clipped = [clip_mesh_to_bounds(mesh, bounds) for mesh, bounds in pairs]
    stitched = weld_vertices(concatenate_meshes(clipped), weld_tol)
    return remove_degenerate_faces(stitched)


# ---------------------------------------------------------------------------
# File formats


def write_ply(mesh: Mesh, path: Path | str) -> None:
    """Binary little-endian PLY: float32 positions, uint32 face indices."""
    path = Path(path)
    header = ["ply", "format binary_little_endian 1.0"]
    header.append(f"element vertex {mesh.num_vertices}")
    header += ["property float x", "property float y", "property float z"]
    if mesh.normals is not None:
        header += ["property float nx", "property float ny", "property float nz"]
    header.append(f"element face {mesh.num_faces}")
    header.append("property list uchar uint vertex_indices")
    header.append("end_header")
    if mesh.normals is not None:
        vertex_data = np.hstack([mesh.vertices, mesh.normals]).astype("<f4")
    else:
        vertex_data = mesh.vertices.astype("<f4")
    face_data = np.empty(
        mesh.num_faces, dtype=[("count", "u1"), ("index", "<u4", (3,))]
    )
    face_data["count"] = 3
    face_data["index"] = mesh.faces.astype(np.uint32)
    try:
        with open(path, "wb") as fid:
            fid.write(("\n".join(header) + "\n").encode("ascii"))
            fid.write(vertex_data.tobytes())
            fid.write(face_data.tobytes())
    except OSError as exc:
        raise IoFailure(f"cannot write PLY {path}: {exc}") from exc


_PLY_SCALARS = {
    "char": "i1",
    "uchar": "u1",
    "short": "i2",
    "ushort": "u2",
    "int": "i4",
    "uint": "u4",
    "float": "f4",
    "double": "f8",
    "int8": "i1",
    "uint8": "u1",
    "int16": "i2",
    "uint16": "u2",
    "int32": "i4",
    "uint32": "u4",
    "float32": "f4",
    "float64": "f8",
}


def _parse_ply_header(path: Path):
    lines = []
    with open(path, "rb") as fid:
        while True:
            raw = fid.readline()
            if not raw:
                raise MalformedLine(str(path), len(lines) + 1, "missing end_header")
            lines.append(raw.decode("ascii", errors="replace").strip())
            if lines[-1] == "end_header":
                break
        body_offset = fid.tell()
    if not lines or lines[0] != "ply":
        raise MalformedLine(str(path), 1, "not a PLY file")
    fmt = None
    elements = []  # (name, count, [(prop_name, scalar) or (prop_name, list, count_t, val_t)])
    for line_no, line in enumerate(lines[1:], start=2):
        parts = line.split()
        if not parts or parts[0] == "comment":
            continue
        if parts[0] == "format":
            fmt = parts[1]
        elif parts[0] == "element":
            elements.append((parts[1], int(parts[2]), []))
        elif parts[0] == "property":
            if not elements:
                raise MalformedLine(str(path), line_no, "property before element")
            if parts[1] == "list":
                elements[-1][2].append((parts[4], "list", parts[2], parts[3]))
            else:
                elements[-1][2].append((parts[2], parts[1]))
        elif parts[0] == "end_header":
            break
    if fmt not in ("ascii", "binary_little_endian"):
        raise MalformedLine(str(path), 2, f"unsupported PLY format {fmt!r}")
    return fmt, elements, body_offset


def read_ply(path: Path | str) -> Mesh:
    """Read a PLY mesh or point cloud (no face element means no faces).

    Accepts binary little-endian and ascii files; faces must be
    triangles.  Vertex properties beyond x/y/z and nx/ny/nz are ignored.
    """
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"no such PLY file: {path}")
    fmt, elements, body_offset = _parse_ply_header(path)
    try:
        with open(path, "rb") as fid:
            fid.seek(body_offset)
            columns = {}
            faces = np.zeros((0, 3), dtype=np.int64)
            for name, count, props in elements:
                if fmt == "ascii":
                    table, face_rows = _read_ply_ascii_element(fid, count, props)
                else:
                    table, face_rows = _read_ply_binary_element(
                        fid, path, count, props
                    )
                if name == "vertex":
                    columns = table
                elif name == "face" and face_rows is not None:
                    faces = face_rows
    except OSError as exc:
        raise IoFailure(f"cannot read PLY {path}: {exc}") from exc
    for key in ("x", "y", "z"):
        if key not in columns:
            raise MalformedLine(str(path), 1, f"vertex element lacks {key}")
    vertices = np.stack([columns["x"], columns["y"], columns["z"]], axis=1)
    normals = None
    if all(k in columns for k in ("nx", "ny", "nz")):
        normals = np.stack([columns["nx"], columns["ny"], columns["nz"]], axis=1)
    return Mesh(vertices.astype(np.float64), faces, normals)


def _read_ply_binary_element(fid, path: Path, count: int, props):
    list_props = [p for p in props if len(p) == 4]
    if not list_props:
        dtype = np.dtype([(p[0], "<" + _PLY_SCALARS[p[1]]) for p in props])
        data = fid.read(dtype.itemsize * count)
        if len(data) != dtype.itemsize * count:
            raise MalformedLine(str(path), 0, "truncated element data")
        table = np.frombuffer(data, dtype=dtype)
        return {p[0]: table[p[0]].astype(np.float64) for p in props}, None
    if len(props) != 1:
        raise MalformedLine(str(path), 0, "mixed list/scalar element unsupported")
    _, _, count_t, value_t = list_props[0]
    count_dt = np.dtype("<" + _PLY_SCALARS[count_t])
    value_dt = np.dtype("<" + _PLY_SCALARS[value_t])
    rows = np.empty((count, 3), dtype=np.int64)
    for i in range(count):
        raw = fid.read(count_dt.itemsize)
        if len(raw) != count_dt.itemsize:
            raise MalformedLine(str(path), 0, "truncated face record")
        n = int(np.frombuffer(raw, dtype=count_dt)[0])
        if n != 3:
            raise InvalidValue(f"non-triangular face with {n} vertices")
        raw = fid.read(value_dt.itemsize * 3)
        if len(raw) != value_dt.itemsize * 3:
            raise MalformedLine(str(path), 0, "truncated face record")
        rows[i] = np.frombuffer(raw, dtype=value_dt).astype(np.int64)
    return {}, rows


def _read_ply_ascii_element(fid, count: int, props):
    list_props = [p for p in props if len(p) == 4]
    scalar_names = [p[0] for p in props if len(p) == 2]
    table: dict[str, list[float]] = {n: [] for n in scalar_names}
    rows = [] if list_props else None
    for _ in range(count):
        parts = fid.readline().decode("ascii").split()
        if list_props:
            n = int(parts[0])
            if n != 3:
                raise InvalidValue(f"non-triangular face with {n} vertices")
            rows.append([int(x) for x in parts[1 : 1 + n]])
        else:
            for name, value in zip(scalar_names, parts):
                table[name].append(float(value))
    out = {n: np.array(v, dtype=np.float64) for n, v in table.items()}
    faces = np.array(rows, dtype=np.int64).reshape(-1, 3) if rows is not None else None
    return out, faces


def write_obj(mesh: Mesh, path: Path | str) -> None:
    """Wavefront OBJ with 1-based indices; normals written when present."""
    path = Path(path)
    try:
        with open(path, "w", encoding="ascii") as fid:
            for v in mesh.vertices:
                fid.write(f"v {v[0]:.9g} {v[1]:.9g} {v[2]:.9g}\n")
            if mesh.normals is not None:
                for n in mesh.normals:
                    fid.write(f"vn {n[0]:.9g} {n[1]:.9g} {n[2]:.9g}\n")
                for f in mesh.faces + 1:
                    fid.write(
                        f"f {f[0]}//{f[0]} {f[1]}//{f[1]} {f[2]}//{f[2]}\n"
                    )
            else:
                for f in mesh.faces + 1:
                    fid.write(f"f {f[0]} {f[1]} {f[2]}\n")
    except OSError as exc:
        raise IoFailure(f"cannot write OBJ {path}: {exc}") from exc
