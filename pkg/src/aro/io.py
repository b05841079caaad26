"""ASCII mesh and point-cloud readers/writers (OBJ, XYZ, PLY)."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .geometry import PointCloud, TriMesh, is_edge_manifold


def _finite(arr: np.ndarray, path) -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{path}: non-finite coordinate (NaN/Inf) rejected")
    return arr


def read_obj(path, watertight: bool | None = None) -> TriMesh:
    """Read ``v``/``f`` records; faces with more than three corners are fanned.

    ``watertight=None`` declares the flag from an edge-manifold check.
    """
    verts, faces = [], []
    with open(path, "r", encoding="ascii") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "v":
                if len(parts) < 4:
                    raise ValueError(f"{path}:{lineno}: vertex needs three coordinates")
                verts.append([float(x) for x in parts[1:4]])
            elif parts[0] == "f":
                idx = []
                for tok in parts[1:]:
                    i = int(tok.split("/")[0])
                    idx.append(i - 1 if i > 0 else len(verts) + i)
                if len(idx) < 3:
                    raise ValueError(f"{path}:{lineno}: face needs at least three vertices")
                for j in range(1, len(idx) - 1):
                    faces.append([idx[0], idx[j], idx[j + 1]])
    v = _finite(np.array(verts, dtype=float).reshape(-1, 3), path)
    f = np.array(faces, dtype=np.int64).reshape(-1, 3)
    if watertight is None:
        watertight = len(f) > 0 and is_edge_manifold(f)
    return TriMesh(v, f, watertight)


def write_obj(path, mesh: TriMesh) -> None:
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        for v in mesh.vertices:
            fh.write(f"v {v[0]:.17g} {v[1]:.17g} {v[2]:.17g}\n")
        for t in mesh.triangles:
            fh.write(f"f {t[0] + 1} {t[1] + 1} {t[2] + 1}\n")


def read_xyz(path) -> PointCloud:
    rows = []
    with open(path, "r", encoding="ascii") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            if len(parts) < 3:
                raise ValueError(f"{path}:{lineno}: expected three coordinates")
            rows.append([float(x) for x in parts[:3]])
    return PointCloud(_finite(np.array(rows, dtype=float).reshape(-1, 3), path))


def write_xyz(path, points) -> None:
    pts = points.points if isinstance(points, PointCloud) else np.asarray(points, float)
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        for p in pts:
            fh.write(" ".join(f"{c:.17g}" for c in p) + "\n")


def read_ply(path) -> PointCloud:
    """ASCII PLY, vertex element only; extra vertex properties are ignored."""
    with open(path, "r", encoding="ascii") as fh:
        if fh.readline().strip() != "ply":
            raise ValueError(f"{path}: not a PLY file")
        n_vertex, props, in_vertex = None, [], False
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "format" and parts[1] != "ascii":
                raise ValueError(f"{path}: only ASCII PLY is supported")
            if parts[0] == "element":
                in_vertex = parts[1] == "vertex"
                if in_vertex:
                    n_vertex = int(parts[2])
            elif parts[0] == "property" and in_vertex:
                props.append(parts[-1])
            elif parts[0] == "end_header":
                break
        if n_vertex is None:
            raise ValueError(f"{path}: missing vertex element")
        try:
            cols = [props.index(c) for c in ("x", "y", "z")]
        except ValueError:
            raise ValueError(f"{path}: vertex element lacks x/y/z properties") from None
        rows = []
        for _ in range(n_vertex):
            parts = fh.readline().split()
            rows.append([float(parts[c]) for c in cols])
    return PointCloud(_finite(np.array(rows, dtype=float).reshape(-1, 3), path))


def write_ply(path, points) -> None:
    pts = points.points if isinstance(points, PointCloud) else np.asarray(points, float)
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(f"ply\nformat ascii 1.0\nelement vertex {len(pts)}\n")
        fh.write("property double x\nproperty double y\nproperty double z\nend_header\n")
        for p in pts:
            fh.write(" ".join(f"{c:.17g}" for c in p) + "\n")


def read_cloud(path) -> PointCloud:
    """Dispatch on extension: ``.ply`` or anything else as XYZ."""
    return read_ply(path) if Path(path).suffix.lower() == ".ply" else read_xyz(path)
