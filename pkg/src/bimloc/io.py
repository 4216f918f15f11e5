"""Readers and writers for meshes, box manifests, PLY clouds, scan logs and TUM trajectories."""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.spatial.transform import Rotation

from .geometry import Pose, SemanticPointCloud
from .mapping import CategoryTable, LabeledBox, TriangleMesh

SCAN_LOG_MAGIC = b"SLSCAN1"


class FormatError(ValueError):
    """Malformed input file. ``location`` is a line number or byte offset description."""

    def __init__(self, path, location, message):
        self.path = str(path)
        self.location = location
        super().__init__(f"{path}:{location}: {message}")


# --------------------------------------------------------------------- OBJ

_OBJ_IGNORED = {"vn", "vt", "vp", "o", "g", "s", "usemtl", "mtllib", "l"}


def read_obj(path) -> TriangleMesh:
    """Triangulated Wavefront OBJ (``v`` and ``f`` records)."""
    verts: list[list[float]] = []
    faces: list[list[int]] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            tag, *rest = line.split()
            if tag == "v":
                if len(rest) < 3:
                    raise FormatError(path, f"line {lineno}", "vertex needs 3 coordinates")
                try:
                    verts.append([float(x) for x in rest[:3]])
                except ValueError:
                    raise FormatError(path, f"line {lineno}", "bad vertex coordinate") from None
            elif tag == "f":
                if len(rest) != 3:
                    raise FormatError(path, f"line {lineno}", f"face has {len(rest)} vertices, only triangles are accepted")
                idx = []
                for tok in rest:
                    try:
                        i = int(tok.split("/")[0])
                    except ValueError:
                        raise FormatError(path, f"line {lineno}", f"bad face index {tok!r}") from None
                    i = i - 1 if i > 0 else len(verts) + i
                    if not 0 <= i < len(verts):
                        raise FormatError(path, f"line {lineno}", f"face index {tok} out of range")
                    idx.append(i)
                faces.append(idx)
            elif tag not in _OBJ_IGNORED:
                raise FormatError(path, f"line {lineno}", f"unsupported record {tag!r}")
    if not faces:
        raise FormatError(path, "end", "no triangles")
    return TriangleMesh(np.array(verts, dtype=float), np.array(faces, dtype=np.int64))


def write_obj(path, mesh: TriangleMesh) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for v in mesh.vertices:
            fh.write(f"v {v[0]:.9g} {v[1]:.9g} {v[2]:.9g}\n")
        for t in mesh.triangles:
            fh.write(f"f {t[0] + 1} {t[1] + 1} {t[2] + 1}\n")


# ------------------------------------------------------------ box manifest


def parse_box_manifest(entries, source="<manifest>", table: CategoryTable | None = None):
    if not isinstance(entries, list):
        raise FormatError(source, "root", "manifest must be a JSON array")
    if not entries:
        raise FormatError(source, "root", "empty box list")
    table = table if table is not None else CategoryTable()
    boxes, seen = [], set()
    for i, e in enumerate(entries):
        where = f"entry {i}"
        try:
            box_id, cat, lo, hi = str(e["id"]), e["category"], e["min"], e["max"]
        except (KeyError, TypeError):
            raise FormatError(source, where, "expected keys id, category, min, max") from None
        if box_id in seen:
            raise FormatError(source, where, f"duplicate box id {box_id!r}")
        seen.add(box_id)
        try:
            boxes.append(LabeledBox(box_id, table.add(str(cat)), lo, hi))
        except ValueError as exc:
            raise FormatError(source, where, str(exc)) from None
    return boxes, table


def read_box_manifest(path, table: CategoryTable | None = None):
    """JSON array of ``{"id", "category", "min": [x,y,z], "max": [x,y,z]}``.

    Returns ``(boxes, table)``; categories are numbered in order of first
    appearance unless an existing table is supplied.
    """
    try:
        with open(path, "r", encoding="utf-8") as fh:
            entries = json.load(fh)
    except json.JSONDecodeError as exc:
        raise FormatError(path, f"line {exc.lineno} col {exc.colno}", exc.msg) from None
    return parse_box_manifest(entries, path, table)


def write_box_manifest(path, boxes: Sequence[LabeledBox], table: CategoryTable) -> None:
    entries = [
        {"id": b.id, "category": table.name(b.category), "min": b.min_corner.tolist(), "max": b.max_corner.tolist()}
        for b in boxes
    ]
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(entries, fh, indent=1)


# --------------------------------------------------------------------- PLY

_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}


def _ply_header(n: int, props: Sequence[tuple[str, str]], comments: Iterable[str]) -> bytes:
    lines = ["ply", "format binary_little_endian 1.0"]
    lines += [f"comment {c}" for c in comments]
    lines.append(f"element vertex {n}")
    lines += [f"property {t} {name}" for name, t in props]
    lines.append("end_header")
    return ("\n".join(lines) + "\n").encode("ascii")


def write_ply(path, cloud: SemanticPointCloud, table: CategoryTable | None = None, comments: Iterable[str] = ()) -> None:
    """Binary little-endian PLY. Normals and labels are written when present."""
    props = [("x", "float"), ("y", "float"), ("z", "float")]
    if cloud.normals is not None:
        props += [("nx", "float"), ("ny", "float"), ("nz", "float")]
    if cloud.labels is not None:
        props.append(("label", "ushort"))
    comments = list(comments)
    if table is not None:
        comments += [f"category {cid} {name}" for cid, name in table.items()]
    dtype = np.dtype([(name, "<" + _PLY_TYPES[t]) for name, t in props])
    rec = np.empty(len(cloud), dtype=dtype)
    for i, ax in enumerate("xyz"):
        rec[ax] = cloud.points[:, i]
    if cloud.normals is not None:
        for i, ax in enumerate(("nx", "ny", "nz")):
            rec[ax] = cloud.normals[:, i]
    if cloud.labels is not None:
        rec["label"] = cloud.labels
    with open(path, "wb") as fh:
        fh.write(_ply_header(len(cloud), props, comments))
        fh.write(rec.tobytes())


def read_ply(path):
    """Read a vertex-only PLY (binary little-endian or ASCII).

    Returns ``(cloud, table, comments)`` where ``table`` is rebuilt from
    ``comment category <id> <name>`` lines (empty if there are none) and
    ``comments`` holds the remaining comment lines.
    """
    with open(path, "rb") as fh:
        data = fh.read()
    end = data.find(b"end_header")
    if not data.startswith(b"ply") or end < 0:
        raise FormatError(path, "byte 0", "not a PLY file")
    body_start = data.index(b"\n", end) + 1
    header = data[:end].decode("ascii", errors="replace").splitlines()
    fmt, n, props, comments, cats = None, None, [], [], {}
    element = None
    for lineno, line in enumerate(header, 1):
        parts = line.split()
        if not parts or parts[0] == "ply":
            continue
        if parts[0] == "format":
            fmt = parts[1]
        elif parts[0] == "comment":
            if len(parts) >= 4 and parts[1] == "category":
                cats[int(parts[2])] = line.split(None, 3)[3]
            else:
                comments.append(line[len("comment ") :])
        elif parts[0] == "element":
            element = parts[1]
            if element == "vertex":
                n = int(parts[2])
            elif int(parts[2]) != 0:
                raise FormatError(path, f"header line {lineno}", f"unsupported element {element!r}")
        elif parts[0] == "property" and element == "vertex":
            if parts[1] == "list" or parts[1] not in _PLY_TYPES:
                raise FormatError(path, f"header line {lineno}", f"unsupported property {line!r}")
            props.append((parts[2], _PLY_TYPES[parts[1]]))
    if n is None:
        raise FormatError(path, "header", "missing vertex element")
    names = [p[0] for p in props]
    for ax in "xyz":
        if ax not in names:
            raise FormatError(path, "header", f"missing property {ax}")
    if fmt == "binary_little_endian":
        dtype = np.dtype([(name, "<" + t) for name, t in props])
        need = n * dtype.itemsize
        if len(data) - body_start < need:
            raise FormatError(path, f"byte {len(data)}", f"truncated body, expected {need} bytes after byte {body_start}")
        rec = np.frombuffer(data, dtype=dtype, count=n, offset=body_start)
        cols = {name: rec[name].astype(float) for name in names}
    elif fmt == "ascii":
        rows = data[body_start:].decode("ascii").split("\n")
        try:
            arr = np.array([[float(v) for v in r.split()] for r in rows[:n]], dtype=float).reshape(n, len(props))
        except ValueError:
            raise FormatError(path, "body", "malformed ascii vertex rows") from None
        cols = {name: arr[:, i] for i, name in enumerate(names)}
    else:
        raise FormatError(path, "header", f"unsupported PLY format {fmt!r}")

    pts = np.stack([cols["x"], cols["y"], cols["z"]], axis=1)
    normals = None
    if all(a in cols for a in ("nx", "ny", "nz")):
        normals = np.stack([cols["nx"], cols["ny"], cols["nz"]], axis=1)
        lengths = np.linalg.norm(normals, axis=1, keepdims=True)
        # float32 storage: renormalise, keep zero sentinels
        normals = np.divide(normals, lengths, out=np.zeros_like(normals), where=lengths > 0.5)
    labels = cols["label"].astype(np.uint16) if "label" in cols else None
    table = CategoryTable()
    for cid in sorted(cats):
        if table.add(cats[cid]) != cid:
            raise FormatError(path, "header", "category ids must be dense from 1")
    return SemanticPointCloud(pts, normals, labels), table, comments


# ------------------------------------------------------------------- scans


def _scan_timestamp_ns(cloud: SemanticPointCloud) -> int:
    if cloud.timestamp is None:
        raise ValueError("scan has no timestamp")
    return int(round(cloud.timestamp * 1e9))


def write_scan_dir(out_dir, scans: Sequence[SemanticPointCloud]) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for scan in scans:
        p = out / f"{_scan_timestamp_ns(scan)}.ply"
        write_ply(p, SemanticPointCloud(scan.points))
        paths.append(p)
    return paths


def write_scan_log(path, scans: Sequence[SemanticPointCloud]) -> None:
    with open(path, "wb") as fh:
        fh.write(SCAN_LOG_MAGIC)
        for scan in scans:
            fh.write(struct.pack("<QI", _scan_timestamp_ns(scan), len(scan)))
            fh.write(np.ascontiguousarray(scan.points, dtype="<f4").tobytes())


def read_scan_log(path) -> list[SemanticPointCloud]:
    with open(path, "rb") as fh:
        data = fh.read()
    if not data.startswith(SCAN_LOG_MAGIC):
        raise FormatError(path, "byte 0", "missing SLSCAN1 magic")
    off, scans = len(SCAN_LOG_MAGIC), []
    while off < len(data):
        if len(data) - off < 12:
            raise FormatError(path, f"byte {off}", "truncated scan header")
        ts, count = struct.unpack_from("<QI", data, off)
        off += 12
        need = count * 12
        if len(data) - off < need:
            raise FormatError(path, f"byte {off}", f"truncated scan body, expected {need} bytes")
        pts = np.frombuffer(data, dtype="<f4", count=count * 3, offset=off).reshape(count, 3).astype(float)
        off += need
        scans.append(SemanticPointCloud(pts, timestamp=ts * 1e-9))
    return scans


def read_scans(path) -> list[SemanticPointCloud]:
    """Scans from a directory of ``<timestamp_ns>.ply`` files or an SLSCAN1 log, in file order."""
    p = Path(path)
    if p.is_dir():
        files = []
        for f in p.glob("*.ply"):
            try:
                files.append((int(f.stem), f))
            except ValueError:
                raise FormatError(f, "name", "scan file name must be an integer nanosecond timestamp") from None
        scans = []
        for ts, f in sorted(files):
            cloud, _, _ = read_ply(f)
            scans.append(SemanticPointCloud(cloud.points, timestamp=ts * 1e-9))
        return scans
    return read_scan_log(p)


# --------------------------------------------------------------------- TUM


def write_tum(path, trajectory: Iterable[tuple[float, Pose]], header: Iterable[str] = ()) -> None:
    """``timestamp tx ty tz qx qy qz qw`` per line; pose fields with 9 significant digits."""
    with open(path, "w", encoding="utf-8") as fh:
        for h in header:
            fh.write(f"# {h}\n")
        for t, pose in trajectory:
            q = Rotation.from_matrix(pose.rotation).as_quat()
            vals = " ".join(f"{v:.9g}" for v in (*pose.translation, *q))
            fh.write(f"{t:.9f} {vals}\n")


def read_tum(path) -> list[tuple[float, Pose]]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.replace(",", " ").split()
            if len(parts) != 8:
                raise FormatError(path, f"line {lineno}", f"expected 8 fields, got {len(parts)}")
            try:
                vals = [float(v) for v in parts]
            except ValueError:
                raise FormatError(path, f"line {lineno}", "non-numeric field") from None
            q = np.array(vals[4:8])
            if not np.isfinite(q).all() or np.linalg.norm(q) < 1e-6:
                raise FormatError(path, f"line {lineno}", "invalid quaternion")
            out.append((vals[0], Pose(Rotation.from_quat(q).as_matrix(), vals[1:4])))
    return out


def write_jsonl(path, records: Iterable[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r, sort_keys=True) + "\n")


def read_jsonl(path) -> list[dict]:
    with open(path, "r", encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def ensure_parent(path) -> Path:
    p = Path(path)
    if p.parent and not p.parent.exists():
        os.makedirs(p.parent, exist_ok=True)
    return p
