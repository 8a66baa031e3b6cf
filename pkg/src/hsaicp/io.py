"""Point-cloud files (PLY ascii / binary little-endian, XYZ text), transform
files and JSON registration reports."""
from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np

from .core import RigidTransform

FORMATS = ("ply-ascii", "ply-binary-le", "xyz")

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


class CloudParseError(ValueError):
    """Malformed cloud file; the message names the file and line or byte offset."""

    def __init__(self, path, where, message):
        super().__init__(f"{path}: {where}: {message}")
        self.path = str(path)
        self.where = where


class _Element:
    def __init__(self, name, count, line):
        self.name = name
        self.count = count
        self.line = line
        self.props = []  # (name, dtype, None) or (name, None, (count type, item type))

    @property
    def has_list(self):
        return any(dt is None for _, dt, _ in self.props)


def _parse_ply_header(path, raw):
    lines = []
    pos = 0
    lineno = 0
    while True:
        end = raw.find(b"\n", pos)
        if end < 0:
            raise CloudParseError(path, f"line {max(lineno, 1)}", "file ends before end_header")
        lineno += 1
        text = raw[pos:end].decode("ascii", errors="replace").strip()
        pos = end + 1
        lines.append((lineno, text))
        if text == "end_header":
            break

    if lines[0][1] != "ply":
        raise CloudParseError(path, "line 1", "missing 'ply' magic")
    fmt = None
    elements = []
    for lineno, text in lines[1:-1]:
        parts = text.split()
        if not parts or parts[0] in ("comment", "obj_info"):
            continue
        key = parts[0]
        if key == "format":
            if len(parts) != 3 or parts[2] != "1.0":
                raise CloudParseError(path, f"line {lineno}", f"bad format line {text!r}")
            if parts[1] not in ("ascii", "binary_little_endian"):
                raise CloudParseError(path, f"line {lineno}", f"unsupported PLY format {parts[1]!r}")
            fmt = parts[1]
        elif key == "element":
            if len(parts) != 3:
                raise CloudParseError(path, f"line {lineno}", f"bad element line {text!r}")
            try:
                count = int(parts[2])
            except ValueError:
                raise CloudParseError(path, f"line {lineno}", f"bad element count {parts[2]!r}") from None
            if count < 0:
                raise CloudParseError(path, f"line {lineno}", "negative element count")
            elements.append(_Element(parts[1], count, lineno))
        elif key == "property":
            if not elements:
                raise CloudParseError(path, f"line {lineno}", "property before any element")
            if len(parts) == 5 and parts[1] == "list":
                if parts[2] not in _PLY_TYPES or parts[3] not in _PLY_TYPES:
                    raise CloudParseError(path, f"line {lineno}", f"unknown list type in {text!r}")
                elements[-1].props.append((parts[4], None, (parts[2], parts[3])))
            elif len(parts) == 3 and parts[1] in _PLY_TYPES:
                elements[-1].props.append((parts[2], _PLY_TYPES[parts[1]], None))
            else:
                raise CloudParseError(path, f"line {lineno}", f"bad property line {text!r}")
        else:
            raise CloudParseError(path, f"line {lineno}", f"unexpected header keyword {key!r}")
    if fmt is None:
        raise CloudParseError(path, "header", "missing format line")
    vertex = [e for e in elements if e.name == "vertex"]
    if not vertex:
        raise CloudParseError(path, "header", "no vertex element")
    names = [p[0] for p in vertex[0].props]
    for axis in "xyz":
        if axis not in names:
            raise CloudParseError(path, f"line {vertex[0].line}", f"vertex element lacks property {axis!r}")
    for name, dt, _ in vertex[0].props:
        if name in "xyz" and dt not in ("f4", "f8"):
            raise CloudParseError(path, f"line {vertex[0].line}", f"property {name!r} must be float or double")
    return fmt, elements, pos, len(lines)


def _check_finite(path, pts, where_of_row):
    bad = np.flatnonzero(~np.isfinite(pts).all(axis=1))
    if bad.size:
        raise CloudParseError(path, where_of_row(int(bad[0])), "non-finite coordinate")


def _load_ply(path, raw):
    fmt, elements, body_start, header_lines = _parse_ply_header(path, raw)
    if fmt == "ascii":
        return _load_ply_ascii(path, raw[body_start:], elements, header_lines)
    return _load_ply_binary(path, raw, body_start, elements)


def _load_ply_ascii(path, body, elements, header_lines):
    lines = body.decode("ascii", errors="replace").split("\n")
    cursor = 0
    last = header_lines  # last non-blank line consumed

    def next_line():
        nonlocal cursor, last
        while cursor < len(lines):
            text = lines[cursor].strip()
            cursor += 1
            if text:
                last = header_lines + cursor
                return last, text
        return None, None

    for el in elements:
        if el.name != "vertex":
            for _ in range(el.count):
                lineno, text = next_line()
                if text is None:
                    raise CloudParseError(path, f"line {last + 1}", f"file ends inside element {el.name!r}")
            continue
        cols = [p[0] for p in el.props]
        if el.has_list:
            raise CloudParseError(path, f"line {el.line}", "list properties on vertex are not supported")
        ix = [cols.index(a) for a in "xyz"]
        pts = np.empty((el.count, 3))
        rows = []
        for k in range(el.count):
            lineno, text = next_line()
            if text is None:
                raise CloudParseError(
                    path, f"line {last + 1}",
                    f"expected {el.count} vertices, found {k}",
                )
            parts = text.split()
            if len(parts) != len(cols):
                raise CloudParseError(path, f"line {lineno}", f"expected {len(cols)} values, got {len(parts)}")
            try:
                pts[k] = [float(parts[i]) for i in ix]
            except ValueError:
                raise CloudParseError(path, f"line {lineno}", f"not a number in {text!r}") from None
            rows.append(lineno)
        _check_finite(path, pts, lambda r: f"line {rows[r]}")
        return pts
    raise AssertionError("unreachable: vertex element checked in header")


def _load_ply_binary(path, raw, offset, elements):
    for el in elements:
        if el.has_list:
            raise CloudParseError(path, f"line {el.line}", f"list property in element {el.name!r} before/at vertex data")
        dtype = np.dtype([(name, "<" + dt) for name, dt, _ in el.props])
        need = dtype.itemsize * el.count
        if offset + need > len(raw):
            have = (len(raw) - offset) // max(dtype.itemsize, 1)
            raise CloudParseError(
                path, f"byte offset {offset}",
                f"element {el.name!r} declares {el.count} records, only {have} present",
            )
        if el.name == "vertex":
            rec = np.frombuffer(raw, dtype=dtype, count=el.count, offset=offset)
            pts = np.stack([rec[a].astype(np.float64) for a in "xyz"], axis=1)
            size = dtype.itemsize
            _check_finite(path, pts, lambda r: f"byte offset {offset + r * size}")
            return pts
        offset += need
    raise AssertionError("unreachable: vertex element checked in header")


def _load_xyz(path, raw):
    rows = []
    for lineno, line in enumerate(raw.decode("utf-8", errors="replace").splitlines(), start=1):
        text = line.split("#", 1)[0].strip()
        if not text:
            continue
        parts = text.split()
        if len(parts) < 3:
            raise CloudParseError(path, f"line {lineno}", f"expected at least 3 values, got {len(parts)}")
        try:
            xyz = [float(v) for v in parts[:3]]
        except ValueError:
            raise CloudParseError(path, f"line {lineno}", f"not a number in {text!r}") from None
        if not all(np.isfinite(xyz)):
            raise CloudParseError(path, f"line {lineno}", "non-finite coordinate")
        rows.append(xyz)
    return np.array(rows, dtype=np.float64).reshape(-1, 3)


def load_cloud(path) -> np.ndarray:
    """Read a PLY (ascii or binary little-endian) or XYZ file into an ``(N, 3)`` array.

    The format is detected from the content: files starting with the ``ply``
    magic are PLY, everything else is XYZ text.
    """
    raw = Path(path).read_bytes()
    if raw.startswith(b"ply\n") or raw.startswith(b"ply\r\n"):
        pts = _load_ply(path, raw)
    else:
        pts = _load_xyz(path, raw)
    if len(pts) == 0:
        raise CloudParseError(path, "body", "no points")
    return np.ascontiguousarray(pts)


def _infer_format(path):
    return "xyz" if str(path).lower().endswith(".xyz") else "ply-ascii"


def write_cloud(cloud, path, format=None):
    """Write ``cloud``; ascii output uses 17 significant digits, so it round-trips exactly."""
    fmt = format or _infer_format(path)
    if fmt not in FORMATS:
        raise ValueError(f"unknown format {fmt!r}; choose from {FORMATS}")
    pts = np.ascontiguousarray(cloud, dtype=np.float64).reshape(-1, 3)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    body = "".join(f"{x:.17g} {y:.17g} {z:.17g}\n" for x, y, z in pts.tolist())
    if fmt == "xyz":
        Path(path).write_text(body)
        return
    kind = "ascii" if fmt == "ply-ascii" else "binary_little_endian"
    header = (
        f"ply\nformat {kind} 1.0\nelement vertex {len(pts)}\n"
        "property double x\nproperty double y\nproperty double z\nend_header\n"
    ).encode("ascii")
    if fmt == "ply-ascii":
        Path(path).write_bytes(header + body.encode("ascii"))
    else:
        Path(path).write_bytes(header + pts.astype("<f8").tobytes())


def load_transform(path) -> RigidTransform:
    """Read a transform: JSON with ``rotation`` (9, row-major) and ``translation``,
    or 16 whitespace-separated reals forming a row-major 4x4 matrix."""
    text = Path(path).read_text()
    if text.lstrip().startswith("{"):
        doc = json.loads(text)
        return RigidTransform(np.reshape(doc["rotation"], (3, 3)), doc["translation"])
    vals = [float(v) for v in text.split()]
    if len(vals) != 16:
        raise ValueError(f"{path}: expected 16 reals for a 4x4 matrix, got {len(vals)}")
    return RigidTransform.from_matrix(np.reshape(vals, (4, 4)))


def transform_to_dict(T: RigidTransform):
    return {"rotation": T.rotation.ravel().tolist(), "translation": T.translation.tolist()}


def write_transform(T: RigidTransform, path):
    write_report(transform_to_dict(T), path)


def write_report(report: dict, path):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "w") as fh:
        json.dump(report, fh, indent=2)
        fh.write("\n")
    os.replace(tmp, path)


def read_report(path) -> dict:
    with open(path) as fh:
        doc = json.load(fh)
    RigidTransform(np.reshape(doc["rotation"], (3, 3)), doc["translation"])
    return doc


def registration_report(result, params, seed=None, init=None, truth=None, d=None) -> dict:
    """ReportFile document for one registration run.

    Error fields are only present when a ground truth is given.
    """
    doc = {
        "algorithm": result.algorithm,
        "iterations": result.iterations,
        "converged": result.converged,
        "xi": result.xi_final,
        **transform_to_dict(result.transform),
    }
    if truth is not None:
        from .bench import relative_errors

        er, et, etn = relative_errors(result.transform, truth, d if d is not None else result.resolution)
        doc.update(eps_r=er, eps_t_raw=et, eps_t_norm=etn)
    doc["runtime_ms"] = result.runtime * 1e3
    echo = params.to_dict()
    if init is not None:
        echo["init"] = init.as_matrix().ravel().tolist()
    doc["params"] = echo
    doc["seed"] = seed
    if result.reason:
        doc["reason"] = result.reason
    return doc
