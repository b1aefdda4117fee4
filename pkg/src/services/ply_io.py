"""
ASCII PLY reader and writer for point clouds.

Only the vertex element is interpreted (x, y, z and optional nx, ny, nz);
other elements are skipped. Coordinates are written with 17 significant
digits so a write/read round trip reproduces every double exactly.
"""
import logging
import os
from typing import List, Tuple

import numpy as np

from models.errors import PlyParseError
from models.point_cloud import NORMAL_TOLERANCE, PointCloud

logger = logging.getLogger(__name__)

_COORDINATES = ('x', 'y', 'z')
_NORMALS = ('nx', 'ny', 'nz')


def _parse_header(lines: List[str]) -> Tuple[int, List[Tuple[str, int, List[str]]]]:
    """Return (index of the first body line, [(element name, count, property names)])."""
    if not lines or lines[0].strip() != 'ply':
        raise PlyParseError("missing 'ply' magic", 1)
    elements: List[Tuple[str, int, List[str]]] = []
    saw_format = False
    for number, raw in enumerate(lines[1:], start=2):
        tokens = raw.split()
        if not tokens or tokens[0] in ('comment', 'obj_info'):
            continue
        keyword = tokens[0]
        if keyword == 'format':
            if len(tokens) != 3 or tokens[1] != 'ascii':
                raise PlyParseError(f"unsupported format '{' '.join(tokens[1:])}', only ascii is read", number)
            saw_format = True
        elif keyword == 'element':
            if len(tokens) != 3:
                raise PlyParseError(f"malformed element line '{raw.strip()}'", number)
            try:
                count = int(tokens[2])
            except ValueError:
                raise PlyParseError(f"element count '{tokens[2]}' is not an integer", number)
            if count < 0:
                raise PlyParseError(f"negative element count {count}", number)
            elements.append((tokens[1], count, []))
        elif keyword == 'property':
            if not elements:
                raise PlyParseError("property declared before any element", number)
            if len(tokens) < 3:
                raise PlyParseError(f"malformed property line '{raw.strip()}'", number)
            elements[-1][2].append(tokens[-1])
        elif keyword == 'end_header':
            if not saw_format:
                raise PlyParseError("header has no format line", number)
            return number, elements
        else:
            raise PlyParseError(f"unexpected header keyword '{keyword}'", number)
    raise PlyParseError("header is not terminated by 'end_header'", len(lines))


def read_ply(path: str) -> PointCloud:
    """
    Read an ASCII PLY file.

    Args:
        path: File path

    Returns:
        PointCloud with normals when nx, ny, nz are present and of unit length

    Raises:
        PlyParseError: On a malformed header, a missing row, or non-finite values
        OSError: If the file cannot be read
    """
    with open(path, 'r', encoding='ascii') as f:
        lines = f.read().splitlines()
    body_start, elements = _parse_header(lines)

    cursor = body_start
    vertex_rows = None
    for name, count, properties in elements:
        if name != 'vertex':
            cursor += count
            continue
        missing = [p for p in _COORDINATES if p not in properties]
        if missing:
            raise PlyParseError(f"vertex element lacks properties {', '.join(missing)}")
        rows = lines[cursor:cursor + count]
        if len(rows) < count:
            raise PlyParseError(
                f"expected {count} vertex rows, found {len(rows)}", cursor + len(rows) + 1)
        values = np.empty((count, len(properties)))
        for offset, row in enumerate(rows):
            number = cursor + offset + 1
            tokens = row.split()
            if len(tokens) != len(properties):
                raise PlyParseError(f"expected {len(properties)} values, found {len(tokens)}", number)
            try:
                values[offset] = [float(t) for t in tokens]
            except ValueError:
                raise PlyParseError(f"non-numeric value in '{row.strip()}'", number)
            if not np.all(np.isfinite(values[offset])):
                raise PlyParseError("non-finite value", number)
        vertex_rows = (values, properties)
        cursor += count
    if vertex_rows is None:
        raise PlyParseError("file declares no vertex element")

    values, properties = vertex_rows
    points = values[:, [properties.index(p) for p in _COORDINATES]]
    normals = None
    if all(p in properties for p in _NORMALS):
        candidate = values[:, [properties.index(p) for p in _NORMALS]]
        if len(candidate) and np.all(np.abs(np.linalg.norm(candidate, axis=1) - 1.0) <= NORMAL_TOLERANCE):
            normals = candidate
        else:
            logger.warning("%s: normals are not unit length, ignoring them", path)
    return PointCloud(points, normals)


def _format_row(values) -> str:
    return ' '.join('%.17g' % v for v in values)


def write_ply(cloud: PointCloud, path: str) -> None:
    """
    Write ``cloud`` as ASCII PLY (with normals when present).

    The file is written to a temporary name and renamed into place.

    Raises:
        PermissionError: If the file cannot be written due to permissions
        OSError: If another I/O error occurs
    """
    properties = list(_COORDINATES) + (list(_NORMALS) if cloud.has_normals else [])
    header = ['ply', 'format ascii 1.0', f"element vertex {len(cloud)}"]
    header += [f"property double {p}" for p in properties]
    header.append('end_header')
    data = cloud.points if not cloud.has_normals else np.hstack([cloud.points, cloud.normals])

    temp_path = f"{path}.tmp"
    try:
        with open(temp_path, 'w', encoding='ascii', newline='\n') as f:
            f.write('\n'.join(header) + '\n')
            for row in data:
                f.write(_format_row(row) + '\n')
        os.replace(temp_path, path)
    except PermissionError:
        if os.path.exists(temp_path):
            os.remove(temp_path)
        raise PermissionError(f"Cannot write {path}, check file permissions")
    except OSError as e:
        if os.path.exists(temp_path):
            os.remove(temp_path)
        raise OSError(f"Error writing {path}: {e}")
