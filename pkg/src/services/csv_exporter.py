"""
CSV export service for loop metrics, pseudo-labels and dataset manifests.

Numbers are written with ``repr`` so every exported file reads back to the
exact same doubles, independent of locale.
"""

import csv
import logging
import os
from typing import List, NamedTuple, Optional, Sequence

from models.errors import ManifestError
from models.pseudo_label import LoopMetrics, PseudoLabel
from models.rigid_transform import RigidTransform

logger = logging.getLogger(__name__)

TRANSFORM_COLUMNS = ['r00', 'r01', 'r02', 'r10', 'r11', 'r12', 'r20', 'r21', 'r22', 't0', 't1', 't2']
METRICS_HEADER = list(LoopMetrics.FIELDS)
LABELS_HEADER = (['pair_id'] + TRANSFORM_COLUMNS +
                 ['inlier_rate', 'overlap_ratio', 'verified', 'skip', 'stable_count', 'has_model'])
MANIFEST_HEADER = ['pair_id', 'file_a', 'file_b']
MANIFEST_TRUTH_HEADER = MANIFEST_HEADER + TRANSFORM_COLUMNS + ['achieved_overlap']


class ManifestRow(NamedTuple):
    pair_id: str
    path_a: str
    path_b: str
    ground_truth: Optional[RigidTransform] = None
    achieved_overlap: Optional[float] = None


def _format_float(value: float) -> str:
    return repr(float(value))


def _format_bool(value: bool) -> str:
    return 'true' if value else 'false'


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ('true', '1'):
        return True
    if lowered in ('false', '0'):
        return False
    raise ValueError(f"expected true or false, got '{text}'")


def _parse_optional(text: str) -> Optional[float]:
    return None if text.strip() == '' else float(text)


class CSVExporter:
    """
    Writes the tabular artifacts of a run.

    Provides:
    - metrics.csv rows (iteration, plsr, plir, train_recall, test_recall)
    - pseudo-label tables
    - dataset manifests with optional hidden ground truth
    """

    def __init__(self, default_directory: str = "."):
        """
        Initialize the CSV exporter.

        Args:
            default_directory: Directory used for relative file names
        """
        self.default_directory = default_directory

    def _resolve(self, filename: str) -> str:
        return filename if os.path.isabs(filename) else os.path.join(self.default_directory, filename)

    def export_metrics(self, metrics: Sequence[LoopMetrics], filename: str = "metrics.csv") -> str:
        """
        Write loop metrics, one row per iteration.

        Returns:
            str: Full path to the created CSV file
        """
        rows = [METRICS_HEADER] + [m.as_row() for m in metrics]
        path = self._resolve(filename)
        self.write_csv_file(path, rows)
        return path

    def export_labels(self, labels: Sequence[PseudoLabel], filename: str = "labels.csv") -> str:
        """
        Write one row per pseudo-label: id, 12 transform entries (R row-major, then t), diagnostics.

        Returns:
            str: Full path to the created CSV file
        """
        rows: List[List[str]] = [LABELS_HEADER]
        for label in labels:
            rows.append([label.pair_id] +
                        [_format_float(v) for v in label.transform.to_row()] +
                        [_format_float(label.inlier_rate), _format_float(label.overlap_ratio),
                         _format_bool(label.verified), _format_bool(label.skip),
                         str(label.stable_count), _format_bool(label.has_model)])
        path = self._resolve(filename)
        self.write_csv_file(path, rows)
        return path

    def export_manifest(self, rows: Sequence[ManifestRow], filename: str) -> str:
        """
        Write a dataset manifest. Paths are stored relative to the manifest's directory.

        Ground-truth columns are written when every row carries a transform.

        Raises:
            ManifestError: If pair ids repeat
        """
        ids = [row.pair_id for row in rows]
        if len(ids) != len(set(ids)):
            raise ManifestError("Manifest pair ids must be unique")
        path = self._resolve(filename)
        base = os.path.dirname(os.path.abspath(path))
        with_truth = len(rows) > 0 and all(row.ground_truth is not None for row in rows)
        table: List[List[str]] = [MANIFEST_TRUTH_HEADER if with_truth else MANIFEST_HEADER]
        for row in rows:
            cells = [row.pair_id,
                     os.path.relpath(os.path.abspath(row.path_a), base),
                     os.path.relpath(os.path.abspath(row.path_b), base)]
            if with_truth:
                cells += [_format_float(v) for v in row.ground_truth.to_row()]
                cells.append('' if row.achieved_overlap is None else _format_float(row.achieved_overlap))
            table.append(cells)
        self.write_csv_file(path, table)
        return path

    def write_csv_file(self, filepath: str, data: List[List[str]]) -> None:
        """
        Write rows to a CSV file through a temporary file and an atomic rename.

        Raises:
            PermissionError: If unable to write to the file
            OSError: If file system error occurs
        """
        temp_path = f"{filepath}.tmp"
        try:
            with open(temp_path, 'w', newline='', encoding='utf-8') as csvfile:
                writer = csv.writer(csvfile, lineterminator='\n')
                writer.writerows(data)
            os.replace(temp_path, filepath)
        except PermissionError:
            if os.path.exists(temp_path):
                os.remove(temp_path)
            raise PermissionError(f"Cannot write to file {filepath}. Check file permissions.")
        except OSError as e:
            if os.path.exists(temp_path):
                os.remove(temp_path)
            if "No space left on device" in str(e):
                raise OSError("Insufficient disk space for CSV export")
            raise OSError(f"File system error: {str(e)}")


def _read_rows(path: str, required: Sequence[str]) -> List[dict]:
    with open(path, 'r', newline='', encoding='utf-8') as f:
        reader = csv.DictReader(f)
        header = reader.fieldnames or []
        missing = [c for c in required if c not in header]
        if missing:
            raise ValueError(f"{path}: missing columns {', '.join(missing)}")
        return list(reader)


def read_metrics(path: str) -> List[LoopMetrics]:
    """
    Read a metrics CSV written by ``CSVExporter.export_metrics``.

    Raises:
        ValueError: On missing columns or unparsable values
    """
    metrics = []
    for number, row in enumerate(_read_rows(path, METRICS_HEADER), start=2):
        try:
            metrics.append(LoopMetrics(int(row['iteration']), float(row['plsr']),
                                       _parse_optional(row['plir']),
                                       _parse_optional(row['train_recall']),
                                       _parse_optional(row['test_recall'])))
        except ValueError as e:
            raise ValueError(f"{path}: line {number}: {e}")
    return metrics


def read_labels(path: str) -> List[PseudoLabel]:
    """
    Read a labels CSV. ``stable_count`` and ``has_model`` are optional columns.

    Raises:
        ValueError: On missing columns or unparsable values
    """
    labels = []
    for number, row in enumerate(_read_rows(path, LABELS_HEADER[:17]), start=2):
        try:
            transform = RigidTransform.from_row([float(row[c]) for c in TRANSFORM_COLUMNS])
            labels.append(PseudoLabel(
                row['pair_id'], transform,
                inlier_rate=float(row['inlier_rate']),
                overlap_ratio=float(row['overlap_ratio']),
                verified=_parse_bool(row['verified']),
                stable_count=int(row.get('stable_count') or 0),
                skip=_parse_bool(row['skip']),
                has_model=_parse_bool(row.get('has_model') or 'true')))
        except ValueError as e:
            raise ValueError(f"{path}: line {number}: {e}")
    return labels


def read_manifest(path: str, require_files: bool = True) -> List[ManifestRow]:
    """
    Read a dataset manifest; file paths are resolved against its directory.

    Raises:
        ManifestError: On missing columns, repeated ids, partial ground truth,
            malformed numbers or (with ``require_files``) missing point-cloud files
    """
    try:
        rows = _read_rows(path, MANIFEST_HEADER)
    except ValueError as e:
        raise ManifestError(str(e))
    base = os.path.dirname(os.path.abspath(path))
    result = []
    seen = set()
    for number, row in enumerate(rows, start=2):
        pair_id = row['pair_id']
        if pair_id in seen:
            raise ManifestError(f"{path}: line {number}: repeated pair id '{pair_id}'")
        seen.add(pair_id)
        path_a = os.path.normpath(os.path.join(base, row['file_a']))
        path_b = os.path.normpath(os.path.join(base, row['file_b']))
        if require_files:
            for candidate in (path_a, path_b):
                if not os.path.isfile(candidate):
                    raise ManifestError(f"{path}: line {number}: file '{candidate}' does not exist")
        truth_cells = [row.get(c) or '' for c in TRANSFORM_COLUMNS]
        ground_truth = None
        achieved = None
        try:
            if any(cell.strip() for cell in truth_cells):
                if not all(cell.strip() for cell in truth_cells):
                    raise ManifestError(f"{path}: line {number}: incomplete ground-truth columns")
                ground_truth = RigidTransform.from_row([float(cell) for cell in truth_cells])
            achieved = _parse_optional(row.get('achieved_overlap') or '')
        except ManifestError:
            raise
        except ValueError as e:
            raise ManifestError(f"{path}: line {number}: {e}")
        result.append(ManifestRow(pair_id, path_a, path_b, ground_truth, achieved))
    logger.debug("Read manifest %s with %d rows", path, len(result))
    return result
