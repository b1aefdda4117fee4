"""
Dataset directories: PLY fragments plus one manifest per split.

Layout::

    <dir>/clouds/<pair_id>_a.ply
    <dir>/clouds/<pair_id>_b.ply
    <dir>/train_manifest.csv
    <dir>/test_manifest.csv
    <dir>/validation_manifest.csv    (only when the split is nonempty)
"""
import logging
import os
from typing import List

from models.dataset import PairDataset, RegistrationPair
from services.csv_exporter import CSVExporter, ManifestRow, read_manifest
from services.ply_io import read_ply, write_ply
from services.verifier import read_ground_truth

logger = logging.getLogger(__name__)

CLOUD_DIRECTORY = 'clouds'
SPLIT_MANIFESTS = (('train', 'train_manifest.csv'), ('test', 'test_manifest.csv'),
                   ('validation', 'validation_manifest.csv'))


def write_pairs(pairs: List[RegistrationPair], directory: str, manifest_name: str) -> str:
    """Write the fragments of ``pairs`` and their manifest; returns the manifest path."""
    cloud_dir = os.path.join(directory, CLOUD_DIRECTORY)
    os.makedirs(cloud_dir, exist_ok=True)
    with_truth = len(pairs) > 0 and all(p.has_ground_truth for p in pairs)
    truths = read_ground_truth(pairs, 'datagen') if with_truth else [None] * len(pairs)
    rows = []
    for pair, truth in zip(pairs, truths):
        path_a = os.path.join(cloud_dir, f"{pair.pair_id}_a.ply")
        path_b = os.path.join(cloud_dir, f"{pair.pair_id}_b.ply")
        write_ply(pair.cloud_a, path_a)
        write_ply(pair.cloud_b, path_b)
        rows.append(ManifestRow(pair.pair_id, path_a, path_b, truth, pair.achieved_overlap))
    return CSVExporter(directory).export_manifest(rows, manifest_name)


def write_dataset(dataset: PairDataset, directory: str) -> List[str]:
    """
    Write every split of ``dataset`` below ``directory``.

    Returns:
        Paths of the manifests written
    """
    os.makedirs(directory, exist_ok=True)
    written = []
    for split, manifest_name in SPLIT_MANIFESTS:
        pairs = getattr(dataset, split)
        if split == 'validation' and not pairs:
            continue
        written.append(write_pairs(pairs, directory, manifest_name))
    logger.info("Wrote dataset with %d pairs to %s", len(dataset), directory)
    return written


def load_pairs(manifest_path: str) -> List[RegistrationPair]:
    """
    Load the pairs listed in one manifest.

    Raises:
        ManifestError: If the manifest is malformed or references missing files
        PlyParseError: If a fragment cannot be parsed
    """
    pairs = []
    for row in read_manifest(manifest_path):
        pairs.append(RegistrationPair(row.pair_id, read_ply(row.path_a), read_ply(row.path_b),
                                      row.ground_truth, row.achieved_overlap))
    return pairs


def load_dataset(directory: str) -> PairDataset:
    """
    Load a dataset directory written by ``write_dataset``.

    Raises:
        FileNotFoundError: If the train or test manifest is missing
        ManifestError: If a manifest is malformed
    """
    splits = {}
    for split, manifest_name in SPLIT_MANIFESTS:
        path = os.path.join(directory, manifest_name)
        if not os.path.exists(path):
            if split == 'validation':
                splits[split] = []
                continue
            raise FileNotFoundError(f"Dataset directory {directory} has no {manifest_name}")
        splits[split] = load_pairs(path)
    dataset = PairDataset(splits['train'], splits['test'], splits['validation'])
    logger.debug("Loaded %r from %s", dataset, directory)
    return dataset
