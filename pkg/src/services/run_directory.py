"""
Run directory writer and reader.

Layout::

    config.txt                      configuration snapshot
    checkpoints/model_iter_XX.sgpmlp
    labels_bootstrap.csv            labels before the first iteration
    labels.csv                      labels after the last completed iteration
    bootstrap_metrics.csv           iteration 0 (FPFH bootstrap) row
    metrics.csv                     one row per loop iteration
"""
import logging
import os
from typing import List, Optional, Sequence

from models.mlp_descriptor import MlpDescriptor
from models.pseudo_label import LoopMetrics, PseudoLabel
from models.sgp_config import SgpConfig
from services.checkpoint_storage import CheckpointStorage
from services.config_loader import load_config, write_config_snapshot
from services.csv_exporter import CSVExporter, read_labels, read_metrics

logger = logging.getLogger(__name__)

CONFIG_FILE = 'config.txt'
CHECKPOINT_DIRECTORY = 'checkpoints'
LABELS_FILE = 'labels.csv'
BOOTSTRAP_LABELS_FILE = 'labels_bootstrap.csv'
METRICS_FILE = 'metrics.csv'
BOOTSTRAP_METRICS_FILE = 'bootstrap_metrics.csv'


class RunDirectory:
    """All artifacts of one loop run."""

    def __init__(self, path: str):
        self.path = path
        self.checkpoints = CheckpointStorage(os.path.join(path, CHECKPOINT_DIRECTORY))
        self.exporter = CSVExporter(path)
        self._metrics: List[LoopMetrics] = []

    def file(self, name: str) -> str:
        return os.path.join(self.path, name)

    def create(self, config: SgpConfig) -> None:
        """Create the directory and snapshot the configuration."""
        os.makedirs(self.path, exist_ok=True)
        write_config_snapshot(config, self.file(CONFIG_FILE))
        self._metrics = []
        logger.info("Writing run artifacts to %s", self.path)

    def record_bootstrap(self, labels: Sequence[PseudoLabel], metrics: LoopMetrics) -> None:
        self.exporter.export_labels(labels, BOOTSTRAP_LABELS_FILE)
        self.exporter.export_metrics([metrics], BOOTSTRAP_METRICS_FILE)

    def record_iteration(self, iteration: int, model: MlpDescriptor,
                         labels: Sequence[PseudoLabel], metrics: LoopMetrics) -> None:
        """Checkpoint the model and rewrite labels and metrics after ``iteration``."""
        self.checkpoints.save(model, iteration)
        self.exporter.export_labels(labels, LABELS_FILE)
        self._metrics.append(metrics)
        self.exporter.export_metrics(self._metrics, METRICS_FILE)

    # readers

    def config(self) -> SgpConfig:
        return load_config(self.file(CONFIG_FILE))

    def labels(self, bootstrap: bool = False) -> List[PseudoLabel]:
        return read_labels(self.file(BOOTSTRAP_LABELS_FILE if bootstrap else LABELS_FILE))

    def metrics(self) -> List[LoopMetrics]:
        return read_metrics(self.file(METRICS_FILE))

    def bootstrap_metrics(self) -> Optional[LoopMetrics]:
        path = self.file(BOOTSTRAP_METRICS_FILE)
        if not os.path.exists(path):
            return None
        rows = read_metrics(path)
        return rows[0] if rows else None

    def latest_model(self) -> Optional[MlpDescriptor]:
        return self.checkpoints.latest()
