"""
SgpConfig class gathering every hyperparameter of the teacher-student loop.
"""
from dataclasses import dataclass, field, replace
from typing import List, Optional, Tuple

from models.errors import ConfigError
from models.registration import RansacConfig
from models.training import LossConfig, OptimizerConfig

# (first iteration, last iteration or None for open-ended, eta)
EtaRange = Tuple[int, Optional[int], float]

DEFAULT_ETA_SCHEDULE: Tuple[EtaRange, ...] = ((1, 2, 0.30), (3, 10, 0.10))
TEACHERS = ('ransac', 'horn_direct')
# three 11-bin FPFH sub-histograms
HISTOGRAM_DIM = 33


def parse_eta_schedule(text: str) -> Tuple[EtaRange, ...]:
    """
    Parse ``"1-2:0.30, 3-10:0.10"``. A single iteration may be written ``"4:0.2"``
    and an open end as ``"3-*:0.1"``.

    Raises:
        ConfigError: If an entry is malformed
    """
    entries = []
    for chunk in text.split(','):
        chunk = chunk.strip()
        if not chunk:
            continue
        try:
            span, eta_text = chunk.split(':')
            if '-' in span:
                first_text, last_text = span.split('-')
                first = int(first_text)
                last = None if last_text.strip() == '*' else int(last_text)
            else:
                first = last = int(span)
            eta = float(eta_text)
        except ValueError:
            raise ConfigError('eta_schedule', f"malformed entry '{chunk}', expected 'first-last:eta'")
        entries.append((first, last, eta))
    if not entries:
        raise ConfigError('eta_schedule', "schedule is empty")
    return tuple(entries)


def format_eta_schedule(schedule: Tuple[EtaRange, ...]) -> str:
    parts = []
    for first, last, eta in schedule:
        span = f"{first}-{'*' if last is None else last}"
        parts.append(f"{span}:{eta!r}")
    return ', '.join(parts)


@dataclass(frozen=True)
class SgpConfig:
    """All loop hyperparameters; defaults follow the 3D registration protocol."""
    iterations: int = 10
    retrain: bool = False
    verify_label: bool = True
    eta_schedule: Tuple[EtaRange, ...] = DEFAULT_ETA_SCHEDULE

    # teacher
    teacher: str = 'ransac'
    ransac_max_iterations: int = 10000
    ransac_confidence: float = 0.999
    inlier_threshold: float = 0.07
    icp_max_iterations: int = 50
    icp_threshold: Optional[float] = None

    # bootstrap descriptor and matching
    voxel_size: float = 0.05
    normal_k: int = 30
    fpfh_radius: Optional[float] = None
    mutual_filter: bool = True
    ratio_test: float = 0.0

    # student
    hidden_dims: Tuple[int, ...] = (64, 64)
    embedding_dim: int = 16
    normalize_output: bool = True
    m_p: float = 0.1
    m_n: float = 1.4
    m: float = 0.5
    lambda_p: float = 1.0
    lambda_n: float = 1.0
    lambda_triplet: float = 1.0
    negatives_per_anchor: int = 4
    learning_rate: float = 0.05
    momentum: float = 0.9
    anchors_per_pair: int = 256
    epochs_first: int = 100
    epochs_rest: int = 50

    # stable-label skip
    skip_stable_after: int = 3
    skip_inlier_rate: float = 0.8
    stable_rotation_deg: float = 0.5
    stable_translation: float = 0.005

    # evaluation
    success_rotation_deg: float = 15.0
    success_translation: float = 0.30

    workers: int = 1
    seed: int = 0

    _sub_configs: dict = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.iterations < 1:
            raise ConfigError('iterations', f"must be at least 1, got {self.iterations}")
        if self.teacher not in TEACHERS:
            raise ConfigError('teacher', f"must be one of {', '.join(TEACHERS)}, got '{self.teacher}'")
        self._check_positive('inlier_threshold', 'voxel_size', 'success_rotation_deg',
                             'success_translation', 'stable_rotation_deg', 'stable_translation')
        if self.icp_threshold is not None and not self.icp_threshold > 0:
            raise ConfigError('icp_threshold', f"must be positive, got {self.icp_threshold}")
        if self.fpfh_radius is not None and not self.fpfh_radius > 0:
            raise ConfigError('fpfh_radius', f"must be positive, got {self.fpfh_radius}")
        if self.normal_k < 3:
            raise ConfigError('normal_k', f"must be at least 3, got {self.normal_k}")
        if self.ratio_test != 0 and not (0.0 < self.ratio_test < 1.0):
            raise ConfigError('ratio_test', f"must be 0 (off) or in (0, 1), got {self.ratio_test}")
        if self.icp_max_iterations < 0:
            raise ConfigError('icp_max_iterations', f"must be nonnegative, got {self.icp_max_iterations}")
        if self.epochs_first < 1:
            raise ConfigError('epochs_first', f"must be at least 1, got {self.epochs_first}")
        if self.epochs_rest < 1:
            raise ConfigError('epochs_rest', f"must be at least 1, got {self.epochs_rest}")
        if self.embedding_dim < 1 or any(d < 1 for d in self.hidden_dims):
            raise ConfigError('hidden_dims', "layer widths must be positive")
        if self.skip_stable_after < 1:
            raise ConfigError('skip_stable_after', f"must be at least 1, got {self.skip_stable_after}")
        if not (0.0 <= self.skip_inlier_rate <= 1.0):
            raise ConfigError('skip_inlier_rate', f"must be in [0, 1], got {self.skip_inlier_rate}")
        if self.workers < 1:
            raise ConfigError('workers', f"must be at least 1, got {self.workers}")
        if self.seed < 0:
            raise ConfigError('seed', f"must be nonnegative, got {self.seed}")
        self._check_eta_schedule()

        subs = {}
        for key, build in (('ransac', self._build_ransac), ('loss', self._build_loss),
                           ('optimizer', self._build_optimizer)):
            subs[key] = build()
        object.__setattr__(self, '_sub_configs', subs)

    def _check_positive(self, *keys: str) -> None:
        for key in keys:
            value = getattr(self, key)
            if not value > 0:
                raise ConfigError(key, f"must be positive, got {value}")

    def _check_eta_schedule(self) -> None:
        expected = 1
        for first, last, eta in self.eta_schedule:
            if not (0.0 <= eta <= 1.0):
                raise ConfigError('eta_schedule', f"eta must be in [0, 1], got {eta}")
            if first != expected:
                raise ConfigError('eta_schedule',
                                  f"ranges must be contiguous from iteration 1, expected {expected} got {first}")
            if last is None:
                return
            if last < first:
                raise ConfigError('eta_schedule', f"range {first}-{last} is empty")
            expected = last + 1
        # the last eta carries on when the schedule ends before T

    def _build_ransac(self) -> RansacConfig:
        try:
            return RansacConfig(max_iterations=self.ransac_max_iterations,
                                confidence=self.ransac_confidence,
                                inlier_threshold=self.inlier_threshold,
                                seed=self.seed)
        except ValueError as e:
            key = 'ransac_confidence' if 'confidence' in str(e) else 'ransac_max_iterations'
            raise ConfigError(key, str(e))

    def _build_loss(self) -> LossConfig:
        try:
            loss = LossConfig(m_p=self.m_p, m_n=self.m_n, m=self.m, lambda_p=self.lambda_p,
                              lambda_n=self.lambda_n, lambda_triplet=self.lambda_triplet,
                              negatives_per_anchor=self.negatives_per_anchor)
            if self.normalize_output:
                loss.check_unit_sphere()
            return loss
        except ValueError as e:
            raise ConfigError('m_n' if 'm_n' in str(e) else 'loss', str(e))

    def _build_optimizer(self) -> OptimizerConfig:
        try:
            return OptimizerConfig(learning_rate=self.learning_rate, momentum=self.momentum,
                                   anchors_per_pair=self.anchors_per_pair)
        except ValueError as e:
            raise ConfigError('optimizer', str(e))

    @property
    def ransac(self) -> RansacConfig:
        return self._sub_configs['ransac']

    @property
    def loss(self) -> LossConfig:
        return self._sub_configs['loss']

    @property
    def optimizer(self) -> OptimizerConfig:
        return self._sub_configs['optimizer']

    @property
    def effective_fpfh_radius(self) -> float:
        return self.fpfh_radius if self.fpfh_radius is not None else 2.5 * self.voxel_size

    @property
    def effective_icp_threshold(self) -> float:
        return self.icp_threshold if self.icp_threshold is not None else self.inlier_threshold

    @property
    def layer_dims(self) -> List[int]:
        """Student architecture starting from the 33-bin histogram input."""
        return [HISTOGRAM_DIM, *self.hidden_dims, self.embedding_dim]

    def eta_for(self, iteration: int) -> float:
        """Verifier threshold at loop iteration ``iteration`` (1-based)."""
        if iteration < 1:
            raise ValueError(f"Iterations are numbered from 1, got {iteration}")
        for first, last, eta in self.eta_schedule:
            if last is None or first <= iteration <= last:
                return eta
        return self.eta_schedule[-1][2]

    def epochs_for(self, iteration: int) -> int:
        return self.epochs_first if iteration == 1 else self.epochs_rest

    def with_overrides(self, **changes) -> 'SgpConfig':
        """Copy with selected fields replaced (validated again)."""
        return replace(self, **changes)
