# Models package
from .rigid_transform import RigidTransform
from .point_cloud import PointCloud
from .correspondence import Correspondence, CorrespondenceSet
from .pseudo_label import PseudoLabel, LoopMetrics
from .mlp_descriptor import MlpDescriptor

__all__ = ['RigidTransform', 'PointCloud', 'Correspondence', 'CorrespondenceSet',
           'PseudoLabel', 'LoopMetrics', 'MlpDescriptor']
