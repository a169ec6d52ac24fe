"""Bag-of-Views view selection and next-best-view planning on procedural scenes."""

from .bov import BagOfViews, BovConfig, Vocabulary, refine_dataset, update_vocabulary, view_utility, vocabulary_change
from .features import DescriptorSet, SiftExtractor, extract
from .geometry import CameraIntrinsics, ConfigError, SphericalPose, look_at_transform, region_id
from .metrics import MetricsReport, chamfer, coverage, hausdorff
from .planner import EnvConfig, NbvEnv, greedy_nbv
from .recon import PointCloud, TriangleMesh, TsdfVolume
from .renderer import Scene, SceneSpec, make_procedural_scene, render
from .scanplan import ScanPlan, plan_hemisphere

__version__ = "0.1.0"
