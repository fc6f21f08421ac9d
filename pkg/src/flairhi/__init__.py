"""FLAIR lesion enhancement via hyperintensity maps, and white-matter mask estimation."""

from .config import ConfigError, PipelineConfig
from .himap import DegenerateContrastWarning, PointNet, build_point_net, build_point_nets, score_map
from .metrics import (BrightnessEntry, MaskEntry, MetricsReport, aggregate_reports,
                      brightness_report, dsc, ipd, lesion_intersection)
from .nifti import (AtlasPair, NiftiFormatError, load_atlases, read_atlas, read_mask,
                    read_volume, write_mask, write_volume)
from .phantom import Lesion, Phantom, PhantomSpec, PhantomSpecError, generate_phantom, save_phantom
from .pipeline import InputError, PipelineResult, StageError, run_pipeline
from .plotting import render_overlay
from .preprocess import (IntensityHistogram, NlmParams, build_intermediate, nlm_denoise,
                         normalize_intensity, sobel_magnitude)
from .volume import (DegenerateRangeError, DomainError, MaskedStats, ShapeError, Volume3D,
                     box_mean, masked_stats, neighborhood_mean, rescale_unit)
from .wmmask import (WmEstimationConfig, estimate_wm, initial_segmentation, kmeans,
                     merge_wm_ground_truth, pure_cluster, select_cluster_by_atlas)

__version__ = "0.1.0"
