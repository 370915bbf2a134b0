"""Point-promptable 3D part segmentation toolkit."""

__version__ = "0.1.0"

from .geometry import (
    SampledCloud,
    TriMesh,
    VoxelGrid,
    farthest_point_sampling,
    nearest_neighbor,
    sample_surface,
    voxelize,
)
from .mesh_io import load_geometry, load_mesh
from .curation import (
    CurationReport,
    PartAnnotation,
    PartGraph,
    build_part_adjacency,
    connected_components,
    curate_mesh,
    filter_object,
    merge_small_parts,
    transfer_labels,
)
from .network import MaskTriple, SegmentorWeights, extract_features, predict, prepare_cache
from .losses import PromptBatch, dice_loss, focal_loss, iou_loss, mask_loss, total_loss
from .training import TrainConfig, TrainObject, augment, train
from .autoseg import (
    AutoSegConfig,
    CandidateMask,
    auto_segment,
    feature_colors,
    flood_fill,
    hierarchical_segment,
    mask_iou,
    multi_prompt_segment,
    nms_masks,
    vote_faces,
)
from .synthetic import generate_dataset, generate_shape
from .evaluation import EvalReport, full_seg_miou, interactive_eval, part_count_accuracy
