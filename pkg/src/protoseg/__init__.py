"""Training-free open-vocabulary segmentation engine.

Offline: collapse diffusion cross-attention into weak localization
masks, pool dense features into visual prototypes, pair them with
textual keys, and index everything for cosine retrieval. Online:
retrieve per-category representatives, pool superpixel embeddings, and
blend local with global similarities to label each region.
"""

from .attribution import (
    AttributionMap,
    LocalizationMask,
    aggregate_attention,
    bilinear_upsample,
    binarize,
)
from .errors import ProtosegError
from .evaluate import ConfusionMatrix, accumulate, miou
from .index import (
    PrototypeIndex,
    RetrievalResult,
    aggregate_mean_embedding,
    aggregate_similarity,
    build_hnsw,
    build_index,
    load_index,
    query_exact,
    query_hnsw,
    save_index,
)
from .inference import (
    CategorySet,
    SegmentConfig,
    SegmentationMask,
    UNKNOWN_LABEL,
    assign,
    build_representatives,
    combine,
    global_similarity,
    local_similarities,
    plan_windows,
    segment,
    stitch_features,
)
from .prototype import (
    KeyedPrototype,
    PrototypeBundle,
    build_key,
    bundle_from_pairs,
    generate_pairs,
    mean_template_embed,
    pool_region,
    read_bundle,
    resize_mask,
    write_bundle,
)
from .superpixel import (
    FelzParams,
    PRESETS,
    RegionPartition,
    felzenszwalb,
    gaussian_smooth,
    preset,
    region_masks,
)
from .tensorio import (
    AttentionStack,
    CaptionRecord,
    FeatureGrid,
    load_attention_stack,
    load_feature_grid,
    load_inference_manifest,
    load_manifest,
    read_tensor,
    write_tensor,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
