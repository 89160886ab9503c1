"""glyphforge: activation-guided Bezier sketch synthesis with a
differentiable rasterizer, plus embedding-space analysis tools."""

from .analysis import (
    CategoryQuery,
    EmbeddingSet,
    MatchMatrix,
    MatchingReport,
    PermutationReport,
    RDM,
    build_rdm,
    cosine,
    delta_rdm,
    match_matrix,
    matching_accuracy,
    mean_paired_cosine,
    residual_query,
    rsa_permutation,
    spearman_upper,
    top_k_retrieve,
    zero_shot_classify,
)
from .corpus import (
    CorpusRecord,
    EmbeddingCache,
    filter_records,
    load_cache,
    load_manifest,
    save_cache,
)
from .encoders import (
    BridgeEncoder,
    BuiltinEncoder,
    Embedding,
    EncoderDescriptor,
    LossGradResult,
    get_encoder,
)
from .errors import (
    CacheFormatError,
    CacheLengthError,
    CapabilityError,
    ContractError,
    DegenerateError,
    DomainError,
    GlyphforgeError,
    ManifestError,
    TransportError,
)
from .geometry import (
    CubicBezierStroke,
    Point2,
    SketchSpec,
    VectorSketch,
    eval_bezier,
    flatten,
)
from .optimize import OptimizeConfig, OptimizeTrace, full_pipeline, optimize
from .raster import (
    GradCheckReport,
    RasterConfig,
    RasterImage,
    backward,
    gradcheck,
    load_png,
    render,
    save_png,
)
from .sampling import (
    ActivationMap,
    SamplerConfig,
    init_sketch,
    normalize_map,
    sample_starts,
    tangent_walk,
)
from .svg import load_svg, save_svg, sketch_from_svg, sketch_to_svg

__version__ = "0.1.0"
