"""shapeparse: mixture-of-compositional-trees shape parsing on 2-D grids."""

from .errors import (
    InfeasibleParseError,
    SchemaError,
    ShapeParseError,
    ValidationError,
)
from .gridmath import (
    AffineBound,
    DtProblem1D,
    DtResult1D,
    cgdt_1d,
    cgdt_brute_force_1d,
    op_counter,
    pairwise_min_2d,
)
from .shapemodel import (
    CompNode,
    CompTree,
    LeafType,
    MixtureModel,
    WeightVector,
    deserialize_model,
    load_model,
    mean_shape,
    recompose,
    save_model,
    serialize_model,
    validate_tree,
)
from .featurestack import (
    FeatureStack,
    appearance_feature,
    build_leaf_unaries,
    edge_feature,
    load_stack,
    noise_stack,
    part_unary,
    read_fmap,
    render_stack,
    save_stack,
    synth_stack,
    write_fmap,
)
from .inference import (
    ParseResult,
    compose_step,
    exact_parse,
    exact_parse_fields,
    landmarks_to_polygons,
    parse,
    parse_fields,
    parse_one_mixture,
)
from .structlearn import (
    LabeledMask,
    PartAnnotation,
    compose_tree,
    k_medoids,
    learn_structure,
    load_annotations,
    mask_distance,
    match_leaf_types,
    rasterize_annotation,
    sample_landmarks,
    trace_boundary,
)
from .paramlearn import (
    TrainingExample,
    TrainResult,
    featurize,
    score_example,
    train_latent_svm,
)
from .evalbench import (
    approx_error_report,
    complexity_bench,
    eval_dataset,
    iou,
    oracle_check,
)

__version__ = "0.1.0"
