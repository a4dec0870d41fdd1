"""Two-view structured fact embedding with wildcard masking.

Language facts <S>, <S,P>, <S,P,O> and visual feature vectors are mapped
into a shared structured space; wildcard slots are excluded from the
training loss and from retrieval distances. The package covers the full
loop: dataset I/O, both encoder topologies, training, exact and
approximate bidirectional retrieval, the two ranking protocols with
their metrics, a linear CCA baseline, and a synthetic generator with a
recorded oracle.
"""

from .cca import CcaModel, cca_embed, cca_fit
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .embedding import FactEmbedding, average_spo
from .encoder import (
    MODEL1,
    MODEL2,
    AffineLayer,
    EncoderParams,
    EncoderSpec,
    StackSpec,
    apply_stack,
    encode_visual,
    init_params,
)
from .errors import (
    BadFeatureDim,
    BadVectorDim,
    DatasetError,
    DivergenceError,
    DuplicatePair,
    EmptyIndex,
    EmptyTable,
    FactspaceError,
    InfeasibleSpec,
    MalformedFact,
    MaskMismatch,
    ShapeError,
    SingularCovariance,
    UndefinedMetric,
    UnknownComponent,
    ValidationError,
)
from .estimators import CcaEmbedder, StructuredFactEmbedder
from .evaluation import (
    BucketResult,
    EvalReport,
    assemble_report,
    average_precision,
    generalization_buckets,
    mean_reciprocal_rank,
    topk_language_accuracy,
    visual_view_map,
)
from .facts import (
    Dataset,
    FactInstance,
    FrequencyTable,
    StructuredFact,
    WildcardMask,
    fact_frequency_table,
    fact_order,
    load_dataset,
    normalize_component,
    parse_fact,
    save_dataset,
    serialize_fact,
)
from .pipeline import (
    EmbeddingSet,
    embed_dataset,
    evaluate,
    language_targets,
    read_embeddings,
    read_ranked,
    retrieve_language,
    retrieve_visual,
    write_embeddings,
    write_ranked,
)
from .retrieval import (
    EmbeddingIndex,
    build_index,
    is_strict_specialization,
    load_index,
    masked_distance,
    metric1_rank,
    metric2_rank,
    query,
    save_index,
)
from .synth import SynthOracle, SynthSpec, synth_generate
from .train import (
    LossConfig,
    TraceStep,
    TrainConfig,
    batch_loss,
    loss_gradients,
    train,
    wildcard_loss,
    write_loss_trace,
)
from .words import (
    LangNormalizer,
    WordTable,
    embed_component,
    encode_language,
    fit_normalizer,
    load_word_table,
    save_word_table,
)

__version__ = "0.1.0"
