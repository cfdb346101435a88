"""Analysis toolkit for POS specialization in mixture-of-experts routing.

The pipeline: ingest a tagged corpus, tokenize it, route it through a model
(toy or synthetic), and measure how strongly the per-layer expert choices
encode part-of-speech categories.
"""

from .corpus import (
    DEFAULT_TAGSET,
    ConlluParseError,
    CorpusError,
    PosDistribution,
    PosTagset,
    Word,
    convert_penn_to_ud,
    corpus_distribution,
    parse_conllu,
    parse_tagset_file,
    split_tokens,
)
from .metrics import (
    AssignmentCounts,
    KlReport,
    MetricsError,
    SpecReport,
    count_assignments,
    kl_divergence,
    kl_stats,
    spec_global,
    spec_pos,
    spec_pos_layer,
    spec_report,
    uniform_expectation,
)
from .moe import (
    CheckpointError,
    DivergenceError,
    Expert,
    ModelConfig,
    MoeError,
    MoeModel,
    RouterLayer,
    RoutingDecision,
    forward_with_trace,
    gradient_check,
    init_model,
    load_model,
    make_pos_oracle_map,
    model_trace,
    moe_layer_forward,
    route,
    save_model,
    synthetic_router,
    synthetic_trace,
    train_toy,
)
from .probe import (
    ConfusionMatrix,
    ProbeConfig,
    ProbeError,
    ProbeModel,
    ablation_curve,
    baseline_most_common_pos,
    encode_inputs,
    evaluate_probe,
    train_probe,
)
from .projection import (
    Embedding2D,
    ProjectionError,
    emit_scatter,
    pca_2d,
    tsne_2d,
)
from .tokenizer import (
    AlignedToken,
    SubwordVocab,
    TokenizerError,
    align_pos,
    detokenize,
    tokenize_word,
    tokenize_word_ids,
    train_bpe,
    word_level_tokens,
)
from .trace import (
    PathVector,
    TokenRecord,
    TraceError,
    TraceFormatError,
    TraceHeader,
    TraceInvariantError,
    ValidationReport,
    open_trace,
    path_vector,
    read_trace,
    validate_trace,
    write_trace,
)

__version__ = "0.1.0"
