"""Entropy-increase pruning of transformer computation blocks.

Pipeline: capture an activation trace at every block boundary, estimate the
entropy of each boundary's hidden states, rank blocks by their entropy
increase (or by the cosine-distance baseline), emit a pruning plan, then
evaluate perplexity impact and inference speedup of the pruned model.
"""

__version__ = "0.1.0"

from .corpus import (
    MarkovSpec,
    RepetitionSpec,
    SyntheticCorpus,
    generate_corpus,
    load_sequences,
    save_corpus,
    uniform_corpus,
)
from .errors import (
    CapacityError,
    ContractError,
    EntropruneError,
    InputError,
    StructureError,
    TraceCorruptionError,
    TraceDataError,
    TraceError,
    TraceFormatError,
    TraceIOError,
    TraceVersionError,
    TrainingDivergedError,
)
from .estimators import (
    Bucket,
    EntropyValue,
    EstimatorConfig,
    Knn,
    Renyi,
    bucket_entropy,
    estimate,
    knn_entropy,
    renyi_entropy,
)
from .importance import (
    Criterion,
    EntropyProfile,
    Granularity,
    ImportanceScore,
    PruningPlan,
    SweepResult,
    build_profile,
    cosine_importance,
    make_cosine_plan,
    make_plan,
    profile_csv,
    rank_correlation,
    stage_start,
    sweep,
)
from .model import (
    BenchRow,
    BlockMask,
    ToyModelConfig,
    ToyTransformer,
    bench_inference,
    collect_trace,
    init_model,
    load_checkpoint,
    perplexity,
    save_checkpoint,
    scale_attention_output,
    train_briefly,
    weight_checksum,
)
from .numerics import (
    Rng,
    digamma,
    layer_norm,
    log_unit_ball_volume,
    matmul,
    softmax_rows,
)
from .trace import (
    ActivationTrace,
    Position,
    SamplePolicy,
    SnapshotLabel,
    read_trace,
    read_trace_file,
    subsample,
    traces_equal,
    write_trace,
    write_trace_file,
)
