"""tabshot: a reproducible few-shot tabular prompting harness.

Turns labeled feature tables into split-aware few-shot prompts, drives
chat-completion endpoints with constrained binary decoding, exports
fine-tuning corpora, and evaluates predictions against in-repo baselines,
including under simulated and natural missingness.
"""

from .client import (
    EndpointConfig,
    MockEndpoint,
    MockRule,
    RawResponse,
    complete,
    constrained_binary_decode,
    mock_oracle_predict,
)
from .export import FinetuneRecord, ValidationReport, export_chat_jsonl, validate_jsonl
from .interpret import InterpretableOutput, ReflectionOutcome, parse_interpretable, run_self_reflection
from .metrics import ConfusionMatrix, MetricsReport, SummaryStats, aggregate_seeds, confusion, metrics
from .missing import MaskPlan, MissingnessStrata, bin_by_target_missingness, mask_mcar
from .logreg import LogRegModel, fit_logreg, logreg_gradient, predict_logreg
from .prompts import (
    InstructionSet,
    Message,
    PromptFormat,
    RenderedPrompt,
    SerializationTemplate,
    build_prompt,
    load_instructions,
    load_template,
    render_table_block,
    serialize_subject,
    token_budget,
)
from .records import PredictionRecord
from .runner import (
    ExperimentManifest,
    ResultSet,
    manifest_from_file,
    run_ablation_grid,
    run_experiment,
)
from .selection import (
    FeatureSet,
    RankedFeatures,
    import_external_ranking,
    lasso_path_rank,
    select_top_p,
    soft_threshold,
)
from .splits import (
    ContextSet,
    SplitAssignment,
    SplitFractions,
    make_splits,
    sample_context,
)
from .table import (
    Cell,
    ColumnSpec,
    FeatureTable,
    SubjectRow,
    TableSchema,
    filter_complete,
    load_table,
    missing_fraction,
    select_columns,
    write_table,
)

__version__ = "0.1.0"
