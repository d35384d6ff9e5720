"""Forgetting-curve models for spaced-repetition vocabulary logs."""

from .datasets import (
    IngestStats,
    ReviewEvent,
    SplitSpec,
    parse_lexeme,
    parse_review_log,
    read_events,
    split_train_test,
    write_events_csv,
)
from .errors import (
    ForgetCurveError,
    FormatError,
    ModelFormatError,
    NoDataError,
    TrainingDivergedError,
)
from .evaluation import (
    EvalReport,
    HiddenWeightExport,
    LADDER_KINDS,
    LadderRow,
    evaluate,
    export_hidden_weights,
    format_ladder_text,
    ladder_to_dict,
    mae,
    make_schedule_state,
    run_ladder,
)
from .lexicons import (
    DENSE_FEATURE_NAMES,
    FeatureContext,
    FeatureFlags,
    FeatureStats,
    FeatureVector,
    LexicalFeatures,
    Lexicon,
    LexiconBundle,
    build_user_index,
    extract_features,
    fit_feature_context,
    load_lexicon,
)
from .models import (
    COMPLEXITY_KINDS,
    DEFAULT_CLIP,
    KIND_FLAGS,
    KINDS,
    LINEAR_KINDS,
    NEURAL_KINDS,
    SCHEDULE_KINDS,
    TRAINABLE_KINDS,
    ClipRange,
    ModelState,
    Prediction,
    leitner_half_life,
    linear_half_life,
    linreg_recall,
    load_model,
    neural_half_life,
    observed_half_life,
    pimsleur_half_life,
    predict,
    recall_probability,
    save_model,
)
from .synth import SynthResult, SynthSpec, generate, write_synth_files
from .training import (
    EpochLog,
    GradCheckReport,
    Hyperparameters,
    LossBreakdown,
    derive_seed,
    gradient,
    gradient_check,
    loss,
    sgd_train,
)

__version__ = "0.1.0"
