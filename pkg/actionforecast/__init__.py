"""actionforecast - anticipating future activities from partially observed videos"""

__version__ = "0.1.0"

from .baselines import GrammarForecaster, NearestNeighborForecaster, build_grammar  # noqa: E402
from .cnn import CnnConfig, CnnForecaster, CnnModel, train_cnn  # noqa: E402
from .data import (  # noqa: E402
    Corpus,
    SplitSpec,
    generate_synthetic,
    load_corpus,
    load_corpus_async,
    load_grammar_spec,
    load_split,
)
from .evaluation import evaluate_grid, moc_accuracy  # noqa: E402
from .exceptions import (  # noqa: E402
    ConsistencyError,
    ForecastIncomplete,
    InputError,
    NumericalError,
)
from .rnn import RnnConfig, RnnForecaster, RnnModel, train_rnn  # noqa: E402
from .timeline import FrameTimeline, LabelVocabulary, SegmentSequence  # noqa: E402

__all__ = [
    "CnnConfig",
    "CnnForecaster",
    "CnnModel",
    "ConsistencyError",
    "Corpus",
    "ForecastIncomplete",
    "FrameTimeline",
    "GrammarForecaster",
    "InputError",
    "LabelVocabulary",
    "NearestNeighborForecaster",
    "NumericalError",
    "RnnConfig",
    "RnnForecaster",
    "RnnModel",
    "SegmentSequence",
    "SplitSpec",
    "build_grammar",
    "evaluate_grid",
    "generate_synthetic",
    "load_corpus",
    "load_corpus_async",
    "load_grammar_spec",
    "load_split",
    "moc_accuracy",
    "train_cnn",
    "train_rnn",
]
