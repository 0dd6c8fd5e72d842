"""Evolving voter model on dense random multigraphs."""

from .graph import (
    Bond,
    InvalidParameterError,
    NetState,
    audit,
    flip_opinion,
    move_edge,
    sample_disagreeing_edge,
    sample_initial,
)
from .dynamics import (
    Clock,
    CounterStats,
    ListRewireSampler,
    ModelVariant,
    OutcomeKind,
    Rewiring,
    RunSummary,
    StepOutcome,
    counter_engine_run,
    is_absorbed,
    run_until,
    step,
)

__version__ = "0.1.0"
