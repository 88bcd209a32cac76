"""Robustness-aware evolutionary architecture search over block DAGs.

The package splits into: the architecture data model and its canonical
record (`arch`), the feasible set (`space`), mutation operators
(`evolution`), fitness aggregation plus the surrogate evaluator and cache
(`fitness`), the steady-state search loop with checkpoints (`engine`), the
worker protocol (`dispatch`), history statistics (`analysis`), and the CLI
(`cli`).
"""

from .arch import (
    Activation,
    Architecture,
    BlockGraph,
    InputMode,
    LayerType,
    ModelShapeConfig,
    NodeSpec,
    OutputNodeSpec,
    ValidationReport,
    active_nodes,
    canonical_hash,
    count_params,
    count_params_breakdown,
    from_record,
    parse,
    serialize,
    to_record,
    validate,
)
from .engine import EngineConfig, SearchResult, run, run_async
from .errors import (
    CheckpointError,
    ConfigError,
    DispatchError,
    EvaluationFailed,
    EvolutionError,
    IncomparableError,
    PoolEmptyError,
    RecordParseError,
    RobustNasError,
    SpaceError,
)
from .evolution import EvolutionOp, OpKind, RepairStep, distance, epsilon, evolve
from .fitness import (
    EvalCache,
    EvalScores,
    FitnessWeights,
    ScoredIndividual,
    SurrogateConfig,
    aggregate,
    make_surrogate,
    surrogate_eval,
)
from .space import DEFAULT_SPACE, SearchSpaceDef, contains, enumerate_restricted, sample, simplest

__version__ = "0.1.0"
