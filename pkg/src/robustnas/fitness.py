"""Scalar fitness aggregation, the evaluator abstraction, result caching,
and the deterministic surrogate evaluator used for GPU-free testing."""

from __future__ import annotations

import hashlib
import math
import threading
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional

from .arch import Architecture, LayerType, ModelShapeConfig, active_nodes, canonical_hash, count_params
from .errors import EvaluationFailed

__all__ = [
    "FitnessWeights",
    "EvalScores",
    "ScoredIndividual",
    "SurrogateConfig",
    "DEFAULT_SURROGATE",
    "aggregate",
    "surrogate_features",
    "surrogate_features_names",
    "surrogate_eval",
    "surrogate_to_record",
    "make_surrogate",
    "EvalCache",
    "cached_eval",
    "Evaluator",
    "FAILED_FITNESS",
]

# Parameters enter the fitness in millions.
PARAMS_PER_UNIT = 1_000_000

# Sentinel for architectures whose evaluation failed: loses every tournament
# and is eliminated naturally instead of surviving with a fake score of 0.
FAILED_FITNESS = float("-inf")

Evaluator = Callable[[Architecture], "EvalScores"]


@dataclass(frozen=True)
class FitnessWeights:
    mu1: float = 1.0  # accuracy weight
    mu2: float = 1.0  # robustness weight
    mu3: float = 2.0  # efficiency weight (applied to -params, in millions)

    def __post_init__(self):
        for name in ("mu1", "mu2", "mu3"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")


@dataclass(frozen=True)
class EvalScores:
    """Raw evaluation outcome: benign accuracy and direct-attack robustness
    in percent, plus the total weight count."""

    accuracy_pct: float
    robustness_pct: float
    param_count: int

    def __post_init__(self):
        if not (0.0 <= self.accuracy_pct <= 100.0):
            raise ValueError(f"accuracy_pct {self.accuracy_pct} outside [0, 100]")
        if not (0.0 <= self.robustness_pct <= 100.0):
            raise ValueError(f"robustness_pct {self.robustness_pct} outside [0, 100]")
        if self.param_count < 0:
            raise ValueError("param_count must be non-negative")


@dataclass(frozen=True)
class ScoredIndividual:
    member_id: int
    arch: Architecture
    scores: Optional[EvalScores]
    fitness: float
    birth_generation: int
    eval_source: str  # "surrogate" or a worker id


def aggregate(scores: EvalScores, weights: FitnessWeights) -> float:
    """mu1 * accuracy% + mu2 * robustness% - mu3 * (params / 1e6)."""
    try:
        value = (
            weights.mu1 * scores.accuracy_pct
            + weights.mu2 * scores.robustness_pct
            + weights.mu3 * (-scores.param_count / PARAMS_PER_UNIT)
        )
    except OverflowError as exc:
        # param_count is an unbounded int; a ludicrous value must fail the
        # evaluation, not crash the engine loop
        raise EvaluationFailed(f"fitness overflow: {exc}") from exc
    if not math.isfinite(value):
        raise EvaluationFailed(f"non-finite fitness {value!r}; check the weight vector")
    return value


# ---------------------------------------------------------------------------
# Surrogate evaluator
# ---------------------------------------------------------------------------

def surrogate_features(arch: Architecture) -> dict[str, float]:
    """Feature vector the surrogate landscape is linear in.

    ``edge_balance`` is highest (zero) at 6 edges and falls off linearly, so
    a positive robustness coefficient rewards moderate connectivity.
    """
    active = active_nodes(arch.block)
    type_counts = {lt: 0 for lt in LayerType}
    for vertex in active:
        type_counts[arch.block.node(vertex).layer_type] += 1
    edges = len(arch.block.edges)
    return {
        "active_nodes": float(len(active)),
        "edge_count": float(edges),
        "edge_balance": -abs(edges - 6.0),
        "conv_nodes": float(type_counts[LayerType.CONV]),
        "sep_conv_nodes": float(type_counts[LayerType.SEP_CONV]),
        "attn_nodes": float(type_counts[LayerType.ATTN]),
        "glu_nodes": float(type_counts[LayerType.GLU]),
        "repeats": float(arch.repeats),
        "width_units": arch.hidden_width / 128.0,
    }


@dataclass(frozen=True)
class SurrogateConfig:
    """Deterministic synthetic landscape for engine tests.

    The default coefficients are a documented fixture, not a claim about
    real NLP behaviour: they reward active depth and moderate connectivity
    for robustness and penalise attention-heavy blocks for accuracy, so
    searches on the surrogate reproduce those qualitative directions.
    """

    acc_base: float = 70.0
    rob_base: float = 18.0
    acc_coeffs: Mapping[str, float] = field(
        default_factory=lambda: {
            "active_nodes": 2.0,
            "conv_nodes": 1.0,
            "sep_conv_nodes": 0.8,
            "glu_nodes": 0.8,
            "attn_nodes": -1.5,
            "repeats": 0.4,
            "width_units": 0.5,
        }
    )
    rob_coeffs: Mapping[str, float] = field(
        default_factory=lambda: {
            "active_nodes": 3.0,
            "edge_balance": 1.5,
            "sep_conv_nodes": 1.2,
            "attn_nodes": 1.0,
            "conv_nodes": -0.8,
            "glu_nodes": -0.8,
            "repeats": 0.6,
            "width_units": 0.5,
        }
    )
    noise_amplitude: float = 0.75
    noise_seed: int = 0
    shape: ModelShapeConfig = ModelShapeConfig()

    def __post_init__(self):
        known = set(surrogate_features_names())
        for table_name in ("acc_coeffs", "rob_coeffs"):
            table = dict(getattr(self, table_name))
            object.__setattr__(self, table_name, table)
            unknown = set(table) - known
            if unknown:
                raise ValueError(f"{table_name} references unknown feature(s): {sorted(unknown)}")
        if self.noise_amplitude < 0:
            raise ValueError("noise_amplitude must be >= 0")


def surrogate_features_names() -> tuple[str, ...]:
    return (
        "active_nodes",
        "edge_count",
        "edge_balance",
        "conv_nodes",
        "sep_conv_nodes",
        "attn_nodes",
        "glu_nodes",
        "repeats",
        "width_units",
    )


DEFAULT_SURROGATE = SurrogateConfig()


def surrogate_to_record(cfg: SurrogateConfig) -> dict:
    """Plain-data form of the landscape definition, for config digests."""
    from .arch import shape_to_record

    return {
        "acc_base": cfg.acc_base,
        "rob_base": cfg.rob_base,
        "acc_coeffs": dict(sorted(cfg.acc_coeffs.items())),
        "rob_coeffs": dict(sorted(cfg.rob_coeffs.items())),
        "noise_amplitude": cfg.noise_amplitude,
        "noise_seed": cfg.noise_seed,
        "shape": shape_to_record(cfg.shape),
    }


def _hash_noise(seed: int, key: str, salt: str) -> float:
    """Deterministic pseudo-noise in [-1, 1] from (seed, architecture, salt)."""
    digest = hashlib.sha256(f"{seed}:{salt}:{key}".encode("utf-8")).digest()
    raw = int.from_bytes(digest[:8], "big")
    return raw / float(2**64 - 1) * 2.0 - 1.0


def _clamp_pct(x: float) -> float:
    return max(0.0, min(100.0, x))


def surrogate_eval(arch: Architecture, cfg: SurrogateConfig = DEFAULT_SURROGATE) -> EvalScores:
    feats = surrogate_features(arch)
    key = canonical_hash(arch)
    acc = cfg.acc_base + sum(c * feats[name] for name, c in cfg.acc_coeffs.items())
    rob = cfg.rob_base + sum(c * feats[name] for name, c in cfg.rob_coeffs.items())
    acc += cfg.noise_amplitude * _hash_noise(cfg.noise_seed, key, "acc")
    rob += cfg.noise_amplitude * _hash_noise(cfg.noise_seed, key, "rob")
    return EvalScores(
        accuracy_pct=_clamp_pct(acc),
        robustness_pct=_clamp_pct(rob),
        param_count=count_params(arch, cfg.shape),
    )


def make_surrogate(cfg: SurrogateConfig = DEFAULT_SURROGATE) -> Evaluator:
    return lambda arch: surrogate_eval(arch, cfg)


# ---------------------------------------------------------------------------
# Result cache
# ---------------------------------------------------------------------------

class EvalCache:
    """Scores keyed by canonical architecture hash.

    Concurrent misses on the same key may both evaluate; last write wins,
    which is benign because evaluators are deterministic per architecture.
    Failed evaluations are never stored.
    """

    def __init__(self):
        self._store: dict[str, EvalScores] = {}
        self._lock = threading.Lock()
        self.hits = 0
        self.misses = 0

    def __len__(self) -> int:
        return len(self._store)

    def lookup(self, key: str) -> Optional[EvalScores]:
        with self._lock:
            scores = self._store.get(key)
            if scores is None:
                self.misses += 1
            else:
                self.hits += 1
            return scores

    def store(self, key: str, scores: EvalScores) -> None:
        with self._lock:
            self._store[key] = scores


def cached_eval(arch: Architecture, evaluator: Evaluator, cache: EvalCache) -> EvalScores:
    """Evaluate through the cache; evaluator failures propagate unstored."""
    key = canonical_hash(arch)
    hit = cache.lookup(key)
    if hit is not None:
        return hit
    scores = evaluator(arch)
    cache.store(key, scores)
    return scores
