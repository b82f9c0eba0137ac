"""Cross-edge model blending and the sample-weighted central aggregate.

Each edge mixes its own locally aggregated model (self-weight alpha) with the
other edges' models weighted by their share of the other edges' samples, then
clamps the result elementwise. The central server only ever sees these
edge-level models plus sample counts, never anything client-level.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .params import ParamVector, clip_elementwise, weighted_sum

DEFAULT_SELF_WEIGHT = 0.5
DEFAULT_CLIP_VAL = 5.0


@dataclass(frozen=True)
class EdgeUpdate:
    """An edge's locally aggregated model and the sample mass behind it."""

    edge_id: int
    local_model: ParamVector
    sample_count: int

    def __post_init__(self) -> None:
        if self.sample_count <= 0:
            raise ValueError(f"edge {self.edge_id}: sample_count must be positive")


@dataclass(frozen=True)
class CrossEdgeConfig:
    """Blend settings for the exchange step.

    With literal_total_normalization=False (default) the peer coefficients
    n_j / sum_{j != i} n_j form a convex combination, preserving model scale.
    The literal alternative divides by the global sample total instead, which
    shrinks the mixed model by (1 - alpha) * n_i / N; it is kept selectable
    for comparison. delta_mode subtracts a reference model from the peers'
    contributions, treating them as round deltas rather than full models.
    """

    alpha: float = DEFAULT_SELF_WEIGHT
    clip_val: float = DEFAULT_CLIP_VAL
    literal_total_normalization: bool = False
    delta_mode: bool = False

    def __post_init__(self) -> None:
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        if not self.clip_val > 0:
            raise ValueError(f"clip_val must be positive, got {self.clip_val}")


def cross_edge_exchange(
    updates: Sequence[EdgeUpdate],
    config: CrossEdgeConfig,
    reference: ParamVector | None = None,
) -> list[tuple[int, ParamVector]]:
    """Blend every edge's model with its peers'; returns (edge_id, model) sorted by id.

    For edge i: clip( alpha * w_i + (1 - alpha) * sum_{j != i} c_j * w_j )
    with c_j = n_j over the peers' (or the global) sample total. A single
    edge simply gets its own model clipped.
    """
    if not updates:
        raise ValueError("cross_edge_exchange requires at least one edge")
    ordered = sorted(updates, key=lambda u: u.edge_id)
    if len({u.edge_id for u in ordered}) != len(ordered):
        raise ValueError("duplicate edge ids")
    dim = ordered[0].local_model.dim
    if any(u.local_model.dim != dim for u in ordered):
        raise ValueError("all edge models must share one dimension")
    if config.delta_mode and reference is None:
        raise ValueError("delta_mode requires a reference model")
    total = sum(u.sample_count for u in ordered)
    if total <= 0:
        raise ValueError("zero total samples across edges")

    results = []
    for u in ordered:
        if len(ordered) == 1:
            results.append((u.edge_id, clip_elementwise(u.local_model, config.clip_val)))
            continue
        peers = [v for v in ordered if v.edge_id != u.edge_id]
        denom = total if config.literal_total_normalization else total - u.sample_count
        terms: list[tuple[float, ParamVector]] = [(config.alpha, u.local_model)]
        for v in peers:
            contribution = v.local_model - reference if config.delta_mode else v.local_model
            terms.append(((1.0 - config.alpha) * v.sample_count / denom, contribution))
        results.append((u.edge_id, clip_elementwise(weighted_sum(terms), config.clip_val)))
    return results


def central_aggregate(cross_models: Sequence[tuple[int, ParamVector, int]]) -> ParamVector:
    """Sample-weighted mean of the edges' cross-aggregated models."""
    if not cross_models:
        raise ValueError("central_aggregate requires at least one edge model")
    ordered = sorted(cross_models, key=lambda t: t[0])
    total = sum(n for _, _, n in ordered)
    if total <= 0:
        raise ValueError("zero total samples across edges")
    return weighted_sum([(n / total, model) for _, model, n in ordered])
