"""Sub-network interpretation from attention traces.

Aggregates the final block's node-to-subgraph attention over a cohort into
soft/hard node assignments, maps them onto reference atlas labels, and ranks
subgraph tokens by their share of the graph token's attention.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .autodiff import no_grad
from .data import DatasetManifest, SubjectRecord
from .errors import EmptyDataset, MissingAtlasLabels, ShapeMismatch
from .model import ModelConfig, ModelParams, forward_batch

SUPPORT_THRESHOLD = 0.01  # sparse attention leaves mostly exact zeros; this trims dust


@dataclass(frozen=True)
class SubnetworkAssignment:
    """Cohort-mean soft assignment (K x n), per-node argmax, and per-subgraph
    support node sets."""

    soft_assignment: np.ndarray
    hard_assignment: np.ndarray
    support_masks: tuple[tuple[int, ...], ...]


@dataclass(frozen=True)
class AtlasOverlapTable:
    """Row k gives the atlas-label composition of subgraph k's hard nodes."""

    labels: tuple[str, ...]
    proportions: np.ndarray  # K x len(labels), rows sum to 1


@dataclass(frozen=True)
class SubgraphImportance:
    """Graph-attention share per subgraph token (self-weight excluded)."""

    weights: np.ndarray
    ranking: tuple[int, ...]  # subgraph indices, most important first


def select_cohort(
    ds: DatasetManifest, ids=None, include_controls: bool = False
) -> list[SubjectRecord]:
    """Interpretation cohort: patients by default, optionally everyone."""
    records = ds.subset(ids) if ids is not None else list(ds.subjects)
    if not include_controls:
        records = [rec for rec in records if rec.label == 1]
    if not records:
        raise EmptyDataset("interpretation cohort is empty")
    return records


def _cohort_traces(
    params: ModelParams, config: ModelConfig, records: list[SubjectRecord]
) -> tuple[np.ndarray, np.ndarray]:
    """(B, K, n) final-block pool attention and (B, K+1) graph attention."""
    if not records:
        raise EmptyDataset("no subjects to interpret")
    n = records[0].matrix.n
    if n != config.n:
        raise ShapeMismatch(f"cohort node count {n} != checkpoint node count {config.n}")
    matrices = np.stack([rec.matrix.values for rec in records])
    with no_grad():
        out = forward_batch(matrices, params, config, mode="eval")
    return out.trace.node_to_subgraph[-1], out.trace.subgraph_to_graph


def aggregate_assignments(
    params: ModelParams, config: ModelConfig, records: list[SubjectRecord]
) -> SubnetworkAssignment:
    """Average the final-block attention over the cohort, row-renormalized."""
    pool_traces, _ = _cohort_traces(params, config, records)
    soft = pool_traces.mean(axis=0)
    soft = soft / soft.sum(axis=-1, keepdims=True)
    hard = np.argmax(soft, axis=0)
    masks = tuple(
        tuple(int(i) for i in np.nonzero(row > SUPPORT_THRESHOLD)[0]) for row in soft
    )
    return SubnetworkAssignment(
        soft_assignment=soft, hard_assignment=hard, support_masks=masks
    )


def atlas_overlap(assign: SubnetworkAssignment, atlas_labels) -> AtlasOverlapTable:
    """Fraction of each subgraph's hard-assigned nodes per atlas label."""
    if atlas_labels is None:
        raise MissingAtlasLabels("dataset carries no atlas labels")
    atlas_labels = tuple(atlas_labels)
    k, n = assign.soft_assignment.shape
    if len(atlas_labels) != n:
        raise ShapeMismatch(f"{len(atlas_labels)} atlas labels for {n} nodes")
    columns = tuple(sorted(set(atlas_labels)))
    column_of = {label: j for j, label in enumerate(columns)}
    table = np.zeros((k, len(columns)))
    for subgraph in range(k):
        nodes = np.nonzero(assign.hard_assignment == subgraph)[0]
        if nodes.size == 0:
            warnings.warn(f"subgraph {subgraph} has no hard-assigned nodes; uniform row")
            table[subgraph] = 1.0 / len(columns)
            continue
        for node in nodes:
            table[subgraph, column_of[atlas_labels[node]]] += 1.0
        table[subgraph] /= nodes.size
    return AtlasOverlapTable(labels=columns, proportions=table)


def rank_subgraphs(
    params: ModelParams, config: ModelConfig, records: list[SubjectRecord]
) -> SubgraphImportance:
    """Cohort-mean graph attention per subgraph, self-weight dropped."""
    _, graph_traces = _cohort_traces(params, config, records)
    mean_attention = graph_traces.mean(axis=0)
    weights = mean_attention[1:]  # index 0 is the graph token itself
    weights = weights / weights.sum()
    ranking = tuple(int(i) for i in np.argsort(-weights, kind="stable"))
    return SubgraphImportance(weights=weights, ranking=ranking)


def jaccard(a, b) -> float:
    """Overlap of two node sets; ground-truth recovery score."""
    a, b = set(a), set(b)
    if not a and not b:
        return 1.0
    return len(a & b) / len(a | b)


def mean_token_cosine(
    params: ModelParams, config: ModelConfig, records: list[SubjectRecord]
) -> float:
    """Cohort mean of pairwise cosine similarity between final subgraph tokens."""
    if not records:
        raise EmptyDataset("no subjects")
    matrices = np.stack([rec.matrix.values for rec in records])
    with no_grad():
        out = forward_batch(matrices, params, config, mode="eval")
    tokens = out.subgraph_tokens.data  # (B, K, d)
    unit = tokens / np.linalg.norm(tokens, axis=-1, keepdims=True)
    gram = unit @ unit.swapaxes(-1, -2)
    k = gram.shape[-1]
    upper = np.triu_indices(k, k=1)
    return float(gram[:, upper[0], upper[1]].mean())


def _write_csv(path: Path, header: str, rows) -> None:
    with open(path, "w") as f:
        f.write(header + "\n")
        for row in rows:
            f.write(",".join(row) + "\n")


def export_report(
    assign: SubnetworkAssignment,
    overlap: AtlasOverlapTable | None,
    importance: SubgraphImportance,
    out_dir: str | Path,
    atlas_labels=None,
) -> list[Path]:
    """Plot-ready CSV matrices; deterministic ordering, full float precision."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []

    k, n = assign.soft_assignment.shape
    path = out_dir / "soft_assignment.csv"
    _write_csv(
        path,
        "subgraph," + ",".join(f"node_{j}" for j in range(n)),
        (
            [str(i)] + [f"{v:.17g}" for v in assign.soft_assignment[i]]
            for i in range(k)
        ),
    )
    written.append(path)

    path = out_dir / "hard_assignment.csv"
    _write_csv(
        path,
        "node,subgraph",
        ([str(j), str(int(assign.hard_assignment[j]))] for j in range(n)),
    )
    written.append(path)

    if overlap is not None:
        path = out_dir / "atlas_overlap.csv"
        _write_csv(
            path,
            "subgraph," + ",".join(overlap.labels),
            (
                [str(i)] + [f"{v:.17g}" for v in overlap.proportions[i]]
                for i in range(k)
            ),
        )
        written.append(path)

    path = out_dir / "importance.csv"
    _write_csv(
        path,
        "subgraph,weight,rank",
        (
            [str(i), f"{assign_weight:.17g}", str(importance.ranking.index(i))]
            for i, assign_weight in enumerate(importance.weights)
        ),
    )
    written.append(path)

    path = out_dir / "subgraph_nodes.csv"
    rows = []
    for subgraph, mask in enumerate(assign.support_masks):
        for node in mask:
            label = atlas_labels[node] if atlas_labels else ""
            rows.append(
                [
                    str(subgraph),
                    str(node),
                    label,
                    f"{assign.soft_assignment[subgraph, node]:.17g}",
                ]
            )
    _write_csv(path, "subgraph,node,atlas_label,weight", rows)
    written.append(path)
    return written
