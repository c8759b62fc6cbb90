"""k-NN residue graphs and their node/edge feature matrices.

Column layout (``LAYOUT_VERSION``), each block present only when its flag is on:

node features
    distance    RBF of the 6 intra-residue atom pairs, then of the
                C(K, 2) virtual-atom pairs                     16 cols each
    angle       (sin, cos) of alpha, beta, gamma, phi, psi, omega  12 cols
    direction   N, C, O seen from CA_i in frame i                  9 cols

edge features (directed edge j -> i; atom A from residue j, B from residue i)
    distance    RBF of the whitelisted typed pairs, then the K*K
                virtual cross pairs (V_j^k, V_i^l)             16 cols each
    angle       quaternion of Q_i^T Q_j                            4 cols
    direction   N_j, CA_j, C_j, O_j seen from CA_i in frame i     12 cols
    position    sin/cos of the clipped sequence offset j - i      16 cols

Only residues with complete coordinates become graph nodes.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from itertools import combinations

import numpy as np

from . import geometry as geo
from .geometry import Protein

LAYOUT_VERSION = "invfold-layout/1"

NODE_PAIRS = (("CA", "N"), ("CA", "C"), ("CA", "O"), ("N", "C"), ("N", "O"), ("C", "O"))
EDGE_PAIRS = (
    ("CA", "CA"),
    ("CA", "C"),
    ("CA", "N"),
    ("CA", "O"),
    ("C", "C"),
    ("C", "N"),
    ("C", "O"),
    ("N", "N"),
    ("N", "O"),
    ("O", "O"),
)
_ATOM = {name: i for i, name in enumerate(geo.ATOMS)}

POSITION_CLIP = 32
POSITION_DIMS = 16
_POSITION_FREQS = np.pi / 2.0 ** np.arange(1, POSITION_DIMS // 2 + 1)


def pair_name(pair) -> str:
    return f"{pair[0]}-{pair[1]}"


@dataclass(frozen=True)
class FeatureConfig:
    node_distance: bool = True
    node_angle: bool = True
    node_direction: bool = True
    edge_distance: bool = True
    edge_angle: bool = True
    edge_direction: bool = True
    edge_position: bool = True
    edge_pairs: tuple = tuple(pair_name(p) for p in EDGE_PAIRS)
    n_virtual: int = 3
    k: int = 30

    def __post_init__(self):
        object.__setattr__(self, "edge_pairs", tuple(self.edge_pairs))
        known = {pair_name(p) for p in EDGE_PAIRS}
        unknown = set(self.edge_pairs) - known
        if unknown:
            raise ValueError(f"unknown edge distance pairs: {sorted(unknown)}")
        if len(set(self.edge_pairs)) != len(self.edge_pairs):
            raise ValueError("duplicate edge distance pairs")
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if not 0 <= self.n_virtual <= 3:
            raise ValueError("n_virtual must be in 0..3")
        flags = (
            self.node_distance,
            self.node_angle,
            self.node_direction,
            self.edge_distance,
            self.edge_angle,
            self.edge_direction,
            self.edge_position,
        )
        if not any(flags):
            raise ValueError("at least one feature family must be enabled")

    @property
    def node_virtual_pairs(self):
        return list(combinations(range(self.n_virtual), 2))

    @property
    def edge_virtual_pairs(self):
        return [(a, b) for a in range(self.n_virtual) for b in range(self.n_virtual)]

    @property
    def edge_pair_indices(self):
        # canonical EDGE_PAIRS order whatever order the whitelist uses
        chosen = set(self.edge_pairs)
        return [(_ATOM[a], _ATOM[b]) for a, b in EDGE_PAIRS if f"{a}-{b}" in chosen]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["edge_pairs"] = list(self.edge_pairs)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureConfig":
        return cls(**d)


def describe_layout(config: FeatureConfig) -> dict:
    """Column ranges for every feature block under ``config``."""
    nr = geo.RBF_COUNT
    node, edge = [], []

    def push(table, name, width):
        start = table[-1]["stop"] if table else 0
        table.append({"name": name, "start": start, "stop": start + width})

    if config.node_distance:
        for p in NODE_PAIRS:
            push(node, f"node.distance.{pair_name(p)}", nr)
        for a, b in config.node_virtual_pairs:
            push(node, f"node.distance.V{a}-V{b}", nr)
    if config.node_angle:
        for name in geo.ANGLE_NAMES:
            push(node, f"node.angle.{name}", 2)
    if config.node_direction:
        for atom in ("N", "C", "O"):
            push(node, f"node.direction.{atom}", 3)
    if config.edge_distance:
        for a, b in config.edge_pair_indices:
            push(edge, f"edge.distance.{geo.ATOMS[a]}-{geo.ATOMS[b]}", nr)
        for a, b in config.edge_virtual_pairs:
            push(edge, f"edge.distance.V{a}-V{b}", nr)
    if config.edge_angle:
        push(edge, "edge.angle.quaternion", 4)
    if config.edge_direction:
        for atom in geo.ATOMS:
            push(edge, f"edge.direction.{atom}", 3)
    if config.edge_position:
        push(edge, "edge.position", POSITION_DIMS)

    return {
        "version": LAYOUT_VERSION,
        "config": config.to_dict(),
        "node_width": node[-1]["stop"] if node else 0,
        "edge_width": edge[-1]["stop"] if edge else 0,
        "node": node,
        "edge": edge,
    }


def layout_hash(config: FeatureConfig) -> str:
    blob = json.dumps(describe_layout(config), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def feature_widths(config: FeatureConfig) -> tuple[int, int]:
    """(f_n, f_e) by layout arithmetic."""
    nr = geo.RBF_COUNT
    kv = config.n_virtual
    f_n = (
        config.node_distance * (len(NODE_PAIRS) + kv * (kv - 1) // 2) * nr
        + config.node_angle * 12
        + config.node_direction * 9
    )
    f_e = (
        config.edge_distance * (len(config.edge_pairs) + kv * kv) * nr
        + config.edge_angle * 4
        + config.edge_direction * 12
        + config.edge_position * POSITION_DIMS
    )
    return int(f_n), int(f_e)


def virtual_columns(config: FeatureConfig) -> tuple[slice, slice]:
    """Column slices holding virtual-atom distances in node and edge features."""
    nr = geo.RBF_COUNT
    if not config.node_distance:
        node = slice(0, 0)
    else:
        start = len(NODE_PAIRS) * nr
        node = slice(start, start + len(config.node_virtual_pairs) * nr)
    if not config.edge_distance:
        edge = slice(0, 0)
    else:
        start = len(config.edge_pairs) * nr
        edge = slice(start, start + len(config.edge_virtual_pairs) * nr)
    return node, edge


# ---------------------------------------------------------------------------


def build_knn_graph(ca_coords: np.ndarray, k: int):
    """Directed edges ``j -> i`` from each node's ``min(k, n-1)`` nearest CA neighbours.

    Ties break toward the lower residue index. Edges are grouped by target
    and, within a target, ordered nearest first. Returns ``(src, dst)``.
    """
    ca = np.asarray(ca_coords, dtype=np.float64)
    n = len(ca)
    if n < 2:
        raise ValueError("k-NN graph needs at least two residues")
    if k < 1:
        raise ValueError("k must be >= 1")
    kk = min(k, n - 1)
    diff = ca[:, None, :] - ca[None, :, :]
    dist = np.sqrt((diff * diff).sum(-1))
    np.fill_diagonal(dist, np.inf)
    order = np.argsort(dist, axis=1, kind="stable")[:, :kk]
    dst = np.repeat(np.arange(n), kk)
    src = order.reshape(-1)
    return src.astype(np.int64), dst.astype(np.int64)


@dataclass
class ProteinGraph:
    """Featurised graph for one protein or a batch of proteins.

    ``node_residue`` maps each node to its residue position inside its own
    protein; ``protein_ids`` maps nodes to batch members.
    """

    config: FeatureConfig
    node_features: np.ndarray
    edge_features: np.ndarray
    src: np.ndarray
    dst: np.ndarray
    protein_ids: np.ndarray
    node_residue: np.ndarray
    labels: np.ndarray
    rotations: np.ndarray
    origins: np.ndarray
    lengths: list = field(default_factory=list)
    names: list = field(default_factory=list)
    residue_masks: list = field(default_factory=list)

    @property
    def n(self) -> int:
        return len(self.node_features)

    @property
    def m(self) -> int:
        return len(self.src)

    @property
    def num_proteins(self) -> int:
        return len(self.lengths)


def _flat(x):
    # (rows, ...) -> (rows, cols); works for zero rows too
    return x.reshape(x.shape[0], int(np.prod(x.shape[1:])))


def _edge_position(offsets):
    clipped = np.clip(offsets, -POSITION_CLIP, POSITION_CLIP).astype(np.float64)
    ang = clipped[:, None] * _POSITION_FREQS
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)


def _virtual_node_block(config, vparams, frames):
    pairs = config.node_virtual_pairs
    if not pairs:
        return np.zeros((len(frames), 0))
    v = np.einsum("nab,kb->nka", frames.rotations, vparams) + frames.origins[:, None, :]
    d = np.stack([np.linalg.norm(v[:, a] - v[:, b], axis=-1) for a, b in pairs], axis=1)
    return _flat(geo.rbf_encode(d))


def _virtual_edge_block(config, vparams, frames, src, dst):
    pairs = config.edge_virtual_pairs
    if not pairs:
        return np.zeros((len(src), 0))
    v = np.einsum("nab,kb->nka", frames.rotations, vparams) + frames.origins[:, None, :]
    vj, vi = v[src], v[dst]
    d = np.stack([np.linalg.norm(vj[:, a] - vi[:, b], axis=-1) for a, b in pairs], axis=1)
    return _flat(geo.rbf_encode(d))


def assemble_node_features(protein: Protein, frames: geo.LocalFrames, vparams, config: FeatureConfig, nodes=None):
    """Node feature matrix for residues ``nodes`` (default: all valid residues)."""
    nodes = np.flatnonzero(protein.mask) if nodes is None else np.asarray(nodes)
    vparams = np.asarray(vparams, dtype=np.float64).reshape(-1, 3)
    if len(vparams) != config.n_virtual:
        raise ValueError(f"expected {config.n_virtual} virtual atoms, got {len(vparams)}")
    fr = frames[nodes]
    xyz = protein.coords[nodes]
    blocks = []
    if config.node_distance:
        d = np.stack([np.linalg.norm(xyz[:, _ATOM[a]] - xyz[:, _ATOM[b]], axis=-1) for a, b in NODE_PAIRS], axis=1)
        blocks.append(_flat(geo.rbf_encode(d)))
        blocks.append(_virtual_node_block(config, vparams, fr))
    if config.node_angle:
        pairs, _ = geo.backbone_angles(protein)
        blocks.append(_flat(pairs[nodes]))
    if config.node_direction:
        dirs, _ = geo.direction_features(fr.rotations, fr.origins, xyz[:, [0, 2, 3]])
        blocks.append(_flat(dirs))
    if not blocks:
        return np.zeros((len(nodes), 0))
    return np.concatenate(blocks, axis=1)


def assemble_edge_features(protein, frames, vparams, edges, config: FeatureConfig, nodes=None):
    """Edge feature matrix for ``edges = (src, dst)`` given as node indices into ``nodes``."""
    nodes = np.flatnonzero(protein.mask) if nodes is None else np.asarray(nodes)
    vparams = np.asarray(vparams, dtype=np.float64).reshape(-1, 3)
    if len(vparams) != config.n_virtual:
        raise ValueError(f"expected {config.n_virtual} virtual atoms, got {len(vparams)}")
    src, dst = (np.asarray(e, dtype=np.int64) for e in edges)
    if (src == dst).any():
        raise ValueError("self-loops are not allowed")
    fr = frames[nodes]
    xyz = protein.coords[nodes]
    m = len(src)
    blocks = []
    if config.edge_distance:
        idx = config.edge_pair_indices
        if idx:
            d = np.stack([np.linalg.norm(xyz[src, a] - xyz[dst, b], axis=-1) for a, b in idx], axis=1)
            blocks.append(_flat(geo.rbf_encode(d)))
        blocks.append(_virtual_edge_block(config, vparams, fr, src, dst))
    if config.edge_angle:
        blocks.append(geo.quaternion_rel(fr.rotations[dst], fr.rotations[src], check=False))
    if config.edge_direction:
        dirs, _ = geo.direction_features(fr.rotations[dst], fr.origins[dst], xyz[src])
        blocks.append(_flat(dirs))
    if config.edge_position:
        blocks.append(_edge_position(nodes[src] - nodes[dst]))
    if not blocks:
        return np.zeros((m, 0))
    return np.concatenate(blocks, axis=1)


def featurize(protein: Protein, config: FeatureConfig, vparams) -> ProteinGraph:
    """Featurise one protein. Deterministic in (protein, config, vparams)."""
    nodes = np.flatnonzero(protein.mask)
    if len(nodes) == 0:
        raise ValueError(f"{protein.name}: no residue has complete coordinates")
    frames = geo.local_frames(protein)
    if len(nodes) >= 2:
        src, dst = build_knn_graph(protein.CA[nodes], config.k)
    else:
        src = dst = np.zeros(0, dtype=np.int64)
    node_x = assemble_node_features(protein, frames, vparams, config, nodes)
    edge_x = assemble_edge_features(protein, frames, vparams, (src, dst), config, nodes)
    fr = frames[nodes]
    return ProteinGraph(
        config=config,
        node_features=node_x,
        edge_features=edge_x,
        src=src,
        dst=dst,
        protein_ids=np.zeros(len(nodes), dtype=np.int64),
        node_residue=nodes.astype(np.int64),
        labels=protein.sequence[nodes].copy(),
        rotations=fr.rotations.copy(),
        origins=fr.origins.copy(),
        lengths=[len(protein)],
        names=[protein.name],
        residue_masks=[protein.mask.copy()],
    )


def batch_graphs(graphs) -> ProteinGraph:
    """Concatenate graphs into one disjoint batch graph."""
    graphs = list(graphs)
    if not graphs:
        raise ValueError("empty batch")
    if len(graphs) == 1:
        return graphs[0]
    config = graphs[0].config
    if any(g.config != config for g in graphs):
        raise ValueError("all graphs in a batch must share a FeatureConfig")
    offsets = np.cumsum([0] + [g.n for g in graphs])
    pid_offsets = np.cumsum([0] + [g.num_proteins for g in graphs])
    return ProteinGraph(
        config=config,
        node_features=np.concatenate([g.node_features for g in graphs]),
        edge_features=np.concatenate([g.edge_features for g in graphs]),
        src=np.concatenate([g.src + o for g, o in zip(graphs, offsets)]),
        dst=np.concatenate([g.dst + o for g, o in zip(graphs, offsets)]),
        protein_ids=np.concatenate([g.protein_ids + p for g, p in zip(graphs, pid_offsets)]),
        node_residue=np.concatenate([g.node_residue for g in graphs]),
        labels=np.concatenate([g.labels for g in graphs]),
        rotations=np.concatenate([g.rotations for g in graphs]),
        origins=np.concatenate([g.origins for g in graphs]),
        lengths=[n for g in graphs for n in g.lengths],
        names=[s for g in graphs for s in g.names],
        residue_masks=[mk for g in graphs for mk in g.residue_masks],
    )


def permute_graph(graph: ProteinGraph, perm: np.ndarray) -> ProteinGraph:
    """Relabel nodes so that new node ``t`` is old node ``perm[t]``."""
    perm = np.asarray(perm)
    inv = np.empty_like(perm)
    inv[perm] = np.arange(len(perm))
    return ProteinGraph(
        config=graph.config,
        node_features=graph.node_features[perm],
        edge_features=graph.edge_features,
        src=inv[graph.src],
        dst=inv[graph.dst],
        protein_ids=graph.protein_ids[perm],
        node_residue=graph.node_residue[perm],
        labels=graph.labels[perm],
        rotations=graph.rotations[perm],
        origins=graph.origins[perm],
        lengths=list(graph.lengths),
        names=list(graph.names),
        residue_masks=list(graph.residue_masks),
    )
