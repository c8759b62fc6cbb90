"""Graph layers and the one-shot structure-to-sequence network.

One layer runs, in order: MLP attention over each node's in-edges, the
attention-weighted node update, the edge update from the refreshed node
states, and a per-protein gate computed from the mean node state.
Residual connections and layer normalisation wrap the node and edge updates.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import geometry as geo
from . import ops
from .autodiff import Tensor, get_dtype
from .graph import FeatureConfig, ProteinGraph, feature_widths, virtual_columns

NUM_CLASSES = 20


@dataclass(frozen=True)
class ModelConfig:
    d: int = 128
    layers: int = 10
    heads: int = 4
    dropout: float = 0.1
    features: FeatureConfig = field(default_factory=FeatureConfig)

    def __post_init__(self):
        if self.layers < 0:
            raise ValueError("layers must be >= 0")
        if self.d < 1 or self.heads < 1 or self.d % self.heads:
            raise ValueError("heads must divide d")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["features"] = self.features.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["features"] = FeatureConfig.from_dict(d.get("features", {}))
        return cls(**d)


# ---------------------------------------------------------------------------
# parameter containers


@dataclass
class Linear:
    w: Tensor
    b: Tensor

    def __call__(self, x):
        return ops.affine(x, self.w, self.b)

    def named(self, prefix):
        return {f"{prefix}.w": self.w, f"{prefix}.b": self.b}


@dataclass
class MLP:
    """Two affine maps with GELU between."""

    first: Linear
    second: Linear

    def __call__(self, x):
        return self.second(ops.gelu(self.first(x)))

    def gathered(self, blocks):
        """Same as ``self(concat([x[idx] for x, idx in blocks]))``."""
        first = ops.gathered_affine(blocks, self.first.w, self.first.b)
        return self.second(ops.gelu(first))

    def named(self, prefix):
        return {**self.first.named(f"{prefix}.0"), **self.second.named(f"{prefix}.1")}


@dataclass
class Norm:
    gain: Tensor
    bias: Tensor

    def __call__(self, x):
        return ops.layer_norm(x, self.gain, self.bias)

    def named(self, prefix):
        return {f"{prefix}.gain": self.gain, f"{prefix}.bias": self.bias}


@dataclass
class LayerParams:
    att: MLP
    node: MLP
    edge: MLP
    gate: MLP
    node_norm: Norm
    edge_norm: Norm

    @property
    def heads(self) -> int:
        return self.att.second.w.shape[1]

    def named(self, prefix):
        out = {}
        for name in ("att", "node", "edge", "gate", "node_norm", "edge_norm"):
            out.update(getattr(self, name).named(f"{prefix}.{name}"))
        return out


@dataclass
class ModelParams:
    """All learnable tensors of the one-shot network."""

    config: ModelConfig
    node_in: Linear | None
    edge_in: Linear | None
    node_const: Tensor | None
    edge_const: Tensor | None
    node_in_norm: Norm
    edge_in_norm: Norm
    layers: list
    readout: Linear
    virtual: Tensor
    forward_calls: int = 0

    def named_tensors(self) -> dict:
        out = {}
        if self.node_in is not None:
            out.update(self.node_in.named("node_in"))
        else:
            out["node_const"] = self.node_const
        if self.edge_in is not None:
            out.update(self.edge_in.named("edge_in"))
        else:
            out["edge_const"] = self.edge_const
        out.update(self.node_in_norm.named("node_in_norm"))
        out.update(self.edge_in_norm.named("edge_in_norm"))
        for i, layer in enumerate(self.layers):
            out.update(layer.named(f"layers.{i}"))
        out.update(self.readout.named("readout"))
        out["virtual"] = self.virtual
        return out

    def num_parameters(self) -> int:
        return int(sum(t.value.size for t in self.named_tensors().values()))


class _Init:
    def __init__(self, rng, requires_grad):
        self.rng = rng
        self.rg = requires_grad

    def tensor(self, value):
        return Tensor(value, requires_grad=self.rg)

    def linear(self, fan_in, fan_out):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        return Linear(
            self.tensor(self.rng.uniform(-bound, bound, size=(fan_in, fan_out))),
            self.tensor(np.zeros(fan_out)),
        )

    def mlp(self, fan_in, hidden, fan_out):
        return MLP(self.linear(fan_in, hidden), self.linear(hidden, fan_out))

    def norm(self, d):
        return Norm(self.tensor(np.ones(d)), self.tensor(np.zeros(d)))

    def layer(self, d, heads):
        return LayerParams(
            att=self.mlp(3 * d, d, heads),
            node=self.mlp(2 * d, d, d),
            edge=self.mlp(3 * d, d, d),
            gate=self.mlp(d, d, d),
            node_norm=self.norm(d),
            edge_norm=self.norm(d),
        )


def init_layers(count: int, d: int, heads: int, rng, requires_grad=True) -> list:
    init = _Init(rng, requires_grad)
    return [init.layer(d, heads) for _ in range(count)]


def init_params(config: ModelConfig, seed: int = 0, requires_grad: bool = True) -> ModelParams:
    """Seeded initial parameters; virtual atoms start as seeded unit vectors."""
    rng = np.random.default_rng(seed)
    init = _Init(rng, requires_grad)
    f_n, f_e = feature_widths(config.features)
    d = config.d
    node_in = init.linear(f_n, d) if f_n else None
    edge_in = init.linear(f_e, d) if f_e else None
    node_const = None if f_n else init.tensor(rng.normal(scale=0.1, size=d))
    edge_const = None if f_e else init.tensor(rng.normal(scale=0.1, size=d))
    virtual = geo.init_virtual_atoms(config.features.n_virtual, seed=seed)
    return ModelParams(
        config=config,
        node_in=node_in,
        edge_in=edge_in,
        node_const=node_const,
        edge_const=edge_const,
        node_in_norm=init.norm(d),
        edge_in_norm=init.norm(d),
        layers=init_layers(config.layers, d, config.heads, rng, requires_grad),
        readout=init.linear(d, NUM_CLASSES),
        virtual=init.tensor(virtual.reshape(-1, 3)),
    )


def params_from_named(config: ModelConfig, named: dict, requires_grad: bool = True) -> ModelParams:
    """Rebuild ModelParams from a ``name -> array`` mapping (inverse of ``named_tensors``)."""
    t = {k: Tensor(np.asarray(v), requires_grad=requires_grad) for k, v in named.items()}

    def lin(p):
        return Linear(t[f"{p}.w"], t[f"{p}.b"])

    def mlp(p):
        return MLP(lin(f"{p}.0"), lin(f"{p}.1"))

    def norm(p):
        return Norm(t[f"{p}.gain"], t[f"{p}.bias"])

    layers = [
        LayerParams(
            att=mlp(f"layers.{i}.att"),
            node=mlp(f"layers.{i}.node"),
            edge=mlp(f"layers.{i}.edge"),
            gate=mlp(f"layers.{i}.gate"),
            node_norm=norm(f"layers.{i}.node_norm"),
            edge_norm=norm(f"layers.{i}.edge_norm"),
        )
        for i in range(config.layers)
    ]
    return ModelParams(
        config=config,
        node_in=lin("node_in") if "node_in.w" in t else None,
        edge_in=lin("edge_in") if "edge_in.w" in t else None,
        node_const=t.get("node_const"),
        edge_const=t.get("edge_const"),
        node_in_norm=norm("node_in_norm"),
        edge_in_norm=norm("edge_in_norm"),
        layers=layers,
        readout=lin("readout"),
        virtual=Tensor(t["virtual"].value.reshape(-1, 3), requires_grad=requires_grad),
    )


# ---------------------------------------------------------------------------
# layer operations


def _dropout(x, rate, rng):
    if not rate or rng is None:
        return x
    keep = (rng.random(x.shape) >= rate).astype(get_dtype()) / (1.0 - rate)
    return ops.mul(x, keep)


def attention_weights(h, e, src, dst, n: int, layer: LayerParams) -> Tensor:
    """Per-head attention ``a_ji``, normalised over each target's in-edges. Shape (m, heads)."""
    counts = np.bincount(np.asarray(dst), minlength=n)
    if (counts == 0).any():
        raise ValueError("every node needs at least one in-edge to normalise attention")
    logits = layer.att.gathered([(h, src), (e, None), (h, dst)])
    return ops.segment_softmax(logits, dst, n)


def node_update(h, e, a, src, dst, n: int, layer: LayerParams, dropout=0.0, rng=None) -> Tensor:
    """``norm(h_i + sum_j a_ji * NodeMLP(e_ji || h_j))`` with heads taking equal slices of d."""
    if ops._val(e).shape[0] != len(src) or ops._val(a).shape[0] != len(src):
        raise ValueError("edge rows, attention rows and edge list must align")
    values = layer.node.gathered([(e, None), (h, src)])
    agg = ops.segment_weighted_sum(a, values, dst, n)
    return layer.node_norm(ops.add(h, _dropout(agg, dropout, rng)))


def edge_update(hh, e, src, dst, layer: LayerParams, dropout=0.0, rng=None) -> Tensor:
    """``norm(e_ji + EdgeMLP(hh_j || e_ji || hh_i))``."""
    if ops._val(e).shape[0] != len(src):
        raise ValueError("edge rows and edge list must align")
    msg = layer.edge.gathered([(hh, src), (e, None), (hh, dst)])
    return layer.edge_norm(ops.add(e, _dropout(msg, dropout, rng)))


def global_gate(hh, protein_ids, num_proteins: int, layer: LayerParams) -> Tensor:
    """Scale each node state by ``sigmoid(GateMLP(mean state of its protein))``."""
    context = ops.segment_mean(hh, protein_ids, num_proteins)
    gate = ops.sigmoid(layer.gate(context))
    return ops.mul(hh, ops.gather_rows(gate, protein_ids))


def pignn_layer(h, e, src, dst, protein_ids, num_proteins, layer, dropout=0.0, rng=None):
    """One full layer; returns ``(h', e')`` with unchanged shapes."""
    n = ops._val(h).shape[0]
    if len(src):
        a = attention_weights(h, e, src, dst, n, layer)
        hh = node_update(h, e, a, src, dst, n, layer, dropout, rng)
        e = edge_update(hh, e, src, dst, layer, dropout, rng)
    else:
        # isolated single residue: nothing to aggregate
        hh = layer.node_norm(h)
    return global_gate(hh, protein_ids, num_proteins, layer), e


# ---------------------------------------------------------------------------
# full network


def input_features(graph: ProteinGraph, params: ModelParams):
    """Node and edge input matrices with virtual-atom blocks recomputed from ``params.virtual``."""
    cfg = graph.config
    node_x = graph.node_features
    edge_x = graph.edge_features
    nv = cfg.n_virtual
    node_cols, edge_cols = virtual_columns(cfg)
    if nv == 0 or (node_cols.stop == node_cols.start and edge_cols.stop == edge_cols.start):
        return node_x, edge_x
    points = ops.frame_points(graph.rotations, graph.origins, params.virtual)
    if node_cols.stop > node_cols.start:
        vblock = ops.pair_distance_rbf(points, points, cfg.node_virtual_pairs, geo.RBF_CENTERS, geo.RBF_SIGMA)
        node_x = ops.concat([node_x[:, : node_cols.start], vblock, node_x[:, node_cols.stop :]])
    if edge_cols.stop > edge_cols.start:
        vblock = ops.pair_distance_rbf(
            ops.gather_rows(points, graph.src),
            ops.gather_rows(points, graph.dst),
            cfg.edge_virtual_pairs,
            geo.RBF_CENTERS,
            geo.RBF_SIGMA,
        )
        edge_x = ops.concat([edge_x[:, : edge_cols.start], vblock, edge_x[:, edge_cols.stop :]])
    return node_x, edge_x


def embed_inputs(graph: ProteinGraph, params: ModelParams):
    """Project features to width d: ``(h0, e0)``."""
    node_x, edge_x = input_features(graph, params)
    d = params.config.d
    if params.node_in is not None:
        h = params.node_in_norm(params.node_in(node_x))
    else:
        h = params.node_in_norm(ops.add(np.zeros((graph.n, d)), params.node_const))
    if params.edge_in is not None:
        e = params.edge_in_norm(params.edge_in(edge_x))
    else:
        e = params.edge_in_norm(ops.add(np.zeros((graph.m, d)), params.edge_const))
    return h, e


def encode(graph: ProteinGraph, params: ModelParams, layers=None, train=False, rng=None):
    """Input projections followed by ``layers`` (default: all of ``params.layers``)."""
    h, e = embed_inputs(graph, params)
    rate = params.config.dropout if train else 0.0
    for layer in params.layers if layers is None else layers:
        h, e = pignn_layer(h, e, graph.src, graph.dst, graph.protein_ids, graph.num_proteins, layer, rate, rng)
    return h, e


def forward(graph: ProteinGraph, params: ModelParams, train: bool = False, rng=None) -> Tensor:
    """Logits (n, 20) for every graph node from a single pass over the structure."""
    params.forward_calls += 1
    h, _ = encode(graph, params, train=train, rng=rng)
    return params.readout(h)


def with_config(params: ModelParams, **changes) -> ModelParams:
    return replace(params, config=replace(params.config, **changes))
