"""One-shot and autoregressive decoding.

The autoregressive decoder exists for the latency trade-off study. Its
encoder layers run once. Its decoder layers are ordinary graph layers that
re-run over the whole graph for every position ``t``. For step ``t`` an
edge whose source node index is below ``t`` has the learned embedding of
that source's decoded label added to its features; all other edges get
nothing added. Position order is node order, which is residue order for a
single featurised protein.

Decoding is greedy and ties go to the lowest residue code (``np.argmax``).
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import ops
from .autodiff import Tensor
from .graph import ProteinGraph
from .pignn import NUM_CLASSES, Linear, ModelConfig, ModelParams, _Init, encode, forward, init_layers, pignn_layer


@dataclass
class DecodeOutput:
    """Node-level predictions; ``log_probs`` rows are log-softmax outputs."""

    sequence: np.ndarray
    log_probs: np.ndarray
    wall_time: float
    protein_ids: np.ndarray
    node_residue: np.ndarray

    def for_protein(self, index: int, length: int):
        """Residue-level ``(codes, log_probs, mask)`` for batch member ``index``.

        Residues without a node (missing coordinates) get code 0 and uniform
        log-probabilities, and are ``False`` in the mask.
        """
        rows = np.flatnonzero(self.protein_ids == index)
        codes = np.zeros(length, dtype=np.int64)
        logp = np.full((length, NUM_CLASSES), -np.log(NUM_CLASSES))
        mask = np.zeros(length, dtype=bool)
        pos = self.node_residue[rows]
        codes[pos] = self.sequence[rows]
        logp[pos] = self.log_probs[rows]
        mask[pos] = True
        return codes, logp, mask


def _finish(logits: np.ndarray, graph: ProteinGraph, started: float) -> DecodeOutput:
    logp = ops.log_softmax(np.asarray(logits, dtype=np.float64))
    return DecodeOutput(
        sequence=np.argmax(logp, axis=1).astype(np.int64),
        log_probs=logp,
        wall_time=time.perf_counter() - started,
        protein_ids=np.asarray(graph.protein_ids),
        node_residue=np.asarray(graph.node_residue),
    )


def one_shot_decode(graph: ProteinGraph, params: ModelParams) -> DecodeOutput:
    """All positions from a single forward pass."""
    started = time.perf_counter()
    logits = forward(graph, params).value
    return _finish(logits, graph, started)


# ---------------------------------------------------------------------------
# autoregressive variant


@dataclass
class DecoderParams:
    label_embed: Tensor  # (20, d)
    layers: list
    readout: Linear

    @property
    def depth(self) -> int:
        return len(self.layers)

    def named_tensors(self) -> dict:
        out = {"label_embed": self.label_embed}
        for i, layer in enumerate(self.layers):
            out.update(layer.named(f"layers.{i}"))
        out.update(self.readout.named("readout"))
        return out


def init_decoder(config: ModelConfig, depth: int, seed: int = 0, requires_grad: bool = False) -> DecoderParams:
    if depth < 1:
        raise ValueError("the autoregressive decoder needs at least one layer")
    rng = np.random.default_rng([seed, 1])
    init = _Init(rng, requires_grad)
    return DecoderParams(
        label_embed=init.tensor(rng.normal(scale=1.0 / np.sqrt(config.d), size=(NUM_CLASSES, config.d))),
        layers=init_layers(depth, config.d, config.heads, rng, requires_grad),
        readout=init.linear(config.d, NUM_CLASSES),
    )


def decoder_step_logits(graph, h_enc, e_enc, history, t: int, dec: DecoderParams):
    """Decoder logits for every node when positions ``< t`` carry labels ``history``."""
    visible = graph.src < t
    extra = np.zeros_like(ops._val(e_enc))
    extra[visible] = dec.label_embed.value[history[graph.src[visible]]]
    h, e = h_enc, ops.add(e_enc, extra)
    for layer in dec.layers:
        h, e = pignn_layer(h, e, graph.src, graph.dst, graph.protein_ids, graph.num_proteins, layer)
    return dec.readout(h)


def autoregressive_decode(
    graph: ProteinGraph, enc_params: ModelParams, dec_params: DecoderParams, forcing=None
) -> DecodeOutput:
    """Greedy left-to-right decoding, one decoder pass per position.

    ``forcing`` (node-level labels) replaces the model's own choices as the
    history fed back to later positions, which is how teacher forcing and
    the causality probe run.
    """
    if graph.num_proteins != 1:
        raise ValueError("autoregressive decoding runs one protein at a time")
    if enc_params.config.d != dec_params.label_embed.value.shape[1]:
        raise ValueError("encoder and decoder widths differ")
    started = time.perf_counter()
    h_enc, e_enc = encode(graph, enc_params)
    n = graph.n
    history = np.zeros(n, dtype=np.int64)
    logits = np.empty((n, NUM_CLASSES))
    for t in range(n):
        step = decoder_step_logits(graph, h_enc, e_enc, history, t, dec_params).value[t]
        logits[t] = step
        history[t] = int(np.argmax(step)) if forcing is None else int(forcing[t])
    return _finish(logits, graph, started)
