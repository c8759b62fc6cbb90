"""Named feature configurations for ablation runs.

``FEATURE_ABLATIONS`` drops one feature family at a time from the full
featurizer. ``DISTANCE_ABLATIONS`` varies the whitelist of typed edge
distance pairs and the number of virtual atoms.
"""

from __future__ import annotations

from dataclasses import replace

from .graph import FeatureConfig
from .pignn import ModelConfig, init_params
from .train import TrainConfig, train

_FULL = FeatureConfig()

FEATURE_ABLATIONS = {
    "full": _FULL,
    "no-node-distance": replace(_FULL, node_distance=False),
    "no-node-angle": replace(_FULL, node_angle=False),
    "no-node-direction": replace(_FULL, node_direction=False),
    "no-edge-distance": replace(_FULL, edge_distance=False),
    "no-edge-angle": replace(_FULL, edge_angle=False),
    "no-edge-direction": replace(_FULL, edge_direction=False),
}

_SAME_ATOM = ("CA-CA", "C-C", "N-N", "O-O")
_MIXED = ("CA-C", "CA-N", "CA-O", "C-N", "C-O", "N-O")

DISTANCE_ABLATIONS = {
    "all-pairs": _FULL,
    "same-atom-pairs": replace(_FULL, edge_pairs=_SAME_ATOM),
    "mixed-pairs": replace(_FULL, edge_pairs=_MIXED),
    "CA-C,CA-O,C-N,N-O": replace(_FULL, edge_pairs=("CA-C", "CA-O", "C-N", "N-O")),
    "CA-C": replace(_FULL, edge_pairs=("CA-C",)),
    "CA-O": replace(_FULL, edge_pairs=("CA-O",)),
    "C-N": replace(_FULL, edge_pairs=("C-N",)),
    "N-O": replace(_FULL, edge_pairs=("N-O",)),
    "virtual-0": replace(_FULL, n_virtual=0),
    "virtual-1": replace(_FULL, n_virtual=1),
    "virtual-2": replace(_FULL, n_virtual=2),
}


def run_ablation(features: FeatureConfig, proteins, steps: int = 20, d: int = 16, layers: int = 2, seed: int = 0):
    """Train a small model under ``features`` for ``steps`` steps.

    Returns ``(params, state, losses)``.
    """
    params = init_params(ModelConfig(d=d, layers=layers, heads=4, dropout=0.1, features=features), seed=seed)
    per_epoch = -(-len(proteins) // 8)
    losses = []
    state = train(
        proteins,
        params,
        TrainConfig(epochs=-(-steps // per_epoch), max_steps=steps, seed=seed),
        on_step=lambda s, loss: losses.append(loss),
    )
    return params, state, losses
