import numpy as np
import pytest
from conftest import random_chain

from invfold.data import synth_protein
from invfold.decoders import autoregressive_decode, init_decoder, one_shot_decode
from invfold.graph import FeatureConfig, batch_graphs, featurize
from invfold.pignn import ModelConfig, init_params


def model(layers=2, d=8, seed=0):
    cfg = ModelConfig(d=d, layers=layers, heads=4, dropout=0.0, features=FeatureConfig(k=6))
    return init_params(cfg, seed=seed, requires_grad=False)


def graph_for(params, protein):
    return featurize(protein, params.config.features, params.virtual.value)


def test_one_shot_is_deterministic_and_valid():
    params = model()
    g = graph_for(params, synth_protein(0, 20))
    a, b = one_shot_decode(g, params), one_shot_decode(g, params)
    np.testing.assert_array_equal(a.sequence, b.sequence)
    assert ((a.sequence >= 0) & (a.sequence < 20)).all()
    np.testing.assert_allclose(np.exp(a.log_probs).sum(axis=1), 1.0, atol=1e-6)
    assert a.wall_time >= 0


def test_one_shot_uses_one_forward_pass():
    params = model()
    g = graph_for(params, synth_protein(1, 40))
    one_shot_decode(g, params)
    assert params.forward_calls == 1


def test_uniform_logits_pick_lowest_code():
    params = model()
    params.readout.w.value[...] = 0.0
    params.readout.b.value[...] = 0.0
    out = one_shot_decode(graph_for(params, synth_protein(2, 8)), params)
    np.testing.assert_array_equal(out.sequence, 0)
    np.testing.assert_allclose(out.log_probs, -np.log(20), atol=1e-12)


def test_single_residue_protein():
    params = model()
    g = graph_for(params, random_chain(np.random.default_rng(3), 1))
    assert len(one_shot_decode(g, params).sequence) == 1
    dec = init_decoder(params.config, depth=1)
    assert len(autoregressive_decode(g, params, dec).sequence) == 1


def test_for_protein_fills_missing_residues():
    params = model()
    p = synth_protein(4, 10)
    p.coords[3] = np.nan
    from invfold.geometry import Protein

    p = Protein(p.name, p.coords, p.sequence)
    out = one_shot_decode(graph_for(params, p), params)
    codes, logp, mask = out.for_protein(0, 10)
    assert mask.tolist() == [i != 3 for i in range(10)]
    assert codes[3] == 0
    np.testing.assert_allclose(logp[3], -np.log(20))


def test_batched_one_shot_matches_single():
    params = model()
    ps = [synth_protein(5, 12), synth_protein(6, 9)]
    out = one_shot_decode(batch_graphs([graph_for(params, p) for p in ps]), params)
    for i, p in enumerate(ps):
        single = one_shot_decode(graph_for(params, p), params)
        np.testing.assert_array_equal(out.for_protein(i, len(p))[0], single.sequence)


def test_autoregressive_output_is_valid_and_deterministic():
    params = model(layers=1)
    dec = init_decoder(params.config, depth=2, seed=1)
    g = graph_for(params, synth_protein(7, 15))
    a, b = autoregressive_decode(g, params, dec), autoregressive_decode(g, params, dec)
    np.testing.assert_array_equal(a.sequence, b.sequence)
    assert ((a.sequence >= 0) & (a.sequence < 20)).all()
    np.testing.assert_allclose(np.exp(a.log_probs).sum(axis=1), 1.0, atol=1e-6)


def test_autoregressive_never_reads_future_labels():
    params = model(layers=1)
    dec = init_decoder(params.config, depth=2, seed=2)
    g = graph_for(params, synth_protein(8, 14))
    rng = np.random.default_rng(0)
    base = autoregressive_decode(g, params, dec, forcing=g.labels)
    for t in (0, 5, 13):
        flipped = g.labels.copy()
        flipped[t:] = (flipped[t:] + rng.integers(1, 20, size=len(flipped) - t)) % 20
        out = autoregressive_decode(g, params, dec, forcing=flipped)
        np.testing.assert_array_equal(out.log_probs[: t + 1], base.log_probs[: t + 1])


def test_autoregressive_history_matters():
    params = model(layers=1)
    dec = init_decoder(params.config, depth=1, seed=3)
    g = graph_for(params, synth_protein(9, 10))
    a = autoregressive_decode(g, params, dec, forcing=np.zeros(10, dtype=int))
    b = autoregressive_decode(g, params, dec, forcing=np.full(10, 7))
    assert np.array_equal(a.log_probs[0], b.log_probs[0])
    assert not np.allclose(a.log_probs[1:], b.log_probs[1:])


def test_autoregressive_rejects_batches_and_bad_widths():
    params = model(layers=1)
    gs = [graph_for(params, synth_protein(s, 6)) for s in (1, 2)]
    with pytest.raises(ValueError):
        autoregressive_decode(batch_graphs(gs), params, init_decoder(params.config, depth=1))
    with pytest.raises(ValueError):
        autoregressive_decode(gs[0], params, init_decoder(ModelConfig(d=12, layers=1, heads=4), depth=1))
    with pytest.raises(ValueError):
        init_decoder(params.config, depth=0)
