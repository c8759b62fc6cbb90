import json

import numpy as np
import pytest

from invfold import geometry as geo
from invfold.data import (
    DatasetError,
    dumps_record,
    parse_jsonl,
    record_to_protein,
    split_dataset,
    synth_dataset,
    synth_protein,
    write_jsonl,
)


def minimal(seq="A", n=None):
    n = len(seq) if n is None else n
    row = [[0.0, 0.0, 0.0]] * n
    return {"name": "m", "seq": seq, "coords": {a: list(row) for a in geo.ATOMS}}


def write_lines(tmp_path, lines):
    path = tmp_path / "d.jsonl"
    path.write_text("".join(line + "\n" for line in lines))
    return path


def test_one_residue_record(tmp_path):
    ps = parse_jsonl(write_lines(tmp_path, [json.dumps(minimal())]))
    assert len(ps) == 1 and len(ps[0]) == 1


def test_length_mismatch_reports_line(tmp_path):
    bad = minimal("AAAAA", n=5)
    bad["coords"]["CA"] = bad["coords"]["CA"][:4]
    with pytest.raises(DatasetError) as info:
        parse_jsonl(write_lines(tmp_path, [json.dumps(minimal()), json.dumps(bad)]))
    assert info.value.problems[0][0] == 2
    assert "length mismatch" in str(info.value) and "line 2" in str(info.value)


@pytest.mark.parametrize(
    "mutate, reason",
    [
        (lambda r: r.update(seq="B"), "unknown residue"),
        (lambda r: r["coords"]["N"].__setitem__(0, ["x", 0, 0]), "non-numeric"),
        (lambda r: r.pop("coords"), "missing field"),
        (lambda r: r.update(seq=""), "empty"),
        (lambda r: r.update(chain_breaks=[0]), "chain_breaks"),
    ],
)
def test_bad_records_rejected(mutate, reason):
    rec = minimal("AG")
    mutate(rec)
    with pytest.raises(ValueError, match=reason):
        record_to_protein(rec)


def test_every_bad_line_is_reported(tmp_path):
    lines = ["{not json", json.dumps(minimal()), json.dumps({"name": "x"})]
    with pytest.raises(DatasetError) as info:
        parse_jsonl(write_lines(tmp_path, lines))
    assert [ln for ln, _ in info.value.problems] == [1, 3]


def test_null_coordinates_mask_residue():
    rec = minimal("AGC")
    rec["coords"]["O"][1] = None
    rec["coords"]["CA"][2] = [1.0, None, 2.0]
    p = record_to_protein(rec)
    assert p.mask.tolist() == [True, False, False]


def test_round_trip_is_byte_identical(tmp_path):
    ps = synth_dataset(0, 12, 3)
    ps[1].coords[2] = np.nan
    ps[1] = geo.Protein(ps[1].name, ps[1].coords, ps[1].sequence, chain_breaks=(5,))
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    write_jsonl(ps, a)
    write_jsonl(parse_jsonl(a), b)
    assert a.read_bytes() == b.read_bytes()


def test_synth_is_deterministic():
    a, b = synth_protein(3, 30), synth_protein(3, 30)
    np.testing.assert_array_equal(a.coords, b.coords)
    np.testing.assert_array_equal(a.sequence, b.sequence)
    assert dumps_record(a) == dumps_record(b)


def test_synth_ca_spacing_and_frames():
    for seed in range(5):
        p = synth_protein(seed, 60)
        gaps = np.linalg.norm(np.diff(p.CA, axis=0), axis=1)
        assert gaps.min() >= 3.6 and gaps.max() <= 4.0
        assert not geo.local_frames(p).degenerate.any()


def test_synth_seeds_give_different_sequences():
    seqs = [synth_protein(s, 50).seq_string for s in range(200)]
    assert all(seqs[2 * i] != seqs[2 * i + 1] for i in range(100))


def test_synth_sequence_follows_structure():
    # same local conformation bucket always maps to the same residue code
    p = synth_protein(11, 80)
    pairs, defined = geo.backbone_angles(p)
    phi = np.degrees(np.arctan2(pairs[1:-1, 0, 0], pairs[1:-1, 0, 1]))
    psi = np.degrees(np.arctan2(pairs[1:-1, 3, 0], pairs[1:-1, 3, 1]))
    codes = p.sequence[1:-1]
    for c in np.unique(codes):
        sel = codes == c
        assert np.ptp(phi[sel]) < 20 and np.ptp(psi[sel]) < 20


def test_synth_needs_two_residues():
    with pytest.raises(ValueError):
        synth_protein(0, 1)


def test_split_routing():
    ps = synth_dataset(1, 8, 10)
    names = [p.name for p in ps]
    manifest = {"train": names[:6], "validation": names[6:8], "test": names[8:]}
    s = split_dataset(ps, manifest)
    assert [p.name for p in s.train] == names[:6]
    assert [p.name for p in s.validation] == names[6:8]
    assert [p.name for p in s.test] == names[8:]
    assert s.unlisted == []


def test_split_empty_test_and_unlisted():
    ps = synth_dataset(2, 8, 4)
    s = split_dataset(ps, {"train": [ps[0].name], "test": []})
    assert s.test == [] and s.unlisted == [p.name for p in ps[1:]]


def test_split_rejects_overlap_duplicates_and_unknown():
    ps = synth_dataset(3, 8, 3)
    with pytest.raises(ValueError, match="both"):
        split_dataset(ps, {"train": [ps[0].name], "test": [ps[0].name]})
    with pytest.raises(ValueError, match="no record"):
        split_dataset(ps, {"train": ["ghost"]})
    with pytest.raises(ValueError, match="duplicate"):
        split_dataset(ps + [ps[0]], {})
