"""JSON-lines backbone datasets, split manifests and a synthetic chain generator.

Record format, one JSON object per line::

    {"name": "1abc.A", "seq": "MKV...",
     "coords": {"N": [[x, y, z], ...], "CA": [...], "C": [...], "O": [...]},
     "chain_breaks": [57]}                      # optional

A coordinate triple that is ``null`` or contains ``null``/``NaN`` marks the
residue as missing; missing residues are masked out of graphs, losses and
metrics. ``chain_breaks`` lists residue indices that start a new segment.
"""

from __future__ import annotations

import json
import math
from typing import NamedTuple

import numpy as np

from .geometry import ALPHABET, ATOMS, Protein

_CODE = {c: i for i, c in enumerate(ALPHABET)}


class DatasetError(ValueError):
    """Raised with every offending line when a dataset file fails validation."""

    def __init__(self, problems):
        self.problems = list(problems)
        lines = "; ".join(f"line {ln}: {msg}" for ln, msg in self.problems[:20])
        more = f" (+{len(self.problems) - 20} more)" if len(self.problems) > 20 else ""
        super().__init__(f"{len(self.problems)} invalid record(s): {lines}{more}")


def _triple(value, where):
    if value is None:
        return [math.nan] * 3
    if not isinstance(value, (list, tuple)) or len(value) != 3:
        raise ValueError(f"{where}: expected [x, y, z]")
    out = []
    for x in value:
        if x is None:
            out.append(math.nan)
        elif isinstance(x, bool) or not isinstance(x, (int, float)):
            raise ValueError(f"{where}: non-numeric coordinate {x!r}")
        else:
            out.append(float(x))
    return out


def record_to_protein(rec: dict) -> Protein:
    if not isinstance(rec, dict):
        raise ValueError("record is not a JSON object")
    for key in ("name", "seq", "coords"):
        if key not in rec:
            raise ValueError(f"missing field {key!r}")
    name, seq, coords = rec["name"], rec["seq"], rec["coords"]
    if not isinstance(name, str) or not isinstance(seq, str):
        raise ValueError("name and seq must be strings")
    if not seq:
        raise ValueError("empty sequence")
    bad = sorted({c for c in seq if c not in _CODE})
    if bad:
        raise ValueError(f"unknown residue letter(s) {''.join(bad)!r}")
    if not isinstance(coords, dict):
        raise ValueError("coords must be an object keyed by atom name")
    xyz = []
    for atom in ATOMS:
        rows = coords.get(atom)
        if not isinstance(rows, list):
            raise ValueError(f"coords.{atom} missing or not a list")
        if len(rows) != len(seq):
            raise ValueError(f"length mismatch: seq has {len(seq)} residues but coords.{atom} has {len(rows)}")
        xyz.append([_triple(r, f"coords.{atom}[{i}]") for i, r in enumerate(rows)])
    arr = np.asarray(xyz, dtype=np.float64).transpose(1, 0, 2)
    breaks = rec.get("chain_breaks", [])
    if not isinstance(breaks, list) or not all(isinstance(b, int) and 0 < b < len(seq) for b in breaks):
        raise ValueError("chain_breaks must be a list of residue indices in [1, n)")
    return Protein(name, arr, [_CODE[c] for c in seq], chain_breaks=breaks)


def protein_to_record(p: Protein) -> dict:
    coords = {}
    for a, atom in enumerate(ATOMS):
        rows = []
        for xyz in p.coords[:, a]:
            rows.append([float(x) for x in xyz] if np.isfinite(xyz).all() else None)
        coords[atom] = rows
    rec = {"name": p.name, "seq": p.seq_string, "coords": coords}
    if p.chain_breaks:
        rec["chain_breaks"] = list(p.chain_breaks)
    return rec


def dumps_record(p: Protein) -> str:
    """Canonical one-line serialisation."""
    return json.dumps(protein_to_record(p), separators=(",", ":"), allow_nan=False)


def parse_jsonl(path) -> list[Protein]:
    """Parse and validate every record; raise :class:`DatasetError` listing all bad lines."""
    proteins, problems = [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                proteins.append(record_to_protein(json.loads(line)))
            except (ValueError, TypeError) as exc:
                problems.append((lineno, str(exc)))
    if problems:
        raise DatasetError(problems)
    return proteins


def write_jsonl(proteins, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for p in proteins:
            fh.write(dumps_record(p) + "\n")


# ---------------------------------------------------------------------------
# splits


class Split(NamedTuple):
    train: list
    validation: list
    test: list
    unlisted: list


def load_manifest(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        manifest = json.load(fh)
    if not isinstance(manifest, dict):
        raise ValueError("split manifest must be a JSON object")
    return manifest


def split_dataset(records, manifest: dict) -> Split:
    """Route records into train/validation/test by name.

    Records named in no list are returned in ``unlisted``.
    """
    by_name = {}
    for rec in records:
        if rec.name in by_name:
            raise ValueError(f"duplicate record name {rec.name!r}")
        by_name[rec.name] = rec
    seen = {}
    routed = {}
    for key in ("train", "validation", "test"):
        names = manifest.get(key, [])
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate names inside split {key!r}")
        for name in names:
            if name in seen:
                raise ValueError(f"{name!r} listed in both {seen[name]!r} and {key!r}")
            if name not in by_name:
                raise ValueError(f"{name!r} in split {key!r} has no record")
            seen[name] = key
        routed[key] = [by_name[nm] for nm in names]
    unlisted = [rec.name for rec in records if rec.name not in seen]
    return Split(routed["train"], routed["validation"], routed["test"], unlisted)


# ---------------------------------------------------------------------------
# synthetic chains

# ideal backbone geometry (angstrom, degrees)
BOND_N_CA, BOND_CA_C, BOND_C_N, BOND_C_O = 1.458, 1.525, 1.329, 1.231
ANGLE_N_CA_C, ANGLE_CA_C_N, ANGLE_C_N_CA, ANGLE_CA_C_O = 111.2, 116.2, 121.7, 120.5
OMEGA = 180.0

# 20 torsion buckets (phi, psi); residue code = bucket index
PHI_LEVELS = (-150.0, -110.0, -70.0, 60.0, 100.0)
PSI_LEVELS = (-45.0, 10.0, 130.0, 170.0)
TORSION_BUCKETS = tuple((phi, psi) for phi in PHI_LEVELS for psi in PSI_LEVELS)
JITTER_MAX = 0.09


def _place(a, b, c, bond, angle_deg, torsion_deg):
    """Position of atom d with |cd| = bond, angle bcd and dihedral abcd."""
    angle, torsion = np.radians(angle_deg), np.radians(torsion_deg)
    bc = c - b
    bc /= np.linalg.norm(bc)
    normal = np.cross(b - a, bc)
    normal /= np.linalg.norm(normal)
    basis = np.stack([bc, np.cross(normal, bc), normal], axis=1)
    local = bond * np.array([-np.cos(angle), np.sin(angle) * np.cos(torsion), np.sin(angle) * np.sin(torsion)])
    return c + basis @ local


def synth_protein(seed: int, n: int, name: str | None = None) -> Protein:
    """Deterministic backbone whose sequence is a function of local conformation.

    Each residue draws one of 20 (phi, psi) buckets; the chain is grown with
    ideal bond lengths and angles (trans peptide bonds) and every atom then
    gets seeded jitter of norm at most ``JITTER_MAX``. The residue code is the
    bucket index, so the structure determines the sequence.
    """
    if n < 2:
        raise ValueError("synthetic chains need n >= 2")
    rng = np.random.default_rng(seed)
    states = rng.integers(0, len(TORSION_BUCKETS), size=n)
    phi = np.array([TORSION_BUCKETS[s][0] for s in states])
    psi = np.array([TORSION_BUCKETS[s][1] for s in states])

    N = np.zeros((n, 3))
    CA = np.zeros((n, 3))
    C = np.zeros((n, 3))
    O = np.zeros((n, 3))  # noqa: E741
    N[0] = [0.0, 0.0, 0.0]
    CA[0] = [BOND_N_CA, 0.0, 0.0]
    t = np.radians(180.0 - ANGLE_N_CA_C)
    C[0] = CA[0] + BOND_CA_C * np.array([np.cos(t), np.sin(t), 0.0])
    for i in range(n):
        n_next = _place(N[i], CA[i], C[i], BOND_C_N, ANGLE_CA_C_N, psi[i])
        O[i] = _place(n_next, CA[i], C[i], BOND_C_O, ANGLE_CA_C_O, 180.0)
        if i + 1 < n:
            N[i + 1] = n_next
            CA[i + 1] = _place(CA[i], C[i], N[i + 1], BOND_N_CA, ANGLE_C_N_CA, OMEGA)
            C[i + 1] = _place(C[i], N[i + 1], CA[i + 1], BOND_CA_C, ANGLE_N_CA_C, phi[i + 1])

    coords = np.stack([N, CA, C, O], axis=1)
    noise = rng.normal(scale=JITTER_MAX / 2, size=coords.shape)
    norm = np.linalg.norm(noise, axis=-1, keepdims=True)
    noise *= np.minimum(1.0, JITTER_MAX / np.maximum(norm, 1e-12))
    coords = coords + noise
    return Protein(name or f"synth-{seed}-{n}", coords, states)


def synth_dataset(seed: int, n: int, count: int) -> list[Protein]:
    """``count`` chains with per-chain seeds derived from ``seed``."""
    seeds = np.random.SeedSequence(seed).generate_state(count)
    return [synth_protein(int(s), n, name=f"synth-{seed}-{i:04d}") for i, s in enumerate(seeds)]
