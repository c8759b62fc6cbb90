"""Backbone records and rotation/translation-invariant residue geometry.

All functions are vectorised over residues and free of hidden state.
Missing coordinates are NaN; quantities touching them come out as the
documented "undefined" sentinels rather than NaN.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ALPHABET = "ACDEFGHIKLMNPQRSTVWY"
ATOMS = ("N", "CA", "C", "O")
EPS = 1e-8

RBF_COUNT = 16
RBF_MAX = 20.0
RBF_CENTERS = np.linspace(0.0, RBF_MAX, RBF_COUNT)
RBF_SIGMA = RBF_CENTERS[1] - RBF_CENTERS[0]


@dataclass
class Protein:
    """Backbone coordinates (n, 4, 3) in N, CA, C, O order plus the native sequence."""

    name: str
    coords: np.ndarray
    sequence: np.ndarray
    mask: np.ndarray = None
    chain_breaks: tuple = field(default_factory=tuple)

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=np.float64)
        self.sequence = np.asarray(self.sequence, dtype=np.int64)
        if self.coords.ndim != 3 or self.coords.shape[1:] != (4, 3) or len(self.coords) < 1:
            raise ValueError(f"{self.name}: coords must have shape (n, 4, 3) with n >= 1")
        if self.sequence.shape != (len(self.coords),):
            raise ValueError(f"{self.name}: sequence length does not match coordinates")
        if ((self.sequence < 0) | (self.sequence >= len(ALPHABET))).any():
            raise ValueError(f"{self.name}: residue codes must lie in [0, 19]")
        finite = np.isfinite(self.coords).all(axis=(1, 2))
        self.mask = finite if self.mask is None else np.asarray(self.mask, dtype=bool) & finite
        self.chain_breaks = tuple(sorted(int(b) for b in self.chain_breaks))

    def __len__(self):
        return len(self.coords)

    @property
    def N(self):
        return self.coords[:, 0]

    @property
    def CA(self):
        return self.coords[:, 1]

    @property
    def C(self):
        return self.coords[:, 2]

    @property
    def O(self):  # noqa: E743
        return self.coords[:, 3]

    @property
    def seq_string(self) -> str:
        return "".join(ALPHABET[c] for c in self.sequence)

    def transformed(self, rotation: np.ndarray, translation: np.ndarray) -> "Protein":
        """Copy with every atom mapped to ``rotation @ x + translation``."""
        coords = self.coords @ np.asarray(rotation).T + np.asarray(translation)
        return Protein(self.name, coords, self.sequence.copy(), self.mask.copy(), self.chain_breaks)


@dataclass
class LocalFrames:
    """Per-residue rotations ``Q_i`` (columns b, n, b x n) and origins ``CA_i``."""

    rotations: np.ndarray
    origins: np.ndarray
    degenerate: np.ndarray

    def __len__(self):
        return len(self.origins)

    def __getitem__(self, i):
        return LocalFrames(self.rotations[i], self.origins[i], self.degenerate[i])


def _normalize(v):
    norm = np.linalg.norm(v, axis=-1, keepdims=True)
    return v / np.where(norm > 0, norm, 1.0), norm[..., 0]


def _orthogonal_unit(b):
    # unit vector orthogonal to b built from b's smallest-magnitude axis
    axis = np.argmin(np.abs(b), axis=-1)
    e = np.zeros_like(b)
    e[np.arange(len(b)), axis] = 1.0
    e = e - (e * b).sum(-1, keepdims=True) * b
    return _normalize(e)[0]


def local_frames(protein: Protein) -> LocalFrames:
    """Build ``Q_i = [b, n, b x n]`` with ``u = CA - N``, ``v = C - CA``.

    Residues with missing atoms get the identity frame at origin zero and are
    flagged degenerate, as are residues whose u-v or u x v vanish (those get a
    deterministic fallback axis instead).
    """
    u = protein.CA - protein.N
    v = protein.C - protein.CA
    missing = ~np.isfinite(protein.coords).all(axis=(1, 2))
    u = np.where(missing[:, None], 0.0, u)
    v = np.where(missing[:, None], 0.0, v)

    b, bnorm = _normalize(u - v)
    flat_b = bnorm < EPS
    if flat_b.any():
        ub, unorm = _normalize(u[flat_b])
        fallback = np.where((unorm > EPS)[:, None], ub, np.array([1.0, 0.0, 0.0]))
        b[flat_b] = fallback

    n, nnorm = _normalize(np.cross(u, v))
    flat_n = nnorm < EPS
    if flat_n.any():
        n[flat_n] = _orthogonal_unit(b[flat_n])

    rot = np.stack([b, n, np.cross(b, n)], axis=-1)
    rot[missing] = np.eye(3)
    origins = np.where(missing[:, None], 0.0, protein.CA)
    return LocalFrames(rot, origins, flat_b | flat_n | missing)


def rbf_encode(distance, centers: np.ndarray = RBF_CENTERS, sigma: float = RBF_SIGMA) -> np.ndarray:
    """Gaussian responses ``exp(-(d - mu)^2 / sigma^2)``; trailing axis indexes centers."""
    d = np.asarray(distance, dtype=np.float64)
    if (d < 0).any():
        raise ValueError("distance must be non-negative")
    delta = d[..., None] - centers
    return np.exp(-(delta * delta) / sigma**2)


def _angle(a, b, c):
    """(sin, cos) of the angle at vertex ``b``."""
    x = a - b
    y = c - b
    cross = np.linalg.norm(np.cross(x, y), axis=-1)
    dot = (x * y).sum(-1)
    r = np.hypot(cross, dot)
    return cross, dot, r


def _dihedral(p0, p1, p2, p3):
    b0 = p0 - p1
    b1 = p2 - p1
    b2 = p3 - p2
    b1n, _ = _normalize(b1)
    v = b0 - (b0 * b1n).sum(-1, keepdims=True) * b1n
    w = b2 - (b2 * b1n).sum(-1, keepdims=True) * b1n
    x = (v * w).sum(-1)
    y = (np.cross(b1n, v) * w).sum(-1)
    r = np.hypot(x, y)
    return y, x, r


def _pairs(sin, cos, r):
    ok = np.isfinite(r) & (r > EPS)
    safe = np.where(ok, r, 1.0)
    return np.stack([np.where(ok, sin / safe, 0.0), np.where(ok, cos / safe, 0.0)], axis=-1), ok


ANGLE_NAMES = ("alpha", "beta", "gamma", "phi", "psi", "omega")


def backbone_angles(protein: Protein):
    """Bond and torsion angles per residue as (sin, cos) pairs.

    Returns ``(pairs, defined)`` with ``pairs`` of shape (n, 6, 2) in
    ``ANGLE_NAMES`` order and a boolean (n, 6) array. Angles that need a
    missing neighbour, cross a chain break, or are geometrically degenerate
    are emitted as (0, 0).
    """
    N, CA, C = protein.N, protein.CA, protein.C
    n = len(protein)
    nan = np.full((1, 3), np.nan)
    link = np.ones(n, dtype=bool)  # link[i]: residue i-1 bonded to i
    link[0] = False
    for b in protein.chain_breaks:
        if 0 < b < n:
            link[b] = False
    prev_link = link[:, None]
    next_link = np.r_[link[1:], False][:, None]
    C_prev = np.where(prev_link, np.r_[nan, C[:-1]], np.nan)
    CA_prev = np.where(prev_link, np.r_[nan, CA[:-1]], np.nan)
    N_next = np.where(next_link, np.r_[N[1:], nan], np.nan)

    with np.errstate(invalid="ignore"):
        parts = [
            _angle(C_prev, N, CA),
            _angle(N, CA, C),
            _angle(CA, C, N_next),
            _dihedral(C_prev, N, CA, C),
            _dihedral(N, CA, C, N_next),
            _dihedral(CA_prev, C_prev, N, CA),
        ]
        encoded = [_pairs(*p) for p in parts]
    pairs = np.stack([e[0] for e in encoded], axis=1)
    defined = np.stack([e[1] for e in encoded], axis=1)
    return pairs, defined


def _check_rotation(rot, tol=1e-6):
    rot = np.asarray(rot, dtype=np.float64)
    eye = np.einsum("...ji,...jk->...ik", rot, rot)
    if not np.allclose(eye, np.eye(3), atol=tol) or not np.allclose(np.linalg.det(rot), 1.0, atol=tol):
        raise ValueError("rotation is not orthonormal and right-handed")


def rotation_to_quaternion(rot: np.ndarray) -> np.ndarray:
    """Unit quaternions (w, x, y, z) from rotation matrices, largest-pivot method.

    Sign is fixed so that ``w >= 0`` (and, when ``w == 0``, the first non-zero
    vector component is positive).
    """
    rot = np.asarray(rot, dtype=np.float64)
    flat = rot.reshape(-1, 3, 3)
    m00, m11, m22 = flat[:, 0, 0], flat[:, 1, 1], flat[:, 2, 2]
    trace = m00 + m11 + m22
    pivots = np.stack([trace, m00, m11, m22], axis=-1)
    choice = np.argmax(pivots, axis=-1)
    q = np.empty((len(flat), 4))
    r = flat
    for k in range(4):
        sel = choice == k
        if not sel.any():
            continue
        m = r[sel]
        if k == 0:
            s = np.sqrt(1.0 + trace[sel]) * 2
            q[sel] = np.stack(
                [0.25 * s, (m[:, 2, 1] - m[:, 1, 2]) / s, (m[:, 0, 2] - m[:, 2, 0]) / s, (m[:, 1, 0] - m[:, 0, 1]) / s],
                axis=-1,
            )
        elif k == 1:
            s = np.sqrt(1.0 + m[:, 0, 0] - m[:, 1, 1] - m[:, 2, 2]) * 2
            q[sel] = np.stack(
                [(m[:, 2, 1] - m[:, 1, 2]) / s, 0.25 * s, (m[:, 0, 1] + m[:, 1, 0]) / s, (m[:, 0, 2] + m[:, 2, 0]) / s],
                axis=-1,
            )
        elif k == 2:
            s = np.sqrt(1.0 + m[:, 1, 1] - m[:, 0, 0] - m[:, 2, 2]) * 2
            q[sel] = np.stack(
                [(m[:, 0, 2] - m[:, 2, 0]) / s, (m[:, 0, 1] + m[:, 1, 0]) / s, 0.25 * s, (m[:, 1, 2] + m[:, 2, 1]) / s],
                axis=-1,
            )
        else:
            s = np.sqrt(1.0 + m[:, 2, 2] - m[:, 0, 0] - m[:, 1, 1]) * 2
            q[sel] = np.stack(
                [(m[:, 1, 0] - m[:, 0, 1]) / s, (m[:, 0, 2] + m[:, 2, 0]) / s, (m[:, 1, 2] + m[:, 2, 1]) / s, 0.25 * s],
                axis=-1,
            )
    q /= np.linalg.norm(q, axis=-1, keepdims=True)
    # canonical sign: first non-zero component (w, x, y, z order) positive
    lead = np.argmax(np.abs(q) > 1e-12, axis=-1)
    sign = np.sign(q[np.arange(len(q)), lead])
    q *= np.where(sign == 0, 1.0, sign)[:, None]
    return q.reshape(rot.shape[:-2] + (4,))


def quaternion_rel(rot_i: np.ndarray, rot_j: np.ndarray, check: bool = True) -> np.ndarray:
    """Quaternion of the relative rotation ``Q_i^T Q_j`` (batched over leading axes)."""
    if check:
        _check_rotation(rot_i)
        _check_rotation(rot_j)
    rel = np.einsum("...ji,...jk->...ik", rot_i, rot_j)
    return rotation_to_quaternion(rel)


def direction_features(rot_i: np.ndarray, origin_i: np.ndarray, atoms: np.ndarray):
    """Unit directions from ``origin_i`` to ``atoms`` expressed in frame ``i``.

    ``atoms`` has shape (..., k, 3) matching leading axes of ``rot_i`` (..., 3, 3).
    Returns ``(dirs, flagged)``; atoms within ``EPS`` of the origin (or
    missing) give zero vectors and are flagged.
    """
    diff = np.asarray(atoms, dtype=np.float64) - np.asarray(origin_i)[..., None, :]
    norm = np.linalg.norm(diff, axis=-1)
    bad = ~np.isfinite(norm) | (norm < EPS)
    unit = np.where(bad[..., None], 0.0, diff / np.where(bad, 1.0, norm)[..., None])
    local = np.einsum("...ba,...kb->...ka", rot_i, unit)
    return local, bad


def init_virtual_atoms(count: int = 3, seed: int = 0) -> np.ndarray:
    """Seeded unit vectors used as initial virtual-atom offsets."""
    rng = np.random.default_rng(seed)
    v = rng.normal(size=(count, 3))
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def virtual_atom_positions(params: np.ndarray, frames: LocalFrames, tol: float = 1e-6) -> np.ndarray:
    """Absolute virtual-atom positions ``x b_i + y n_i + z (b_i x n_i) + CA_i``, shape (n, K, 3)."""
    params = np.asarray(params, dtype=np.float64)
    if params.size and not np.allclose(np.linalg.norm(params, axis=-1), 1.0, atol=tol):
        raise ValueError("virtual-atom offsets must be unit vectors")
    return np.einsum("nab,kb->nka", frames.rotations, params) + frames.origins[:, None, :]


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q
