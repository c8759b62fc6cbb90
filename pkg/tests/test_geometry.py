import numpy as np
import pytest
from conftest import random_chain

from invfold import geometry as geo
from invfold.geometry import Protein


def one_residue(N, CA, C, O=(0.0, 0.0, 2.0)):
    return Protein("r", np.array([[N, CA, C, O]], dtype=float), [0])


def test_hand_computed_frame():
    fr = geo.local_frames(one_residue((0, 1, 0), (0, 0, 0), (1, 0, 0)))
    q = fr.rotations[0]
    np.testing.assert_allclose(q[:, 0], np.array([-1, -1, 0]) / np.sqrt(2), atol=1e-12)
    np.testing.assert_allclose(q[:, 1], [0, 0, 1], atol=1e-12)
    np.testing.assert_allclose(q[:, 2], np.array([-1, 1, 0]) / np.sqrt(2), atol=1e-12)
    assert not fr.degenerate[0]


def test_frames_orthonormal_right_handed():
    fr = geo.local_frames(random_chain(np.random.default_rng(0), 40))
    eye = np.einsum("nji,njk->nik", fr.rotations, fr.rotations)
    np.testing.assert_allclose(eye, np.broadcast_to(np.eye(3), eye.shape), atol=1e-6)
    np.testing.assert_allclose(np.linalg.det(fr.rotations), 1.0, atol=1e-6)


def test_frames_rotate_with_the_protein():
    rng = np.random.default_rng(1)
    p = random_chain(rng, 30)
    R, t = geo.random_rotation(rng), rng.normal(size=3) * 10
    a, b = geo.local_frames(p), geo.local_frames(p.transformed(R, t))
    np.testing.assert_allclose(b.rotations, R @ a.rotations, atol=1e-6)
    np.testing.assert_allclose(b.origins, a.origins @ R.T + t, atol=1e-6)


def test_collinear_backbone_falls_back_deterministically():
    p = one_residue((-1, 0, 0), (0, 0, 0), (1, 0, 0))
    fr = geo.local_frames(p)
    assert fr.degenerate[0]
    q = fr.rotations[0]
    np.testing.assert_allclose(q.T @ q, np.eye(3), atol=1e-12)
    np.testing.assert_allclose(geo.local_frames(p).rotations, fr.rotations)


def test_coincident_atoms_fall_back():
    fr = geo.local_frames(one_residue((0, 0, 0), (0, 0, 0), (0, 0, 0)))
    assert fr.degenerate[0]
    np.testing.assert_allclose(np.linalg.det(fr.rotations[0]), 1.0)


def test_missing_residue_is_flagged():
    coords = np.random.default_rng(2).normal(size=(3, 4, 3))
    coords[1, 2] = np.nan
    p = Protein("m", coords, [0, 1, 2])
    assert p.mask.tolist() == [True, False, True]
    fr = geo.local_frames(p)
    assert fr.degenerate[1]
    assert np.isfinite(fr.rotations).all()


def test_rbf_examples():
    assert geo.rbf_encode(geo.RBF_CENTERS[0])[0] == 1.0
    r0 = geo.rbf_encode(0.0)
    assert np.argmax(r0) == 0
    d = 7.3
    want = np.exp(-((d - geo.RBF_CENTERS) ** 2) / geo.RBF_SIGMA**2)
    np.testing.assert_allclose(geo.rbf_encode(d), want, atol=1e-15)
    assert geo.RBF_COUNT == 16 and geo.RBF_CENTERS[-1] == 20.0


def test_rbf_rejects_negative_distance():
    with pytest.raises(ValueError):
        geo.rbf_encode(-0.1)


def test_single_residue_angles():
    pairs, defined = geo.backbone_angles(one_residue((0, 1, 0), (0, 0, 0), (1, 0, 0)))
    # only the N-CA-C bond angle exists inside one residue
    assert defined[0].tolist() == [False, True, False, False, False, False]
    np.testing.assert_array_equal(pairs[0, [0, 2, 3, 4, 5]], 0.0)
    np.testing.assert_allclose(pairs[0, 1], [1.0, 0.0], atol=1e-12)


def test_planar_torsion():
    coords = np.array(
        [
            [[0, 0, 0], [1.5, 0, 0], [2.0, 1.4, 0], [0, 0, 0]],
            [[3.4, 1.6, 0], [4.0, 3.0, 0], [5.5, 3.0, 0], [0, 0, 0]],
        ],
        dtype=float,
    )
    pairs, defined = geo.backbone_angles(Protein("p", coords, [0, 0]))
    psi0 = pairs[0, geo.ANGLE_NAMES.index("psi")]
    phi1 = pairs[1, geo.ANGLE_NAMES.index("phi")]
    for sc in (psi0, phi1):
        assert abs(sc[0]) < 1e-12 and abs(abs(sc[1]) - 1) < 1e-12


def test_torsion_sign_convention():
    # trans zig-zag gives 180 degrees; +90 twist about the central bond
    p0, p1, p2 = np.array([1.0, 0, 0]), np.zeros(3), np.array([0, 0, 1.0])
    sin, cos, r = geo._dihedral(p0, p1, p2, np.array([0, 1.0, 1.0]))
    assert np.isclose(np.arctan2(sin, cos), np.pi / 2)


def test_chain_break_clears_cross_break_angles():
    p = random_chain(np.random.default_rng(3), 6)
    p.chain_breaks = (3,)
    pairs, defined = geo.backbone_angles(p)
    assert not defined[3, [0, 3, 5]].any()
    assert not defined[2, [2, 4]].any()
    assert defined[2, [0, 3, 5]].all()


def test_angles_invariant_under_rigid_motion():
    rng = np.random.default_rng(4)
    p = random_chain(rng, 25)
    a, _ = geo.backbone_angles(p)
    b, _ = geo.backbone_angles(p.transformed(geo.random_rotation(rng), rng.normal(size=3)))
    np.testing.assert_allclose(a, b, atol=1e-6)


def test_quaternion_examples():
    eye = np.eye(3)
    np.testing.assert_allclose(geo.quaternion_rel(eye, eye), [1, 0, 0, 0])
    rz = np.array([[0.0, -1, 0], [1, 0, 0], [0, 0, 1]])
    np.testing.assert_allclose(geo.quaternion_rel(eye, rz), [np.cos(np.pi / 4), 0, 0, np.sin(np.pi / 4)], atol=1e-12)


def test_quaternion_unit_and_canonical():
    rng = np.random.default_rng(5)
    rots = np.stack([geo.random_rotation(rng) for _ in range(200)])
    q = geo.quaternion_rel(rots[:100], rots[100:])
    np.testing.assert_allclose(np.linalg.norm(q, axis=1), 1.0, atol=1e-9)
    assert (q[:, 0] >= 0).all()


def test_quaternion_round_trip():
    rng = np.random.default_rng(6)
    for _ in range(50):
        R = geo.random_rotation(rng)
        w, x, y, z = geo.rotation_to_quaternion(R)
        back = np.array(
            [
                [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
                [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
                [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
            ]
        )
        np.testing.assert_allclose(back, R, atol=1e-12)


def test_quaternion_half_turns_pick_a_sign():
    rx = np.diag([1.0, -1, -1])
    q = geo.rotation_to_quaternion(rx)
    np.testing.assert_allclose(q, [0, 1, 0, 0], atol=1e-12)


def test_quaternion_rejects_non_rotation():
    with pytest.raises(ValueError):
        geo.quaternion_rel(np.eye(3), np.diag([1.0, 1, -1]))
    with pytest.raises(ValueError):
        geo.quaternion_rel(np.eye(3) * 2, np.eye(3))


def test_direction_examples():
    rng = np.random.default_rng(7)
    p = random_chain(rng, 5)
    fr = geo.local_frames(p)
    b = fr.rotations[2][:, 0]
    dirs, bad = geo.direction_features(fr.rotations[2], fr.origins[2], (fr.origins[2] + b)[None])
    np.testing.assert_allclose(dirs[0], [1, 0, 0], atol=1e-12)
    dirs, bad = geo.direction_features(fr.rotations, fr.origins, p.coords)
    norms = np.linalg.norm(dirs, axis=-1)
    assert bad[:, 1].all()  # CA sits on the origin
    np.testing.assert_array_equal(norms[:, 1], 0.0)
    np.testing.assert_allclose(norms[:, [0, 2, 3]], 1.0, atol=1e-9)


def test_directions_invariant_under_rigid_motion():
    rng = np.random.default_rng(8)
    p = random_chain(rng, 12)
    q = p.transformed(geo.random_rotation(rng), rng.normal(size=3) * 5)
    fa, fb = geo.local_frames(p), geo.local_frames(q)
    a, _ = geo.direction_features(fa.rotations, fa.origins, p.coords)
    b, _ = geo.direction_features(fb.rotations, fb.origins, q.coords)
    np.testing.assert_allclose(a, b, atol=1e-6)


def test_virtual_atoms_basis_case_and_equivariance():
    rng = np.random.default_rng(9)
    p = random_chain(rng, 10)
    fr = geo.local_frames(p)
    v = geo.virtual_atom_positions(np.array([[1.0, 0, 0]]), fr)
    np.testing.assert_allclose(v[:, 0], fr.origins + fr.rotations[:, :, 0], atol=1e-12)

    params = geo.init_virtual_atoms(3, seed=1)
    R, t = geo.random_rotation(rng), rng.normal(size=3)
    va = geo.virtual_atom_positions(params, fr)
    vb = geo.virtual_atom_positions(params, geo.local_frames(p.transformed(R, t)))
    np.testing.assert_allclose(vb, va @ R.T + t, atol=1e-6)
    da = np.linalg.norm(va[:, None, :, None] - va[None, :, None, :], axis=-1)
    db = np.linalg.norm(vb[:, None, :, None] - vb[None, :, None, :], axis=-1)
    np.testing.assert_allclose(da, db, atol=1e-6)


def test_virtual_atoms_require_unit_offsets():
    fr = geo.local_frames(random_chain(np.random.default_rng(10), 3))
    with pytest.raises(ValueError):
        geo.virtual_atom_positions(np.array([[2.0, 0, 0]]), fr)


def test_init_virtual_atoms_seeded_unit():
    a = geo.init_virtual_atoms(3, seed=4)
    np.testing.assert_allclose(np.linalg.norm(a, axis=1), 1.0, atol=1e-12)
    np.testing.assert_array_equal(a, geo.init_virtual_atoms(3, seed=4))


def test_protein_validation():
    with pytest.raises(ValueError):
        Protein("bad", np.zeros((2, 4, 3)), [0, 25])
    with pytest.raises(ValueError):
        Protein("bad", np.zeros((2, 3, 3)), [0, 1])
    with pytest.raises(ValueError):
        Protein("bad", np.zeros((2, 4, 3)), [0])


def test_geometry_is_pure():
    p = random_chain(np.random.default_rng(11), 8)
    before = p.coords.copy()
    a = geo.backbone_angles(p)[0]
    b = geo.backbone_angles(p)[0]
    assert np.array_equal(a, b)
    assert np.array_equal(before, p.coords)
