import numpy as np
import pytest

from lpvfbs import Configuration, default_blocks, inverse_kinematics, jacobian, parameterize_gj
from lpvfbs.controller import MachineModel
from lpvfbs.errors import SingularAtDC
from lpvfbs.flops import FlopLedger
from lpvfbs.kinematics import jacobian_array
from lpvfbs.lpv_model import (TWO_PI, InertialDistribution, ModelBlocks, RationalTF, assemble_full_model,
                              gj_numeric, matrix_form_gj, validate_parameterization)

from conftest import interior_points

FREQS = np.geomspace(0.5, 400.0, 20)


def response(tf_grid, s):
    return np.array([[tf(s) for tf in row] for row in tf_grid])  # (3, 3, F)


def numeric_G(blocks, J, s):
    return np.linalg.inv(gj_numeric(blocks, J, s)) * blocks.g_qd(s)[:, None, None]


def test_full_model_matches_numeric_inversion_at_10hz(geometry, blocks):
    c = Configuration.from_position(geometry, [0.0, 0.0, 0.0])
    J = jacobian(geometry, c)
    s = np.array([1j * TWO_PI * 10.0])
    G = response(assemble_full_model(blocks, J), s)[..., 0]
    ref = numeric_G(blocks, J.J_bar, s)[0]
    assert np.abs(G - ref).max() / np.abs(ref).max() < 1e-8


def test_uncoupled_model_is_diagonal_gqd(geometry, blocks):
    J = jacobian(geometry, Configuration.from_position(geometry, [30.0, -20.0, 10.0]))
    s = 1j * TWO_PI * FREQS
    G = response(assemble_full_model(blocks.without_coupling(), J), s)
    gq = blocks.g_qd(s)
    for i in range(3):
        assert np.allclose(G[i, i], gq, rtol=1e-12, atol=0)
        for j in range(3):
            if i != j:
                assert np.abs(G[i, j]).max() < 1e-14


def test_diagonal_entries_equal_at_origin(geometry, blocks):
    J = jacobian(geometry, Configuration.from_position(geometry, [0.0, 0.0, 0.0]))
    G = response(assemble_full_model(blocks, J), 1j * TWO_PI * FREQS)
    ref = np.abs(G[0, 0]).max()
    assert np.abs(G[0, 0] - G[1, 1]).max() < 1e-10 * ref
    assert np.abs(G[0, 0] - G[2, 2]).max() < 1e-10 * ref


def test_dc_neutrality(geometry, blocks, rng):
    X = interior_points(rng, 20)
    q = inverse_kinematics(geometry, X)
    pgj = parameterize_gj(blocks, geometry)
    gj = pgj.evaluate(X, q)
    G0 = gj(np.array([0.0]))[0] * blocks.g_qd(0.0)
    assert np.abs(G0 - np.eye(3)).max() < 1e-10


def test_parameterization_matches_numeric_inverse(geometry, blocks, rng):
    pgj = parameterize_gj(blocks, geometry)
    X = interior_points(rng, 50)
    q = inverse_kinematics(geometry, X)
    J = jacobian_array(geometry, X, q)
    s = 1j * TWO_PI * FREQS
    G = pgj.evaluate(X, q, J)(s)  # (F, N, 3, 3)
    for k in range(len(X)):
        ref = np.linalg.inv(gj_numeric(blocks, J[k], s))
        scale = np.abs(ref).max(axis=(1, 2), keepdims=True)
        assert np.abs(G[:, k] - ref).max() / scale.min() < 1e-8


def test_parameterization_matches_matrix_form(geometry, blocks):
    pgj = parameterize_gj(blocks, geometry)
    c = Configuration.from_position(geometry, [-50.0, 25.0, 5.0])
    J = jacobian(geometry, c).J_bar
    s = 1j * TWO_PI * FREQS
    a = pgj.evaluate(c.X, c.q)(s)
    b = matrix_form_gj(blocks, J)(s)
    assert np.abs(a - b).max() / np.abs(b).max() < 1e-9


def test_zero_distribution_gives_identity(geometry, blocks, rng):
    zero = np.zeros((3, 3))
    b0 = ModelBlocks(blocks.g_qd, blocks.g_fq, blocks.w, InertialDistribution(zero, zero, zero))
    pgj = parameterize_gj(b0, geometry)
    X = interior_points(rng, 4)
    gj = pgj.evaluate(X, inverse_kinematics(geometry, X), J=np.broadcast_to(np.eye(3), (4, 3, 3)))
    assert np.all(gj.a == gj.a[0])  # no configuration dependence left
    for i in range(3):
        for j in range(3):
            expect = gj.a if i == j else np.zeros_like(gj.a)
            assert np.array_equal(gj.b[:, i, j], expect)


def test_shared_denominator_bitwise(geometry, blocks):
    pgj = parameterize_gj(blocks, geometry)
    c = Configuration.from_position(geometry, [10.0, -40.0, 0.0])
    gj = pgj.evaluate(c.X, c.q)
    dens = [gj.entry(i, j).den for i in range(3) for j in range(3)]
    assert all(np.array_equal(d, dens[0]) for d in dens)


def test_evaluation_cost_independent_of_window(geometry, blocks):
    X = np.array([[5.0, 5.0, 0.0]])
    counts = []
    for L in (60, 196, 400):
        led = FlopLedger()
        MachineModel(geometry, blocks, 1e-3, truncation=L).pgj.evaluate(X, inverse_kinematics(geometry, X), ledger=led)
        counts.append(led.counts["gj_eval"])
    assert counts[0] == counts[1] == counts[2] > 0


def test_singular_at_dc_detected(geometry):
    one = RationalTF([1.0], [1.0])
    c = Configuration.from_position(geometry, [20.0, 10.0, 0.0])
    J = jacobian(geometry, c).J_bar
    Jinv = np.linalg.inv(J)
    # choose P_i so that M J = I: then G_J = I - M J vanishes for every s
    P = [np.outer(J[:, i], Jinv[i]) / (J[:, i] @ J[:, i]) for i in range(3)]
    blk = ModelBlocks(one, one, (one, one, one), InertialDistribution(*P))
    with pytest.raises(SingularAtDC):
        matrix_form_gj(blk, J)


def test_rational_tf_checks():
    with pytest.raises(ValueError):
        RationalTF([1.0], [-1.0, 1.0])  # pole at s = +1
    with pytest.raises(ValueError):
        RationalTF([0.0, 0.0, 1.0], [1.0, 1.0])  # improper


def test_inertial_distribution_default_sums_to_identity():
    p = InertialDistribution()
    assert np.allclose(p.P_A + p.P_B + p.P_C, np.eye(3))
    with pytest.raises(ValueError):
        InertialDistribution(np.eye(2))


def test_validation_report(geometry, blocks):
    pos = interior_points(np.random.default_rng(0), 30)
    rep = validate_parameterization(parameterize_gj(blocks, geometry), pos)
    assert rep.max_rel_error < 1e-8 and not rep.exact_identity
    rep0 = validate_parameterization(parameterize_gj(blocks.without_coupling(), geometry), pos)
    assert rep0.exact_identity and rep0.max_rel_error < 1e-14


def test_validation_catches_corruption(geometry, blocks):
    from dataclasses import replace
    pgj = parameterize_gj(blocks, geometry)
    bad = replace(pgj, basis=pgj.basis * (1.0 + 1e-3 * np.arange(len(pgj.basis)))[:, None])
    rep = validate_parameterization(bad, interior_points(np.random.default_rng(0), 10))
    assert rep.max_rel_error > 1e-6
