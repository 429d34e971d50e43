import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from anosov.boundary import (Flag, bms_weight, busemann, conformality_report,
                             conformality_residual, flag_distance, flag_distance_batch,
                             flag_pair, hopf, in_general_position, iwasawa_cocycle, ps_atoms)
from anosov.errors import InvalidInputError
from anosov.fixtures import rank_one_schottky
from anosov.matgroup import (GroupDescriptor, GroupElement, LinearForm, diag_exp, element,
                             opposition_involution, random_special_linear)
from anosov.words import GeneratorSystem, attracting_flag, enumerate_ball

SL2 = GroupDescriptor((2,))
DESCRIPTORS = [SL2, GroupDescriptor((3,)), GroupDescriptor((2, 2)), GroupDescriptor((2, 3))]
descs = st.sampled_from(DESCRIPTORS)
seeds = st.integers(0, 2**32 - 1)
PSI = LinearForm(np.array([1.0, -1.0]) / np.sqrt(2))


def rand(desc, seed, scale=1.0):
    return random_special_linear(desc, np.random.default_rng(seed), scale)


def random_dominant(desc, rng):
    x = np.concatenate([np.sort(rng.normal(size=d))[::-1] for d in desc.factor_dims])
    for sl in desc.slices:
        x[sl] -= x[sl].mean()
    return x


def random_m(desc, rng):
    # diagonal sign matrices of determinant one
    mats = []
    for d in desc.factor_dims:
        s = rng.choice([-1.0, 1.0], size=d)
        s[-1] = np.prod(s[:-1])
        mats.append(np.diag(s))
    return GroupElement(mats, desc)


# --- examples ---------------------------------------------------------------

def test_cocycle_examples():
    base = Flag.base(SL2)
    assert np.allclose(iwasawa_cocycle(SL2.identity(), base), 0)
    x = np.array([1.3, -1.3])
    assert np.allclose(iwasawa_cocycle(diag_exp(SL2, x), base), x)
    g = element(np.array([[1.0, 0], [1, 1]]))
    assert np.allclose(iwasawa_cocycle(g, base), [0.3466, -0.3466], atol=1e-4)


def test_busemann_examples():
    e = SL2.identity()
    g = element(np.array([[2.0, 1], [1, 1]]))
    assert np.allclose(busemann(Flag.base(SL2), g, g), 0)
    assert np.allclose(busemann(Flag.base(SL2), e, diag_exp(SL2, [2, -2])), [2, -2])
    assert np.allclose(busemann(Flag.opposite_base(SL2), e, diag_exp(SL2, [1, -1])), [-1, 1])


def test_hopf_examples():
    plus, minus, b = hopf(SL2.identity())
    assert flag_distance(plus, Flag.base(SL2)) < 1e-12
    assert flag_distance(minus, Flag.opposite_base(SL2)) < 1e-12
    assert np.allclose(b, 0)
    plus, minus, b = hopf(diag_exp(SL2, [1, -1]))
    assert flag_distance(plus, Flag.base(SL2)) < 1e-12
    assert flag_distance(minus, Flag.opposite_base(SL2)) < 1e-12
    assert np.allclose(b, [-1, 1])


def test_general_position_examples():
    assert in_general_position(Flag.base(SL2), Flag.opposite_base(SL2))
    assert not in_general_position(Flag.base(SL2), Flag.base(SL2))


def test_bms_weight_examples():
    desc = GroupDescriptor((3,))
    psi1, psi2 = LinearForm([0.7, 0.1, -0.8]), LinearForm([0.2, 0.3, -0.5])
    assert bms_weight(desc.identity(), psi1, psi2) == pytest.approx(1.0)
    x = np.array([1.0, 0.2, -1.2])
    expected = np.exp(psi1(x) - psi2(opposition_involution(x, desc)))
    assert bms_weight(diag_exp(desc, x), psi1, psi2) == pytest.approx(expected, rel=1e-10)


def test_bms_weight_matches_busemann_composition():
    desc = GroupDescriptor((3,))
    psi1, psi2 = LinearForm([0.7, 0.1, -0.8]), LinearForm([0.2, 0.3, -0.5])
    g = rand(desc, 5)
    plus, minus = flag_pair(g)
    e = desc.identity()
    expected = np.exp(psi1(busemann(plus, e, g)) + psi2(busemann(minus, e, g)))
    assert bms_weight(g, psi1, psi2) == pytest.approx(expected, rel=1e-12)


# --- Patterson-Sullivan atoms -----------------------------------------------

def test_symmetric_depth_one_atoms_are_uniform():
    table = enumerate_ball(rank_one_schottky(), 1, with_flags=True)
    atoms = ps_atoms(table, PSI, 0.2)
    assert len(atoms) == 4
    assert np.allclose(atoms.weights, 0.25)
    assert atoms.weights.sum() == pytest.approx(1.0)


def test_atoms_need_flags():
    with pytest.raises(InvalidInputError):
        ps_atoms(enumerate_ball(rank_one_schottky(), 1), PSI, 0.2)


def test_atoms_cluster_near_generator_fixed_points():
    # atoms stay inside the Schottky cylinders, whose size converges with depth
    gens = rank_one_schottky()
    fixed = [attracting_flag(gens.element(a)).flat() for a in (1, -1, 2, -2)]
    far = []
    for depth in (2, 4, 6, 8):
        atoms = ps_atoms(enumerate_ball(gens, depth, with_flags=True), PSI, 0.17)
        dist = np.min([flag_distance_batch(SL2, atoms.flags, f[None]) for f in fixed], axis=0)
        far.append(dist.max())
    assert max(far) < 1e-4
    steps = np.abs(np.diff(far))
    assert np.all(steps[1:] < steps[:-1])


def test_atom_weights_invariant_under_relabeling():
    gens = rank_one_schottky()
    swapped = GeneratorSystem(gens.generators[::-1])
    ta = enumerate_ball(gens, 5, with_flags=True)
    tb = enumerate_ball(swapped, 5, with_flags=True)
    a, b = ps_atoms(ta, PSI, 0.2), ps_atoms(tb, PSI, 0.2)
    assert len(a) == len(b)
    pos_b = {int(r): k for k, r in enumerate(b.rows)}
    relabel = {1: 2, -1: -2, 2: 1, -2: -1}
    for k in range(0, len(a), 7):
        word = [relabel[x] for x in ta.word(int(a.rows[k]))]
        j = pos_b[tb.find(word)]
        assert flag_distance_batch(SL2, b.flags[j], a.flags[k])[0] < 1e-12
        assert b.weights[j] == pytest.approx(a.weights[k], rel=1e-12)


def test_conformality_identity_is_exact():
    assert conformality_residual(rank_one_schottky(), PSI, 6, [], 0.17) == 0.0


def test_conformality_residual_decreases_with_depth():
    gens = rank_one_schottky()
    res = [conformality_residual(gens, PSI, depth, "a", 0.17) for depth in (6, 8, 10)]
    assert res[0] > res[1] > res[2]


def test_conformality_scale_invariance_is_exact():
    gens = rank_one_schottky()
    table = enumerate_ball(gens, 6, with_flags=True)
    a = conformality_report(table, gens, PSI, [1], 0.17)
    b = conformality_report(table, gens, PSI, [1], 0.17, weight_scale=2.0**40)
    assert a["residual"] == b["residual"]


# --- properties ---------------------------------------------------------------

@settings(max_examples=60, deadline=None)
@given(descs, seeds)
def test_cocycle_identity(desc, seed):
    rng = np.random.default_rng(seed)
    g1, g2 = random_special_linear(desc, rng), random_special_linear(desc, rng)
    xi = Flag.base(desc).act(random_special_linear(desc, rng))
    lhs = iwasawa_cocycle(g1 @ g2, xi)
    rhs = iwasawa_cocycle(g1, xi.act(g2)) + iwasawa_cocycle(g2, xi)
    assert np.abs(lhs - rhs).max() < 1e-8


@settings(max_examples=60, deadline=None)
@given(descs, seeds)
def test_busemann_additivity_and_equivariance(desc, seed):
    rng = np.random.default_rng(seed)
    g, h, q = (random_special_linear(desc, rng) for _ in range(3))
    xi = Flag.base(desc).act(random_special_linear(desc, rng))
    add = busemann(xi, g, h) + busemann(xi, h, q) - busemann(xi, g, q)
    assert np.abs(add).max() < 1e-8
    equi = busemann(xi.act(g), g @ h, g @ q) - busemann(xi, h, q)
    assert np.abs(equi).max() < 1e-8


@settings(max_examples=60, deadline=None)
@given(descs, seeds)
def test_busemann_of_a_at_opposite_flags(desc, seed):
    a = diag_exp(desc, random_dominant(desc, np.random.default_rng(seed)))
    e = desc.identity()
    total = busemann(Flag.base(desc), e, a) + opposition_involution(
        busemann(Flag.opposite_base(desc), e, a), desc)
    assert np.abs(total).max() < 1e-10


@settings(max_examples=60, deadline=None)
@given(descs, seeds)
def test_flag_pair_is_right_m_invariant(desc, seed):
    rng = np.random.default_rng(seed)
    g, m = random_special_linear(desc, rng), random_m(desc, rng)
    p1, n1 = flag_pair(g)
    p2, n2 = flag_pair(g @ m)
    assert flag_distance(p1, p2) < 1e-9 and flag_distance(n1, n2) < 1e-9


@settings(max_examples=60, deadline=None)
@given(descs, seeds)
def test_random_flag_pair_in_general_position(desc, seed):
    plus, minus = flag_pair(rand(desc, seed))
    assert in_general_position(plus, minus, margin=1e-6)
