from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dytb.lattice import (
    CubeSet,
    DyadicCube,
    Relation,
    ancestor,
    children,
    contains,
    cubes_within,
    leaf_cells,
    leaf_flat_index,
    maximal_cubes,
    parent,
    relate,
    unit_cube,
)


def interval(level, i):
    return DyadicCube(1, level, (i,))


def test_children_bisect_unit_interval():
    kids = list(children(unit_cube(1)))
    assert kids == [interval(1, 0), interval(1, 1)]


def test_children_count_is_2_to_d():
    for d in (1, 2, 3):
        assert len(children(unit_cube(d))) == 2**d


def test_children_of_right_half():
    kids = list(children(interval(1, 1)))
    assert kids == [interval(2, 2), interval(2, 3)]


def test_parent_of_quarter():
    assert parent(interval(2, 1)) == interval(1, 0)


def test_parent_inverse_of_children():
    for d in (1, 2):
        c = unit_cube(d)
        for kid in children(c):
            assert parent(kid) == c


def test_root_has_no_parent():
    with pytest.raises(ValueError):
        parent(unit_cube(2))


def test_relate_examples():
    assert relate(interval(1, 0), interval(2, 1)) == Relation.A_CONTAINS_B
    assert relate(interval(1, 0), interval(1, 1)) == Relation.DISJOINT
    c = interval(2, 3)
    assert relate(c, c) == Relation.EQUAL
    assert relate(interval(2, 1), interval(1, 0)) == Relation.B_CONTAINS_A


def test_relate_dim_mismatch():
    with pytest.raises(ValueError):
        relate(unit_cube(1), unit_cube(2))


def test_maximal_cubes_examples():
    s = CubeSet.of(1, [unit_cube(1), interval(1, 0)])
    assert list(maximal_cubes(s)) == [unit_cube(1)]
    s2 = CubeSet.of(1, [interval(1, 0), interval(1, 1)])
    assert len(maximal_cubes(s2)) == 2
    assert len(maximal_cubes(CubeSet.of(1, []))) == 0


def test_partition_law_volumes():
    for d in (1, 2):
        c = DyadicCube(d, 1, (1,) * d)
        kids = children(c)
        assert sum(k.volume for k in kids) == c.volume
        # children tile the parent: disjoint and all contained
        for a in kids:
            assert contains(c, a)
        for a in kids:
            for b in kids:
                if a != b:
                    assert relate(a, b) == Relation.DISJOINT


cube_strategy = st.builds(
    lambda d, lvl, seedbits: DyadicCube(
        d, lvl, tuple((seedbits >> (4 * i)) % (1 << lvl) if lvl else 0 for i in range(d))
    ),
    st.sampled_from([1, 2]),
    st.integers(min_value=0, max_value=4),
    st.integers(min_value=0, max_value=2**40),
)


@given(cube_strategy, cube_strategy)
@settings(max_examples=300, deadline=None)
def test_trichotomy(a, b):
    if a.dim != b.dim:
        return
    r = relate(a, b)
    inter_nonempty = not _disjoint(a, b)
    if r == Relation.DISJOINT:
        assert not inter_nonempty
    else:
        assert inter_nonempty
        if r == Relation.EQUAL:
            assert a == b
        elif r == Relation.A_CONTAINS_B:
            assert contains(a, b)
        else:
            assert contains(b, a)


def _disjoint(a, b):
    # interval arithmetic oracle, coordinate by coordinate
    for axis in range(a.dim):
        lo_a = Fraction(a.index[axis], 1 << a.level)
        hi_a = lo_a + Fraction(1, 1 << a.level)
        lo_b = Fraction(b.index[axis], 1 << b.level)
        hi_b = lo_b + Fraction(1, 1 << b.level)
        if hi_a <= lo_b or hi_b <= lo_a:
            return True
    return False


def test_maximal_cubes_antichain_property():
    import random

    rng = random.Random(7)
    pool = cubes_within(unit_cube(1), 4)
    for _ in range(50):
        sel = CubeSet.of(1, rng.sample(pool, rng.randint(1, 12)))
        mx = maximal_cubes(sel)
        for a in mx:
            for b in mx:
                if a != b:
                    assert relate(a, b) == Relation.DISJOINT
        # every member is contained in a maximal one
        for c in sel:
            assert any(contains(m, c) for m in mx)


def test_leaf_order_is_lexicographic():
    cells = leaf_cells(unit_cube(2), 1)
    assert [c.index for c in cells] == [(0, 0), (0, 1), (1, 0), (1, 1)]
    for i, c in enumerate(cells):
        assert leaf_flat_index(unit_cube(2), 1, c) == i


def test_ancestor_walk():
    c = interval(3, 5)
    assert ancestor(c, 0) == unit_cube(1)
    assert ancestor(c, 2) == interval(2, 2)
    assert ancestor(c, 3) == c
