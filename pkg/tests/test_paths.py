import pytest

from dytb._exact import rat
from dytb.funcspace import HolderTuple, add, constant, from_leaf_values, haar, indicator, scale
from dytb.lattice import DyadicCube, unit_cube
from dytb.paths import (
    BFamily,
    NestedTuple,
    Path,
    PathCollection,
    build_example_collection,
    derive_reduced_family,
    nested_tuple,
    validate_admissible,
    validate_bfamily,
    validate_nested,
)

U = unit_cube(1)
LEFT = DyadicCube(1, 1, (0,))
T22 = HolderTuple.of(2, 2)


def test_path_validation():
    Path(3, (2, 1))
    with pytest.raises(ValueError):
        Path(3, (1, 1))
    with pytest.raises(ValueError):
        Path(2, (3,))
    with pytest.raises(ValueError):
        Path(2, ())


def test_example_collection_n2():
    coll = build_example_collection(2)
    assert sorted(p.values for p in coll) == [(1,), (1, 2), (2,), (2, 1)]


def test_example_collection_n3_membership():
    coll = build_example_collection(3)
    assert Path(3, (2, 1, 3)) in coll
    assert Path(3, (3, 2)) not in coll  # range misses I_1
    assert Path(3, (3, 1)) in coll


@pytest.mark.parametrize("n", [2, 3, 4, 5])
def test_example_collection_admissible(n):
    coll = build_example_collection(n)
    ok, witness = validate_admissible(coll)
    assert ok, witness


@pytest.mark.parametrize("n", [2, 3, 4, 5])
def test_swap_closure_direct(n):
    coll = build_example_collection(n)
    have = {p.values for p in coll}
    for p in coll:
        if p.length >= 2:
            assert p.last_two_swapped().values in have


def test_admissibility_failures_detected():
    ok, witness = validate_admissible(PathCollection.of(2, [Path(2, (1,)), Path(2, (1, 2)), Path(2, (2, 1))]))
    assert not ok and witness["condition"] == 1 and witness["missing_start"] == 2
    # missing extension
    ok2, witness2 = validate_admissible(
        PathCollection.of(3, [Path(3, (j,)) for j in (1, 2, 3)])
    )
    assert not ok2 and witness2["condition"] == 2
    # swap-partner failure isolated: (2,1) dropped, (2,) still extends via (2,3)
    import itertools

    paths = [Path(3, (j,)) for j in (1, 2, 3)]
    paths += [Path(3, v) for v in [(1, 2), (1, 3), (2, 3), (3, 1), (3, 2)]]
    paths += [Path(3, v) for v in itertools.permutations((1, 2, 3))]
    ok3, witness3 = validate_admissible(PathCollection.of(3, paths))
    assert not ok3 and witness3["condition"] == 3
    assert witness3["path"].values in ((1, 2), (3, 2))


def test_nested_tuple_examples():
    t = nested_tuple(Path(3, (1,)), (U,))
    assert validate_nested(t) == (True, None)
    t2 = nested_tuple(Path(3, (1, 2)), (U, LEFT))
    assert t2.cube_of_slot(2) == LEFT and t2.cube_of_slot(3) == LEFT
    assert validate_nested(t2) == (True, None)
    bad = NestedTuple(Path(2, (1, 2)), (U, LEFT))
    ok, why = validate_nested(bad)
    assert not ok and "last two" in why


def test_nested_rejects_broken_chain():
    with pytest.raises(ValueError):
        nested_tuple(Path(2, (1, 2)), (LEFT, U))


def test_bfamily_insertion_conditions():
    fam = BFamily(T22, rat(2))
    fam.insert(((2,), (U,)), constant(U, 2, 1))
    b = scale(indicator(U, 2, LEFT), 2)  # mean |U|, norm power 2
    fam.insert(((1,), (U,)), b)
    rep = validate_bfamily(fam, build_example_collection(2), 1)
    assert rep.passed and rep.worst_ratio == 2
    with pytest.raises(ValueError, match="mean"):
        fam.insert(((2,), (LEFT,)), scale(indicator(U, 2, LEFT), rat(1, 2)))
    with pytest.raises(ValueError, match="support"):
        fam.insert(((2,), (LEFT,)), constant(U, 2, 1))
    with pytest.raises(ValueError, match="mean"):
        fam.insert(((1,), (U,)), haar(U, 2, U))
    with pytest.raises(ValueError, match="normbound"):
        BFamily(T22, rat(1)).insert(((1,), (U,)), b)


def test_bfamily_norm_bound_boundary():
    # b = 2 on the left half: norm power 2^(p-1) |Q| needs B >= 2
    fam = BFamily(T22, rat(2))
    fam.insert(((1,), (U,)), scale(indicator(U, 1, LEFT), 2))


def test_prefix_family_interdependence_by_construction():
    fam = BFamily(T22, rat(2))
    fam.insert(((1,), (U,)), constant(U, 2, 1))
    a = fam.get(Path(2, (1, 2)), (U, LEFT), 1)
    b = fam.get(Path(2, (1,)), (U,), 1)
    assert a.values == b.values


def test_explicit_family_detects_interdependence_violation():
    fam = BFamily(T22, rat(2), mode="explicit")
    sigma = Path(2, (1, 2))
    tau = Path(2, (2, 1))
    fam.insert_explicit(sigma, (U, U), 1, constant(U, 2, 1))
    other = add(constant(U, 2, 1), haar(U, 2, U))  # same mean, different function
    fam.insert_explicit(Path(2, (1, 2)), (U, LEFT), 1, other)
    rep = validate_bfamily(fam, build_example_collection(2), 2)
    assert not rep.passed and rep.witness["violated"] == "interdependence"


def test_derive_reduced_prefix_is_truncation():
    tup = HolderTuple.of(3, 3, 3)
    fam = BFamily(tup, rat(2))
    fam.insert(((1,), (U,)), constant(U, 2, 1))
    fam.insert(((1, 2), (U, LEFT)), indicator(U, 2, LEFT))
    reduced = derive_reduced_family(fam, build_example_collection(3), 3)
    assert ((1,), (U,)) in reduced.storage
    assert ((1, 2), (U, LEFT)) not in reduced.storage
    # reducing to the length-one level keeps no dressed slots at all
    bottom = derive_reduced_family(reduced, build_example_collection(3), 2)
    assert bottom.storage == {}


def test_derive_reduced_explicit_well_defined():
    coll = build_example_collection(3)
    tup = HolderTuple.of(3, 3, 3)
    fam = BFamily(tup, rat(2), mode="explicit")
    b = constant(U, 2, 1)
    for sigma in coll.of_length(3):
        fam.insert_explicit(sigma, (U, U, U), 1, b)
        fam.insert_explicit(sigma, (U, U, U), 2, b)
    reduced = derive_reduced_family(fam, coll, 3)
    assert all(len(k[0]) == 2 for k in reduced.storage)


def test_derive_reduced_explicit_detects_disagreement():
    # two different length-3 extensions of the same length-2 prefix exist
    # only when n exceeds 3
    coll = build_example_collection(4)
    tup = HolderTuple.of(4, 4, 4, 4)
    fam = BFamily(tup, rat(8), mode="explicit")
    sig_a = Path(4, (1, 2, 3))
    sig_b = Path(4, (1, 2, 4))
    assert sig_a in coll and sig_b in coll
    fam.insert_explicit(sig_a, (U, U, U), 1, constant(U, 2, 1))
    fam.insert_explicit(sig_b, (U, U, U), 1, add(constant(U, 2, 1), haar(U, 2, U)))
    with pytest.raises(ValueError, match="interdependence"):
        derive_reduced_family(fam, coll, 3)


def test_double_reduction_matches_one_shot():
    coll = build_example_collection(3)
    tup = HolderTuple.of(3, 3, 3)
    fam = BFamily(tup, rat(2))
    fam.insert(((1,), (U,)), constant(U, 2, 1))
    fam.insert(((1, 2), (U, U)), constant(U, 2, 1))
    once = derive_reduced_family(derive_reduced_family(fam, coll, 3), coll, 2)
    direct = BFamily(tup, rat(2))
    for key, b in fam.storage.items():
        if len(key[0]) <= 0:
            direct.storage[key] = b
    assert set(once.storage) == set(direct.storage)
