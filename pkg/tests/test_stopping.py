import random
from fractions import Fraction

import pytest

from dytb._exact import rat
from dytb.forms import PerfectForm, block, generate, zero_form
from dytb.funcspace import (
    HolderTuple,
    add,
    average,
    constant,
    from_leaf_values,
    haar,
    indicator,
    integral,
    lp_power,
    restrict,
    scale,
    sub,
)
from dytb.lattice import CubeSet, DyadicCube, contains, cubes_within, unit_cube
from dytb.paths import Path
from dytb.scenarios import ScenarioConfig, build_stopping_instance, run_telescope_on
from dytb.stopping import (
    SecondContext,
    StoppingContext,
    TheoremContradiction,
    buffer_functions,
    coefficient_maps,
    epsilon,
    first_stopping,
    flatten_on_partition,
    paraproduct_theta,
    prune_g,
    prune_h,
    second_stopping,
    stopping_partition,
    telescope,
)

U = unit_cube(1)
LEFT = DyadicCube(1, 1, (0,))
RIGHT = DyadicCube(1, 1, (1,))
T22 = HolderTuple.of(2, 2)
SIGMA = Path(2, (2, 1))
TAU = Path(2, (1, 2))


def make_ctx(form, fs, u, B=1, eps=None, base=U):
    B = rat(B)
    eps = eps if eps is not None else epsilon(T22, B)
    return StoppingContext(form, T22, base, tuple(fs), 1, u, B, eps, SIGMA, TAU, (), None)


def test_epsilon_formula_22():
    assert epsilon(T22, 1) == Fraction(49, 512)


def test_epsilon_monotone_in_B():
    assert epsilon(T22, 2) < epsilon(T22, 1)
    assert epsilon(T22, 8) < epsilon(T22, 2)


def test_epsilon_at_most_one_eighth():
    for tup in (T22, HolderTuple.of(3, Fraction(3, 2)), HolderTuple.of(4, 2, 4)):
        for B in (1, 2, 5):
            assert 0 < epsilon(tup, B) <= Fraction(1, 8)


def test_epsilon_independent_re_derivation():
    # direct evaluation of the defining minimum, no shared code
    for tup, B in ((T22, 1), (T22, 2), (HolderTuple.of(4, 2, 4), 3)):
        expected = min(
            Fraction(7, 8) ** Fraction(p, p - 1) * Fraction(B) ** Fraction(-1, p - 1)
            for p in tup.exponents
            if (Fraction(p, p - 1).denominator == 1 and Fraction(-1, p - 1).denominator == 1)
        ) / 8 if all(
            Fraction(p, p - 1).denominator == 1 for p in tup.exponents
        ) else None
        if expected is not None:
            assert epsilon(tup, B) == expected


def test_first_stopping_indicator_data_empty():
    Z = zero_form(2, 1, 1)
    one = constant(U, 1, 1)
    res = first_stopping(make_ctx(Z, [one, one], one))
    assert all(len(cs) == 0 for cs in res.collections.values())
    assert res.packing_sum == 0


def test_p4_captures_vanishing_average_child():
    Z = zero_form(2, 1, 2)
    one = constant(U, 2, 1)
    u = from_leaf_values(U, 2, [2, 2, 0, 0])
    res = first_stopping(make_ctx(Z, [one, one], u, B=2))
    assert list(res.collections[4]) == [RIGHT]
    assert res.packing_sum <= res.packing_bound


def test_p1_fires_on_concentrated_mass():
    # a pure spike concentrates by |Q|/|P| = 2^N, so the threshold
    # n/eps ~ 20.9 (B = 1) only fires from five levels down
    N = 5
    Z = zero_form(2, 1, N)
    one = constant(U, N, 1)
    vals = [rat(0)] * (1 << N)
    vals[0] = rat(64)
    g = from_leaf_values(U, N, vals)
    res = first_stopping(make_ctx(Z, [one, g], one))
    assert len(res.collections[1]) > 0
    assert res.packing_sum <= res.packing_bound
    assert res.per_measure[1] <= epsilon(T22, 1) * U.volume


def test_p5_and_buffers_on_stacked_p4():
    # u vanishing on nested right-half children at every level stacks
    # fourth-collection cubes, driving parents and overlap counts
    Z = zero_form(2, 1, 3)
    one = constant(U, 3, 1)
    u = from_leaf_values(U, 3, [8, 0, 0, 0, 0, 0, 0, 0])
    B = rat(8)
    ctx = make_ctx(Z, [one, one], u, B=B, eps=epsilon(T22, B))
    res = first_stopping(ctx)
    assert len(res.collections[4]) >= 1
    pr = prune_g(ctx, res)
    buf = buffer_functions(ctx, res, pr, "first")
    assert rat(buf.max_overlap) <= buf.overlap_bound
    for V, xi in buf.functions:
        assert integral(xi) == 0


def test_prune_g_examples():
    Z = zero_form(2, 1, 2)
    one = constant(U, 2, 1)
    g_meanzero = haar(U, 2, U)
    ctx = make_ctx(Z, [one, g_meanzero], one)
    res = first_stopping(ctx)
    pr = prune_g(ctx, res)
    assert pr.pruned.values == g_meanzero.values  # empty stop, zero mean
    ctx2 = make_ctx(Z, [one, one], one)
    pr2 = prune_g(ctx2, first_stopping(ctx2))
    assert pr2.pruned.is_zero()  # g = u collapses entirely


def test_prune_mean_zero_always():
    rng = random.Random(0)
    for seed in range(10):
        F = generate(2, 1, 3, 0.5, seed=seed)
        F = F.scaled(rat(1, 64))
        one = constant(U, 3, 1)
        g = from_leaf_values(U, 3, [rat(rng.randint(-5, 5), rng.randint(1, 3)) for _ in range(8)])
        if g.is_zero():
            continue
        ctx = make_ctx(F, [one, g], one)
        pr = prune_g(ctx, first_stopping(ctx))
        assert integral(pr.pruned) == 0


def test_buffer_functions_empty_without_p4():
    Z = zero_form(2, 1, 2)
    one = constant(U, 2, 1)
    ctx = make_ctx(Z, [one, one], one)
    res = first_stopping(ctx)
    pr = prune_g(ctx, res)
    assert buffer_functions(ctx, res, pr, "first").functions == []


def test_second_stopping_trivial_data():
    Z = zero_form(2, 1, 2)
    one = constant(U, 2, 1)
    ctx = make_ctx(Z, [one, haar(U, 2, U)], one)
    res = first_stopping(ctx)
    pr = prune_g(ctx, res)
    ctx2 = SecondContext(ctx, U, pr.pruned, one, res)
    res2 = second_stopping(ctx2)
    assert all(len(cs) == 0 for cs in res2.collections.values())


def test_s4_captures_vanishing_v_average():
    Z = zero_form(2, 1, 2)
    one = constant(U, 2, 1)
    ctx = make_ctx(Z, [one, haar(U, 2, U)], one, B=2, eps=epsilon(T22, 2))
    res = first_stopping(ctx)
    pr = prune_g(ctx, res)
    v = from_leaf_values(U, 2, [2, 2, 0, 0])
    ctx2 = SecondContext(ctx, U, pr.pruned, v, res)
    res2 = second_stopping(ctx2)
    assert RIGHT in res2.collections[4]
    assert res2.packing_sum <= res2.packing_bound


def test_prune_h_examples():
    Z = zero_form(2, 1, 2)
    one = constant(U, 2, 1)
    ctx = make_ctx(Z, [one, haar(U, 2, U)], one)
    res = first_stopping(ctx)
    pr = prune_g(ctx, res)
    v = add(indicator(U, 2, U), scale(haar(U, 2, U), rat(1, 2)))
    ctx2 = SecondContext(ctx, U, pr.pruned, v, res)
    res2 = second_stopping(ctx2)
    prh = prune_h(ctx2, res2)
    # S empty, h = 1_R: pruned h equals 1_R - v exactly
    assert prh.pruned.values == sub(indicator(U, 2, U), v).values
    assert integral(prh.pruned, U) == 0


def test_prune_h_multiple_of_v_collapses():
    Z = zero_form(2, 1, 2)
    v = add(indicator(U, 2, U), scale(haar(U, 2, U), rat(1, 2)))
    ctx = StoppingContext(Z, T22, U, (v, haar(U, 2, U)), 1, constant(U, 2, 1), rat(2), epsilon(T22, 2), SIGMA, TAU, (), None)
    res = first_stopping(ctx)
    pr = prune_g(ctx, res)
    ctx2 = SecondContext(ctx, U, pr.pruned, v, res)
    res2 = second_stopping(ctx2)
    prh = prune_h(ctx2, res2)
    assert prh.pruned.is_zero()  # h equals v, so the pruning removes it


def test_coefficient_maps_cases():
    one = constant(U, 2, 1)
    g_hat = from_leaf_values(U, 2, [1, -1, 2, 0])
    phi, _ = coefficient_maps(g_hat, one, g_hat, one, U, 2)
    for T in cubes_within(U, 2):
        if phi.cases[T] == "ratio":
            assert phi.values[T] == average(g_hat, T)
    c_mult = scale(one, rat(5, 3))
    phi2, _ = coefficient_maps(c_mult, one, c_mult, one, U, 2)
    assert all(v == rat(5, 3) for v in phi2.values.values())
    # zero-case flag where the carrier vanishes
    u0 = from_leaf_values(U, 2, [1, 1, 0, 0])
    target = from_leaf_values(U, 2, [1, 1, 0, 0])
    phi3, _ = coefficient_maps(target, u0, target, u0, U, 2)
    quarter3 = DyadicCube(1, 2, (2,))
    assert phi3.cases[quarter3] == "zero" and phi3.values[quarter3] == 0
    assert not phi3.failures


def test_coefficient_map_reports_representability_failure():
    u0 = from_leaf_values(U, 2, [1, 1, 0, 0])
    target = from_leaf_values(U, 2, [0, 0, 1, 0])  # lives where the carrier dies
    phi, _ = coefficient_maps(target, u0, target, u0, U, 2)
    assert phi.failures and phi.failures[0]["reason"].startswith("carrier vanishes")


def test_telescope_zero_form():
    cfg = ScenarioConfig(mode="telescope", n=2, d=1, N=2, exponents=(2, 2), B=1)
    Z = zero_form(2, 1, 2)
    one = constant(U, 2, 1)
    ctx = make_ctx(Z, [one, haar(U, 2, U)], one)
    res = first_stopping(ctx)
    pr = prune_g(ctx, res)
    ctx2 = SecondContext(ctx, U, pr.pruned, one, res)
    res2 = second_stopping(ctx2)
    prh = prune_h(ctx2, res2)
    g_hat = restrict(sub(pr.pruned, scale(ctx.u, average(pr.pruned, U) / average(ctx.u, U))), U)
    phi, psi = coefficient_maps(g_hat, ctx.u, prh.pruned, one, U, 2)
    rep = telescope(Z, T22, ctx.fs, 1, U, prh.pruned, g_hat, ctx.u, one, phi, psi)
    assert rep.bp1 == rep.bp2 == rep.bp3 == rep.bp4 == rep.residual == 0


def test_telescope_rank_one_block_exact():
    F = PerfectForm(2, 1, 2, (block(U, rat(1, 32), [(1, -1), (1, -1)]),))
    one = constant(U, 2, 1)
    g = from_leaf_values(U, 2, [1, 3, -2, 1])
    ctx = make_ctx(F, [one, g], one)
    res = first_stopping(ctx)
    pr = prune_g(ctx, res)
    ctx2 = SecondContext(ctx, U, pr.pruned, one, res)
    res2 = second_stopping(ctx2)
    prh = prune_h(ctx2, res2)
    g_hat = restrict(sub(pr.pruned, scale(ctx.u, average(pr.pruned, U) / average(ctx.u, U))), U)
    phi, psi = coefficient_maps(g_hat, ctx.u, prh.pruned, one, U, 2)
    rep = telescope(F, T22, ctx.fs, 1, U, prh.pruned, g_hat, ctx.u, one, phi, psi)
    assert rep.representable and rep.residual == 0


def test_full_instance_pipeline_hundred_seeds():
    cfg = ScenarioConfig(mode="telescope", n=2, d=1, N=3, exponents=(2, 2), B=2, instances=1)
    checked = 0
    for seed in range(100):
        inst = build_stopping_instance(cfg, f"pipe:{seed}")
        assert integral(inst.prune.pruned) == 0
        if inst.second is None:
            continue
        out = run_telescope_on(inst)
        assert out["telescope"].residual == 0
        assert out["theta"].theta is not None
        checked += 1
    assert checked >= 70


def test_theta_constant_psi_vanishes():
    # psi constant across cubes telescopes every piece to zero
    one = constant(U, 2, 1)
    target = scale(one, rat(3, 2))
    Z = zero_form(2, 1, 2)
    ctx = make_ctx(Z, [one, haar(U, 2, U)], one)
    res = first_stopping(ctx)
    pr = prune_g(ctx, res)
    ctx2 = SecondContext(ctx, U, pr.pruned, one, res)
    res2 = second_stopping(ctx2)
    phi, psi = coefficient_maps(target, one, target, one, U, 2)
    rep = paraproduct_theta(ctx2, res2, phi, psi)
    assert rep.theta.is_zero() and rep.mean == 0


def test_theta_zero_phi_vanishes():
    one = constant(U, 2, 1)
    zero_f = scale(one, 0)
    Z = zero_form(2, 1, 2)
    ctx = make_ctx(Z, [one, haar(U, 2, U)], one)
    res = first_stopping(ctx)
    pr = prune_g(ctx, res)
    ctx2 = SecondContext(ctx, U, pr.pruned, one, res)
    res2 = second_stopping(ctx2)
    phi, psi = coefficient_maps(zero_f, one, from_leaf_values(U, 2, [1, -1, 2, -2]), one, U, 2)
    rep = paraproduct_theta(ctx2, res2, phi, psi)
    assert rep.theta.is_zero()


def test_flatten_examples():
    c = constant(U, 2, rat(-3))
    out, rep = flatten_on_partition(c, CubeSet.of(1, [U]), "power", 2)
    assert out.values[0] == 9
    out2, _ = flatten_on_partition(c, CubeSet.of(1, [U]), "average", 2)
    assert out2.values[0] == -3
    leaves = CubeSet.of(1, cubes_within(U, 2)[-4:])
    f = from_leaf_values(U, 2, [1, -2, 3, 0])
    out3, _ = flatten_on_partition(f, leaves, "power", 2)
    assert list(out3.values) == [1, 4, 9, 0]
    h = haar(U, 2, U)
    out4, rep4 = flatten_on_partition(h, CubeSet.of(1, [U]), "power", 2)
    assert out4.values[0] == 1 and rep4["sup"] == 1


def test_stopping_partition_covers():
    stopped = CubeSet.of(1, [LEFT])
    part = stopping_partition(U, stopped, 2)
    assert part.total_volume() == U.volume
    assert LEFT in part


def test_context_rejects_degenerate_data():
    Z = zero_form(2, 1, 2)
    one = constant(U, 2, 1)
    with pytest.raises(ValueError, match="zero function"):
        make_ctx(Z, [one, scale(one, 0)], one)
    with pytest.raises(ValueError, match="mean one"):
        make_ctx(Z, [one, one], scale(one, rat(1, 2)))
    with pytest.raises(ValueError, match="epsilon"):
        StoppingContext(Z, T22, U, (one, one), 1, one, rat(1), rat(1, 2), SIGMA, TAU, (), None)


def test_second_context_rejects_bad_base():
    Z = zero_form(2, 1, 2)
    one = constant(U, 2, 1)
    u = from_leaf_values(U, 2, [2, 2, 0, 0])
    ctx = make_ctx(Z, [one, one], u, B=2)
    res = first_stopping(ctx)
    pr = prune_g(ctx, res)
    with pytest.raises(ValueError, match="avoid"):
        SecondContext(ctx, RIGHT, pr.pruned, indicator(U, 2, RIGHT), res)


def test_packing_and_ledger_on_generated_ensemble():
    cfg = ScenarioConfig(mode="stopping", n=2, d=1, N=3, exponents=(2, 2), B=2)
    for seed in range(25):
        inst = build_stopping_instance(cfg, f"pl:{seed}")
        res = inst.result
        eps = inst.ctx.eps
        Q = inst.ctx.base
        assert res.packing_sum <= (1 - eps) * Q.volume
        assert res.per_measure[1] <= eps * Q.volume
        assert res.per_measure[2] <= eps * Q.volume
        assert res.per_measure[3] <= eps * Q.volume
        assert res.per_measure[4] <= (1 - 8 * eps) * Q.volume
        assert res.per_measure[5] <= eps * Q.volume
        if inst.second is not None:
            res2 = inst.second["result"]
            R = inst.second["R"]
            assert res2.packing_sum <= (1 - eps) * R.volume


def test_dual_threshold_detector_fires_on_unscaled_form():
    """The third-collection detector itself is exercised by a form too
    large to satisfy the scaled hypotheses; only the detector semantics
    matter here, so the packing trap is expected to trip or the cube to
    stop, depending on the ledger."""
    # profile pairing with the constant slot must survive, so only the
    # tested slot's profile is mean zero here
    big = PerfectForm(2, 1, 4, (block(DyadicCube(1, 3, (0,)), 1, [(1, -1), (1, 1)]),))
    big = big.scaled(64)
    one = constant(U, 4, 1)
    ctx = make_ctx(big, [one, one], one)
    try:
        res = first_stopping(ctx)
        fired = len(res.collections[3]) > 0
    except TheoremContradiction:
        fired = True
    assert fired
