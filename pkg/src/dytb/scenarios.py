"""Deterministic scenario instances and the ensemble runner.

Every random draw flows from a single seed through per-instance string
seeds, so ensembles are reproducible and parallelizable.  Instances are
built to satisfy the theorems' hypotheses exactly: testing-function
families enforce their conditions at insertion, and the form is scaled
so its certified norm sits under epsilon * B, which keeps the stopping
ledger provable rather than empirical.
"""

from __future__ import annotations

import os
import random
from dataclasses import dataclass, field
from fractions import Fraction
from numbers import Rational
from typing import Optional

from ._exact import rat, rat_str
from .funcspace import (
    HolderTuple,
    TestFunction,
    add,
    average,
    constant,
    from_leaf_values,
    haar,
    indicator,
    integral,
    lp_norm,
    lp_power,
    restrict,
    scale,
    sub,
    upsample,
    zero,
)
from .forms import PerfectForm, generate, validate_decay, validate_smoothness
from .lattice import CubeSet, DyadicCube, children, contains, cubes_within, leaf_cells, unit_cube
from .outer import (
    OuterSpace,
    SIZE_2,
    SIZE_INF,
    admissible_alpha_bound,
    carleson_check,
    embed_Delta,
    embed_E,
    lemma1_check,
    lemma2_check,
    outer_function,
    outer_lp_norm,
    outer_measure,
    outer_measure_bruteforce,
    superlevel,
)
from .paths import BFamily, Path, PathCollection, build_example_collection, validate_admissible, validate_bfamily, _entry_violation
from .stopping import (
    SecondContext,
    StoppingContext,
    StoppingResult,
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
from .testing import (
    certified_norm_upper,
    full_norm_bracket,
    full_norm_bruteforce,
    global_tb_check,
    spectral_norm_oracle,
    t1_testing_constant,
    tb_testing_constant,
    testing_sup,
)

SCHEMA_TAG = "dytb-report/1"
MODES = (
    "t1",
    "tb-local",
    "tb-global",
    "stopping",
    "telescope",
    "outer",
    "carleson",
    "lemmas",
)


class ConfigError(ValueError):
    pass


def _default_max_cells() -> int:
    raw = os.environ.get("DYTB_MAX_CELLS")
    if raw is None:
        return 4096
    try:
        return int(raw)
    except ValueError as e:
        raise ConfigError(f"bad DYTB_MAX_CELLS: {e}") from None


@dataclass
class ScenarioConfig:
    mode: str
    n: int = 2
    d: int = 1
    N: int = 3
    exponents: tuple = (2, 2)
    B: object = 2
    k: Optional[int] = None
    seed: int = 0
    instances: int = 10
    density: float = 0.5
    emit_witness: bool = False
    dump_collections: bool = False
    precision: int = 128
    max_n: int = 4
    max_N: int = 4
    max_d: int = 2
    max_cells: int = field(default_factory=_default_max_cells)

    def validated(self) -> "ScenarioConfig":
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}")
        try:
            tup = HolderTuple(tuple(Fraction(p) for p in self.exponents))
        except (ValueError, ZeroDivisionError) as e:
            raise ConfigError(f"invalid exponent tuple: {e}") from None
        if len(tup) != self.n:
            raise ConfigError("exponent count must match the arity")
        if self.n > self.max_n or self.N > self.max_N or self.d > self.max_d:
            raise ConfigError("resource caps exceeded (n/N/d)")
        if (1 << (self.d * self.n * self.N)) > self.max_cells ** self.n:
            raise ConfigError("cell budget exceeded; raise DYTB_MAX_CELLS")
        if rat(Fraction(self.B)) < 1:
            raise ConfigError("B must be at least 1")
        if self.instances < 1:
            raise ConfigError("need at least one instance")
        if self.k is not None and not 1 <= self.k <= self.n - 1:
            raise ConfigError("k must lie in [1, n-1]")
        return self

    @property
    def holder(self) -> HolderTuple:
        return HolderTuple(tuple(Fraction(p) for p in self.exponents))

    @property
    def bound(self) -> Rational:
        return rat(Fraction(self.B))

    def echo(self) -> dict:
        return {
            "mode": self.mode,
            "n": self.n,
            "d": self.d,
            "N": self.N,
            "exponents": [str(Fraction(p)) for p in self.exponents],
            "B": str(Fraction(self.B)),
            "k": self.k,
            "seed": self.seed,
            "instances": self.instances,
            "density": self.density,
            "precision": self.precision,
        }


def random_test_function(rng: random.Random, root: DyadicCube, N: int, style: str = "dense") -> TestFunction:
    leaves = 1 << (root.dim * N)
    if style == "spiky":
        vals = [rat(0)] * leaves
        vals[rng.randrange(leaves)] = rat(rng.choice([-1, 1]) * rng.randint(4, 16))
        if rng.random() < 0.5:
            vals[rng.randrange(leaves)] = rat(rng.randint(-2, 2))
        out = from_leaf_values(root, N, vals)
    elif style == "sparse":
        vals = [rat(0)] * leaves
        for _ in range(max(1, leaves // 3)):
            vals[rng.randrange(leaves)] = rat(rng.randint(-4, 4), rng.randint(1, 4))
        out = from_leaf_values(root, N, vals)
    else:
        out = from_leaf_values(
            root, N, [rat(rng.randint(-6, 6), rng.randint(1, 4)) for _ in range(leaves)]
        )
    if out.is_zero():
        vals = [rat(0)] * leaves
        vals[0] = rat(1)
        out = from_leaf_values(root, N, vals)
    return out


def _candidate_bs(rng: random.Random, root: DyadicCube, N: int, cube: DyadicCube, p, B: Rational):
    """Deterministic candidate testing functions on a cube, most adventurous
    first; all satisfy mean and support, the norm bound is checked by the
    caller."""
    out = []
    width = 1 << root.dim
    kids = list(children(cube)) if cube.level < root.level + N else []
    if kids and B >= 2:
        kid = kids[rng.randrange(len(kids))]
        conc = scale(indicator(root, N, kid), width)
        out.append(conc)
    if kids:
        pattern = [1 if i % 2 == 0 else -1 for i in range(width)]
        rng.shuffle(pattern)
        if sum(pattern) == 0:
            delta = rat(rng.choice([1, -1]), rng.choice([2, 2, 4]))
            out.append(add(indicator(root, N, cube), scale(haar(root, N, cube, pattern), delta)))
    out.append(indicator(root, N, cube))
    return out


def make_family(cfg: ScenarioConfig, seed_str: str, N: Optional[int] = None, B=None) -> BFamily:
    """Prefix-keyed lazy family; per-key draws are deterministic."""
    tup = cfg.holder
    B = cfg.bound if B is None else rat(Fraction(B))
    N = cfg.N if N is None else N
    root = unit_cube(cfg.d)

    def provider(key):
        slots, cubes = key
        cube = cubes[-1]
        j = slots[-1]
        p = tup[j - 1]
        rng = random.Random(f"{seed_str}|b|{slots}|{cube.level}:{cube.index}")
        for cand in _candidate_bs(rng, root, N, cube, p, B):
            if _entry_violation(cand, cube, p, B) is None:
                return cand
        return indicator(root, N, cube)

    return BFamily(tup, B, mode="prefix", provider=provider)


def _pow2_scale_to(form: PerfectForm, target: Rational) -> PerfectForm:
    """Scale by a power of two so the certified norm is at most target."""
    upper = certified_norm_upper(form)
    if upper == 0 or upper <= target:
        return form
    s = rat(1)
    while s * upper > target:
        s = s / 2
    return form.scaled(s)


@dataclass
class StoppingInstance:
    form: PerfectForm
    ctx: StoppingContext
    result: StoppingResult
    prune: object
    buffers: object
    second: Optional[dict]


def build_stopping_instance(
    cfg: ScenarioConfig,
    seed_str: str,
    N: Optional[int] = None,
    B: Optional[Rational] = None,
    want_second: bool = True,
) -> StoppingInstance:
    """Fresh hypothesis-satisfying instance and its full stopping run."""
    rng = random.Random(seed_str)
    n, d = cfg.n, cfg.d
    N = N if N is not None else cfg.N
    B = B if B is not None else cfg.bound
    tup = cfg.holder
    k = cfg.k if cfg.k is not None else n - 1
    eps = epsilon(tup, B)
    root = unit_cube(d)

    form = generate(n, d, N, cfg.density, seed=seed_str)
    form = _pow2_scale_to(form, eps * B)

    sigma = Path(n, tuple(range(1, k)) + (k + 1, k))
    tau = Path(n, tuple(range(1, k + 2)))
    family = make_family(cfg, seed_str, N=N, B=B)
    chain_full = (root,) * (k + 1)
    u = family.get(sigma, chain_full, k)

    style = rng.choice(["dense", "dense", "spiky", "sparse"])
    g = random_test_function(rng, root, N, style)
    fs = [None] * n
    fs[k] = g
    fs[k - 1] = indicator(root, N, root)
    for pos in range(1, k):
        slot = sigma.values[pos - 1]
        fs[slot - 1] = restrict(upsample(family.get(sigma, chain_full, pos), N), root)
    for s in range(n):
        if fs[s] is None:
            fs[s] = indicator(root, N, root)

    ctx = StoppingContext(
        form, tup, root, tuple(fs), k, u, B, eps, sigma, tau, (root,) * (k - 1), family
    )
    result = first_stopping(ctx)
    pruned = prune_g(ctx, result)
    buffers = buffer_functions(ctx, result, pruned, "first")

    second = None
    if want_second:
        cands = []
        for c in cubes_within(root, N - 1):
            if any(contains(P, c) for P in result.merged):
                continue
            if restrict(pruned.pruned, c).is_zero() or restrict(g, c).is_zero():
                continue
            if any(restrict(f, c).is_zero() for f in ctx.fs):
                continue
            cands.append(c)
        if cands:
            R = cands[rng.randrange(len(cands))]
            chain_R = (root,) * (k - 1) + (R, R)
            v = family.get(tau, chain_R, k)
            ctx2 = SecondContext(ctx, R, pruned.pruned, v, result)
            result2 = second_stopping(ctx2)
            pruned2 = prune_h(ctx2, result2)
            buffers2 = buffer_functions(ctx2, result2, pruned2, "second")
            g_hat = restrict(
                sub(pruned.pruned, scale(ctx.u, average(pruned.pruned, R) / average(ctx.u, R))),
                R,
            )
            second = {
                "R": R,
                "v": v,
                "ctx2": ctx2,
                "result": result2,
                "prune": pruned2,
                "buffers": buffers2,
                "g_hat": g_hat,
            }
    return StoppingInstance(form, ctx, result, pruned, buffers, second)


def run_telescope_on(instance: StoppingInstance):
    """Coefficients, telescoping identity, paraproduct pieces, flattening."""
    if instance.second is None:
        return None
    ctx = instance.ctx
    sec = instance.second
    R = sec["R"]
    phi, psi = coefficient_maps(
        sec["g_hat"],
        restrict(ctx.u, R),
        sec["prune"].pruned,
        restrict(sec["v"], R),
        R,
        ctx.form.resolution,
    )
    tel = telescope(
        ctx.form,
        ctx.exponents,
        ctx.fs,
        ctx.k,
        R,
        sec["prune"].pruned,
        sec["g_hat"],
        ctx.u,
        sec["v"],
        phi,
        psi,
    )
    theta = paraproduct_theta(sec["ctx2"], sec["result"], phi, psi)
    part = stopping_partition(R, sec["result"].merged, ctx.form.resolution)
    flat_reports = {}
    q_int = Fraction(ctx.r)
    if q_int.denominator == 1:
        _, rep_pow = flatten_on_partition(restrict(sec["v"], R), part, "power", ctx.r)
        flat_reports["power"] = rep_pow
        bound = rat(1 << (ctx.form.dim + 1)) / ctx.eps
        if "measured_constant" in rep_pow and rep_pow["measured_constant"] > bound:
            raise TheoremContradiction("flattened majorant exceeded the stopping bound")
    _, rep_avg = flatten_on_partition(restrict(sec["v"], R), part, "average", ctx.r)
    flat_reports["average"] = rep_avg
    return {"phi": phi, "psi": psi, "telescope": tel, "theta": theta, "flatten": flat_reports}


def _inst_seed(cfg: ScenarioConfig, idx: int) -> str:
    return f"{cfg.seed}:{idx}"


def _aggregate(values: list[float]) -> dict:
    clean = sorted(v for v in values if v is not None)
    if not clean:
        return {"count": 0}
    mid = clean[len(clean) // 2]
    return {"count": len(clean), "min": clean[0], "median": mid, "max": clean[-1]}


def run_scenario(cfg: ScenarioConfig) -> dict:
    """Run the configured ensemble and assemble the deterministic report."""
    cfg = cfg.validated()
    failures: list[dict] = []
    instances: list[dict] = []
    metrics: list[float] = []
    runner = {
        "t1": _run_t1,
        "tb-local": _run_tb_local,
        "tb-global": _run_tb_global,
        "stopping": _run_stopping,
        "telescope": _run_telescope,
        "outer": _run_outer,
        "carleson": _run_carleson,
        "lemmas": _run_lemmas,
    }[cfg.mode]
    for idx in range(cfg.instances):
        try:
            record, metric = runner(cfg, idx)
        except (TheoremContradiction, AssertionError) as e:
            failures.append({"instance": idx, "error": str(e)})
            record, metric = {"instance": idx, "failed": str(e)}, None
        instances.append(record)
        if metric is not None:
            metrics.append(metric)
    return {
        "schema": SCHEMA_TAG,
        "config": cfg.echo(),
        "instances": instances,
        "aggregate": _aggregate(metrics),
        "assertion_failures": failures,
    }


def _run_t1(cfg: ScenarioConfig, idx: int):
    seed = _inst_seed(cfg, idx)
    form = generate(cfg.n, cfg.d, cfg.N, cfg.density, seed=seed)
    root = unit_cube(cfg.d)
    tup = cfg.holder
    rep = t1_testing_constant(form, tup, root, precision=cfg.precision)
    warm = ()
    if rep.witness_chain is not None:
        P = rep.witness_chain[-1]
        tupfs = [
            rep.extremizer if j == rep.witness_slot else indicator(root, cfg.N, P)
            for j in range(cfg.n)
        ]
        warm = (tuple(tupfs),)
    bracket = full_norm_bracket(form, tup, budget=5, seed=idx, warm_starts=warm, precision=cfg.precision)
    if rep.value > bracket.lower * (1 + 1e-9) and rep.value > 1e-300:
        raise AssertionError("testing constant exceeded the search lower bound")
    record = {
        "instance": idx,
        "t1": rep.value,
        "bracket_lower": bracket.lower,
        "bracket_upper": rat_str(bracket.upper),
        "candidates": rep.candidates,
    }
    if cfg.emit_witness and rep.witness_chain is not None:
        from .serialize import cube_to_json, function_to_json

        record["witness"] = {
            "cube": cube_to_json(rep.witness_chain[-1]),
            "slot": rep.witness_slot,
            "extremizer": function_to_json(rep.extremizer),
        }
    ratio = bracket.lower / rep.value if rep.value > 0 else None
    return record, ratio


def _run_tb_local(cfg: ScenarioConfig, idx: int):
    seed = _inst_seed(cfg, idx)
    collection = build_example_collection(cfg.n)
    ok, witness = validate_admissible(collection)
    if not ok:
        raise AssertionError(f"example collection failed admissibility: {witness}")
    inst = build_stopping_instance(cfg, seed)
    tup = cfg.holder
    root = unit_cube(cfg.d)
    k = cfg.k if cfg.k is not None else cfg.n - 1
    fam_report = validate_bfamily(inst.ctx.family, collection, k)
    if not fam_report.passed:
        raise AssertionError(f"family validation failed: {fam_report.witness}")
    tb1 = tb_testing_constant(inst.form, collection, inst.ctx.family, tup, 1, root, precision=cfg.precision)
    t1 = t1_testing_constant(inst.form, tup, root, precision=cfg.precision)
    same = tb1.value == t1.value and (
        (tb1.value_power is None and t1.value_power is None)
        or (tb1.value_power is not None and t1.value_power is not None and tb1.value_power.compare(t1.value_power) == 0)
    )
    if not same:
        raise AssertionError("length-one testing constant differs from the indicator constant")
    tbk = tb_testing_constant(inst.form, collection, inst.ctx.family, tup, min(k + 1, cfg.n), root, precision=cfg.precision)
    tel = run_telescope_on(inst)
    record = {
        "instance": idx,
        "t1": t1.value,
        "tb_k": tbk.value,
        "packing_first": rat_str(inst.result.packing_ratio),
        "second": inst.second is not None,
        "telescope_residual": rat_str(tel["telescope"].residual) if tel else None,
    }
    if cfg.dump_collections:
        from .serialize import cube_to_json

        record["collections"] = {
            str(i): [cube_to_json(c) for c in cs]
            for i, cs in inst.result.collections.items()
        }
    return record, tbk.value


def _accretive_b(rng: random.Random, root: DyadicCube, N: int, B: Rational) -> TestFunction:
    leaves = 1 << (root.dim * N)
    cap = int(B) - 1
    vals = [rat(1) + rat(rng.randint(0, max(cap, 0) * 4), 4) for _ in range(leaves)]
    vals = [min(v, rat(B)) for v in vals]
    return from_leaf_values(root, N, vals)


def _run_tb_global(cfg: ScenarioConfig, idx: int):
    seed = _inst_seed(cfg, idx)
    rng = random.Random(seed)
    root = unit_cube(cfg.d)
    tup = cfg.holder
    form = generate(cfg.n, cfg.d, cfg.N, cfg.density, seed=seed)
    bs = [_accretive_b(rng, root, cfg.N, cfg.bound) for _ in range(cfg.n)]
    rep = global_tb_check(form, bs, tup, root, precision=cfg.precision)
    if not rep.accretivity_ok:
        raise AssertionError("generated accretive function failed its own condition")
    from .testing import derive_local_family

    fam = derive_local_family(bs, tup, rat(2) * cfg.bound ** max(int(Fraction(p)) + 1 for p in tup.exponents), root)
    sample = fam.get(Path(cfg.n, tuple(range(1, cfg.n + 1))), (root,) * cfg.n, 1)
    if integral(sample, root) != root.volume:
        raise AssertionError("derived local family lost the mean normalization")
    record = {
        "instance": idx,
        "least_admissible_B": rep.least_admissible,
        "sup_bound": rat_str(rep.sup_bound),
        "weak_bound": rat_str(rep.weak_bound),
        "bmo_bound": rep.bmo_bound,
    }
    return record, rep.least_admissible


def _run_stopping(cfg: ScenarioConfig, idx: int):
    seed = _inst_seed(cfg, idx)
    rng = random.Random(f"{seed}|shape")
    N = rng.randint(max(2, min(2, cfg.N)), cfg.N)
    B = rat(rng.choice([1, 2])) if cfg.B == "mixed" else cfg.bound
    inst = build_stopping_instance(cfg, seed, N=N, B=B)
    record = {
        "instance": idx,
        "N": N,
        "B": rat_str(B),
        "packing_first": rat_str(inst.result.packing_ratio),
        "collections_first": {str(i): len(cs) for i, cs in inst.result.collections.items()},
        "buffers": len(inst.buffers.functions),
        "max_overlap": inst.buffers.max_overlap,
        "second": None,
    }
    metric = float(inst.result.packing_ratio)
    if inst.second is not None:
        res2 = inst.second["result"]
        record["second"] = {
            "packing": rat_str(res2.packing_ratio),
            "collections": {str(i): len(cs) for i, cs in res2.collections.items()},
        }
        metric = max(metric, float(res2.packing_ratio))
    if cfg.dump_collections:
        from .serialize import cube_to_json

        record["collections_dump"] = {
            str(i): [cube_to_json(c) for c in cs] for i, cs in inst.result.collections.items()
        }
    return record, metric


def _run_telescope(cfg: ScenarioConfig, idx: int):
    seed = _inst_seed(cfg, idx)
    inst = build_stopping_instance(cfg, seed)
    tel = run_telescope_on(inst)
    if tel is None:
        return {"instance": idx, "second": False, "note": "no eligible second base"}, None
    rep = tel["telescope"]
    record = {
        "instance": idx,
        "residual": rat_str(rep.residual),
        "representable": rep.representable,
        "failures": len(rep.failures),
        "bp": [rat_str(rep.bp1), rat_str(rep.bp2), rat_str(rep.bp3), rat_str(rep.bp4)],
        "target": rat_str(rep.target),
        "theta_ratio": tel["theta"].norm_ratio,
    }
    return record, float(abs(rep.residual))


def _run_outer(cfg: ScenarioConfig, idx: int):
    seed = _inst_seed(cfg, idx)
    rng = random.Random(seed)
    root = unit_cube(cfg.d)
    depth = min(cfg.N, 3)
    space = OuterSpace(root, depth)
    cubes = space.cubes()
    values = {c: rat(rng.randint(-4, 4), rng.randint(1, 3)) for c in cubes if rng.random() < 0.7}
    F = outer_function(space, values)
    for T in cubes:
        sub_cubes = [c for c in cubes if contains(T, c)]
        if outer_measure(sub_cubes, space) != T.volume:
            raise AssertionError("subtree measure must equal the cube volume")
    picks = [c for c in cubes if rng.random() < 0.4]
    more = picks + [c for c in cubes if rng.random() < 0.2]
    mu1 = outer_measure(picks, space)
    mu2 = outer_measure(more, space)
    if mu1 > mu2:
        raise AssertionError("outer measure must be monotone")
    split = len(picks) // 2
    if outer_measure(picks, space) > outer_measure(picks[:split], space) + outer_measure(picks[split:], space):
        raise AssertionError("outer measure must be subadditive")
    strong, _ = outer_lp_norm(F, 2, SIZE_INF)
    weak, _ = outer_lp_norm(F, 2, SIZE_INF, weak=True)
    if weak.power_exact is not None and strong.power_exact is not None:
        if weak.power_exact > strong.power_exact:
            raise AssertionError("weak norm exceeded the strong norm")
    c = rat(rng.randint(1, 5), rng.randint(1, 3))
    scaled, _ = outer_lp_norm(F.scaled(c), 2, SIZE_INF)
    if scaled.power_exact != strong.power_exact * c**2:
        raise AssertionError("outer norm homogeneity failed")
    gap = 0
    if len(cubes) <= 15:
        lam_values = sorted({abs(v) for v in values.values()} | {rat(0)})
        for lam in lam_values:
            g = superlevel(F, lam, SIZE_2, "greedy")
            e = superlevel(F, lam, SIZE_2, "exact")
            if g < e:
                raise AssertionError("greedy superlevel fell below exact")
            if g != e:
                gap += 1
    record = {"instance": idx, "strong": float(strong.approx), "weak": float(weak.approx), "s2_gap_levels": gap}
    return record, float(strong.approx)


def _run_carleson(cfg: ScenarioConfig, idx: int):
    seed = _inst_seed(cfg, idx)
    rng = random.Random(seed)
    root = unit_cube(cfg.d)
    style = rng.choice(["dense", "spiky", "sparse"])
    f = random_test_function(rng, root, cfg.N, style)
    reports = {}
    for which in ("E", "Delta"):
        r_inf = carleson_check(f, "inf", which)
        r_one = carleson_check(f, 1, which)
        reports[which] = {"inf": r_inf.ratio, "weak1": r_one.ratio}
    p_mid = Fraction(cfg.exponents[0])
    mids = {}
    for which in ("E", "Delta"):
        r = carleson_check(f, p_mid, which)
        mids[which] = r.ratio
    record = {"instance": idx, "style": style, "endpoints": reports, "intermediate": mids}
    metric = max(v for d in mids.values() if d is not None for v in [d]) if any(mids.values()) else None
    return record, metric


def _max_alpha(fs3, space, precision=96):
    """Largest coefficients admissible for the first lemma's budget."""
    from ._exact import rat_from_mpf
    import mpmath

    alpha = {}
    for T in space.cubes():
        if space.is_leaf(T):
            continue
        lo, hi = admissible_alpha_bound(fs3, T, precision)
        with mpmath.workprec(precision):
            safe = lo * (1 - mpmath.mpf(2) ** (-64))
        a = rat_from_mpf(safe)
        if a > 0:
            alpha[T] = a
    return alpha


def _run_lemmas(cfg: ScenarioConfig, idx: int):
    seed = _inst_seed(cfg, idx)
    rng = random.Random(seed)
    root = unit_cube(cfg.d)
    N = min(cfg.N, 4)
    f1 = random_test_function(rng, root, N)
    f2 = random_test_function(rng, root, N)
    raw3 = random_test_function(rng, root, N)
    sup3 = raw3.sup_norm()
    f3 = scale(raw3, rat(1) / sup3) if sup3 > 1 else raw3
    space = OuterSpace(root, N)
    alpha = _max_alpha((f1, f2, f3), space)
    p = Fraction(cfg.exponents[0])
    rep1 = lemma1_check(f1, f2, f3, p, alpha, precision=cfg.precision)
    f4 = zero(root, N)
    f5 = zero(root, N)
    ones = constant(root, N, 1)
    alpha2 = {}
    for T in space.cubes():
        if space.is_leaf(T):
            continue
        d1 = embed_Delta(f1).values.get(T, rat(0))
        d2 = embed_Delta(f2).values.get(T, rat(0))
        from ._exact import rat_pow

        prod = rat_pow(d1 * d2, Fraction(1, 2))
        if prod is None:
            import mpmath

            from ._exact import mpf_from_rat, rat_from_mpf

            with mpmath.workprec(96):
                prod = rat_from_mpf(
                    mpmath.sqrt(mpf_from_rat(d1 * d2, 96)) * (1 - mpmath.mpf(2) ** (-64))
                )
        if prod > 0:
            alpha2[T] = prod * T.volume
    rep2 = lemma2_check(f1, f2, ones, f4, f5, p, p, alpha2, precision=cfg.precision)
    record = {
        "instance": idx,
        "lemma1_C": rep1.measured_constant,
        "holder": [rep1.holder_lhs, rep1.holder_rhs],
        "lemma2_C": rep2.measured_constant,
        "alpha_entries": len(alpha),
    }
    metric = rep1.measured_constant
    return record, metric
