"""Stopping times, pruning, buffer functions, coefficients, telescoping.

Both stopping-time constructions run top-down, admitting a cube the
first time its threshold certifies, so each collection is a maximal
antichain.  All threshold comparisons are exact rationals whenever the
exponent powers are rational (always for integer exponents); otherwise
they are certified with a downward bias so a cube only stops on proven
exceedance.  Packing and ledger violations raise TheoremContradiction:
either the instance violates the theorem's hypotheses or a genuine bug
has been trapped.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from numbers import Rational
from typing import Optional

from ._exact import PowProduct, rat, rat_pow, rat_pow_lower
from .funcspace import (
    HolderTuple,
    NormValue,
    TestFunction,
    _leaf_positions,
    average,
    cube_averages,
    from_leaf_values,
    indicator,
    integral,
    lp_norm,
    lp_power,
    restrict,
    scale,
    sub,
    upsample,
)
from .forms import PerfectForm, eval_form, meanzero_dual_norm, partial_functional
from .lattice import (
    CubeSet,
    DyadicCube,
    children,
    contains,
    cubes_within,
    leaf_cells,
    maximal_cubes,
    parent,
)
from .paths import BFamily, Path


class TheoremContradiction(AssertionError):
    """A machine-checked consequence of the theorems failed."""


def epsilon(exponents: HolderTuple, B) -> Rational:
    """The margin (1/8) min_j (7/8)^(p_j/(p_j-1)) B^(-1/(p_j-1)).

    Exact when the powers are rational; otherwise rounded downward
    (a smaller margin is always safe).
    """
    B = rat(B)
    if B < 1:
        raise ValueError("B must be at least 1")
    best: Optional[Rational] = None
    for p in exponents.exponents:
        e1 = p / (p - 1)
        term = rat_pow_lower(rat(7, 8), e1)
        term *= rat_pow_lower(1 / B, Fraction(1) / (p - 1))
        if best is None or term < best:
            best = term
    return best / 8


@dataclass
class StoppingContext:
    """Data for one stopping run: the base cube, the slot functions
    (already truncated to the base), the distinguished testing function,
    and the constants.  Slots are 0-based; k is the paper's 1-based
    induction position, so g = fs[k] and h = fs[k-1]."""

    form: PerfectForm
    exponents: HolderTuple
    base: DyadicCube
    fs: tuple[TestFunction, ...]
    k: int
    u: TestFunction
    B: Rational
    eps: Rational
    sigma: Path
    tau: Path
    chain_prefix: tuple[DyadicCube, ...]
    family: Optional[BFamily] = None

    def __post_init__(self):
        n = self.form.arity
        if len(self.fs) != n:
            raise ValueError("need one function per slot")
        if not 1 <= self.k <= n - 1:
            raise ValueError("k must lie in [1, n-1]")
        if not 0 < self.eps <= rat(1, 8):
            raise ValueError("epsilon must lie in (0, 1/8]")
        self.fs = tuple(upsample(f, self.form.resolution) for f in self.fs)
        self.u = upsample(self.u, self.form.resolution)
        for j, f in enumerate(self.fs):
            if all(v == 0 for v in f.values):
                raise ValueError(f"slot {j} carries the zero function")
        if integral(self.u, self.base) != self.base.volume:
            raise ValueError("u must have mean one on the base cube")

    @property
    def g(self) -> TestFunction:
        return self.fs[self.k]

    @property
    def h(self) -> TestFunction:
        return self.fs[self.k - 1]

    @property
    def q(self) -> Fraction:
        return self.exponents[self.k]

    @property
    def r(self) -> Fraction:
        return self.exponents[self.k - 1]


@dataclass
class StoppingResult:
    base: DyadicCube
    collections: dict[int, CubeSet]
    merged: CubeSet
    packing_sum: Rational
    packing_bound: Rational
    per_measure: dict[int, Rational]
    certificates: dict[str, dict]
    events: list = field(default_factory=list)

    @property
    def packing_ratio(self) -> Rational:
        return self.packing_sum / self.base.volume


def _subtree_powers(f: TestFunction, p, base: DyadicCube):
    """||f 1_T||_p^p for all T in the subtree of base, bottom-up.

    Returns (dict, exact).  With irrational pointwise powers, values are
    floats and `exact` is False; threshold users then compare with a
    certified bias.
    """
    p = Fraction(p)
    depth = f.leaf_level - base.level
    lv = f.leaf_volume
    cache: dict[Rational, Optional[Rational]] = {}

    def leaf_power(v):
        if v == 0:
            return rat(0)
        a = abs(v)
        if a not in cache:
            cache[a] = rat_pow(a, p)
        return cache[a]

    exact = True
    leaf_vals = []
    for cell in leaf_cells(base, depth):
        v = f.value_on(cell)
        pw = leaf_power(v)
        if pw is None:
            exact = False
            break
        leaf_vals.append(pw * lv)
    out: dict[DyadicCube, Rational] = {}
    if exact:
        cells = leaf_cells(base, depth)
        for cell, val in zip(cells, leaf_vals):
            out[cell] = val
        level = cells
        for _ in range(depth):
            ups = sorted({parent(c) for c in level}, key=lambda c: c.index)
            for c in ups:
                out[c] = sum((out[kid] for kid in children(c)), rat(0))
            level = ups
        return out, True
    flt: dict[DyadicCube, float] = {}
    cells = leaf_cells(base, depth)
    for cell in cells:
        v = f.value_on(cell)
        flt[cell] = 0.0 if v == 0 else float(abs(v)) ** float(p) * float(lv)
    level = cells
    for _ in range(depth):
        ups = sorted({parent(c) for c in level}, key=lambda c: c.index)
        for c in ups:
            flt[c] = sum(flt[kid] for kid in children(c))
        level = ups
    return flt, False


def _ratio_ge(lhs_pow, lhs_vol, factor, rhs_pow, rhs_vol, exact: bool) -> bool:
    """lhs_pow/lhs_vol >= factor * rhs_pow/rhs_vol, certified."""
    if exact:
        return lhs_pow * rhs_vol >= factor * rhs_pow * lhs_vol
    margin = 1e-12
    return lhs_pow * float(rhs_vol) * (1 - margin) >= float(factor) * rhs_pow * float(lhs_vol) * (1 + margin)


def _maximal_fired(base: DyadicCube, leaf_level: int, predicate) -> list[DyadicCube]:
    """Topmost cubes in the subtree where the predicate holds."""
    out = []

    def walk(c: DyadicCube):
        if predicate(c):
            out.append(c)
            return
        if c.level < leaf_level:
            for kid in children(c):
                walk(kid)

    walk(base)
    return out


def _norm_pow_product(power_exact, p, approx=None) -> Optional[PowProduct]:
    if power_exact is None:
        return None
    return PowProduct(rat(1), [(rat(power_exact), Fraction(1) / Fraction(p))]) if power_exact != 0 else PowProduct(rat(0))


def _slot_norm_products(ctx: StoppingContext, fs, over: Optional[DyadicCube] = None):
    """Per-slot norms, as (PowProduct or None, NormValue) pairs."""
    pairs = []
    for j, f in enumerate(fs):
        g = restrict(f, over) if over is not None else f
        nv = lp_norm(g, ctx.exponents[j])
        pairs.append((_norm_pow_product(nv.power_exact, ctx.exponents[j]), nv))
    return pairs


def _fixed_norm_product(ctx: StoppingContext, over: Optional[DyadicCube] = None):
    """Product over slots j != k-1, k (0-based) of ||f_j||_{p_j}."""
    prod_exact: Optional[PowProduct] = PowProduct(rat(1))
    prod_float = 1.0
    for j, f in enumerate(ctx.fs):
        if j in (ctx.k - 1, ctx.k):
            continue
        g = restrict(f, over) if over is not None else f
        nv = lp_norm(g, ctx.exponents[j])
        prod_float *= float(nv.approx)
        piece = _norm_pow_product(nv.power_exact, ctx.exponents[j])
        prod_exact = prod_exact.times(piece) if (prod_exact is not None and piece is not None) else None
    return prod_exact, prod_float


def _dual_threshold_fires(
    value: NormValue, pprime, rhs_exact: Optional[PowProduct], rhs_float: float
) -> bool:
    """meanzero dual value >= threshold, certified (exact when possible)."""
    if value.power_exact is not None and rhs_exact is not None:
        lhs = (
            PowProduct(rat(0))
            if value.power_exact == 0
            else PowProduct(rat(1), [(rat(value.power_exact), Fraction(1) / Fraction(pprime))])
        )
        return lhs.compare(rhs_exact) >= 0
    margin = 1e-10
    return float(value.approx) * (1 - margin) >= rhs_float * (1 + margin)


def _meanzero_dual_at(ctx: StoppingContext, P: DyadicCube, free_slot: int, special: TestFunction, exponent) -> NormValue:
    """sup over mean-zero rho on P of the form pairing in `free_slot`,
    with `special` in the partner slot and the context functions in the
    remaining slots, everything truncated to P."""
    partner = ctx.k if free_slot == ctx.k - 1 else ctx.k - 1
    fixed = []
    for j in range(ctx.form.arity):
        if j == free_slot:
            continue
        if j == partner:
            fixed.append(restrict(special, P))
        else:
            fixed.append(restrict(ctx.fs[j], P))
    phi = partial_functional(ctx.form, free_slot, fixed)
    pprime = Fraction(exponent) / (Fraction(exponent) - 1)
    return meanzero_dual_norm(phi, exponent, P)


def _power_factor(base_ratio: Rational, expo: Fraction) -> PowProduct:
    return PowProduct(rat(1), [(rat(base_ratio), expo)])


def first_stopping(ctx: StoppingContext) -> StoppingResult:
    """The five collections inside the base cube Q, their merge, the
    packing inequality, the per-collection ledger, and the derived
    upper/lower certificates on eligible cubes."""
    Q = ctx.base
    form = ctx.form
    n = form.arity
    leaf_level = form.resolution
    eps = ctx.eps
    inv_eps = 1 / eps

    f_powers = [_subtree_powers(f, p, Q) for f, p in zip(ctx.fs, ctx.exponents.exponents)]
    u_powers, u_exact = _subtree_powers(ctx.u, ctx.q, Q)
    u_avgs = cube_averages(ctx.u, Q)

    def p1_pred(P):
        for j in range(n):
            powers, exact = f_powers[j]
            if _ratio_ge(powers[P], P.volume, rat(n) * inv_eps, powers[Q], Q.volume, exact):
                return True
        return False

    def p2_pred(P):
        return _ratio_ge(u_powers[P], P.volume, inv_eps, u_powers[Q], Q.volume, u_exact)

    F_exact, F_float = _fixed_norm_product(ctx, Q)
    u_norm = lp_norm(restrict(ctx.u, Q), ctx.q)
    u_norm_exact = _norm_pow_product(u_norm.power_exact, ctx.q)
    r = ctx.r
    rprime_expo = Fraction(1) - Fraction(1) / r

    def p3_rhs(P):
        rhs_float = float(ctx.B) * F_float * float(inv_eps) * float(P.volume / Q.volume) ** float(rprime_expo) * float(u_norm.approx)
        if F_exact is None or u_norm_exact is None:
            return None, rhs_float
        rhs = PowProduct(ctx.B * inv_eps)
        rhs = rhs.times(F_exact).times(u_norm_exact).times(_power_factor(P.volume / Q.volume, rprime_expo))
        return rhs, rhs_float

    def p3_pred(P):
        value = _meanzero_dual_at(ctx, P, ctx.k - 1, ctx.u, r)
        rhs_exact, rhs_float = p3_rhs(P)
        rprime = r / (r - 1)
        return _dual_threshold_fires(value, rprime, rhs_exact, rhs_float)

    def p4_pred(P):
        return abs(u_avgs[P]) <= rat(1, 8)

    p1 = CubeSet.of(form.dim, _maximal_fired(Q, leaf_level, p1_pred))
    p2 = CubeSet.of(form.dim, _maximal_fired(Q, leaf_level, p2_pred))
    p3 = CubeSet.of(form.dim, _maximal_fired(Q, leaf_level, p3_pred))
    p4 = CubeSet.of(form.dim, _maximal_fired(Q, leaf_level, p4_pred))

    parents4 = sorted({parent(P) for P in p4 if P.level > 0}, key=lambda c: (c.level, c.index))
    parents4_set = set(parents4)
    count_threshold = rat(1 << form.dim) * inv_eps

    def p5_pred(P):
        count = 0
        c = P
        while True:
            if c in parents4_set:
                count += 1
            if c.level == Q.level:
                break
            c = parent(c)
        # ties at the threshold count as stopped
        return rat(count) >= count_threshold

    p5 = CubeSet.of(form.dim, _maximal_fired(Q, leaf_level, p5_pred))

    collections = {1: p1, 2: p2, 3: p3, 4: p4, 5: p5}
    merged = maximal_cubes(p1.union(p2).union(p3).union(p4).union(p5))
    packing_sum = merged.total_volume()
    packing_bound = (1 - eps) * Q.volume
    per_measure = {i: collections[i].total_volume() for i in collections}

    events = []
    if packing_sum > packing_bound:
        raise TheoremContradiction(
            f"first stopping packing failed: {packing_sum} > {packing_bound}"
        )
    ledger_bounds = {
        1: eps * Q.volume,
        2: eps * Q.volume,
        3: eps * Q.volume,
        4: (1 - 8 * eps) * Q.volume,
        5: eps * Q.volume,
    }
    for i, bound in ledger_bounds.items():
        if per_measure[i] > bound:
            raise TheoremContradiction(
                f"collection {i} ledger failed: {per_measure[i]} > {bound}"
            )

    certificates = _first_certificates(ctx, collections, f_powers, u_powers, u_exact, u_avgs, p4)
    return StoppingResult(Q, collections, merged, packing_sum, packing_bound, per_measure, certificates, events)


def _strict_interior(cubes: CubeSet, P: DyadicCube) -> bool:
    return any(c != P and contains(c, P) for c in cubes)


def _first_certificates(ctx, collections, f_powers, u_powers, u_exact, u_avgs, p4):
    """Derived bounds on cubes not strictly inside the firing collection:
    the threshold factor survives with at most a 2^d loss (via the
    parent), and the mean lower bound holds off the fourth collection."""
    Q = ctx.base
    n = ctx.form.arity
    eps = ctx.eps
    twod = rat(1 << ctx.form.dim)
    all_cubes = cubes_within(Q, ctx.form.resolution - Q.level)
    certs = {}

    worst1 = rat(0)
    for P in all_cubes:
        if _strict_interior(collections[1], P):
            continue
        for j in range(n):
            powers, exact = f_powers[j]
            if not exact:
                continue
            denom = powers[Q] * P.volume
            if denom == 0:
                continue
            ratio = (powers[P] * Q.volume) / denom
            worst1 = max(worst1, ratio)
    bound1 = twod * rat(n) / eps
    certs["upper_norm"] = {"measured": worst1, "bound": bound1, "ok": worst1 <= bound1}

    worst2 = rat(0)
    if u_exact:
        for P in all_cubes:
            if _strict_interior(collections[2], P):
                continue
            denom = u_powers[Q] * P.volume
            if denom != 0:
                worst2 = max(worst2, (u_powers[P] * Q.volume) / denom)
    bound2 = twod / eps
    certs["upper_norm_u"] = {"measured": worst2, "bound": bound2, "ok": worst2 <= bound2}

    worst4 = None
    ok4 = True
    for P in all_cubes:
        if any(contains(c, P) for c in collections[4]):
            continue
        a = abs(u_avgs[P])
        if worst4 is None or a < worst4:
            worst4 = a
        if a < rat(1, 8):
            ok4 = False
    certs["lower_mean_u"] = {"measured": worst4, "bound": rat(1, 8), "ok": ok4}
    if not ok4:
        raise TheoremContradiction("mean lower bound failed off the stopped set")
    if not certs["upper_norm"]["ok"] or not certs["upper_norm_u"]["ok"]:
        raise TheoremContradiction("derived norm certificate exceeded its factor")
    return certs


@dataclass
class PruneOutput:
    pruned: TestFunction
    parents4: CubeSet
    siblings4: CubeSet
    stopped4: CubeSet
    norm_ratio: NormValue
    components: dict = field(default_factory=dict)


def _safe_u_ratio(avg_g, avg_u, P) -> Rational:
    if avg_u == 0:
        raise TheoremContradiction(
            f"division by vanishing average at {P}: contradicts the mean lower bound"
        )
    return avg_g / avg_u


def prune_g(ctx: StoppingContext, result: StoppingResult) -> PruneOutput:
    """The pruned function adapted to the first stopping time.

    Exact identities asserted: support inside the base and exact zero
    mean.  The norm ratio against the original is reported.
    """
    Q = ctx.base
    g = upsample(restrict(ctx.g, Q), ctx.form.resolution)
    u = upsample(restrict(ctx.u, Q), ctx.form.resolution)
    g_avgs = cube_averages(g, Q)
    u_avgs = cube_averages(u, Q)

    merged = result.merged
    p4 = result.collections[4]
    in_p4 = CubeSet.of(Q.dim, [P for P in merged if P in p4])
    not_p4 = CubeSet.of(Q.dim, [P for P in merged if P not in p4])
    parents4 = CubeSet.of(Q.dim, sorted({parent(P) for P in in_p4}, key=lambda c: (c.level, c.index)))
    sib4 = []
    in_p4_set = set(in_p4.cubes)
    for P in in_p4:
        for s in children(parent(P)):
            if s != P and s not in in_p4_set:
                sib4.append(s)
    siblings4 = CubeSet.of(Q.dim, sib4)

    vals = list(g.values)

    def axpy(coef, f: TestFunction):
        for i, v in enumerate(f.values):
            if v != 0:
                vals[i] = vals[i] + coef * v

    axpy(-g_avgs[Q], u)
    for P in not_p4:
        axpy(rat(-1), restrict(g, P))
        axpy(_safe_u_ratio(g_avgs[P], u_avgs[P], P), restrict(u, P))
    for P in in_p4:
        axpy(rat(-1), restrict(g, P))
    for P in parents4:
        axpy(_safe_u_ratio(g_avgs[P], u_avgs[P], P), restrict(u, P))
    for P in siblings4:
        axpy(-_safe_u_ratio(g_avgs[P], u_avgs[P], P), restrict(u, P))

    pruned = from_leaf_values(g.root, g.resolution, vals)
    inside = set(_leaf_positions(pruned.root, pruned.resolution, Q))
    if any(v != 0 for i, v in enumerate(pruned.values) if i not in inside):
        raise TheoremContradiction("pruned function escaped the base cube")
    if integral(pruned, Q) != 0:
        raise TheoremContradiction("pruned function has nonzero mean")

    q = ctx.q
    num = lp_norm(pruned, q)
    den = lp_norm(g, q)
    if num.power_exact is not None and den.power_exact not in (None, rat(0)):
        ratio = NormValue.from_power(q, num.power_exact / den.power_exact)
    else:
        ratio = NormValue.from_approx(q, float(num.approx) / max(float(den.approx), 1e-300))
    return PruneOutput(pruned, parents4, siblings4, in_p4, ratio)


@dataclass
class BufferReport:
    functions: list[tuple[DyadicCube, TestFunction]]
    max_overlap: int
    overlap_bound: Rational


def buffer_functions(ctx, result: StoppingResult, prune: PruneOutput, side: str = "first") -> BufferReport:
    """One mean-zero buffer per parent of a stopped fourth-collection
    cube, built from the parent term, the sibling terms, and the
    per-child testing functions.  Overlap of the parents is bounded by
    2^d / epsilon since none of them sits inside the fifth collection.

    `ctx` is a StoppingContext for the first side and a SecondContext
    for the second.
    """
    if side == "first":
        first = ctx
        Q = first.base
        base_fn, special = first.g, first.u
        path, pos = first.sigma, first.k
    elif side == "second":
        first = ctx.first
        Q = ctx.base
        base_fn, special = first.h, ctx.v
        path, pos = first.tau, first.k
    else:
        raise ValueError("side must be 'first' or 'second'")
    form = first.form
    eps = first.eps
    family = first.family
    chain_prefix = first.chain_prefix
    g = upsample(restrict(base_fn, Q), form.resolution)
    u = upsample(restrict(special, Q), form.resolution)
    g_avgs = cube_averages(g, Q)
    u_avgs = cube_averages(u, Q)

    out = []
    for V in prune.parents4:
        vals = [rat(0)] * len(g.values)

        def axpy(coef, f: TestFunction):
            for i, v in enumerate(f.values):
                if v != 0:
                    vals[i] = vals[i] + coef * v

        axpy(-_safe_u_ratio(g_avgs[V], u_avgs[V], V), restrict(u, V))
        stopped_children = []
        for kid in children(V):
            if kid in prune.siblings4:
                axpy(_safe_u_ratio(g_avgs[kid], u_avgs[kid], kid), restrict(u, kid))
            elif kid in prune.stopped4:
                stopped_children.append(kid)
        for kid in stopped_children:
            if family is not None:
                chain = chain_prefix + (kid,) * (path.length - len(chain_prefix))
                b = family.get(path, chain, pos)
            else:
                b = indicator(form.root, form.resolution, kid)
            axpy(g_avgs[kid], upsample(b, form.resolution))
        if not stopped_children:
            raise TheoremContradiction("parent collection member without stopped child")
        xi = from_leaf_values(g.root, g.resolution, vals)
        if integral(xi) != 0:
            raise TheoremContradiction("buffer function has nonzero mean")
        keep = set(_leaf_positions(xi.root, xi.resolution, V))
        if any(v != 0 for i, v in enumerate(xi.values) if i not in keep):
            raise TheoremContradiction("buffer function escaped its parent cube")
        out.append((V, xi))

    overlap_bound = rat(1 << form.dim) / eps
    max_overlap = 0
    for cell in leaf_cells(Q, form.resolution - Q.level):
        count = sum(1 for V, _ in out if contains(V, cell))
        max_overlap = max(max_overlap, count)
    if rat(max_overlap) > overlap_bound:
        raise TheoremContradiction("buffer overlap exceeded 2^d / epsilon")
    return BufferReport(out, max_overlap, overlap_bound)


@dataclass
class SecondContext:
    first: StoppingContext
    base: DyadicCube
    g_pruned: TestFunction
    v: TestFunction
    first_result: StoppingResult

    def __post_init__(self):
        R = self.base
        ctx = self.first
        self.v = upsample(self.v, ctx.form.resolution)
        self.g_pruned = upsample(self.g_pruned, ctx.form.resolution)
        if any(contains(P, R) for P in self.first_result.merged):
            raise ValueError("the second base must avoid the first stopping cubes")
        if integral(self.v, R) != R.volume:
            raise ValueError("v must have mean one on the second base")
        for j, f in enumerate(ctx.fs):
            if all(v == 0 for v in restrict(f, R).values):
                raise ValueError(f"slot {j} vanishes on the second base")
        if all(v == 0 for v in restrict(self.g_pruned, R).values):
            raise ValueError("pruned function vanishes on the second base")


def second_stopping(ctx2: SecondContext) -> StoppingResult:
    """Second stopping time inside R; mirror of the first with the
    pruned function joining the norm thresholds, both distinguished
    functions joining the concentration thresholds, and the dual
    thresholds taken on both sides."""
    ctx = ctx2.first
    R = ctx2.base
    form = ctx.form
    n = form.arity
    leaf_level = form.resolution
    eps = ctx.eps
    inv_eps = 1 / eps

    f_powers = [_subtree_powers(restrict(f, R), p, R) for f, p in zip(ctx.fs, ctx.exponents.exponents)]
    gp_powers, gp_exact = _subtree_powers(restrict(ctx2.g_pruned, R), ctx.q, R)
    v_powers, v_exact = _subtree_powers(restrict(ctx2.v, R), ctx.r, R)
    u_powers, u_exact = _subtree_powers(restrict(ctx.u, R), ctx.q, R)
    v_avgs = cube_averages(restrict(ctx2.v, R), R)

    def s1_pred(S):
        for j in range(n):
            powers, exact = f_powers[j]
            if _ratio_ge(powers[S], S.volume, rat(n) * inv_eps, powers[R], R.volume, exact):
                return True
        return _ratio_ge(gp_powers[S], S.volume, inv_eps, gp_powers[R], R.volume, gp_exact)

    def s2_pred(S):
        if _ratio_ge(v_powers[S], S.volume, 2 * inv_eps, v_powers[R], R.volume, v_exact):
            return True
        return _ratio_ge(u_powers[S], S.volume, 2 * inv_eps, u_powers[R], R.volume, u_exact)

    F_exact, F_float = _fixed_norm_product(ctx, R)
    v_norm = lp_norm(restrict(ctx2.v, R), ctx.r)
    v_norm_exact = _norm_pow_product(v_norm.power_exact, ctx.r)
    uR_norm = lp_norm(restrict(ctx.u, R), ctx.q)
    uR_norm_exact = _norm_pow_product(uR_norm.power_exact, ctx.q)
    q, r = ctx.q, ctx.r
    qprime_expo = Fraction(1) - Fraction(1) / q
    rprime_expo = Fraction(1) - Fraction(1) / r

    def s3_pred(S):
        value = _meanzero_dual_at(ctx, S, ctx.k, ctx2.v, q)
        rhs_float = float(ctx.B) * F_float * float(inv_eps) * float(S.volume / R.volume) ** float(qprime_expo) * float(v_norm.approx)
        rhs_exact = None
        if F_exact is not None and v_norm_exact is not None:
            rhs_exact = PowProduct(ctx.B * inv_eps).times(F_exact).times(v_norm_exact).times(
                _power_factor(S.volume / R.volume, qprime_expo)
            )
        if _dual_threshold_fires(value, q / (q - 1), rhs_exact, rhs_float):
            return True
        value2 = _meanzero_dual_at(ctx, S, ctx.k - 1, ctx.u, r)
        rhs2_float = float(ctx.B) * F_float * float(inv_eps) * float(S.volume / R.volume) ** float(rprime_expo) * float(uR_norm.approx)
        rhs2_exact = None
        if F_exact is not None and uR_norm_exact is not None:
            rhs2_exact = PowProduct(ctx.B * inv_eps).times(F_exact).times(uR_norm_exact).times(
                _power_factor(S.volume / R.volume, rprime_expo)
            )
        return _dual_threshold_fires(value2, r / (r - 1), rhs2_exact, rhs2_float)

    def s4_pred(S):
        return abs(v_avgs[S]) <= rat(1, 8)

    s1 = CubeSet.of(form.dim, _maximal_fired(R, leaf_level, s1_pred))
    s2 = CubeSet.of(form.dim, _maximal_fired(R, leaf_level, s2_pred))
    s3 = CubeSet.of(form.dim, _maximal_fired(R, leaf_level, s3_pred))
    s4 = CubeSet.of(form.dim, _maximal_fired(R, leaf_level, s4_pred))

    parents4 = {parent(S) for S in s4 if S.level > 0}
    count_threshold = rat(1 << form.dim) * inv_eps

    def s5_pred(S):
        count = 0
        c = S
        while True:
            if c in parents4:
                count += 1
            if c.level == R.level:
                break
            c = parent(c)
        return rat(count) >= count_threshold

    s5 = CubeSet.of(form.dim, _maximal_fired(R, leaf_level, s5_pred))

    collections = {1: s1, 2: s2, 3: s3, 4: s4, 5: s5}
    merged = maximal_cubes(s1.union(s2).union(s3).union(s4).union(s5))
    packing_sum = merged.total_volume()
    packing_bound = (1 - eps) * R.volume
    per_measure = {i: collections[i].total_volume() for i in collections}
    if packing_sum > packing_bound:
        raise TheoremContradiction(
            f"second stopping packing failed: {packing_sum} > {packing_bound}"
        )
    ledger = {1: 2 * eps * R.volume, 2: eps * R.volume, 4: (1 - 8 * eps) * R.volume, 5: eps * R.volume}
    for i, bound in ledger.items():
        if per_measure[i] > bound:
            raise TheoremContradiction(f"second-stopping collection {i} ledger failed")

    certs = {}
    worst = rat(0)
    all_cubes = cubes_within(R, form.resolution - R.level)
    if gp_exact:
        for S in all_cubes:
            if _strict_interior(s1, S):
                continue
            denom = gp_powers[R] * S.volume
            if denom != 0:
                worst = max(worst, (gp_powers[S] * R.volume) / denom)
    bound = rat(1 << form.dim) / eps
    certs["upper_norm_pruned"] = {"measured": worst, "bound": bound, "ok": worst <= bound}
    worst_v = rat(0)
    if v_exact:
        for S in all_cubes:
            if _strict_interior(s2, S):
                continue
            denom = v_powers[R] * S.volume
            if denom != 0:
                worst_v = max(worst_v, (v_powers[S] * R.volume) / denom)
    bound_v = rat(1 << (form.dim + 1)) / eps
    certs["upper_norm_v"] = {"measured": worst_v, "bound": bound_v, "ok": worst_v <= bound_v}
    ok4 = all(
        abs(v_avgs[S]) >= rat(1, 8)
        for S in all_cubes
        if not any(contains(c, S) for c in s4)
    )
    certs["lower_mean_v"] = {"measured": None, "bound": rat(1, 8), "ok": ok4}
    if not (certs["upper_norm_pruned"]["ok"] and certs["upper_norm_v"]["ok"] and ok4):
        raise TheoremContradiction("second-stopping derived certificate failed")

    return StoppingResult(R, collections, merged, packing_sum, packing_bound, per_measure, certs, [])


def prune_h(ctx2: SecondContext, result: StoppingResult) -> PruneOutput:
    """Mirror image of the first pruning with (h, v, second collections)."""
    ctx = ctx2.first
    R = ctx2.base
    h = upsample(restrict(ctx.h, R), ctx.form.resolution)
    v = upsample(restrict(ctx2.v, R), ctx.form.resolution)
    h_avgs = cube_averages(h, R)
    v_avgs = cube_averages(v, R)

    merged = result.merged
    s4 = result.collections[4]
    in_s4 = CubeSet.of(R.dim, [S for S in merged if S in s4])
    not_s4 = CubeSet.of(R.dim, [S for S in merged if S not in s4])
    parents4 = CubeSet.of(R.dim, sorted({parent(S) for S in in_s4}, key=lambda c: (c.level, c.index)))
    sib = []
    in_s4_set = set(in_s4.cubes)
    for S in in_s4:
        for s in children(parent(S)):
            if s != S and s not in in_s4_set:
                sib.append(s)
    siblings4 = CubeSet.of(R.dim, sib)

    vals = list(h.values)

    def axpy(coef, f: TestFunction):
        for i, w in enumerate(f.values):
            if w != 0:
                vals[i] = vals[i] + coef * w

    axpy(-h_avgs[R], v)
    for S in not_s4:
        axpy(rat(-1), restrict(h, S))
        axpy(_safe_u_ratio(h_avgs[S], v_avgs[S], S), restrict(v, S))
    for S in in_s4:
        axpy(rat(-1), restrict(h, S))
    for S in parents4:
        axpy(_safe_u_ratio(h_avgs[S], v_avgs[S], S), restrict(v, S))
    for S in siblings4:
        axpy(-_safe_u_ratio(h_avgs[S], v_avgs[S], S), restrict(v, S))

    pruned = from_leaf_values(h.root, h.resolution, vals)
    inside = set(_leaf_positions(pruned.root, pruned.resolution, R))
    if any(w != 0 for i, w in enumerate(pruned.values) if i not in inside):
        raise TheoremContradiction("pruned h escaped the base cube")
    if integral(pruned, R) != 0:
        raise TheoremContradiction("pruned h has nonzero mean")

    r = ctx.r
    num = lp_norm(pruned, r)
    den = lp_norm(h, r)
    if num.power_exact is not None and den.power_exact not in (None, rat(0)):
        ratio = NormValue.from_power(r, num.power_exact / den.power_exact)
    else:
        ratio = NormValue.from_approx(r, float(num.approx) / max(float(den.approx), 1e-300))
    return PruneOutput(pruned, parents4, siblings4, in_s4, ratio)


@dataclass
class CoefficientMap:
    values: dict[DyadicCube, Rational]
    cases: dict[DyadicCube, str]
    bound_measured: Optional[float]
    failures: list


def coefficient_map(
    target: TestFunction, carrier: TestFunction, R: DyadicCube, leaf_level: int
) -> CoefficientMap:
    """Per-cube numbers with target_T ~ coeff_T * carrier_T.

    Ratio case when the carrier has nonzero average; otherwise the
    target must be an exact multiple of the carrier on T (checked), with
    coefficient zero when the carrier vanishes there.  Representability
    failures are recorded with their witness cube, never absorbed.
    """
    t_avgs = cube_averages(target, R)
    c_avgs = cube_averages(carrier, R)
    values: dict[DyadicCube, Rational] = {}
    cases: dict[DyadicCube, str] = {}
    failures = []
    for T in cubes_within(R, leaf_level - R.level):
        ca = c_avgs[T]
        if ca != 0:
            values[T] = t_avgs[T] / ca
            cases[T] = "ratio"
            continue
        tpos = _leaf_positions(target.root, target.resolution, T)
        cvals = [carrier.values[i] for i in tpos]
        tvals = [target.values[i] for i in tpos]
        if all(v == 0 for v in cvals):
            values[T] = rat(0)
            cases[T] = "zero"
            if any(v != 0 for v in tvals):
                failures.append({"cube": T, "reason": "carrier vanishes but target does not"})
            continue
        pivot = next(i for i, v in enumerate(cvals) if v != 0)
        coeff = tvals[pivot] / cvals[pivot]
        if any(tv != coeff * cv for tv, cv in zip(tvals, cvals)):
            failures.append({"cube": T, "reason": "target is not a multiple of the carrier"})
            values[T] = coeff
            cases[T] = "multiple-failed"
        else:
            values[T] = coeff
            cases[T] = "multiple"
    return CoefficientMap(values, cases, None, failures)


def coefficient_maps(
    g_hat: TestFunction,
    u: TestFunction,
    h_frak: TestFunction,
    v: TestFunction,
    R: DyadicCube,
    leaf_level: int,
) -> tuple[CoefficientMap, CoefficientMap]:
    phi = coefficient_map(g_hat, u, R, leaf_level)
    psi = coefficient_map(h_frak, v, R, leaf_level)
    return phi, psi


@dataclass
class TelescopeReport:
    bp1: Rational
    bp2: Rational
    bp3: Rational
    bp4: Rational
    target: Rational
    residual: Rational
    representable: bool
    failures: list = field(default_factory=list)


def telescope(
    form: PerfectForm,
    exponents: HolderTuple,
    fs: tuple[TestFunction, ...],
    k: int,
    R: DyadicCube,
    h_frak: TestFunction,
    g_hat: TestFunction,
    u: TestFunction,
    v: TestFunction,
    phi: CoefficientMap,
    psi: CoefficientMap,
) -> TelescopeReport:
    """Exact decomposition of the pruned pairing on R into the top term,
    two diagonal martingale sums, and a double-difference diagonal sum.

    Leaf representability (the pruned functions agree with coefficient
    times carrier on every leaf of R) is a precondition; failures are
    reported and the identity is not asserted for them.
    """
    N = form.resolution
    hf = upsample(h_frak, N)
    gh = upsample(g_hat, N)
    uu = upsample(restrict(u, R), N)
    vv = upsample(restrict(v, R), N)

    failures = list(phi.failures) + list(psi.failures)
    for cell in leaf_cells(R, N - R.level):
        if hf.value_on(cell) != psi.values[cell] * vv.value_on(cell):
            failures.append({"cube": cell, "reason": "psi leaf representability"})
        if gh.value_on(cell) != phi.values[cell] * uu.value_on(cell):
            failures.append({"cube": cell, "reason": "phi leaf representability"})
    representable = not failures

    def lam_R(a: TestFunction, b: TestFunction) -> Rational:
        slot_fs = []
        for j in range(form.arity):
            if j == k - 1:
                slot_fs.append(restrict(a, R))
            elif j == k:
                slot_fs.append(restrict(b, R))
            else:
                slot_fs.append(restrict(fs[j], R))
        return eval_form(form, slot_fs)

    bp1 = lam_R(scale(vv, psi.values[R]), scale(uu, phi.values[R]))
    bp2 = rat(0)
    bp3 = rat(0)
    bp4 = rat(0)
    for T in cubes_within(R, N - R.level - 1) if N - R.level >= 1 else []:
        vT = restrict(vv, T)
        uT = restrict(uu, T)
        a_T = scale(vT, psi.values[T])
        b_T = scale(uT, phi.values[T])
        a_drop = a_T
        b_drop = b_T
        for Tp in children(T):
            a_drop = sub(a_drop, scale(restrict(vv, Tp), psi.values[Tp]))
            b_drop = sub(b_drop, scale(restrict(uu, Tp), phi.values[Tp]))
        bp2 += lam_R(a_drop, b_T)
        bp3 += lam_R(a_T, b_drop)
        bp4 += lam_R(a_drop, b_drop)
    target = lam_R(hf, gh)
    residual = bp1 - bp2 - bp3 + bp4 - target
    if representable and residual != 0:
        raise TheoremContradiction(f"telescoping residual is nonzero: {residual}")
    return TelescopeReport(bp1, bp2, bp3, bp4, target, residual, representable, failures)


@dataclass
class ThetaReport:
    theta: TestFunction
    per_cube: dict[DyadicCube, TestFunction]
    mean: Rational
    norm_ratio: Optional[float]
    sup_phi: Rational
    sup_psi: Rational
    class_sizes: dict[str, int]


def paraproduct_theta(
    ctx2: SecondContext,
    result2: StoppingResult,
    phi: CoefficientMap,
    psi: CoefficientMap,
) -> ThetaReport:
    """theta = v * sum_T phi_T (psi_T 1_T - sum_children psi 1) and the
    per-cube pieces; the exact zero mean is asserted, the norm is
    reported against the target scale as an empirical ratio."""
    ctx = ctx2.first
    R = ctx2.base
    N = ctx.form.resolution
    vv = upsample(restrict(ctx2.v, R), N)
    width = len(vv.values)
    total = [rat(0)] * width
    per_cube = {}
    stopped = result2.merged
    n_inside = 0
    n_parent = 0
    for T in cubes_within(R, N - R.level - 1) if N - R.level >= 1 else []:
        pv = phi.values[T]
        if pv == 0:
            continue
        vals = [rat(0)] * width
        for i in _leaf_positions(vv.root, N, T):
            vals[i] += pv * psi.values[T]
        for Tp in children(T):
            for i in _leaf_positions(vv.root, N, Tp):
                vals[i] -= pv * psi.values[Tp]
        piece = from_leaf_values(vv.root, N, vals)
        per_cube[T] = piece
        for i, w in enumerate(vals):
            total[i] += w
        if any(contains(S, T) for S in stopped):
            n_inside += 1
        elif any(parent(S) == T for S in stopped if S.level > R.level):
            n_parent += 1
    theta_vals = [a * b for a, b in zip(vv.values, total)]
    theta = from_leaf_values(vv.root, N, theta_vals)
    mean = integral(theta)
    if mean != 0:
        raise TheoremContradiction("paraproduct theta has nonzero mean")
    sup_phi = max((abs(x) for x in phi.values.values()), default=rat(0))
    sup_psi = max((abs(x) for x in psi.values.values()), default=rat(0))
    r = ctx.r
    norm_ratio = None
    nt = lp_norm(theta, r)
    g_norm = lp_norm(restrict(ctx.g, ctx.base), ctx.q)
    h_norm = lp_norm(restrict(ctx.h, ctx.base), r)
    denom = (
        float(R.volume) ** (1 / float(r))
        * float(ctx.base.volume) ** (-1 / float(r) - 1 / float(ctx.q))
        * float(g_norm.approx)
        * float(h_norm.approx)
    )
    if denom > 0:
        norm_ratio = float(nt.approx) / denom
    return ThetaReport(theta, per_cube, mean, norm_ratio, sup_phi, sup_psi, {"inside": n_inside, "parents": n_parent})


def stopping_partition(R: DyadicCube, stopped: CubeSet, leaf_level: int) -> CubeSet:
    """Stopping cubes plus the leaf cells outside them: a partition of R."""
    cells = [c for c in stopped]
    for cell in leaf_cells(R, leaf_level - R.level):
        if not any(contains(S, cell) for S in stopped):
            cells.append(cell)
    part = CubeSet.of(R.dim, cells)
    if part.total_volume() != R.volume:
        raise ValueError("collection does not partition the base")
    return part


def flatten_on_partition(
    w: TestFunction, partition: CubeSet, mode: str, p=None
) -> tuple[TestFunction, dict]:
    """Piecewise-constant majorant on a partition.

    power mode: constant with the same integral as |w|^p on each cell;
    average mode: constant with the same average as w.  The measured
    flatness constant  |base| * sup / ||w||_p^p  is reported.
    """
    if mode not in ("power", "average"):
        raise ValueError("mode must be 'power' or 'average'")
    N = w.resolution
    vals = [rat(0)] * len(w.values)
    sup = rat(0)
    for P in partition:
        if mode == "power":
            pw = lp_power(restrict(w, P), p)
            if pw is None:
                raise ValueError("irrational pointwise power; use an integer exponent")
            c = pw / P.volume
        else:
            c = average(w, P)
        for i in _leaf_positions(w.root, N, P):
            vals[i] = c
        sup = max(sup, abs(c))
    out = from_leaf_values(w.root, N, vals)
    base_vol = partition.total_volume()
    report = {"mode": mode, "sup": sup}
    if mode == "power":
        total = lp_power(w, p)
        if total not in (None, rat(0)):
            report["measured_constant"] = base_vol * sup / total
    else:
        if p is not None:
            total = lp_power(w, p)
            pw_sup = rat_pow(sup, Fraction(p)) if sup != 0 else rat(0)
            if total not in (None, rat(0)) and pw_sup is not None:
                report["measured_constant"] = base_vol * pw_sup / total
    return out, report
