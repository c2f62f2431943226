"""Finite-rank perfect singular forms on the dyadic grid.

A form is a sum of child-constant blocks: each block has a cube Q, a
rational coefficient, and one profile per slot, supported on Q, constant
on the children of Q, sup-norm at most one, with at least one profile of
mean zero.  Evaluation carries the normalization |Q|^(1-n).  An optional
dense leaf-indexed kernel supports externally supplied forms and
cross-validation.
"""

from __future__ import annotations

import itertools
import random
from dataclasses import dataclass, field
from fractions import Fraction
from numbers import Rational
from typing import Optional, Sequence

import mpmath

from ._exact import (
    DEFAULT_PRECISION,
    mpf_from_rat,
    mpf_pow_rat,
    rat,
    rat_from_mpf,
    rat_pow,
)
from .funcspace import (
    HolderTuple,
    NormValue,
    TestFunction,
    _leaf_positions,
    average,
    common_resolution,
    from_leaf_values,
    indicator,
    inner_product,
    integral,
    lp_norm,
    lp_power,
    restrict,
    upsample,
    zero,
)
from .lattice import (
    DyadicCube,
    Relation,
    ancestor,
    children,
    contains,
    cubes_within,
    leaf_cells,
    relate,
    unit_cube,
)


@dataclass(frozen=True)
class HaarBlock:
    """One child-constant rank-one piece of a form."""

    cube: DyadicCube
    coeff: Rational
    profiles: tuple[tuple[Rational, ...], ...]
    meanzero: tuple[bool, ...]

    def __post_init__(self):
        width = 1 << self.cube.dim
        if any(len(p) != width for p in self.profiles):
            raise ValueError("each profile needs one value per child")
        if len(self.meanzero) != len(self.profiles):
            raise ValueError("one mean-zero flag per profile")
        if not any(self.meanzero):
            raise ValueError("at least one profile must be mean zero")
        for p, mz in zip(self.profiles, self.meanzero):
            if any(abs(v) > 1 for v in p):
                raise ValueError("profile sup-norm must be <= 1")
            if mz and sum(p, rat(0)) != 0:
                raise ValueError("declared mean-zero profile must sum to zero")

    @property
    def arity(self) -> int:
        return len(self.profiles)


def block(cube: DyadicCube, coeff, profiles: Sequence[Sequence], meanzero=None) -> HaarBlock:
    profs = tuple(tuple(rat(v) for v in p) for p in profiles)
    if meanzero is None:
        meanzero = tuple(sum(p, rat(0)) == 0 for p in profs)
    return HaarBlock(cube, rat(coeff), profs, tuple(meanzero))


@dataclass(frozen=True)
class PerfectForm:
    """n-linear form of finite rank at resolution N on the unit root."""

    arity: int
    dim: int
    resolution: int
    blocks: tuple[HaarBlock, ...]
    dense: Optional[dict] = field(default=None, compare=False)

    def __post_init__(self):
        if self.arity < 2:
            raise ValueError("arity must be >= 2")
        for b in self.blocks:
            if b.arity != self.arity or b.cube.dim != self.dim:
                raise ValueError("block arity/dim mismatch")
            if b.cube.level >= self.resolution:
                raise ValueError("block cubes must sit above the leaf level")

    @property
    def root(self) -> DyadicCube:
        return unit_cube(self.dim)

    def scaled(self, c) -> "PerfectForm":
        c = rat(c)
        new_blocks = tuple(
            HaarBlock(b.cube, b.coeff * c, b.profiles, b.meanzero) for b in self.blocks
        )
        new_dense = None
        if self.dense is not None:
            new_dense = {k: v * c for k, v in self.dense.items()}
        return PerfectForm(self.arity, self.dim, self.resolution, new_blocks, new_dense)


def zero_form(n: int, d: int, N: int) -> PerfectForm:
    return PerfectForm(n, d, N, ())


def dense_form(n: int, d: int, N: int, kernel: dict) -> PerfectForm:
    """Form given by a leaf-indexed kernel tensor only."""
    return PerfectForm(n, d, N, (), dict(kernel))


@dataclass(frozen=True)
class ValidationReport:
    axiom: str
    passed: bool
    witness: object
    worst_ratio: object
    details: dict = field(default_factory=dict, compare=False)


def _profile_value(b: HaarBlock, slot: int, leaf_flat: int, form: PerfectForm) -> Rational:
    """Profile value of slot `slot` on leaf cell `leaf_flat` (0 off-cube)."""
    cell = leaf_cells(form.root, form.resolution)[leaf_flat]
    if not contains(b.cube, cell):
        return rat(0)
    child = ancestor(cell, b.cube.level + 1)
    kids = list(children(b.cube))
    return b.profiles[slot][kids.index(child)]


class _BlockGeometry:
    """Cached per-(form-geometry) leaf bookkeeping for fast evaluation."""

    def __init__(self, form: PerfectForm):
        self.form = form
        self.leaves = leaf_cells(form.root, form.resolution)
        self.leaf_volume = self.leaves[0].volume if self.leaves else rat(1)
        self.child_positions: list[tuple[tuple[int, ...], ...]] = []
        for b in form.blocks:
            per_child = tuple(
                _leaf_positions(form.root, form.resolution, kid) for kid in children(b.cube)
            )
            self.child_positions.append(per_child)


_GEOMETRY_CACHE: dict[int, _BlockGeometry] = {}


def _geometry(form: PerfectForm) -> _BlockGeometry:
    key = id(form)
    geo = _GEOMETRY_CACHE.get(key)
    if geo is None or geo.form is not form:
        geo = _BlockGeometry(form)
        if len(_GEOMETRY_CACHE) > 64:
            _GEOMETRY_CACHE.clear()
        _GEOMETRY_CACHE[key] = geo
    return geo


def _block_inner(form: PerfectForm, bi: int, slot: int, values: Sequence[Rational]) -> Rational:
    """<f, profile_slot> for block bi against leaf values of f."""
    geo = _geometry(form)
    b = form.blocks[bi]
    total = rat(0)
    for child_idx, positions in enumerate(geo.child_positions[bi]):
        pv = b.profiles[slot][child_idx]
        if pv == 0:
            continue
        s = rat(0)
        for pos in positions:
            s += values[pos]
        total += pv * s
    return total * geo.leaf_volume


def _prepare(form: PerfectForm, fs: Sequence[TestFunction]) -> tuple[TestFunction, ...]:
    if len(fs) != form.arity:
        raise ValueError("arity mismatch")
    for f in fs:
        if f.dim != form.dim:
            raise ValueError("dimension mismatch")
        if f.root != form.root:
            raise ValueError("functions must live on the form's root cube")
        if f.resolution > form.resolution:
            raise ValueError("function resolution exceeds the form's")
    return tuple(upsample(f, form.resolution) for f in fs)


def eval_blocks(form: PerfectForm, fs: Sequence[TestFunction]) -> Rational:
    fs = _prepare(form, fs)
    total = rat(0)
    for bi, b in enumerate(form.blocks):
        scale = b.coeff * rat_pow(b.cube.volume, Fraction(1 - form.arity))
        term = scale
        for slot in range(form.arity):
            ip = _block_inner(form, bi, slot, fs[slot].values)
            if ip == 0:
                term = rat(0)
                break
            term *= ip
        total += term
    return total


def eval_dense(form: PerfectForm, fs: Sequence[TestFunction]) -> Rational:
    if form.dense is None:
        raise ValueError("form has no dense kernel")
    fs = _prepare(form, fs)
    lv = fs[0].leaf_volume if fs else rat(1)
    total = rat(0)
    for idx, k in form.dense.items():
        term = k
        for slot, leaf in enumerate(idx):
            v = fs[slot].values[leaf]
            if v == 0:
                term = rat(0)
                break
            term *= v
        if term != 0:
            total += term * lv**form.arity
    return total


def eval_form(form: PerfectForm, fs: Sequence[TestFunction]) -> Rational:
    """Exact multilinear evaluation (blocks when present, else dense)."""
    if form.blocks or form.dense is None:
        return eval_blocks(form, fs)
    return eval_dense(form, fs)


def blocks_to_dense(form: PerfectForm) -> dict:
    """Leaf-indexed kernel tensor equivalent to the block sum."""
    n, d, N = form.arity, form.dim, form.resolution
    cells = 1 << (d * N)
    if cells**n > 1 << 22:
        raise ValueError("dense tensor would be too large")
    kernel: dict = {}
    for bi, b in enumerate(form.blocks):
        geo = _geometry(form)
        scale = b.coeff * rat_pow(b.cube.volume, Fraction(1 - n)) / form.root.volume ** 0
        per_slot = []
        for slot in range(n):
            vals = {}
            for child_idx, positions in enumerate(geo.child_positions[bi]):
                pv = b.profiles[slot][child_idx]
                if pv != 0:
                    for pos in positions:
                        vals[pos] = pv
            per_slot.append(vals)
        lv = geo.leaf_volume
        # kernel density: profiles are pointwise values; the |Q|^(1-n)
        # normalization sits in `scale`, leaf volumes enter at evaluation.
        for idx in itertools.product(*(sorted(v) for v in per_slot)):
            w = scale
            for slot, leaf in enumerate(idx):
                w *= per_slot[slot][leaf]
            if w != 0:
                kernel[idx] = kernel.get(idx, rat(0)) + w
    return {k: v for k, v in kernel.items() if v != 0}


def _eval_sparse(form: PerfectForm, sparse_fs: Sequence[Sequence[tuple[int, Rational]]]) -> Rational:
    """Evaluate on functions given as sparse [(leaf, coeff)] lists."""
    geo = _geometry(form)
    lv = geo.leaf_volume
    n = form.arity
    total = rat(0)
    leaves = geo.leaves
    for bi, b in enumerate(form.blocks):
        scale = b.coeff * rat_pow(b.cube.volume, Fraction(1 - n))
        term = scale
        for slot in range(n):
            ip = rat(0)
            for leaf, cf in sparse_fs[slot]:
                cell = leaves[leaf]
                if contains(b.cube, cell):
                    child = ancestor(cell, b.cube.level + 1)
                    kid_index = 0
                    shift = cell.level - (b.cube.level + 1)
                    kid_bits = tuple(
                        (cell.index[a] >> shift) - 2 * b.cube.index[a] for a in range(form.dim)
                    )
                    for bit in kid_bits:
                        kid_index = (kid_index << 1) | bit
                    ip += cf * b.profiles[slot][kid_index]
            if ip == 0:
                term = rat(0)
                break
            term *= ip * lv
        total += term
    if form.dense is not None and not form.blocks:
        for idx, k in form.dense.items():
            term = k
            for slot, leaf in enumerate(idx):
                cf = rat(0)
                for lf, c in sparse_fs[slot]:
                    if lf == leaf:
                        cf = c
                        break
                if cf == 0:
                    term = rat(0)
                    break
                term *= cf
            if term != 0:
                total += term * lv**n
    return total


def validate_smoothness(form: PerfectForm) -> ValidationReport:
    """Exhaustive check of the vanishing axiom on a spanning family.

    For every cube P above leaf level, every slot pair (j carries a
    mean-zero basis element on P, i carries a leaf indicator outside P)
    and every assignment of leaf indicators to the remaining slots, the
    form must vanish exactly.  Multilinearity makes this family spanning
    for all (mean-zero on P, vanishing on P) configurations.
    """
    n, d, N = form.arity, form.dim, form.resolution
    root = form.root
    all_leaves = list(range(1 << (d * N)))
    cell_list = leaf_cells(root, N)
    checked = 0
    for P in cubes_within(root, N - 1):
        inside = list(_leaf_positions(root, N, P))
        if len(inside) < 2:
            continue
        outside = [l for l in all_leaves if l not in set(inside)]
        if not outside:
            continue
        mz_basis = [
            ((inside[t], rat(1)), (inside[t + 1], rat(-1))) for t in range(len(inside) - 1)
        ]
        for j in range(n):
            for i in range(n):
                if i == j:
                    continue
                rest = [s for s in range(n) if s not in (i, j)]
                for mz in mz_basis:
                    for out_leaf in outside:
                        for combo in itertools.product(all_leaves, repeat=len(rest)):
                            sparse = [None] * n
                            sparse[j] = list(mz)
                            sparse[i] = [(out_leaf, rat(1))]
                            for s, lf in zip(rest, combo):
                                sparse[s] = [(lf, rat(1))]
                            val = _eval_sparse(form, sparse)
                            checked += 1
                            if val != 0:
                                witness = {
                                    "cube": P,
                                    "meanzero_slot": j,
                                    "vanishing_slot": i,
                                    "meanzero_pair": mz,
                                    "outside_leaf": out_leaf,
                                    "other_leaves": combo,
                                    "value": val,
                                }
                                return ValidationReport(
                                    "smoothness", False, witness, val, {"checked": checked}
                                )
    return ValidationReport("smoothness", True, None, rat(0), {"checked": checked})


def decay_certificate(form: PerfectForm) -> Rational:
    """Certified bound for the two-children decay ratios, via ancestors.

    For each cube P the blocks at Q strictly containing P contribute
    |c_Q| (|P|/|Q|)^(n-1); a block at P itself contributes |c_P| 2^-d,
    which is valid for every Holder tuple (two slots supported on
    distinct children always carry a combined support factor of at least
    one child volume ratio).  Blocks strictly inside P are annihilated by
    the two-children hypothesis.
    """
    n = form.arity
    by_cube: dict[DyadicCube, Rational] = {}
    for b in form.blocks:
        by_cube[b.cube] = by_cube.get(b.cube, rat(0)) + abs(b.coeff)
    worst = rat(0)
    worst_P = None
    half_d = rat(1, 1 << form.dim)
    for P in cubes_within(form.root, form.resolution - 1):
        bound = rat(0)
        for Q, c in by_cube.items():
            r = relate(Q, P)
            if r == Relation.EQUAL:
                bound += c * half_d
            elif r == Relation.A_CONTAINS_B:
                bound += c * (P.volume / Q.volume) ** (n - 1)
        if bound > worst:
            worst, worst_P = bound, P
    return worst if worst_P is not None else rat(0)


def _float_values(f: TestFunction) -> list[float]:
    return [v.numerator / v.denominator for v in f.values]


def _empirical_decay_lower(form: PerfectForm, tuple_: HolderTuple, sweeps: int, rng) -> float:
    """Search lower bound for the decay ratio (float arithmetic)."""
    n, d, N = form.arity, form.dim, form.resolution
    root = form.root
    best = 0.0
    ps = [float(p) for p in tuple_.exponents]
    lv = float(leaf_cells(root, N)[0].volume)
    for P in cubes_within(root, N - 1):
        kids = list(children(P))
        kid_positions = [list(_leaf_positions(root, N, k)) for k in kids]
        pos_P = list(_leaf_positions(root, N, P))
        for j1, j2 in itertools.combinations(range(n), 2):
            for c1 in range(len(kids)):
                for c2 in range(len(kids)):
                    if c1 == c2:
                        continue
                    supports = [pos_P] * n
                    supports = list(supports)
                    supports[j1] = kid_positions[c1]
                    supports[j2] = kid_positions[c2]
                    ratio = _alt_max_float(form, ps, supports, sweeps, rng, lv)
                    best = max(best, ratio)
    return best


def _partial_functional_floats(form: PerfectForm, slot: int, fvals: list[list[float]]) -> list[float]:
    geo = _geometry(form)
    n = form.arity
    lv = float(geo.leaf_volume)
    out = [0.0] * len(geo.leaves)
    for bi, b in enumerate(form.blocks):
        scale = float(b.coeff) * float(b.cube.volume) ** (1 - n)
        coef = scale
        for s in range(n):
            if s == slot:
                continue
            ip = 0.0
            for child_idx, positions in enumerate(geo.child_positions[bi]):
                pv = float(b.profiles[s][child_idx])
                if pv:
                    ip += pv * sum(fvals[s][p] for p in positions)
            coef *= ip * lv
            if coef == 0.0:
                break
        if coef == 0.0:
            continue
        for child_idx, positions in enumerate(geo.child_positions[bi]):
            pv = float(b.profiles[slot][child_idx])
            if pv:
                for p in positions:
                    out[p] += coef * pv
    return out


def _alt_max_float(form, ps, supports, sweeps, rng, lv) -> float:
    n = form.arity
    m = len(_geometry(form).leaves)
    fvals = []
    for s in range(n):
        v = [0.0] * m
        for p in supports[s]:
            v[p] = rng.uniform(-1.0, 1.0)
        fvals.append(v)
    ratio = 0.0
    for _ in range(sweeps):
        for s in range(n):
            phi = _partial_functional_floats(form, s, fvals)
            pprime = ps[s] / (ps[s] - 1.0)
            new = [0.0] * m
            for p in supports[s]:
                x = phi[p]
                if x:
                    new[p] = (1 if x > 0 else -1) * abs(x) ** (pprime - 1.0)
            if all(v == 0.0 for v in new):
                continue
            fvals[s] = new
        num = _eval_float(form, fvals)
        den = 1.0
        for s in range(n):
            den *= (sum(abs(v) ** ps[s] for v in fvals[s]) * lv) ** (1.0 / ps[s])
        if den > 0:
            ratio = max(ratio, abs(num) / den)
    return ratio


def _eval_float(form: PerfectForm, fvals: list[list[float]]) -> float:
    geo = _geometry(form)
    n = form.arity
    lv = float(geo.leaf_volume)
    total = 0.0
    for bi, b in enumerate(form.blocks):
        term = float(b.coeff) * float(b.cube.volume) ** (1 - n)
        for s in range(n):
            ip = 0.0
            for child_idx, positions in enumerate(geo.child_positions[bi]):
                pv = float(b.profiles[s][child_idx])
                if pv:
                    ip += pv * sum(fvals[s][p] for p in positions)
            term *= ip * lv
            if term == 0.0:
                break
        total += term
    return total


def validate_decay(form: PerfectForm, tuple_: HolderTuple, sweeps: int = 3, seed: int = 0) -> ValidationReport:
    """Certified upper bound and empirical lower bound for the decay axiom."""
    if len(tuple_) != form.arity:
        raise ValueError("tuple arity mismatch")
    if not form.blocks and form.dense is not None:
        lower = 0.0
        details = {"note": "dense-only form: no block certificate available"}
        return ValidationReport("decay", False, None, lower, details)
    cert = decay_certificate(form)
    rng = random.Random(f"dytb-decay:{seed}")
    lower = _empirical_decay_lower(form, tuple_, sweeps, rng) if form.blocks else 0.0
    passed = cert <= 1
    return ValidationReport(
        "decay",
        passed,
        None if passed else {"certified": cert},
        cert,
        {"certified_upper": cert, "empirical_lower": lower},
    )


def generate(
    n: int,
    d: int,
    N: int,
    density: float = 0.5,
    seed: int = 0,
    meanzero_profiles: int = 2,
    with_dense: bool = False,
) -> PerfectForm:
    """Random block form, globally rescaled so the decay certificate is <= 1.

    Deterministic per seed; density 0 yields the zero form.
    """
    if n < 2 or N < 1:
        raise ValueError("need n >= 2 and N >= 1")
    rng = random.Random(f"dytb-gen:{n}:{d}:{N}:{seed}")
    width = 1 << d
    mz_count = min(max(meanzero_profiles, 1), n)
    blocks = []
    for Q in cubes_within(unit_cube(d), N - 1):
        if rng.random() >= density:
            continue
        coeff = rat(0)
        while coeff == 0:
            coeff = rat(rng.randint(-8, 8), rng.randint(1, 8))
        profiles = []
        meanzero = []
        for slot in range(n):
            if slot < mz_count:
                raw = [rng.randint(-4, 4) for _ in range(width)]
                mean = Fraction(sum(raw), width)
                vals = [rat(v - mean) for v in raw]
                if all(v == 0 for v in vals):
                    vals = [rat(1) if i % 2 == 0 else rat(-1) for i in range(width)]
                mx = max(abs(v) for v in vals)
                vals = [v / mx for v in vals]
                profiles.append(tuple(vals))
                meanzero.append(True)
            else:
                vals = [rat(rng.randint(-8, 8), 8) for _ in range(width)]
                profiles.append(tuple(vals))
                meanzero.append(False)
        blocks.append(HaarBlock(Q, coeff, tuple(profiles), tuple(meanzero)))
    form = PerfectForm(n, d, N, tuple(blocks))
    cert = decay_certificate(form)
    if cert > 1:
        form = form.scaled(1 / cert)
    if with_dense:
        form = PerfectForm(n, d, N, form.blocks, blocks_to_dense(form))
    return form


def partial_functional(form: PerfectForm, slot: int, fixed: Sequence[TestFunction]) -> TestFunction:
    """The representer phi with  Lambda(..., g, ...) = int phi g  exactly.

    `fixed` lists the n-1 functions for the other slots in slot order.
    """
    n = form.arity
    if len(fixed) != n - 1:
        raise ValueError("need n-1 fixed functions")
    fs: list[TestFunction] = []
    it = iter(fixed)
    for s in range(n):
        fs.append(None if s == slot else next(it))
    prepared = [None if f is None else upsample(f, form.resolution) for f in fs]
    geo = _geometry(form)
    out = [rat(0)] * len(geo.leaves)
    for bi, b in enumerate(form.blocks):
        coef = b.coeff * rat_pow(b.cube.volume, Fraction(1 - n))
        for s in range(n):
            if s == slot:
                continue
            ip = _block_inner(form, bi, s, prepared[s].values)
            coef *= ip
            if coef == 0:
                break
        if coef == 0:
            continue
        for child_idx, positions in enumerate(geo.child_positions[bi]):
            pv = b.profiles[slot][child_idx]
            if pv != 0:
                for p in positions:
                    out[p] += coef * pv
    if not form.blocks and form.dense is not None:
        lvn = geo.leaf_volume ** (n - 1)
        for idx, k in form.dense.items():
            term = k
            for s, leaf in enumerate(idx):
                if s == slot:
                    continue
                v = prepared[s].values[leaf]
                if v == 0:
                    term = rat(0)
                    break
                term *= v
            if term != 0:
                out[idx[slot]] += term * lvn
    return from_leaf_values(form.root, form.resolution, out)


def dual_norm(
    phi: TestFunction, p, precision: int = DEFAULT_PRECISION
) -> tuple[NormValue, TestFunction]:
    """sup over ||g||_p <= 1 of int(phi g) = ||phi||_p', with extremizer.

    The extremizer has exact rational leaf values obtained by rounding
    the analytic extremizer at `precision` bits, so the optimality
    identities hold within 2^-(precision/2) relatively.
    """
    p = Fraction(p)
    if p <= 1:
        raise ValueError("p must exceed 1")
    pprime = p / (p - 1)
    norm = lp_norm(phi, pprime, precision)
    if all(v == 0 for v in phi.values):
        first = [rat(0)] * len(phi.values)
        t = mpf_pow_rat(phi.leaf_volume, Fraction(-1) / p, precision)
        first[0] = rat_from_mpf(t)
        return norm, from_leaf_values(phi.root, phi.resolution, first)
    raw = []
    exact_ok = True
    for v in phi.values:
        if v == 0:
            raw.append(rat(0))
            continue
        mag = rat_pow(abs(v), pprime - 1)
        if mag is None:
            exact_ok = False
            break
        raw.append(mag if v > 0 else -mag)
    if not exact_ok:
        raw = []
        with mpmath.workprec(precision + 16):
            for v in phi.values:
                if v == 0:
                    raw.append(rat(0))
                else:
                    mag = rat_from_mpf(mpf_pow_rat(abs(v), pprime - 1, precision))
                    raw.append(mag if v > 0 else -mag)
    g_raw = from_leaf_values(phi.root, phi.resolution, raw)
    with mpmath.workprec(precision + 16):
        nrm = lp_norm(g_raw, p, precision).approx
        t = rat_from_mpf(1 / nrm) if nrm != 0 else rat(1)
    g = from_leaf_values(phi.root, phi.resolution, [t * v for v in g_raw.values])
    return norm, g


def restricted_dual_norm(phi: TestFunction, p, P: DyadicCube, precision: int = DEFAULT_PRECISION):
    """Dual norm over test functions supported on P."""
    return dual_norm(restrict(phi, P), p, precision)


def meanzero_dual_norm_full(
    phi: TestFunction, p, P: DyadicCube, precision: int = DEFAULT_PRECISION
) -> tuple[NormValue, Rational]:
    """sup over mean-zero rho on P of int(phi rho)/||rho||_p.

    Equals min_c ||(phi - c) 1_P||_p'.  Closed form c = [phi]_P when
    p' = 2; otherwise a golden-section scan (the objective is convex in
    c) refined to 2^-64 relative width, with the dual witness pricing a
    certified lower bound.  Returns (value, optimal shift c).
    """
    p = Fraction(p)
    pprime = p / (p - 1)
    positions = _leaf_positions(phi.root, phi.resolution, P)
    if not positions:
        return NormValue.from_power(pprime, rat(0), precision), rat(0)
    vals = [phi.values[i] for i in positions]
    if pprime == 2:
        c = average(phi, P)
        lv = phi.leaf_volume
        power = sum(((v - c) ** 2 for v in vals), rat(0)) * lv
        return NormValue.from_power(2, power, precision), c
    lo, hi = min(vals), max(vals)
    if lo == hi:
        return NormValue.from_power(pprime, rat(0), precision), lo
    lv = phi.leaf_volume

    def h(c: Rational) -> mpmath.mpf:
        with mpmath.workprec(precision + 32):
            total = mpmath.mpf(0)
            for v in vals:
                dv = abs(v - c)
                if dv != 0:
                    total += mpf_pow_rat(dv, pprime, precision + 32)
            return total * mpf_from_rat(lv, precision + 32)

    a, b = rat(lo), rat(hi)
    for _ in range(precision + 40):
        if b - a <= abs(b + a) * rat(1, 1 << (precision // 2 + 8)) + rat(1, 1 << (precision + 8)):
            break
        m1 = a + (b - a) / 3
        m2 = b - (b - a) / 3
        if h(m1) <= h(m2):
            b = m2
        else:
            a = m1
    c_star = (a + b) / 2
    with mpmath.workprec(precision + 32):
        upper = mpmath.power(h(c_star), 1 / mpf_from_rat(rat(pprime), precision + 32))
    rho = []
    for v in vals:
        dv = v - c_star
        if dv == 0:
            rho.append(rat(0))
        else:
            mag = rat_from_mpf(mpf_pow_rat(abs(dv), pprime - 1, precision + 32))
            rho.append(mag if dv > 0 else -mag)
    mean = sum(rho, rat(0)) / len(rho)
    rho = [r - mean for r in rho]
    full = [rat(0)] * len(phi.values)
    for pos, r in zip(positions, rho):
        full[pos] = r
    rho_f = from_leaf_values(phi.root, phi.resolution, full)
    with mpmath.workprec(precision + 32):
        denom = lp_norm(rho_f, p, precision + 16).approx
        if denom == 0:
            lower = mpmath.mpf(0)
        else:
            num = inner_product(phi, rho_f)
            lower = abs(mpf_from_rat(num, precision + 32)) / denom
        value = lower if lower <= upper else upper
    return NormValue.from_approx(pprime, value, precision), c_star


def meanzero_dual_norm(phi: TestFunction, p, P: DyadicCube, precision: int = DEFAULT_PRECISION) -> NormValue:
    return meanzero_dual_norm_full(phi, p, P, precision)[0]
