"""Outer measure on the dyadic cube tree: sizes, superlevel measure,
outer Lp norms, Carleson embeddings, and the two summation lemmas.

The generating sets are full subtrees D(T) priced by |T|.  Cube-indexed
functions store rational values; a function may declare that its stored
values are the `value_power`-th powers of the intended magnitudes (the
martingale difference embedding stores squares), which keeps every size
computation exact.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from fractions import Fraction
from numbers import Rational
from typing import Optional

import mpmath

from ._exact import (
    DEFAULT_PRECISION,
    mpf_from_rat,
    mpf_pow_rat,
    rat,
    rat_pow,
)
from .funcspace import NormValue, TestFunction, cube_averages, lp_norm, martingale_ops
from .lattice import DyadicCube, children, contains, cubes_within, parent


@dataclass(frozen=True)
class OuterSpace:
    """All dyadic cubes from `root` down `depth` generations."""

    root: DyadicCube
    depth: int

    def cubes(self) -> list[DyadicCube]:
        return cubes_within(self.root, self.depth)

    @property
    def leaf_level(self) -> int:
        return self.root.level + self.depth

    def is_leaf(self, c: DyadicCube) -> bool:
        return c.level == self.leaf_level

    def __contains__(self, c: DyadicCube) -> bool:
        return self.root.level <= c.level <= self.leaf_level and contains(self.root, c)


@dataclass(frozen=True)
class SizeKind:
    """S_p for rational p >= 1, or the supremum size."""

    kind: str
    p: Optional[Fraction] = None

    def __post_init__(self):
        if self.kind not in ("p", "inf"):
            raise ValueError("kind must be 'p' or 'inf'")
        if self.kind == "p" and (self.p is None or self.p < 1):
            raise ValueError("S_p needs rational p >= 1")


def size_p(p) -> SizeKind:
    return SizeKind("p", Fraction(p))


SIZE_INF = SizeKind("inf")
SIZE_2 = size_p(2)


@dataclass(frozen=True)
class OuterFunction:
    """Rational values on the cubes of a space.

    `value_power` declares that the stored value at a cube is the
    value_power-th power of the magnitude |F|; sizes then work with the
    stored rationals exactly.
    """

    space: OuterSpace
    values: dict[DyadicCube, Rational]
    value_power: Fraction = Fraction(1)

    def magnitude_power(self, c: DyadicCube) -> Rational:
        """|F(c)|^value_power, exactly."""
        v = self.values.get(c, rat(0))
        return abs(v)

    def scaled(self, c) -> "OuterFunction":
        c = rat(abs(c))
        factor = rat_pow(c, self.value_power)
        if factor is None:
            raise ValueError("scaling factor power must stay rational")
        return OuterFunction(
            self.space, {k: v * factor for k, v in self.values.items()}, self.value_power
        )


def outer_function(space: OuterSpace, values: dict, value_power=1) -> OuterFunction:
    vals = {c: rat(v) for c, v in values.items() if v != 0}
    for c in vals:
        if c not in space:
            raise ValueError(f"cube {c} outside the space")
    return OuterFunction(space, vals, Fraction(value_power))


def outer_measure(E, space: OuterSpace) -> Rational:
    """Covering-generated measure of a cube set, by tree dynamic program.

    Cost of a subtree is |T| if that beats covering the marked cubes
    below; a marked cube forces its own subtree's root price.
    """
    marked = set(E)
    for c in marked:
        if c not in space:
            raise ValueError(f"cube {c} outside the space")

    def cost(c: DyadicCube) -> Rational:
        if c in marked:
            return c.volume
        if space.is_leaf(c):
            return rat(0)
        total = sum((cost(kid) for kid in children(c)), rat(0))
        return min(c.volume, total)

    return cost(space.root)


def all_antichains(space: OuterSpace) -> list[tuple[DyadicCube, ...]]:
    """Every antichain of the cube tree (including the empty one)."""

    def rec(c: DyadicCube) -> list[tuple[DyadicCube, ...]]:
        out = [(c,)]
        if not space.is_leaf(c):
            kid_chains = [rec(kid) for kid in children(c)]
            for combo in itertools.product(*kid_chains):
                out.append(tuple(x for t in combo for x in t))
        out.append(())
        return out

    seen = set()
    result = []
    for a in rec(space.root):
        key = tuple(sorted(a, key=lambda c: (c.level, c.index)))
        if key not in seen:
            seen.add(key)
            result.append(key)
    return result


def outer_measure_bruteforce(E, space: OuterSpace) -> Rational:
    """Exhaustive minimum over antichain covers; tiny spaces only."""
    cubes = space.cubes()
    if len(cubes) > 1 << 15:
        raise ValueError("space too large for exhaustive enumeration")
    marked = set(E)
    best: Optional[Rational] = None
    for a in all_antichains(space):
        if all(any(contains(t, e) for t in a) for e in marked):
            c = sum((t.volume for t in a), rat(0))
            if best is None or c < best:
                best = c
    return best if best is not None else rat(0)


def _subtree_size_powers(F: OuterFunction, kind: SizeKind) -> dict[DyadicCube, Rational]:
    """For S_p: S_p(F)(D(T))^p * |T| (the unnormalized power sum).
    For the sup size: max stored |value| over the subtree, as the
    value_power-th power of the magnitude."""
    space = F.space
    out: dict[DyadicCube, Rational] = {}
    levels: dict[int, list[DyadicCube]] = {}
    for c in space.cubes():
        levels.setdefault(c.level, []).append(c)
    for level in sorted(levels, reverse=True):
        for c in levels[level]:
            x = F.magnitude_power(c)
            if kind.kind == "inf":
                m = x
                if not space.is_leaf(c):
                    for kid in children(c):
                        m = max(m, out[kid])
                out[c] = m
            else:
                expo = Fraction(kind.p) / F.value_power
                piece = rat_pow(x, expo)
                if piece is None:
                    raise ValueError(
                        "irrational size power; choose a compatible size exponent"
                    )
                total = piece * c.volume
                if not space.is_leaf(c):
                    for kid in children(c):
                        total += out[kid]
                out[c] = total
    return out


def size(F: OuterFunction, T: DyadicCube, kind: SizeKind) -> NormValue:
    """S_p(F)(D(T)) or the subtree supremum, as a NormValue.

    The sup size is reported with p = value_power so that power_exact is
    the stored power of the maximal magnitude.
    """
    if T not in F.space:
        raise ValueError("cube outside the space")
    powers = _subtree_size_powers(F, kind)
    if kind.kind == "inf":
        return NormValue.from_power(F.value_power, powers[T])
    return NormValue.from_power(kind.p, powers[T] / T.volume)


def _violation_power(F: OuterFunction, kind: SizeKind, T: DyadicCube, powers) -> Rational:
    """The per-cube quantity compared against the threshold power.

    The sup size is violated pointwise (a surviving cube with a large
    value violates every ancestor's size), so its violators are the
    cubes themselves; the p-sizes aggregate over the subtree.
    """
    if kind.kind == "inf":
        return F.magnitude_power(T)
    return powers[T] / T.volume


def _threshold_power(F: OuterFunction, kind: SizeKind, lam: Rational) -> Optional[Rational]:
    """lam mapped to the same power scale as _violation_power."""
    lam = rat(lam)
    if lam < 0:
        raise ValueError("level must be nonnegative")
    if kind.kind == "inf":
        return rat_pow(lam, F.value_power) if lam != 0 else rat(0)
    return rat_pow(lam, Fraction(kind.p)) if lam != 0 else rat(0)


def _superlevel_by_power(F: OuterFunction, lam_power: Rational, kind: SizeKind, method: str):
    """Superlevel measure with the threshold given in power scale."""
    space = F.space
    powers = _subtree_size_powers(F, kind)

    def violates(T):
        return _violation_power(F, kind, T, powers) > lam_power

    if method == "greedy":
        if kind.kind == "inf":
            # removing exactly the violating cubes is optimal: every
            # admissible removal must contain them, and covering them
            # is priced by the outer measure either way.
            removed = [c for c in space.cubes() if violates(c)]
            return outer_measure(removed, space), removed
        removed = []

        def walk(c):
            if violates(c):
                removed.append(c)
                return
            if not space.is_leaf(c):
                for kid in children(c):
                    walk(kid)

        walk(space.root)
        return outer_measure(removed, space), removed
    if method != "exact":
        raise ValueError("method must be 'greedy' or 'exact'")
    cubes = space.cubes()
    if len(cubes) > 63:
        raise ValueError("exact superlevel is limited to tiny trees")
    index = {c: i for i, c in enumerate(cubes)}
    desc_mask = [0] * len(cubes)
    for c in cubes:
        for d in cubes:
            if contains(c, d):
                desc_mask[index[c]] |= 1 << index[d]
    vp_cache: dict[int, bool] = {}

    def admissible(removed_mask: int) -> bool:
        for T in cubes:
            ti = index[T]
            if removed_mask >> ti & 1 or (desc_mask[ti] & removed_mask) == desc_mask[ti]:
                continue
            if kind.kind == "inf":
                worst = rat(0)
                for d in cubes:
                    di = index[d]
                    if desc_mask[ti] >> di & 1 and not removed_mask >> di & 1:
                        worst = max(worst, F.magnitude_power(d))
                if worst > lam_power:
                    return False
            else:
                total = rat(0)
                expo = Fraction(kind.p) / F.value_power
                for d in cubes:
                    di = index[d]
                    if desc_mask[ti] >> di & 1 and not removed_mask >> di & 1:
                        piece = rat_pow(F.magnitude_power(d), expo)
                        total += piece * d.volume
                if total / T.volume > lam_power:
                    return False
        # cubes fully removed below need no check; removed roots neither
        for T in cubes:
            ti = index[T]
            if removed_mask >> ti & 1:
                continue
            pass
        return True

    best = None
    best_set: list[DyadicCube] = []
    for a in all_antichains(space):
        mask = 0
        for t in a:
            mask |= desc_mask[index[t]]
        if admissible(mask):
            c = sum((t.volume for t in a), rat(0))
            if best is None or c < best:
                best, best_set = c, list(a)
    return best if best is not None else rat(0), best_set


def superlevel(F: OuterFunction, lam, kind: SizeKind, method: str = "greedy") -> Rational:
    """mu(S(F) > lam): removal cost to bring every subtree size to lam.

    The greedy route removes the maximal violating subtrees and prices
    them with the outer measure (an upper bound, exact for the sup
    size); the exact route searches all subtree-union removals.
    """
    lam_power = _threshold_power(F, kind, lam)
    if lam_power is None:
        raise ValueError("level power is irrational; supply a compatible level")
    return _superlevel_by_power(F, lam_power, kind, method)[0]


@dataclass(frozen=True)
class LevelProfile:
    """Right-continuous step profile of the superlevel measure.

    breakpoint_powers are the candidate levels in power scale (ascending,
    starting at 0); mus[i] is the measure on the half-open interval from
    breakpoint i to breakpoint i+1.
    """

    kind: SizeKind
    value_power: Fraction
    breakpoint_powers: tuple[Rational, ...]
    mus: tuple[Rational, ...]

    def __post_init__(self):
        if any(a >= b for a, b in zip(self.breakpoint_powers, self.breakpoint_powers[1:])):
            raise ValueError("breakpoints must increase")
        if any(a < b for a, b in zip(self.mus, self.mus[1:])):
            raise ValueError("superlevel measure must be nonincreasing")

    @property
    def level_exponent(self) -> Fraction:
        """Exponent e with breakpoint lambda = power^(1/e)."""
        return Fraction(self.kind.p) if self.kind.kind == "p" else self.value_power


def level_profile(F: OuterFunction, kind: SizeKind, method: str = "greedy") -> LevelProfile:
    powers = _subtree_size_powers(F, kind)
    cand = {rat(0)}
    for T in F.space.cubes():
        cand.add(_violation_power(F, kind, T, powers))
    cands = sorted(cand)
    mus = tuple(_superlevel_by_power(F, c, kind, method)[0] for c in cands)
    return LevelProfile(kind, F.value_power, tuple(cands), mus)


def outer_lp_norm(
    F: OuterFunction,
    p,
    kind: SizeKind,
    weak: bool = False,
    method: str = "greedy",
    precision: int = DEFAULT_PRECISION,
) -> tuple[NormValue, LevelProfile]:
    """Outer Lp norm by exact sweep over the achievable size levels.

    Strong:  ||F||^p = sum_i mu_i (lam_{i+1}^p - lam_i^p); weak: the sup
    of lam^p mu(lam) over the same breakpoints.  Exact whenever the
    breakpoint powers raise rationally to p.
    """
    p = Fraction(p)
    if p < 1:
        raise ValueError("p must be >= 1")
    prof = level_profile(F, kind, method)
    e = prof.level_exponent
    terms_exact: Optional[list] = []
    bp = prof.breakpoint_powers
    for c in bp:
        t = rat_pow(c, p / e) if c != 0 else rat(0)
        if t is None:
            terms_exact = None
            break
        terms_exact.append(t)
    if terms_exact is not None:
        if weak:
            power = rat(0)
            for i, mu in enumerate(prof.mus):
                if i + 1 < len(bp):
                    power = max(power, terms_exact[i + 1] * mu)
            return NormValue.from_power(p, power), prof
        power = rat(0)
        for i, mu in enumerate(prof.mus):
            if i + 1 < len(bp):
                power += mu * (terms_exact[i + 1] - terms_exact[i])
        return NormValue.from_power(p, power), prof
    with mpmath.workprec(precision + 16):
        vals = [mpf_pow_rat(c, p / e, precision) if c != 0 else mpmath.mpf(0) for c in bp]
        if weak:
            power = mpmath.mpf(0)
            for i, mu in enumerate(prof.mus):
                if i + 1 < len(vals):
                    power = max(power, vals[i + 1] * mpf_from_rat(mu, precision))
        else:
            power = mpmath.mpf(0)
            for i, mu in enumerate(prof.mus):
                if i + 1 < len(vals):
                    power += mpf_from_rat(mu, precision) * (vals[i + 1] - vals[i])
        approx = mpmath.power(power, 1 / mpf_from_rat(rat(p), precision)) if power > 0 else mpmath.mpf(0)
    return NormValue.from_approx(p, approx, precision), prof


def embed_E(f: TestFunction) -> OuterFunction:
    """Absolute martingale averages on every cube of the tree."""
    space = OuterSpace(f.root, f.resolution)
    avgs = cube_averages(f)
    return outer_function(space, {c: abs(a) for c, a in avgs.items()})


def embed_Delta(f: TestFunction) -> OuterFunction:
    """One-level martingale differences, stored as squares.

    The difference is undefined at leaf level and set to zero there.
    """
    space = OuterSpace(f.root, f.resolution)
    vals = {}
    for c in space.cubes():
        if space.is_leaf(c):
            continue
        _, delta = martingale_ops(f, c)
        vals[c] = delta.power_exact
    return outer_function(space, vals, value_power=2)


@dataclass
class CarlesonReport:
    mode: str
    p: object
    ratio: Optional[float]
    bound: Optional[Rational]
    passed: Optional[bool]
    details: dict = field(default_factory=dict)


def carleson_check(f: TestFunction, p, which: str, method: str = "greedy") -> CarlesonReport:
    """Embedding bounds: averages against the sup size, differences
    against the quadratic size.

    p = infinity and the weak p = 1 endpoint are asserted exactly with
    the proof constants (1, 1 and 2^d); intermediate p is reported.
    """
    if which not in ("E", "Delta"):
        raise ValueError("which must be 'E' or 'Delta'")
    d = f.dim
    F = embed_E(f) if which == "E" else embed_Delta(f)
    kind = SIZE_INF if which == "E" else SIZE_2
    if p == "inf":
        powers = _subtree_size_powers(F, kind)
        sup_f = f.sup_norm()
        if which == "E":
            worst = max(powers[T] for T in F.space.cubes())
            passed = worst <= sup_f
            ratio = float(worst) / float(sup_f) if sup_f != 0 else 0.0
        else:
            worst = max(powers[T] / T.volume for T in F.space.cubes())
            passed = worst <= sup_f * sup_f
            ratio = (float(worst) ** 0.5) / float(sup_f) if sup_f != 0 else 0.0
        if not passed:
            raise AssertionError("embedding sup bound failed exactly")
        return CarlesonReport(which, "inf", ratio, rat(1), passed)
    p = Fraction(p)
    if p == 1:
        one_norm = lp_norm(f, 1).power_exact
        bound = one_norm if which == "E" else rat(1 << d) * one_norm
        if which == "E":
            prof = level_profile(F, kind, method)
            worst = rat(0)
            for i, mu in enumerate(prof.mus):
                if i + 1 >= len(prof.breakpoint_powers):
                    continue
                lam = prof.breakpoint_powers[i + 1]
                worst = max(worst, lam * mu)
                if lam * mu > bound:
                    raise AssertionError("weak-type endpoint bound failed exactly")
            ratio = float(worst) / float(bound) if bound != 0 else None
            return CarlesonReport(which, 1, ratio, bound, True, {"weak": True})
        worst_pow = rat(0)
        powers = _subtree_size_powers(F, kind)
        abs_f = TestFunction(f.root, f.resolution, tuple(abs(v) for v in f.values))
        abs_avgs = cube_averages(abs_f)
        four_d = rat(1 << d) ** 2
        breakpoints = {rat(0)}
        for T in F.space.cubes():
            breakpoints.add(_violation_power(F, kind, T, powers))
            breakpoints.add(abs_avgs[T] ** 2 * four_d)
        cands = sorted(breakpoints)
        for i, cpow in enumerate(cands[:-1]):
            mu_greedy = _superlevel_by_power(F, cpow, kind, "greedy")[0]
            mu_cz = _cz_removal_cost(f, F, abs_avgs, cpow, d)
            mu_used = mu_greedy if mu_cz is None else min(mu_greedy, mu_cz)
            nxt = cands[i + 1]
            lhs_pow = nxt * mu_used * mu_used
            if lhs_pow > bound * bound:
                raise AssertionError("weak-type endpoint bound failed exactly")
            worst_pow = max(worst_pow, lhs_pow)
        ratio = float(worst_pow) ** 0.5 / float(bound) if bound != 0 else None
        return CarlesonReport(which, 1, ratio, bound, True, {"weak": True})
    norm, _ = outer_lp_norm(F, p, kind, weak=False, method=method)
    f_norm = lp_norm(f, p)
    ratio = None
    if float(f_norm.approx) > 0:
        ratio = float(norm.approx) / float(f_norm.approx)
    return CarlesonReport(which, p, ratio, None, None, {"empirical": True})


def _cz_removal_cost(
    f: TestFunction, F: OuterFunction, abs_avgs, cpow: Rational, d: int
) -> Optional[Rational]:
    """Cost of the height-decomposition removal at quadratic level cpow.

    The maximal cubes where the absolute average exceeds lam / 2^d are
    removed wholesale; admissibility (every surviving subtree's
    quadratic size power stays at most cpow) is verified exactly, and
    the construction is expected to verify whenever the difference
    embedding is checked (its failure is a trapped contradiction).
    """
    space = F.space
    four_d = rat(1 << d) ** 2
    removal_roots: list[DyadicCube] = []

    def mark(c: DyadicCube):
        if abs_avgs[c] ** 2 * four_d > cpow:
            removal_roots.append(c)
            return
        if not space.is_leaf(c):
            for kid in children(c):
                mark(kid)

    mark(space.root)
    removed = set()
    for r in removal_roots:
        for c in space.cubes():
            if contains(r, c):
                removed.add(c)

    surv_power: dict[DyadicCube, Rational] = {}
    levels: dict[int, list[DyadicCube]] = {}
    for c in space.cubes():
        levels.setdefault(c.level, []).append(c)
    for level in sorted(levels, reverse=True):
        for c in levels[level]:
            if c in removed:
                surv_power[c] = rat(0)
                continue
            total = F.magnitude_power(c) * c.volume
            if not space.is_leaf(c):
                for kid in children(c):
                    total += surv_power[kid]
            surv_power[c] = total
    for c in space.cubes():
        if c in removed:
            continue
        if surv_power[c] / c.volume > cpow:
            raise AssertionError(
                "height decomposition failed to control the surviving sizes"
            )
    return sum((r.volume for r in removal_roots), rat(0))


def _delta_product_interval(x1: Rational, x2: Rational, prec: int):
    """sqrt(x1 * x2) as certified mpf bounds (lo, hi)."""
    exact = rat_pow(x1 * x2, Fraction(1, 2))
    if exact is not None:
        v = mpf_from_rat(exact, prec)
        return v, v
    with mpmath.workprec(prec + 16):
        v = mpmath.sqrt(mpf_from_rat(x1, prec + 16) * mpf_from_rat(x2, prec + 16))
        m = mpmath.mpf(2) ** (-(prec - 4))
        return v * (1 - m), v * (1 + m)


@dataclass
class LemmaReport:
    passed: bool
    measured_constant: Optional[float]
    alpha_sum: float
    holder_lhs: Optional[float] = None
    holder_rhs: Optional[float] = None
    details: dict = field(default_factory=dict)


def _ed_tables(f: TestFunction):
    space = OuterSpace(f.root, f.resolution)
    E = embed_E(f)
    D = embed_Delta(f)
    return space, E, D


def admissible_alpha_bound(
    fs: tuple[TestFunction, ...], T: DyadicCube, prec: int = DEFAULT_PRECISION
):
    """Certified bounds (lo, hi) for the four-term coefficient budget of
    the first summation lemma applied to (f1, f2, f3) at T."""
    f1, f2, f3 = fs
    _, E1, D1 = _ed_tables(f1)
    _, E2, D2 = _ed_tables(f2)
    _, E3, D3 = _ed_tables(f3)
    x1 = D1.values.get(T, rat(0))
    x2 = D2.values.get(T, rat(0))
    x3 = D3.values.get(T, rat(0))
    e1 = E1.values.get(T, rat(0))
    e2 = E2.values.get(T, rat(0))
    lo = rat(0)
    hi = rat(0)
    with mpmath.workprec(prec + 16):
        total_lo = mpmath.mpf(0)
        total_hi = mpmath.mpf(0)
        for a, b, c in ((x1, x2, None), (x1, x3, e2), (x3, x2, e1)):
            plo, phi_ = _delta_product_interval(a, b, prec)
            w = mpf_from_rat(c, prec) if c is not None else mpmath.mpf(1)
            total_lo += plo * w
            total_hi += phi_ * w
        total_lo += mpf_from_rat(e1 * e2 * x3, prec)
        total_hi += mpf_from_rat(e1 * e2 * x3, prec)
        vol = mpf_from_rat(T.volume, prec)
        return total_lo * vol, total_hi * vol


def lemma1_check(
    f1: TestFunction,
    f2: TestFunction,
    f3: TestFunction,
    p,
    alpha: dict[DyadicCube, Rational],
    method: str = "greedy",
    precision: int = DEFAULT_PRECISION,
) -> LemmaReport:
    """Coefficient summation bound from martingale data of two functions
    and a bounded multiplier, plus the outer-Holder step it rests on.

    The coefficient budget (with constant one) and the sup bound on f3
    are preconditions; the measured least constant and the Holder pair
    are reported, the Holder inequality asserted within 2^-48.
    """
    p = Fraction(p)
    if not 1 < p:
        raise ValueError("p must exceed 1")
    pprime = p / (p - 1)
    if f3.sup_norm() > 1:
        raise ValueError("the multiplier must be bounded by one")
    space, E1, D1 = _ed_tables(f1)
    _, E2, D2 = _ed_tables(f2)
    for T, a in alpha.items():
        lo, hi = admissible_alpha_bound((f1, f2, f3), T, precision)
        av = mpf_from_rat(abs(rat(a)), precision)
        if av > hi:
            raise ValueError(f"coefficient at {T} exceeds its budget")
    alpha_sum = sum((abs(rat(a)) for a in alpha.values()), rat(0))
    n1 = lp_norm(f1, p)
    n2 = lp_norm(f2, pprime)
    denom = float(n1.approx) * float(n2.approx)
    measured = float(alpha_sum) / denom if denom > 0 else None
    holder_lhs = mpmath.mpf(0)
    with mpmath.workprec(precision + 16):
        for T in space.cubes():
            if space.is_leaf(T):
                continue
            x1 = D1.values.get(T, rat(0))
            x2 = D2.values.get(T, rat(0))
            if x1 == 0 or x2 == 0:
                continue
            lo, hi = _delta_product_interval(x1, x2, precision)
            holder_lhs += hi * mpf_from_rat(T.volume, precision)
    dn1, _ = outer_lp_norm(D1, p, SIZE_2, method=method, precision=precision)
    dn2, _ = outer_lp_norm(D2, pprime, SIZE_2, method=method, precision=precision)
    rhs = dn1.approx * dn2.approx
    tol = mpmath.mpf(2) ** (-48)
    holder_ok = holder_lhs <= rhs * (1 + tol)
    if not holder_ok:
        raise AssertionError("outer Holder step failed beyond tolerance")
    return LemmaReport(
        True,
        measured,
        float(alpha_sum),
        float(holder_lhs),
        float(rhs),
        {"p": p, "entries": len(alpha)},
    )


def lemma2_check(
    f1: TestFunction,
    f2: TestFunction,
    f3: TestFunction,
    f4: TestFunction,
    f5: TestFunction,
    p,
    q,
    alpha: dict[DyadicCube, Rational],
    method: str = "greedy",
    precision: int = DEFAULT_PRECISION,
) -> LemmaReport:
    """Second summation lemma: the coefficient budget carries the extra
    average factor of f3 and the product bound uses the exponent
    s = pq/(p+q) of the pair."""
    p, q = Fraction(p), Fraction(q)
    s = p * q / (p + q)
    if f4.sup_norm() > 1 or f5.sup_norm() > 1:
        raise ValueError("the bounded multipliers must not exceed one")
    space, E1, D1 = _ed_tables(f1)
    _, E2, D2 = _ed_tables(f2)
    _, E3, D3 = _ed_tables(f3)
    _, E4, D4 = _ed_tables(f4)
    _, E5, D5 = _ed_tables(f5)
    with mpmath.workprec(precision + 16):
        for T, a in alpha.items():
            terms_hi = mpmath.mpf(0)
            for x, y, w in (
                (D2.values.get(T, rat(0)), D1.values.get(T, rat(0)), rat(1)),
                (D2.values.get(T, rat(0)), D5.values.get(T, rat(0)), E1.values.get(T, rat(0))),
                (D4.values.get(T, rat(0)), D1.values.get(T, rat(0)), E2.values.get(T, rat(0))),
                (D4.values.get(T, rat(0)), D5.values.get(T, rat(0)), E2.values.get(T, rat(0)) * E1.values.get(T, rat(0))),
            ):
                _, hi = _delta_product_interval(x, y, precision)
                terms_hi += hi * mpf_from_rat(w, precision)
            budget = terms_hi * mpf_from_rat(E3.values.get(T, rat(0)) * T.volume, precision)
            if mpf_from_rat(abs(rat(a)), precision) > budget:
                raise ValueError(f"coefficient at {T} exceeds its budget")
    alpha_sum = sum((abs(rat(a)) for a in alpha.values()), rat(0))
    n1 = lp_norm(f1, p)
    n2 = lp_norm(f2, q)
    if s > 1:
        sprime = s / (s - 1)
        n3v = float(lp_norm(f3, sprime).approx)
    else:
        n3v = float(f3.sup_norm())
    denom = float(n1.approx) * float(n2.approx) * n3v
    measured = float(alpha_sum) / denom if denom > 0 else None
    return LemmaReport(True, measured, float(alpha_sum), None, None, {"p": p, "q": q, "s": s})
