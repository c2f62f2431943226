"""Testing constants and full-norm estimation for finite-rank forms.

The local constants are exact suprema over the finite testing families:
indicator data for the one-function test, path/chain-dressed data for
the general one (the length-one case of which is bit-identical to the
indicator test, by construction on the same code path).  The full norm
is bracketed between an alternating-maximization search and a certified
combinatorial bound.
"""

from __future__ import annotations

import itertools
import random
from dataclasses import dataclass, field
from fractions import Fraction
from numbers import Rational
from typing import Optional, Sequence

import mpmath
import numpy as np

from ._exact import DEFAULT_PRECISION, PowProduct, rat, rat_from_mpf
from .funcspace import (
    HolderTuple,
    NormValue,
    TestFunction,
    from_leaf_values,
    h1_norm,
    indicator,
    inner_product,
    lp_norm,
    pointwise_mul,
    restrict,
    upsample,
    zero,
)
from .forms import (
    PerfectForm,
    blocks_to_dense,
    decay_certificate,
    dual_norm,
    eval_form,
    partial_functional,
)
from .lattice import CubeSet, DyadicCube, contains, cubes_within, leaf_cells, unit_cube
from .paths import BFamily, Path, PathCollection, build_example_collection


@dataclass
class TestingConstantReport:
    value: float
    value_power: Optional[PowProduct]
    witness_path: Optional[Path]
    witness_chain: Optional[tuple[DyadicCube, ...]]
    witness_slot: Optional[int]
    extremizer: Optional[TestFunction]
    candidates: int = 0


@dataclass
class NormEstimate:
    lower: float
    upper: Rational
    lower_power: Optional[Rational]
    witness: Optional[tuple[TestFunction, ...]]
    iterations: int
    seed: object


def _descending_chains(root: DyadicCube, max_level: int, length: int):
    """All chains Q_1 ⊇ ... ⊇ Q_length of cubes in root up to max_level."""
    depth = max_level - root.level
    all_cubes = cubes_within(root, depth)

    def rec(prefix):
        if len(prefix) == length:
            yield tuple(prefix)
            return
        pool = all_cubes if not prefix else [c for c in cubes_within(prefix[-1], max_level - prefix[-1].level)]
        for c in pool:
            prefix.append(c)
            yield from rec(prefix)
            prefix.pop()

    yield from rec([])


def _norm_as_powprod(nv: NormValue, p) -> Optional[PowProduct]:
    if nv.power_exact is None:
        return None
    if nv.power_exact == 0:
        return PowProduct(rat(0))
    return PowProduct(rat(1), [(rat(nv.power_exact), Fraction(1) / Fraction(p))])


def testing_sup(
    form: PerfectForm,
    exponents: HolderTuple,
    root: DyadicCube,
    k: int,
    collection: PathCollection,
    family: Optional[BFamily],
    max_level: Optional[int] = None,
    precision: int = DEFAULT_PRECISION,
) -> TestingConstantReport:
    """Least admissible constant over length-k paths and nested chains.

    For each datum the free slot's functional is restricted to the last
    chain cube and measured in the dual norm, normalized by the fixed
    slots' norms.  Comparisons across candidates are exact whenever the
    norm powers are rational.
    """
    n = form.arity
    if max_level is None:
        max_level = form.resolution
    exact_mode = True
    best_pow: PowProduct = PowProduct(rat(0))
    best_float = 0.0
    best = (None, None, None, None)
    candidates = 0
    chain_len = k if k < n else n - 1
    for sigma in collection.of_length(k):
        for chain_head in _descending_chains(root, max_level, chain_len):
            chain = chain_head if k < n else chain_head + (chain_head[-1],)
            Qk = chain[-1]
            free_slot = sigma.values[k - 1] - 1
            fixed: list[TestFunction] = []
            norms: list[tuple[Optional[PowProduct], float]] = []
            degenerate = False
            for j in range(n):
                if j == free_slot:
                    continue
                pos = sigma.values.index(j + 1) + 1 if (j + 1) in sigma.values else None
                if pos is not None and pos < k:
                    b = family.get(sigma, chain, pos)
                    fj = restrict(upsample(b, form.resolution), Qk)
                else:
                    fj = indicator(form.root, form.resolution, Qk)
                if all(v == 0 for v in fj.values):
                    degenerate = True
                    break
                fixed.append(fj)
                nv = lp_norm(fj, exponents[j], precision)
                norms.append((_norm_as_powprod(nv, exponents[j]), float(nv.approx)))
            candidates += 1
            if degenerate:
                # a vanishing dressed slot zeroes the pairing entirely
                continue
            phi = restrict(partial_functional(form, free_slot, fixed), Qk)
            pprime = exponents.conjugate(free_slot)
            num = lp_norm(phi, pprime, precision)
            if num.power_exact == 0 or (num.power_exact is None and float(num.approx) == 0.0):
                continue
            num_pow = _norm_as_powprod(num, pprime)
            value_pow: Optional[PowProduct] = None
            if num_pow is not None and all(npp is not None for npp, _ in norms):
                value_pow = num_pow
                for npp, _ in norms:
                    value_pow = value_pow.times(
                        PowProduct(1 / npp.coeff, [(b, -e) for b, e in npp.factors])
                    )
            if value_pow is None:
                exact_mode = False
            denom_float = 1.0
            for _, fl in norms:
                denom_float *= fl
            value_float = float(num.approx) / denom_float if denom_float else float("inf")
            if exact_mode:
                better = value_pow.compare(best_pow) > 0
            else:
                better = value_float > best_float * (1 + 1e-15)
            if better:
                _, extremizer = dual_norm(phi, exponents[free_slot], precision)
                if exact_mode:
                    best_pow = value_pow
                best_float = value_float
                best = (sigma, chain, free_slot, extremizer)
    return TestingConstantReport(
        best_float,
        best_pow if exact_mode else None,
        best[0],
        best[1],
        best[2],
        best[3],
        candidates,
    )


def t1_testing_constant(
    form: PerfectForm,
    exponents: HolderTuple,
    root: DyadicCube,
    max_level: Optional[int] = None,
    precision: int = DEFAULT_PRECISION,
) -> TestingConstantReport:
    """Indicator testing: all slots but one carry the cube's indicator."""
    n = form.arity
    paths = PathCollection.of(n, [Path(n, (j,)) for j in range(1, n + 1)])
    return testing_sup(form, exponents, root, 1, paths, None, max_level, precision)


def tb_testing_constant(
    form: PerfectForm,
    collection: PathCollection,
    family: BFamily,
    exponents: HolderTuple,
    k: int,
    root: DyadicCube,
    max_level: Optional[int] = None,
    precision: int = DEFAULT_PRECISION,
) -> TestingConstantReport:
    """Dressed testing over length-k paths; k = 1 reduces to the
    indicator test on the identical code path."""
    return testing_sup(form, exponents, root, k, collection, family, max_level, precision)


def certified_norm_upper(form: PerfectForm) -> Rational:
    """Certified bound on the full norm ratio.

    Block forms: the decay certificate times 2^d per participating
    scale.  Dense-only forms: the crude kernel-mass bound.
    """
    if form.blocks:
        cert = decay_certificate(form)
        scales = len({b.cube.level for b in form.blocks})
        return cert * rat(1 << form.dim) * rat(max(scales, 1))
    if form.dense:
        lv = rat(1, 1 << (form.dim * form.resolution))
        total = sum((abs(v) for v in form.dense.values()), rat(0))
        return total * lv ** (form.arity - 1)
    return rat(0)


def _objective(form: PerfectForm, exponents: HolderTuple, fs, precision) -> tuple[float, Optional[Rational]]:
    """|form(fs)| / prod ||f_j||, float plus exact square when p = 2."""
    val = eval_form(form, fs)
    if val == 0:
        return 0.0, rat(0)
    exact_sq: Optional[Rational] = None
    if all(p == 2 for p in exponents.exponents):
        denom_sq = rat(1)
        for f, p in zip(fs, exponents.exponents):
            pw = lp_norm(f, 2).power_exact
            denom_sq *= pw
        if denom_sq != 0:
            exact_sq = val * val / denom_sq
    denom = 1.0
    for f, p in zip(fs, exponents.exponents):
        denom *= float(lp_norm(f, p).approx)
    return (abs(float(val)) / denom if denom else 0.0), exact_sq


def full_norm_bracket(
    form: PerfectForm,
    exponents: HolderTuple,
    budget: int = 6,
    seed: int = 0,
    restarts: int = 2,
    warm_starts: Sequence[Sequence[TestFunction]] = (),
    precision: int = DEFAULT_PRECISION,
) -> NormEstimate:
    """Bracket the norm: alternating maximization below, certificate above.

    Each slot step replaces the slot by the dual extremizer of its
    functional, so the objective never decreases along a sweep (asserted;
    exactly so when every exponent is two).
    """
    n = form.arity
    N = form.resolution
    root = form.root
    upper = certified_norm_upper(form)
    rng = random.Random(f"dytb-bracket:{seed}")
    leaves = 1 << (form.dim * N)

    starts: list[list[TestFunction]] = []
    from .funcspace import haar

    starts.append([haar(root, N, root) for _ in range(n)])
    for t in list(warm_starts):
        starts.append([upsample(f, N) for f in t])
    for _ in range(restarts):
        starts.append(
            [
                from_leaf_values(root, N, [rat(rng.randint(-8, 8), 8) for _ in range(leaves)])
                for _ in range(n)
            ]
        )

    best = 0.0
    best_sq: Optional[Rational] = rat(0)
    best_tuple = None
    iterations = 0
    for fs in starts:
        fs = list(fs)
        prev, prev_sq = _objective(form, exponents, fs, precision)
        if prev > best:
            best, best_sq, best_tuple = prev, prev_sq, tuple(fs)
        for _ in range(budget):
            iterations += 1
            for slot in range(n):
                others = [f for j, f in enumerate(fs) if j != slot]
                phi = partial_functional(form, slot, others)
                if all(v == 0 for v in phi.values):
                    continue
                _, g = dual_norm(phi, exponents[slot], precision)
                fs[slot] = g
            cur, cur_sq = _objective(form, exponents, fs, precision)
            if cur_sq is not None and prev_sq is not None:
                if cur_sq < prev_sq:
                    raise AssertionError("alternating maximization decreased exactly")
            elif cur < prev * (1 - 1e-10):
                raise AssertionError("alternating maximization decreased")
            if cur > best:
                best, best_sq, best_tuple = cur, cur_sq, tuple(fs)
            if cur <= prev * (1 + 1e-14):
                prev, prev_sq = cur, cur_sq
                break
            prev, prev_sq = cur, cur_sq
    if rat_from_mpf(best) > upper * (1 + rat(1, 1 << 40)):
        raise AssertionError("search exceeded the certified upper bound")
    return NormEstimate(best, upper, best_sq, best_tuple, iterations, seed)


def leaf_matrix(form: PerfectForm) -> np.ndarray:
    """Dense kernel matrix of a bilinear form (float), leaf by leaf."""
    if form.arity != 2:
        raise ValueError("leaf matrix needs a bilinear form")
    cells = 1 << (form.dim * form.resolution)
    M = np.zeros((cells, cells))
    kernel = form.dense if (form.dense is not None and not form.blocks) else blocks_to_dense(form)
    for (i, j), v in kernel.items():
        M[i, j] += float(v)
    return M


def spectral_norm_oracle(form: PerfectForm) -> float:
    """Largest singular value of the leaf matrix, normalized so it equals
    the bilinear norm with both exponents two."""
    M = leaf_matrix(form)
    leaf_volume = float(rat(1, 1 << (form.dim * form.resolution)))
    if not M.any():
        return 0.0
    return float(np.linalg.svd(M, compute_uv=False)[0]) * leaf_volume


def full_norm_bruteforce(
    form: PerfectForm,
    exponents: HolderTuple,
    grid: int = 0,
    max_iter: int = 400,
    seed: int = 0,
) -> NormEstimate:
    """Near-exhaustive search: alternation from every sign pattern (plus
    optional random grid starts); limited to at most eight leaf cells."""
    n = form.arity
    cells = 1 << (form.dim * form.resolution)
    if cells > 8:
        raise ValueError("brute force is limited to eight leaf cells per slot")
    ps = [float(p) for p in exponents.exponents]
    lv = float(rat(1, 1 << (form.dim * form.resolution)))
    kernel = form.dense if (form.dense is not None and not form.blocks) else blocks_to_dense(form)
    if n == 2:
        M = np.zeros((cells, cells))
        for (i, j), v in kernel.items():
            M[i, j] += float(v)

        def best_from(start: np.ndarray) -> float:
            y = start.astype(float)
            val = 0.0
            for _ in range(max_iter):
                phi = M @ y * lv  # functional of slot 0 against y
                x = _dual_vector(phi, ps[0])
                phi2 = M.T @ x * lv
                y2 = _dual_vector(phi2, ps[1])
                num = abs(x @ M @ y2) * lv * lv
                den = _lp(x, ps[0], lv) * _lp(y2, ps[1], lv)
                new = num / den if den else 0.0
                if new <= val * (1 + 1e-14):
                    val = max(val, new)
                    break
                val, y = new, y2
            return val

        best = 0.0
        for bits in range(1 << cells):
            start = np.array([1.0 if bits >> i & 1 else -1.0 for i in range(cells)])
            best = max(best, best_from(start))
        rng = np.random.default_rng(seed)
        for _ in range(grid):
            best = max(best, best_from(rng.standard_normal(cells)))
        upper = certified_norm_upper(form)
        return NormEstimate(best, upper, None, None, 1 << cells, seed)
    raise ValueError("brute force currently covers bilinear forms")


def _lp(x: np.ndarray, p: float, lv: float) -> float:
    return float((np.abs(x) ** p).sum() * lv) ** (1 / p)


def _dual_vector(phi: np.ndarray, p: float) -> np.ndarray:
    pprime = p / (p - 1)
    mag = np.abs(phi) ** (pprime - 1)
    return np.sign(phi) * mag


@dataclass
class GlobalTbReport:
    accretivity_ok: bool
    accretivity_witness: Optional[DyadicCube]
    sup_bound: Rational
    weak_bound: Rational
    bmo_bound: float
    least_admissible: float
    details: dict = field(default_factory=dict)


def derive_local_family(
    bs: Sequence[TestFunction],
    exponents: HolderTuple,
    bound: Rational,
    root: DyadicCube,
) -> BFamily:
    """Normalized restrictions b_j 1_Q / [b_j]_Q as a prefix-keyed family."""
    bs = list(bs)

    def provider(key):
        slots, cubes = key
        j, cube = slots[-1], cubes[-1]
        b = bs[j - 1]
        from .funcspace import average, scale as fscale

        avg = average(b, cube)
        if avg == 0:
            raise ZeroDivisionError(f"vanishing average of slot {j} on {cube}")
        return fscale(restrict(b, cube), 1 / avg)

    return BFamily(exponents, bound, mode="prefix", provider=provider)


def global_tb_check(
    form: PerfectForm,
    bs: Sequence[TestFunction],
    exponents: HolderTuple,
    root: DyadicCube,
    precision: int = DEFAULT_PRECISION,
) -> GlobalTbReport:
    """Global hypotheses: accretive averages, sup bound, weak boundedness
    on indicators, and the Hardy-space testing bound over the mean-zero
    child patterns; everything exact except the Hardy ratios, which are
    exact whenever the square function is a perfect square."""
    n = form.arity
    if len(bs) != n:
        raise ValueError("need one global testing function per slot")
    N = form.resolution
    cubes = cubes_within(root, N - root.level)
    from .funcspace import average, haar

    accret_ok = True
    accret_witness = None
    for b in bs:
        for Qc in cubes:
            if abs(average(b, Qc)) < 1:
                accret_ok = False
                accret_witness = Qc
                break
        if not accret_ok:
            break
    sup_bound = max(b.sup_norm() for b in bs)
    weak = rat(0)
    for Qc in cubes:
        val = abs(eval_form(form, [restrict(b, Qc) for b in bs]))
        weak = max(weak, val)
    bmo = 0.0
    width = 1 << form.dim
    patterns = []
    for i in range(1, width):
        pat = [0] * width
        pat[0], pat[i] = 1, -1
        patterns.append(pat)
    for slot in range(n):
        for T in cubes:
            if T.level >= N:
                continue
            for pat in patterns:
                g = haar(root, N, T, pat)
                fs = [g if j == slot else bs[j] for j in range(n)]
                num = abs(eval_form(form, fs))
                if num == 0:
                    continue
                h1 = h1_norm(g, precision)
                ratio = float(num) / float(h1.approx)
                bmo = max(bmo, ratio)
    least = max(float(sup_bound), float(weak), bmo, 1.0)
    return GlobalTbReport(
        accret_ok,
        accret_witness,
        sup_bound,
        weak,
        bmo,
        least,
        {"slots": n, "cubes": len(cubes)},
    )
