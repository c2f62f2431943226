"""Dyadic test functions with exact rational values.

A TestFunction is piecewise constant on the level-(root.level + N) cells
of its root cube and vanishes outside the root.  Lp powers, averages and
martingale quantities are exact rationals whenever the pointwise powers
are rational; otherwise a high-precision branch is reported through
NormValue.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from numbers import Rational
from typing import Optional

import mpmath

from ._exact import (
    DEFAULT_PRECISION,
    mpf_from_rat,
    mpf_pow_rat,
    rat,
    rat_pow,
    rat_sqrt,
)
from .lattice import DyadicCube, children, contains, leaf_cells, relate, Relation


@dataclass(frozen=True)
class HolderTuple:
    """Exponents p_1..p_n with p_j > 1 finite and sum(1/p_j) == 1."""

    exponents: tuple[Fraction, ...]

    @staticmethod
    def of(*ps) -> "HolderTuple":
        return HolderTuple(tuple(Fraction(p) for p in ps))

    def __post_init__(self):
        if len(self.exponents) < 2:
            raise ValueError("need at least two exponents")
        if any(p <= 1 for p in self.exponents):
            raise ValueError("each exponent must exceed 1")
        if sum(Fraction(1) / p for p in self.exponents) != 1:
            raise ValueError("reciprocals must sum to exactly 1")

    def __len__(self):
        return len(self.exponents)

    def __getitem__(self, i):
        return self.exponents[i]

    def conjugate(self, i: int) -> Fraction:
        p = self.exponents[i]
        return p / (p - 1)


@dataclass(frozen=True)
class NormValue:
    """A norm with its exact p-th power when that power is rational.

    `power_exact` holds ||f||_p^p (or the squared quantity for martingale
    differences); `approx` is the norm itself at `precision` bits.
    """

    p: Fraction
    power_exact: Optional[Rational]
    approx: mpmath.mpf
    precision: int = DEFAULT_PRECISION

    @staticmethod
    def from_power(p, power: Rational, precision: int = DEFAULT_PRECISION) -> "NormValue":
        p = Fraction(p)
        root = rat_pow(rat(power), 1 / p)
        if root is not None:
            return NormValue(p, rat(power), mpf_from_rat(root, precision), precision)
        return NormValue(p, rat(power), mpf_pow_rat(rat(power), 1 / p, precision), precision)

    @staticmethod
    def from_approx(p, approx, precision: int = DEFAULT_PRECISION) -> "NormValue":
        return NormValue(Fraction(p), None, mpmath.mpf(approx), precision)

    def __float__(self):
        return float(self.approx)

    @property
    def exact_value(self) -> Optional[Rational]:
        """The norm itself when exactly rational, else None."""
        if self.power_exact is None:
            return None
        return rat_pow(rat(self.power_exact), 1 / self.p)


@dataclass(frozen=True)
class TestFunction:
    """Exact piecewise-constant function on the leaf cells of `root`."""

    root: DyadicCube
    resolution: int
    values: tuple[Rational, ...]

    def __post_init__(self):
        expect = 1 << (self.root.dim * self.resolution)
        if len(self.values) != expect:
            raise ValueError(f"need {expect} leaf values, got {len(self.values)}")

    @property
    def dim(self) -> int:
        return self.root.dim

    @property
    def leaf_level(self) -> int:
        return self.root.level + self.resolution

    @property
    def leaf_volume(self) -> Rational:
        return rat(1, 1 << (self.dim * self.leaf_level))

    def leaf_cubes(self) -> list[DyadicCube]:
        return leaf_cells(self.root, self.resolution)

    def is_zero(self) -> bool:
        return all(v == 0 for v in self.values)

    def value_on(self, cell: DyadicCube) -> Rational:
        """Value on a cell at or below leaf scale."""
        if cell.level < self.leaf_level:
            raise ValueError("cell is coarser than the resolution")
        if not contains(self.root, cell):
            return rat(0)
        from .lattice import ancestor, leaf_flat_index

        leaf = ancestor(cell, self.leaf_level)
        return self.values[leaf_flat_index(self.root, self.resolution, leaf)]

    def sup_norm(self) -> Rational:
        return max((abs(v) for v in self.values), default=rat(0))


@lru_cache(maxsize=65536)
def _leaf_positions(root: DyadicCube, resolution: int, cube: DyadicCube) -> tuple[int, ...]:
    """Flat positions of the leaf cells of `root` lying inside `cube`."""
    rel = relate(cube, root) if cube.dim == root.dim else Relation.DISJOINT
    if rel == Relation.DISJOINT:
        return ()
    if rel in (Relation.EQUAL, Relation.A_CONTAINS_B):
        return tuple(range(1 << (root.dim * resolution)))
    if cube.level > root.level + resolution:
        raise ValueError("cube is finer than the resolution")
    from .lattice import leaf_flat_index

    side = 1 << (root.level + resolution - cube.level)
    positions = []

    def rec(axis, idx):
        if axis == cube.dim:
            positions.append(
                leaf_flat_index(
                    root,
                    resolution,
                    DyadicCube(cube.dim, root.level + resolution, tuple(idx)),
                )
            )
            return
        base = cube.index[axis] * side
        for o in range(side):
            rec(axis + 1, idx + [base + o])

    rec(0, [])
    return tuple(sorted(positions))


def constant(root: DyadicCube, resolution: int, value) -> TestFunction:
    v = rat(value)
    return TestFunction(root, resolution, (v,) * (1 << (root.dim * resolution)))


def zero(root: DyadicCube, resolution: int) -> TestFunction:
    return constant(root, resolution, 0)


def indicator(root: DyadicCube, resolution: int, cube: DyadicCube) -> TestFunction:
    """1_cube as a function on the leaf grid of root."""
    vals = [rat(0)] * (1 << (root.dim * resolution))
    for pos in _leaf_positions(root, resolution, cube):
        vals[pos] = rat(1)
    return TestFunction(root, resolution, tuple(vals))


def from_leaf_values(root: DyadicCube, resolution: int, values) -> TestFunction:
    return TestFunction(root, resolution, tuple(rat(v) for v in values))


def haar(root: DyadicCube, resolution: int, cube: DyadicCube, pattern=None) -> TestFunction:
    """Mean-zero function constant on the children of `cube`.

    The default pattern alternates +1/-1 over the children in canonical
    order (the classical Haar function when d = 1).
    """
    kids = list(children(cube))
    if pattern is None:
        pattern = [1 if i % 2 == 0 else -1 for i in range(len(kids))]
    if len(pattern) != len(kids) or sum(pattern) != 0:
        raise ValueError("pattern must be mean zero over the children")
    vals = [rat(0)] * (1 << (root.dim * resolution))
    for kid, pv in zip(kids, pattern):
        for pos in _leaf_positions(root, resolution, kid):
            vals[pos] = rat(pv)
    return TestFunction(root, resolution, tuple(vals))


def upsample(f: TestFunction, resolution: int) -> TestFunction:
    """The same function on a finer leaf grid."""
    if resolution < f.resolution:
        raise ValueError("cannot reduce resolution")
    if resolution == f.resolution:
        return f
    d = f.dim
    side_old = 1 << f.resolution
    side_new = 1 << resolution
    shift = resolution - f.resolution
    vals = [rat(0)] * (side_new**d)
    for new_flat in range(side_new**d):
        coords = []
        x = new_flat
        for _ in range(d):
            coords.append(x % side_new)
            x //= side_new
        coords.reverse()
        old_flat = 0
        for c in coords:
            old_flat = old_flat * side_old + (c >> shift)
        vals[new_flat] = f.values[old_flat]
    return TestFunction(f.root, resolution, tuple(vals))


def common_resolution(*fs: TestFunction) -> tuple[TestFunction, ...]:
    if not fs:
        return ()
    root = fs[0].root
    if any(f.root != root for f in fs):
        raise ValueError("functions must share a root cube")
    res = max(f.resolution for f in fs)
    return tuple(upsample(f, res) for f in fs)


def add(f: TestFunction, g: TestFunction) -> TestFunction:
    f, g = common_resolution(f, g)
    return TestFunction(f.root, f.resolution, tuple(a + b for a, b in zip(f.values, g.values)))


def sub(f: TestFunction, g: TestFunction) -> TestFunction:
    f, g = common_resolution(f, g)
    return TestFunction(f.root, f.resolution, tuple(a - b for a, b in zip(f.values, g.values)))


def scale(f: TestFunction, c) -> TestFunction:
    c = rat(c)
    return TestFunction(f.root, f.resolution, tuple(c * v for v in f.values))


def pointwise_mul(f: TestFunction, g: TestFunction) -> TestFunction:
    f, g = common_resolution(f, g)
    return TestFunction(f.root, f.resolution, tuple(a * b for a, b in zip(f.values, g.values)))


def integral(f: TestFunction, over: Optional[DyadicCube] = None) -> Rational:
    """Exact integral of f (over a cube, default everything)."""
    lv = f.leaf_volume
    if over is None:
        return sum(f.values, rat(0)) * lv
    if over.level > f.leaf_level:
        return f.value_on(over) * over.volume
    total = rat(0)
    for pos in _leaf_positions(f.root, f.resolution, over):
        total += f.values[pos]
    return total * lv


def inner_product(f: TestFunction, g: TestFunction) -> Rational:
    f, g = common_resolution(f, g)
    lv = f.leaf_volume
    return sum((a * b for a, b in zip(f.values, g.values)), rat(0)) * lv


def average(f: TestFunction, P: DyadicCube) -> Rational:
    """[f]_P = |P|^-1 int_P f, exact.

    P may be any dyadic cube; cubes outside the root average to zero is
    not meaningful, so containment in the root is required.
    """
    if relate(f.root, P) in (Relation.DISJOINT, Relation.B_CONTAINS_A) and P != f.root:
        if not contains(f.root, P):
            raise ValueError("cube lies outside the function's root")
    return integral(f, P) / P.volume


def lp_power(f: TestFunction, p) -> Optional[Rational]:
    """||f||_p^p exactly, or None when some |value|^p is irrational."""
    p = Fraction(p)
    if p < 1:
        raise ValueError("p must be >= 1")
    lv = f.leaf_volume
    total = rat(0)
    for v in f.values:
        if v == 0:
            continue
        piece = rat_pow(abs(v), p)
        if piece is None:
            return None
        total += piece
    return total * lv


def lp_power_approx(f: TestFunction, p, precision: int = DEFAULT_PRECISION) -> mpmath.mpf:
    p = Fraction(p)
    with mpmath.workprec(precision + 16):
        lv = mpf_from_rat(f.leaf_volume, precision + 16)
        total = mpmath.mpf(0)
        for v in f.values:
            if v != 0:
                total += mpf_pow_rat(abs(v), p, precision + 16)
        return total * lv


def lp_norm(f: TestFunction, p, precision: int = DEFAULT_PRECISION) -> NormValue:
    """||f||_p as a NormValue (exact p-th power when rational)."""
    power = lp_power(f, p)
    if power is not None:
        return NormValue.from_power(p, power, precision)
    with mpmath.workprec(precision + 16):
        approx = mpmath.power(lp_power_approx(f, p, precision), 1 / mpf_from_rat(rat(Fraction(p)), precision + 16))
    return NormValue.from_approx(p, approx, precision)


def restrict(f: TestFunction, P: DyadicCube) -> TestFunction:
    """f * 1_P; idempotent."""
    keep = set(_leaf_positions(f.root, f.resolution, P))
    vals = tuple(v if i in keep else rat(0) for i, v in enumerate(f.values))
    return TestFunction(f.root, f.resolution, vals)


def cube_averages(f: TestFunction, base: Optional[DyadicCube] = None) -> dict[DyadicCube, Rational]:
    """Averages [f]_T for every cube T between `base` and leaf level."""
    base = base or f.root
    depth = f.leaf_level - base.level
    sums: dict[DyadicCube, Rational] = {}
    level_cubes = leaf_cells(base, depth)
    lv = f.leaf_volume
    for c in level_cubes:
        positions = _leaf_positions(f.root, f.resolution, c)
        sums[c] = f.values[positions[0]] * lv if positions else rat(0)
    for _ in range(depth):
        next_cubes = sorted({ _parent(c) for c in level_cubes }, key=lambda c: c.index)
        for c in next_cubes:
            sums[c] = sum((sums[k] for k in children(c)), rat(0))
        level_cubes = next_cubes
    return {c: s / c.volume for c, s in sums.items()}


def _parent(c: DyadicCube) -> DyadicCube:
    from .lattice import parent

    return parent(c)


def martingale_ops(f: TestFunction, T: DyadicCube) -> tuple[Rational, NormValue]:
    """(E_T f, Delta_T f): |average| and the one-level martingale difference.

    Delta_T^2 is exact rational; Delta_T is reported as a NormValue with
    p = 2 whose power_exact field holds the square.
    """
    if T.level >= f.leaf_level:
        raise ValueError("Delta_T needs level(T) below the resolution")
    avg = average(f, T)
    e_t = abs(avg)
    acc = rat(0)
    for kid in children(T):
        diff = average(f, kid) - avg
        acc += diff * diff * kid.volume
    delta_sq = acc / T.volume
    return e_t, NormValue.from_power(2, delta_sq)


def square_function_sq(f: TestFunction) -> TestFunction:
    """(Sf)^2 pointwise: level-0 average plus squared increments.

    The level-0 term [f]_root^2 is included as an extra increment, so the
    associated H^1 norm sees the mean part of f.
    """
    avgs = cube_averages(f)
    root = f.root
    depth = f.resolution
    vals = []
    for leaf in leaf_cells(root, depth):
        total = avgs[root] ** 2
        cube = leaf
        chain = [cube]
        while cube != root:
            cube = _parent(cube)
            chain.append(cube)
        chain.reverse()
        for up, down in zip(chain, chain[1:]):
            inc = avgs[down] - avgs[up]
            total += inc * inc
        vals.append(total)
    return TestFunction(root, depth, tuple(vals))


def h1_norm(g: TestFunction, precision: int = DEFAULT_PRECISION) -> NormValue:
    """Dyadic H^1 norm ||Sg||_1 via the martingale square function."""
    sq = square_function_sq(g)
    lv = g.leaf_volume
    exact_total = rat(0)
    exact_ok = True
    for v in sq.values:
        r = rat_sqrt(v)
        if r is None:
            exact_ok = False
            break
        exact_total += r
    if exact_ok:
        return NormValue.from_power(1, exact_total * lv, precision)
    with mpmath.workprec(precision + 16):
        total = mpmath.mpf(0)
        for v in sq.values:
            total += mpmath.sqrt(mpf_from_rat(v, precision + 16))
        return NormValue.from_approx(1, total * mpf_from_rat(lv, precision + 16), precision)
