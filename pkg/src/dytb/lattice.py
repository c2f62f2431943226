"""Dyadic cube geometry: the tree of subcubes of a fixed root cube.

The root is the unit cube [0,1)^d at level 0.  A cube at level k has
index coordinates in [0, 2^k) and splits into 2^d children at level k+1.
All operations are pure functions of immutable values.
"""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass
from numbers import Rational

from ._exact import rat


class Relation(enum.Enum):
    EQUAL = "equal"
    A_CONTAINS_B = "a-contains-b"
    B_CONTAINS_A = "b-contains-a"
    DISJOINT = "disjoint"


@dataclass(frozen=True, order=True)
class DyadicCube:
    """Cube of sidelength 2**-level with corner at index * 2**-level."""

    dim: int
    level: int
    index: tuple[int, ...]

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        if self.level < 0:
            raise ValueError("level must be >= 0")
        if len(self.index) != self.dim:
            raise ValueError("index length must equal dim")
        bound = 1 << self.level
        if any(not 0 <= i < bound for i in self.index):
            raise ValueError("index coordinates must lie in [0, 2^level)")

    @property
    def volume(self) -> Rational:
        return rat(1, 1 << (self.dim * self.level))

    @property
    def sidelength(self) -> Rational:
        return rat(1, 1 << self.level)

    def corner(self) -> tuple[Rational, ...]:
        s = self.sidelength
        return tuple(i * s for i in self.index)

    def __str__(self):
        lo = ",".join(str(c) for c in self.corner())
        return f"Q(d={self.dim},lvl={self.level},[{lo}]+2^-{self.level})"


def unit_cube(dim: int) -> DyadicCube:
    return DyadicCube(dim, 0, (0,) * dim)


def children(c: DyadicCube) -> "CubeSet":
    """The 2^d dyadic children, partitioning c."""
    kids = []
    for offs in itertools.product((0, 1), repeat=c.dim):
        kids.append(
            DyadicCube(c.dim, c.level + 1, tuple(2 * i + o for i, o in zip(c.index, offs)))
        )
    return CubeSet.of(c.dim, kids)


def parent(c: DyadicCube) -> DyadicCube:
    """The unique containing cube one level up; the root has none."""
    if c.level == 0:
        raise ValueError("root cube has no parent")
    return DyadicCube(c.dim, c.level - 1, tuple(i >> 1 for i in c.index))


def ancestor(c: DyadicCube, level: int) -> DyadicCube:
    """The ancestor of c at the given (coarser) level."""
    if level > c.level or level < 0:
        raise ValueError("ancestor level must lie in [0, c.level]")
    shift = c.level - level
    return DyadicCube(c.dim, level, tuple(i >> shift for i in c.index))


def contains(a: DyadicCube, b: DyadicCube) -> bool:
    """Whether a contains b (equality included)."""
    if a.dim != b.dim:
        raise ValueError("dimension mismatch")
    if a.level > b.level:
        return False
    return ancestor(b, a.level) == a


def relate(a: DyadicCube, b: DyadicCube) -> Relation:
    """Exactly one of equal / a-contains-b / b-contains-a / disjoint.

    Two dyadic cubes are never partially overlapping.
    """
    if a.dim != b.dim:
        raise ValueError("dimension mismatch")
    if a == b:
        return Relation.EQUAL
    if a.level <= b.level and ancestor(b, a.level) == a:
        return Relation.A_CONTAINS_B
    if b.level <= a.level and ancestor(a, b.level) == b:
        return Relation.B_CONTAINS_A
    return Relation.DISJOINT


def sibling_cubes(c: DyadicCube) -> list[DyadicCube]:
    """The other children of c's parent."""
    return [k for k in children(parent(c)) if k != c]


@dataclass(frozen=True)
class CubeSet:
    """Ordered duplicate-free cube collection (level, then index)."""

    dim: int
    cubes: tuple[DyadicCube, ...]

    @staticmethod
    def of(dim: int, cubes) -> "CubeSet":
        seen = set()
        uniq = []
        for c in cubes:
            if c.dim != dim:
                raise ValueError("dimension mismatch in cube set")
            if c not in seen:
                seen.add(c)
                uniq.append(c)
        uniq.sort(key=lambda c: (c.level, c.index))
        return CubeSet(dim, tuple(uniq))

    def __iter__(self):
        return iter(self.cubes)

    def __len__(self):
        return len(self.cubes)

    def __contains__(self, c):
        return c in self.cubes

    def union(self, other: "CubeSet") -> "CubeSet":
        return CubeSet.of(self.dim, self.cubes + other.cubes)

    def total_volume(self) -> Rational:
        return sum((c.volume for c in self.cubes), rat(0))


def maximal_cubes(s: CubeSet) -> CubeSet:
    """The members of s not strictly contained in another member."""
    out = []
    for c in s:
        if not any(o != c and contains(o, c) for o in s):
            out.append(c)
    return CubeSet.of(s.dim, out)


def cubes_within(root: DyadicCube, depth: int) -> list[DyadicCube]:
    """All subcubes of root down to `depth` generations, coarse to fine."""
    out = [root]
    frontier = [root]
    for _ in range(depth):
        nxt = []
        for c in frontier:
            nxt.extend(children(c))
        nxt.sort(key=lambda c: c.index)
        out.extend(nxt)
        frontier = nxt
    return out


def leaf_cells(root: DyadicCube, depth: int) -> list[DyadicCube]:
    """Level root.level+depth cells of root in canonical leaf order."""
    side = 1 << depth
    cells = []
    for offs in itertools.product(range(side), repeat=root.dim):
        cells.append(
            DyadicCube(
                root.dim,
                root.level + depth,
                tuple((i << depth) + o for i, o in zip(root.index, offs)),
            )
        )
    return cells


def leaf_flat_index(root: DyadicCube, depth: int, cell: DyadicCube) -> int:
    """Position of a leaf cell in canonical (lexicographic) order."""
    if cell.level != root.level + depth or not contains(root, cell):
        raise ValueError("not a leaf cell of this root/depth")
    side = 1 << depth
    flat = 0
    for axis in range(root.dim):
        rel = cell.index[axis] - (root.index[axis] << depth)
        flat = flat * side + rel
    return flat
