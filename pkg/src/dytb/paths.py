"""Paths in I_n, admissible collections, nested cube tuples, b-families.

Slot values carried by paths are 1-based (elements of I_n = {1..n}),
matching the JSON wire format; code that indexes function tuples
converts at the boundary.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from numbers import Rational
from typing import Callable, Optional

from ._exact import rat, rat_from_mpf
from .funcspace import (
    HolderTuple,
    TestFunction,
    _leaf_positions,
    common_resolution,
    integral,
    lp_power,
    lp_power_approx,
)
from .lattice import DyadicCube, contains
from .forms import ValidationReport


@dataclass(frozen=True)
class Path:
    """Injective map I_k -> I_n, stored as the value tuple (1-based)."""

    n: int
    values: tuple[int, ...]

    def __post_init__(self):
        k = len(self.values)
        if not 1 <= k <= self.n:
            raise ValueError("length must lie in [1, n]")
        if any(not 1 <= v <= self.n for v in self.values):
            raise ValueError("values must lie in I_n")
        if len(set(self.values)) != k:
            raise ValueError("path must be injective")

    @property
    def length(self) -> int:
        return len(self.values)

    def prefix(self, j: int) -> "Path":
        return Path(self.n, self.values[:j])

    def last_two_swapped(self) -> "Path":
        if self.length < 2:
            raise ValueError("need length >= 2")
        v = list(self.values)
        v[-1], v[-2] = v[-2], v[-1]
        return Path(self.n, tuple(v))


@dataclass(frozen=True)
class PathCollection:
    n: int
    paths: tuple[Path, ...]

    @staticmethod
    def of(n: int, paths) -> "PathCollection":
        seen = set()
        uniq = []
        for p in paths:
            if p.n != n:
                raise ValueError("path n mismatch")
            if p.values not in seen:
                seen.add(p.values)
                uniq.append(p)
        uniq.sort(key=lambda p: (p.length, p.values))
        return PathCollection(n, tuple(uniq))

    def __iter__(self):
        return iter(self.paths)

    def __len__(self):
        return len(self.paths)

    def __contains__(self, p: Path):
        return any(q.values == p.values for q in self.paths)

    def of_length(self, k: int) -> list[Path]:
        return [p for p in self.paths if p.length == k]


def validate_admissible(collection: PathCollection) -> tuple[bool, Optional[dict]]:
    """Check the three closure conditions; first violation is the witness."""
    n = collection.n
    have = {p.values for p in collection}
    for j in range(1, n + 1):
        if (j,) not in have:
            return False, {"condition": 1, "missing_start": j}
    for p in collection:
        if p.length < n:
            if not any(q[: p.length] == p.values for q in have if len(q) == p.length + 1):
                return False, {"condition": 2, "path": p}
    for p in collection:
        if p.length >= 2 and p.last_two_swapped().values not in have:
            return False, {"condition": 3, "path": p}
    return True, None


def build_example_collection(n: int) -> PathCollection:
    """All paths whose range at length k contains I_{k-1} and whose image
    of I_j meets I_j in at least j-1 points for every j <= k."""
    if n < 2:
        raise ValueError("n must be >= 2")
    if n > 8:
        raise ValueError("exhaustive enumeration is capped at n = 8")
    paths = []
    universe = range(1, n + 1)
    for k in range(1, n + 1):
        for values in itertools.permutations(universe, k):
            if not set(range(1, k)).issubset(set(values)):
                continue
            ok = True
            for j in range(1, k + 1):
                if len(set(values[:j]) & set(range(1, j + 1))) < j - 1:
                    ok = False
                    break
            if ok:
                paths.append(Path(n, values))
    return PathCollection.of(n, paths)


@dataclass(frozen=True)
class NestedTuple:
    """n cubes nested along a path: decreasing on the range, constant off it."""

    path: Path
    cubes: tuple[DyadicCube, ...]

    def __post_init__(self):
        if len(self.cubes) != self.path.n:
            raise ValueError("need one cube per slot")

    def cube_of_slot(self, j: int) -> DyadicCube:
        return self.cubes[j - 1]

    @property
    def chain(self) -> tuple[DyadicCube, ...]:
        return tuple(self.cube_of_slot(v) for v in self.path.values)


def validate_nested(t: NestedTuple) -> tuple[bool, Optional[str]]:
    sigma = t.path
    k, n = sigma.length, sigma.n
    for i in range(1, k + 1):
        for j in range(i + 1, k + 1):
            if not contains(
                t.cube_of_slot(sigma.values[i - 1]), t.cube_of_slot(sigma.values[j - 1])
            ):
                return False, f"chain not nested at positions {i},{j}"
    last = t.cube_of_slot(sigma.values[k - 1])
    in_range = set(sigma.values)
    for s in range(1, n + 1):
        if s not in in_range and t.cube_of_slot(s) != last:
            return False, f"off-range slot {s} must carry the last chain cube"
    if k == n and t.cube_of_slot(sigma.values[n - 2]) != t.cube_of_slot(sigma.values[n - 1]):
        return False, "full-length tuples need the last two cubes equal"
    return True, None


def nested_tuple(path: Path, chain: tuple[DyadicCube, ...]) -> NestedTuple:
    """Build the sigma-nested tuple whose chain along the path is given."""
    if len(chain) != path.length:
        raise ValueError("chain length must match path length")
    cubes: list[Optional[DyadicCube]] = [None] * path.n
    for pos, slot in enumerate(path.values):
        cubes[slot - 1] = chain[pos]
    last = chain[-1]
    for s in range(path.n):
        if cubes[s] is None:
            cubes[s] = last
    t = NestedTuple(path, tuple(cubes))
    ok, why = validate_nested(t)
    if not ok:
        raise ValueError(why)
    return t


PrefixKey = tuple[tuple[int, ...], tuple[DyadicCube, ...]]


def _entry_violation(b: TestFunction, cube: DyadicCube, p, bound: Rational) -> Optional[str]:
    """Name of the violated insertion condition, or None."""
    inside = set(_leaf_positions(b.root, b.resolution, cube))
    if any(v != 0 for i, v in enumerate(b.values) if i not in inside):
        return "support"
    if integral(b, cube) != cube.volume:
        return "mean"
    power = lp_power(b, p)
    if power is not None:
        if power > bound * cube.volume:
            return "normbound"
    elif rat_from_mpf(lp_power_approx(b, p)) > bound * cube.volume * (1 + rat(1, 1 << 100)):
        return "normbound"
    return None


class BFamily:
    """Testing-function storage keyed by path/chain prefixes.

    In the default prefix mode the interdependence identity holds by
    construction: the function for position j depends only on the prefix
    (sigma(1..j), Q_{sigma(1)}..Q_{sigma(j)}).  The permissive explicit
    mode stores per-(path, chain, position) values so the validator
    itself can be exercised.  Insertion enforces the support, mean and
    norm-bound conditions exactly.
    """

    def __init__(
        self,
        exponents: HolderTuple,
        bound: Rational,
        mode: str = "prefix",
        provider: Optional[Callable[[PrefixKey], TestFunction]] = None,
    ):
        if mode not in ("prefix", "explicit"):
            raise ValueError("mode must be 'prefix' or 'explicit'")
        self.exponents = exponents
        self.bound = rat(bound)
        self.mode = mode
        self.provider = provider
        self.storage: dict = {}

    def insert(self, key: PrefixKey, b: TestFunction) -> None:
        slots, cubes = key
        if len(slots) != len(cubes) or not slots:
            raise ValueError("key must pair slots with cubes, nonempty")
        problem = _entry_violation(b, cubes[-1], self.exponents[slots[-1] - 1], self.bound)
        if problem is not None:
            raise ValueError(f"testing function violates the {problem} condition")
        self.storage[key] = b

    def insert_explicit(
        self, path: Path, chain: tuple[DyadicCube, ...], pos: int, b: TestFunction
    ) -> None:
        """Store the function for (path, chain, position) verbatim."""
        if self.mode != "explicit":
            raise ValueError("explicit insertion needs explicit mode")
        slot = path.values[pos - 1]
        problem = _entry_violation(b, chain[pos - 1], self.exponents[slot - 1], self.bound)
        if problem is not None:
            raise ValueError(f"testing function violates the {problem} condition")
        self.storage[(path.values, chain, pos)] = b

    def get(self, path: Path, chain: tuple[DyadicCube, ...], pos: int) -> TestFunction:
        """Function for position pos (1-based) along the given path/chain."""
        if not 1 <= pos <= len(chain):
            raise ValueError("position out of range")
        if self.mode == "explicit":
            return self.storage[(path.values, chain, pos)]
        key = (path.values[:pos], tuple(chain[:pos]))
        if key in self.storage:
            return self.storage[key]
        if self.provider is not None:
            b = self.provider(key)
            self.insert(key, b)
            return b
        raise KeyError(key)

    def keys(self):
        return list(self.storage)


def validate_bfamily(family: BFamily, collection: PathCollection, k: int) -> ValidationReport:
    """Re-check support/mean/norm on every entry; in explicit mode also
    check the pairwise interdependence equalities across shared prefixes."""
    worst = rat(0)
    for key, b in family.storage.items():
        if family.mode == "prefix":
            slots, cubes = key
            slot, cube = slots[-1], cubes[-1]
        else:
            values, chain, pos = key
            slot, cube = values[pos - 1], chain[pos - 1]
        p = family.exponents[slot - 1]
        problem = _entry_violation(b, cube, p, family.bound)
        if problem is not None:
            return ValidationReport("bfamily", False, {"key": key, "violated": problem}, None)
        power = lp_power(b, p)
        if power is not None:
            ratio = power / cube.volume
            worst = max(worst, ratio)
    if family.mode == "explicit":
        by_prefix: dict = {}
        for (values, chain, pos), b in family.storage.items():
            by_prefix.setdefault((values[:pos], tuple(chain[:pos])), []).append(((values, chain, pos), b))
        for prefix, entries in by_prefix.items():
            first_key, first = entries[0]
            for other_key, other in entries[1:]:
                a, bb = common_resolution(first, other)
                if a.values != bb.values:
                    return ValidationReport(
                        "bfamily",
                        False,
                        {"prefix": prefix, "violated": "interdependence", "keys": [first_key, other_key]},
                        None,
                    )
    return ValidationReport("bfamily", True, None, worst, {"entries": len(family.storage)})


def derive_reduced_family(
    family: BFamily, collection: PathCollection, k_plus_1: int
) -> BFamily:
    """Length-k family from a length-(k+1) family via any extension.

    Prefix mode reduces by key truncation, which is always well defined.
    Explicit mode groups entries over all extensions sharing a prefix and
    verifies they agree exactly; disagreement (an interdependence
    violation) or a missing extension (an admissibility defect) raises.
    """
    k = k_plus_1 - 1
    if k < 1:
        raise ValueError("cannot reduce below length 1")
    out = BFamily(family.exponents, family.bound, mode=family.mode, provider=family.provider)
    if family.mode == "prefix":
        for key, b in family.storage.items():
            if len(key[0]) <= k - 1:
                out.storage[key] = b
        return out
    for tilde in collection.of_length(k):
        if not any(
            q.length == k + 1 and q.values[:k] == tilde.values for q in collection
        ):
            raise ValueError(
                f"collection defect: no admissible extension of {tilde.values}"
            )
    grouped: dict = {}
    for (values, chain, pos), b in family.storage.items():
        if len(values) != k + 1 or pos >= k + 1:
            continue
        if pos > k - 1:
            continue
        grouped.setdefault((values[:k], chain[:k], pos), []).append(b)
    for (tvalues, tchain, pos), entries in grouped.items():
        first = entries[0]
        for other in entries[1:]:
            a, b = common_resolution(first, other)
            if a.values != b.values:
                raise ValueError(
                    f"interdependence violation: extensions of prefix {tvalues} disagree"
                )
        out.storage[(tvalues, tuple(tchain), pos)] = first
    return out
