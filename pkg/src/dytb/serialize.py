"""Canonical JSON for every persistent object.

Rationals travel as reduced "num/den" strings ("num" when integral).
Canonical files are byte-stable: serialize(deserialize(x)) == x.  The
loader flags non-canonical rational spellings and reports schema
violations with their location.
"""

from __future__ import annotations

import json
from fractions import Fraction
from numbers import Rational
from typing import Any

from ._exact import rat, rat_str
from .funcspace import HolderTuple, TestFunction, from_leaf_values
from .forms import HaarBlock, PerfectForm
from .lattice import DyadicCube
from .outer import OuterFunction, OuterSpace, outer_function
from .paths import BFamily, Path


class SchemaError(ValueError):
    def __init__(self, message, location=None):
        super().__init__(message if location is None else f"{message} (at {location})")
        self.location = location


def canonical_dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")) + "\n"


def rational_to_json(x: Rational) -> str:
    return rat_str(x)


def rational_from_json(s, location="") -> tuple[Rational, bool]:
    """Parse a rational string; second value reports canonical spelling."""
    if isinstance(s, int):
        return rat(s), True
    if not isinstance(s, str):
        raise SchemaError(f"expected rational string, got {type(s).__name__}", location)
    try:
        f = Fraction(s)
    except (ValueError, ZeroDivisionError) as e:
        raise SchemaError(f"bad rational {s!r}: {e}", location) from None
    return rat(f), rat_str(f) == s


def cube_to_json(c: DyadicCube) -> dict:
    return {"dim": c.dim, "level": c.level, "index": list(c.index)}


def cube_from_json(obj, location="cube") -> DyadicCube:
    try:
        return DyadicCube(int(obj["dim"]), int(obj["level"]), tuple(int(i) for i in obj["index"]))
    except (KeyError, TypeError, ValueError) as e:
        raise SchemaError(f"bad cube: {e}", location) from None


def cube_key(c: DyadicCube) -> str:
    """Compact cube spelling for family keys: level/i1,i2,..."""
    return f"{c.level}/{','.join(str(i) for i in c.index)}"


def cube_from_key(s: str, dim: int, location="cube-key") -> DyadicCube:
    try:
        level, idx = s.split("/")
        return DyadicCube(dim, int(level), tuple(int(i) for i in idx.split(",")))
    except (ValueError, TypeError) as e:
        raise SchemaError(f"bad cube key {s!r}: {e}", location) from None


def function_to_json(f: TestFunction) -> dict:
    return {
        "root": cube_to_json(f.root),
        "N": f.resolution,
        "values": [rational_to_json(v) for v in f.values],
    }


def function_from_json(obj, location="function") -> tuple[TestFunction, bool]:
    root = cube_from_json(obj.get("root", {}), f"{location}.root")
    try:
        n = int(obj["N"])
        raw = obj["values"]
    except (KeyError, TypeError, ValueError) as e:
        raise SchemaError(f"bad function: {e}", location) from None
    canonical = True
    vals = []
    for i, s in enumerate(raw):
        v, canon = rational_from_json(s, f"{location}.values[{i}]")
        canonical = canonical and canon
        vals.append(v)
    try:
        return from_leaf_values(root, n, vals), canonical
    except ValueError as e:
        raise SchemaError(str(e), location) from None


def form_to_json(form: PerfectForm) -> dict:
    out = {
        "n": form.arity,
        "d": form.dim,
        "N": form.resolution,
        "blocks": [
            {
                "cube": cube_to_json(b.cube),
                "coeff": rational_to_json(b.coeff),
                "profiles": [[rational_to_json(v) for v in p] for p in b.profiles],
            }
            for b in form.blocks
        ],
    }
    if form.dense is not None:
        out["kernel"] = [
            {"idx": list(idx), "value": rational_to_json(v)}
            for idx, v in sorted(form.dense.items())
        ]
    return out


def form_from_json(obj, location="form") -> tuple[PerfectForm, bool]:
    try:
        n, d, N = int(obj["n"]), int(obj["d"]), int(obj["N"])
    except (KeyError, TypeError, ValueError) as e:
        raise SchemaError(f"bad form header: {e}", location) from None
    canonical = True
    blocks = []
    for bi, bobj in enumerate(obj.get("blocks", [])):
        loc = f"{location}.blocks[{bi}]"
        cube = cube_from_json(bobj.get("cube", {}), f"{loc}.cube")
        coeff, canon = rational_from_json(bobj.get("coeff", "0"), f"{loc}.coeff")
        canonical = canonical and canon
        profiles = []
        for pi, prof in enumerate(bobj.get("profiles", [])):
            vals = []
            for vi, s in enumerate(prof):
                v, canon = rational_from_json(s, f"{loc}.profiles[{pi}][{vi}]")
                canonical = canonical and canon
                vals.append(v)
            profiles.append(tuple(vals))
        meanzero = tuple(sum(p, rat(0)) == 0 for p in profiles)
        try:
            blocks.append(HaarBlock(cube, coeff, tuple(profiles), meanzero))
        except ValueError as e:
            raise SchemaError(str(e), loc) from None
    dense = None
    if "kernel" in obj:
        dense = {}
        for ki, kobj in enumerate(obj["kernel"]):
            loc = f"{location}.kernel[{ki}]"
            v, canon = rational_from_json(kobj.get("value", "0"), loc)
            canonical = canonical and canon
            dense[tuple(int(i) for i in kobj["idx"])] = v
    try:
        return PerfectForm(n, d, N, tuple(blocks), dense), canonical
    except ValueError as e:
        raise SchemaError(str(e), location) from None


def path_to_json(p: Path) -> dict:
    return {"n": p.n, "values": list(p.values)}


def path_from_json(obj, location="path") -> Path:
    try:
        return Path(int(obj["n"]), tuple(int(v) for v in obj["values"]))
    except (KeyError, TypeError, ValueError) as e:
        raise SchemaError(f"bad path: {e}", location) from None


def prefix_key_str(slots, cubes) -> str:
    return "s:" + ",".join(str(s) for s in slots) + "|Q:" + ";".join(cube_key(c) for c in cubes)


def prefix_key_from_str(s: str, dim: int, location="key") -> tuple[tuple[int, ...], tuple[DyadicCube, ...]]:
    try:
        spart, qpart = s.split("|Q:")
        slots = tuple(int(x) for x in spart[2:].split(","))
        cubes = tuple(cube_from_key(x, dim, location) for x in qpart.split(";"))
        return slots, cubes
    except (ValueError, TypeError) as e:
        raise SchemaError(f"bad prefix key {s!r}: {e}", location) from None


def bfamily_to_json(fam: BFamily, dim: int) -> dict:
    if fam.mode != "prefix":
        raise ValueError("only prefix-keyed families serialize")
    entries = {}
    for (slots, cubes), b in fam.storage.items():
        entries[prefix_key_str(slots, cubes)] = function_to_json(b)
    return {
        "exponents": [rational_to_json(rat(p)) for p in fam.exponents.exponents],
        "bound": rational_to_json(fam.bound),
        "mode": fam.mode,
        "dim": dim,
        "entries": entries,
    }


def bfamily_from_json(obj, location="bfamily") -> tuple[BFamily, bool]:
    canonical = True
    exps = []
    for i, s in enumerate(obj.get("exponents", [])):
        v, canon = rational_from_json(s, f"{location}.exponents[{i}]")
        canonical = canonical and canon
        exps.append(Fraction(v.numerator, v.denominator))
    bound, canon = rational_from_json(obj.get("bound", "1"), f"{location}.bound")
    canonical = canonical and canon
    try:
        tup = HolderTuple(tuple(exps))
    except ValueError as e:
        raise SchemaError(str(e), location) from None
    fam = BFamily(tup, bound, mode="prefix")
    dim = int(obj.get("dim", 1))
    for key, fobj in sorted(obj.get("entries", {}).items()):
        slots, cubes = prefix_key_from_str(key, dim, f"{location}.entries")
        b, canon = function_from_json(fobj, f"{location}.entries[{key}]")
        canonical = canonical and canon
        fam.insert((slots, cubes), b)
    return fam, canonical


def outer_function_to_json(F: OuterFunction) -> dict:
    return {
        "root": cube_to_json(F.space.root),
        "depth": F.space.depth,
        "value_power": rational_to_json(rat(F.value_power)),
        "cubes": [
            {"cube": cube_to_json(c), "value": rational_to_json(v)}
            for c, v in sorted(F.values.items(), key=lambda kv: (kv[0].level, kv[0].index))
        ],
    }


def outer_function_from_json(obj, location="outerfunction") -> tuple[OuterFunction, bool]:
    root = cube_from_json(obj.get("root", {}), f"{location}.root")
    space = OuterSpace(root, int(obj.get("depth", 0)))
    vp, canonical = rational_from_json(obj.get("value_power", "1"), f"{location}.value_power")
    values = {}
    for i, e in enumerate(obj.get("cubes", [])):
        c = cube_from_json(e.get("cube", {}), f"{location}.cubes[{i}]")
        v, canon = rational_from_json(e.get("value", "0"), f"{location}.cubes[{i}].value")
        canonical = canonical and canon
        values[c] = v
    return outer_function(space, values, Fraction(vp.numerator, vp.denominator)), canonical


_KIND_DETECTORS = (
    ("form", lambda o: "blocks" in o or "kernel" in o),
    ("function", lambda o: "root" in o and "values" in o),
    ("outerfunction", lambda o: "cubes" in o and "root" in o),
    ("bfamily", lambda o: "entries" in o),
    ("path", lambda o: set(o) == {"n", "values"}),
    ("report", lambda o: "schema" in o),
)


def detect_kind(obj) -> str:
    if not isinstance(obj, dict):
        raise SchemaError("top-level JSON must be an object")
    for kind, test in _KIND_DETECTORS:
        if test(obj):
            return kind
    raise SchemaError("unrecognized document shape")


def roundtrip_text(text: str) -> dict:
    """Parse, re-serialize, compare; report canonicality and identity."""
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as e:
        raise SchemaError(f"JSON parse error: {e.msg}", f"byte offset {e.pos}") from None
    kind = detect_kind(obj)
    canonical = True
    if kind == "form":
        value, canonical = form_from_json(obj)
        out = form_to_json(value)
    elif kind == "function":
        value, canonical = function_from_json(obj)
        out = function_to_json(value)
    elif kind == "outerfunction":
        value, canonical = outer_function_from_json(obj)
        out = outer_function_to_json(value)
    elif kind == "bfamily":
        value, canonical = bfamily_from_json(obj)
        out = bfamily_to_json(value, obj.get("dim", 1))
    elif kind == "path":
        value = path_from_json(obj)
        out = path_to_json(value)
    else:
        out = obj
    rendered = canonical_dumps(out)
    return {
        "kind": kind,
        "canonical_rationals": canonical,
        "byte_identical": rendered == text,
        "canonical_text": rendered,
    }
