"""Symbolic message algebra used by the analyzer and the simulator."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Union


@dataclass(frozen=True)
class Atom:
    name: str

    def __str__(self) -> str:
        return self.name


@dataclass(frozen=True)
class Tup:
    items: tuple

    def __str__(self) -> str:
        return "<" + ", ".join(map(str, self.items)) + ">"


@dataclass(frozen=True)
class SymEnc:
    payload: "Term"
    key: "Term"

    def __str__(self) -> str:
        return f"senc({self.payload}, {self.key})"


@dataclass(frozen=True)
class Hash:
    arg: "Term"

    def __str__(self) -> str:
        return f"h({self.arg})"


@dataclass(frozen=True)
class Kdf:
    label: str
    inputs: tuple

    def __str__(self) -> str:
        return f"kdf[{self.label}](" + ", ".join(map(str, self.inputs)) + ")"


@dataclass(frozen=True)
class Opaque:
    """Constructor outside the free algebra (XOR, DH exponentiation).

    The deduction engine neither builds nor decomposes these.
    """

    op: str
    args: tuple

    def __str__(self) -> str:
        return f"{self.op}(" + ", ".join(map(str, self.args)) + ")"


Term = Union[Atom, Tup, SymEnc, Hash, Kdf, Opaque]


@lru_cache(maxsize=None)
def sort_key(t: Term) -> tuple:
    """Total order on terms: by constructor, then structurally."""
    if isinstance(t, Atom):
        return (0, t.name)
    if isinstance(t, Tup):
        return (4, len(t.items), tuple(sort_key(i) for i in t.items))
    if isinstance(t, SymEnc):
        return (3, sort_key(t.payload), sort_key(t.key))
    if isinstance(t, Hash):
        return (1, sort_key(t.arg))
    if isinstance(t, Kdf):
        return (2, t.label, tuple(sort_key(i) for i in t.inputs))
    return (5, t.op, tuple(sort_key(i) for i in t.args))


def children(t: Term) -> tuple:
    if isinstance(t, Tup):
        return t.items
    if isinstance(t, SymEnc):
        return (t.payload, t.key)
    if isinstance(t, Hash):
        return (t.arg,)
    if isinstance(t, Kdf):
        return t.inputs
    if isinstance(t, Opaque):
        return t.args
    return ()


def subterms(t: Term) -> set:
    out = {t}
    stack = [t]
    while stack:
        for c in children(stack.pop()):
            if c not in out:
                out.add(c)
                stack.append(c)
    return out


def depth(t: Term) -> int:
    kids = children(t)
    return 1 + max(map(depth, kids)) if kids else 0


def to_json(t: Term):
    if isinstance(t, Atom):
        return {"atom": t.name}
    if isinstance(t, Tup):
        return {"tuple": [to_json(i) for i in t.items]}
    if isinstance(t, SymEnc):
        return {"senc": [to_json(t.payload), to_json(t.key)]}
    if isinstance(t, Hash):
        return {"hash": to_json(t.arg)}
    if isinstance(t, Kdf):
        return {"kdf": t.label, "inputs": [to_json(i) for i in t.inputs]}
    return {"op": t.op, "args": [to_json(i) for i in t.args]}


def from_json(obj) -> Term:
    if "atom" in obj:
        return Atom(obj["atom"])
    if "tuple" in obj:
        return Tup(tuple(from_json(i) for i in obj["tuple"]))
    if "senc" in obj:
        p, k = obj["senc"]
        return SymEnc(from_json(p), from_json(k))
    if "hash" in obj:
        return Hash(from_json(obj["hash"]))
    if "kdf" in obj:
        return Kdf(obj["kdf"], tuple(from_json(i) for i in obj["inputs"]))
    return Opaque(obj["op"], tuple(from_json(i) for i in obj["args"]))
