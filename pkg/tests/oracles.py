"""Independent reference implementations used only by the test suite."""

from __future__ import annotations

from functools import lru_cache

from nsafuzz.terms import Hash, Kdf, SymEnc, Tup, subterms


def naive_assemble(fields) -> str:
    """Bit-by-bit MSB-first packing of ``(value, width)`` pairs."""
    out = []
    for value, width in fields:
        for i in range(width - 1, -1, -1):
            out.append("1" if (value >> i) & 1 else "0")
    return "".join(out)


def naive_disassemble(bits: str, widths) -> list[int]:
    out, pos = [], 0
    for w in widths:
        v = 0
        for c in bits[pos:pos + w]:
            v = v * 2 + (c == "1")
        out.append(v)
        pos += w
    return out


class BackwardDeriver:
    """Goal-directed search over derivation trees of bounded depth.

    Shares no code with the forward closure: a term is derivable at depth
    ``d`` if it is known outright, or some rule concludes it from premises
    derivable at depth ``d - 1``.  Composition only ever builds terms in the
    finite universe (subterms of knowledge, KDF terms and the goal).
    """

    def __init__(self, initial, observed, kdf_terms, goal):
        self.base = frozenset(initial) | frozenset(observed)
        universe = set()
        for t in [*self.base, *kdf_terms, goal]:
            universe |= subterms(t)
        self.universe = frozenset(universe)
        self.tuples = [t for t in universe if isinstance(t, Tup)]
        self.ciphers = [t for t in universe if isinstance(t, SymEnc)]
        self.derivable = lru_cache(maxsize=None)(self._derivable)

    def _derivable(self, t, d: int) -> bool:
        if t in self.base:
            return True
        if d == 0:
            return False
        e = d - 1
        if t in self.universe:
            if isinstance(t, Tup) and all(self.derivable(i, e) for i in t.items):
                return True
            if isinstance(t, SymEnc) and self.derivable(t.payload, e) and self.derivable(t.key, e):
                return True
            if isinstance(t, Hash) and self.derivable(t.arg, e):
                return True
            if isinstance(t, Kdf) and all(self.derivable(i, e) for i in t.inputs):
                return True
        for tup in self.tuples:
            if t in tup.items and self.derivable(tup, e):
                return True
        for c in self.ciphers:
            if c.payload == t and self.derivable(c, e) and self.derivable(c.key, e):
                return True
        return False

    def unbounded(self, t) -> bool:
        # a shortest derivation never needs more levels than there are terms
        return self.derivable(t, len(self.universe) + 1)
