"""SMILES -> molecular graph.

Covers the organic subset (B C N O P S F Cl Br I and aromatic b c n o p s),
bracket atoms with isotope/chirality/H-count/charge/class, branches, ring
closures (single digits and ``%nn``), bond symbols ``- = # :`` and ``.``
fragment separators.  Stereo marks (``/ \\ @``) and isotopes are accepted
and dropped.

Implicit hydrogens on organic-subset atoms: aromatic bonds count 1.5, the
bond-order sum is rounded half-up, and the atom receives enough H to reach
the smallest standard valence that is >= that sum.  Bracket atoms carry
exactly their written H count.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field

from .tokenizer import SmilesSyntaxError

AROMATIC = 1.5

ATOMIC_MASS = {
    "H": 1.008, "He": 4.0026, "Li": 6.94, "Be": 9.0122, "B": 10.81, "C": 12.011,
    "N": 14.007, "O": 15.999, "F": 18.998, "Ne": 20.180, "Na": 22.990, "Mg": 24.305,
    "Al": 26.982, "Si": 28.085, "P": 30.974, "S": 32.06, "Cl": 35.45, "Ar": 39.948,
    "K": 39.098, "Ca": 40.078, "Fe": 55.845, "Co": 58.933, "Ni": 58.693, "Cu": 63.546,
    "Zn": 65.38, "Ga": 69.723, "Ge": 72.630, "As": 74.922, "Se": 78.971, "Br": 79.904,
    "Kr": 83.798, "Sn": 118.71, "Te": 127.60, "I": 126.904, "Xe": 131.29,
}
ATOMIC_NUMBER = {
    "H": 1, "He": 2, "Li": 3, "Be": 4, "B": 5, "C": 6, "N": 7, "O": 8, "F": 9, "Ne": 10,
    "Na": 11, "Mg": 12, "Al": 13, "Si": 14, "P": 15, "S": 16, "Cl": 17, "Ar": 18, "K": 19,
    "Ca": 20, "Fe": 26, "Co": 27, "Ni": 28, "Cu": 29, "Zn": 30, "Ga": 31, "Ge": 32, "As": 33,
    "Se": 34, "Br": 35, "Kr": 36, "Sn": 50, "Te": 52, "I": 53, "Xe": 54,
}
ORGANIC = ("Cl", "Br", "B", "C", "N", "O", "P", "S", "F", "I")
AROMATIC_ORGANIC = {"b": "B", "c": "C", "n": "N", "o": "O", "p": "P", "s": "S"}
AROMATIC_BRACKET = {"b": "B", "c": "C", "n": "N", "o": "O", "p": "P", "s": "S", "se": "Se", "as": "As"}
HALOGENS = frozenset({"F", "Cl", "Br", "I"})

STANDARD_VALENCE = {
    ("B", 0): (3,), ("C", 0): (4,), ("N", 0): (3,), ("O", 0): (2,), ("P", 0): (3, 5),
    ("S", 0): (2, 4, 6), ("F", 0): (1,), ("Cl", 0): (1,), ("Br", 0): (1,), ("I", 0): (1,),
    ("N", 1): (4,), ("N", -1): (2,), ("O", 1): (3,), ("O", -1): (1,), ("C", -1): (3,),
    ("S", 1): (3,),
}

BOND_SYMBOLS = {"-": 1.0, "=": 2.0, "#": 3.0, ":": AROMATIC, "/": 1.0, "\\": 1.0}

_BRACKET = re.compile(
    r"(?P<isotope>\d+)?"
    r"(?P<symbol>[A-Z][a-z]?|se|as|[bcnops]|\*)"
    r"(?P<chiral>@(?:TH|AL|SP|TB|OH)\d+|@@?)?"
    r"(?P<hcount>H\d*)?"
    r"(?P<charge>\+\+|--|[+-]\d*)?"
    r"(?P<cls>:\d+)?$"
)


@dataclass(frozen=True)
class Atom:
    element: str
    charge: int = 0
    aromatic: bool = False
    implicit_h: int = 0


@dataclass(frozen=True)
class Bond:
    begin: int
    end: int
    order: float
    in_ring: bool = False


@dataclass
class MolGraph:
    atoms: list[Atom] = field(default_factory=list)
    bonds: list[Bond] = field(default_factory=list)

    def __post_init__(self):
        self._adj: list[list[tuple[int, float]]] | None = None

    @property
    def adjacency(self) -> list[list[tuple[int, float]]]:
        if self._adj is None:
            adj: list[list[tuple[int, float]]] = [[] for _ in self.atoms]
            for b in self.bonds:
                adj[b.begin].append((b.end, b.order))
                adj[b.end].append((b.begin, b.order))
            self._adj = adj
        return self._adj

    def degree(self, i: int) -> int:
        return len(self.adjacency[i])

    def heavy_degree(self, i: int) -> int:
        return sum(1 for j, _ in self.adjacency[i] if self.atoms[j].element != "H")

    def bond_order_sum(self, i: int) -> float:
        return math.fsum(order for _, order in self.adjacency[i])

    def n_fragments(self) -> int:
        parent = list(range(len(self.atoms)))

        def find(x):
            while parent[x] != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        for b in self.bonds:
            parent[find(b.begin)] = find(b.end)
        return len({find(i) for i in range(len(self.atoms))})

    def ring_count(self) -> int:
        """Cycle rank E - V + C."""
        return len(self.bonds) - len(self.atoms) + self.n_fragments()


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def implicit_hydrogens(element: str, charge: int, order_sum: float) -> int | None:
    """H needed to reach the next standard valence, or None if none fits."""
    valences = STANDARD_VALENCE.get((element, charge))
    if valences is None:
        return 0
    total = round_half_up(order_sum)
    for v in valences:
        if v >= total:
            return v - total
    return None


def _parse_charge(text: str | None) -> int:
    if not text:
        return 0
    if text in ("++", "--"):
        return 2 if text[0] == "+" else -2
    sign = 1 if text[0] == "+" else -1
    return sign * (int(text[1:]) if len(text) > 1 else 1)


def _parse_bracket(body: str, pos: int) -> tuple[str, int, bool, int]:
    m = _BRACKET.match(body)
    if not m:
        raise SmilesSyntaxError(f"cannot parse bracket atom [{body}]", pos)
    symbol = m.group("symbol")
    if symbol == "*":
        raise SmilesSyntaxError("wildcard atoms are not supported", pos)
    aromatic = symbol in AROMATIC_BRACKET
    element = AROMATIC_BRACKET.get(symbol, symbol)
    if element not in ATOMIC_MASS:
        raise SmilesSyntaxError(f"unknown element {symbol!r}", pos)
    h = m.group("hcount")
    hcount = 0 if not h else (int(h[1:]) if len(h) > 1 else 1)
    return element, _parse_charge(m.group("charge")), aromatic, hcount


def parse_smiles(smiles: str) -> MolGraph:
    """Parse ``smiles`` into a :class:`MolGraph`; raises :class:`SmilesSyntaxError`."""
    if not smiles:
        raise SmilesSyntaxError("empty SMILES")
    if not smiles.isascii():
        raise SmilesSyntaxError("SMILES must be ASCII")

    elements: list[str] = []
    charges: list[int] = []
    aromatic: list[bool] = []
    explicit_h: list[int | None] = []      # None for organic-subset atoms
    atom_pos: list[int] = []
    bonds: dict[tuple[int, int], float] = {}

    prev: int | None = None
    pending: tuple[str, int] | None = None  # bond symbol and its position
    branches: list[tuple[int | None, int]] = []
    rings: dict[int, tuple[int, str | None, int]] = {}

    def add_bond(a: int, b: int, symbol: str | None, pos: int) -> None:
        if a == b:
            raise SmilesSyntaxError("atom bonded to itself", pos)
        key = (min(a, b), max(a, b))
        if key in bonds:
            raise SmilesSyntaxError("duplicate bond between the same atoms", pos)
        if symbol is None:
            order = AROMATIC if aromatic[a] and aromatic[b] else 1.0
        else:
            order = BOND_SYMBOLS[symbol]
        bonds[key] = order

    def add_atom(element: str, charge: int, arom: bool, h: int | None, pos: int) -> None:
        nonlocal prev, pending
        idx = len(elements)
        elements.append(element)
        charges.append(charge)
        aromatic.append(arom)
        explicit_h.append(h)
        atom_pos.append(pos)
        if prev is not None:
            add_bond(prev, idx, pending[0] if pending else None, pos)
        elif pending is not None:
            raise SmilesSyntaxError("bond symbol without a preceding atom", pending[1])
        pending = None
        prev = idx

    i, n = 0, len(smiles)
    while i < n:
        ch = smiles[i]
        if ch == "[":
            j = smiles.find("]", i + 1)
            if j < 0:
                raise SmilesSyntaxError("unterminated bracket atom", i)
            element, charge, arom, h = _parse_bracket(smiles[i + 1 : j], i)
            add_atom(element, charge, arom, h, i)
            i = j + 1
        elif ch in AROMATIC_ORGANIC:
            add_atom(AROMATIC_ORGANIC[ch], 0, True, None, i)
            i += 1
        elif ch.isupper():
            sym = next((s for s in ORGANIC if smiles.startswith(s, i)), None)
            if sym is None:
                raise SmilesSyntaxError(f"unknown element {ch!r} outside brackets", i)
            add_atom(sym, 0, False, None, i)
            i += len(sym)
        elif ch in BOND_SYMBOLS:
            if pending is not None:
                raise SmilesSyntaxError("two consecutive bond symbols", i)
            pending = (ch, i)
            i += 1
        elif ch == "(":
            if prev is None:
                raise SmilesSyntaxError("branch without a preceding atom", i)
            branches.append((prev, i))
            i += 1
        elif ch == ")":
            if not branches:
                raise SmilesSyntaxError("unmatched ')'", i)
            if pending is not None:
                raise SmilesSyntaxError("dangling bond symbol before ')'", pending[1])
            prev, _ = branches.pop()
            i += 1
        elif ch.isdigit() or ch == "%":
            if ch == "%":
                digits = smiles[i + 1 : i + 3]
                if len(digits) != 2 or not digits.isdigit():
                    raise SmilesSyntaxError("'%' must be followed by two digits", i)
                label, width = int(digits), 3
            else:
                label, width = int(ch), 1
            if prev is None:
                raise SmilesSyntaxError("ring closure without a preceding atom", i)
            symbol = pending[0] if pending else None
            pending = None
            if label in rings:
                other, other_symbol, _ = rings.pop(label)
                if symbol and other_symbol and BOND_SYMBOLS[symbol] != BOND_SYMBOLS[other_symbol]:
                    raise SmilesSyntaxError(f"conflicting bond symbols on ring closure {label}", i)
                add_bond(other, prev, symbol or other_symbol, i)
            else:
                rings[label] = (prev, symbol, i)
            i += width
        elif ch == ".":
            if pending is not None:
                raise SmilesSyntaxError("dangling bond symbol before '.'", pending[1])
            if prev is None:
                raise SmilesSyntaxError("'.' without a preceding atom", i)
            prev = None
            i += 1
        else:
            raise SmilesSyntaxError(f"unexpected character {ch!r}", i)

    if pending is not None:
        raise SmilesSyntaxError("dangling bond symbol at end of input", pending[1])
    if branches:
        raise SmilesSyntaxError("unmatched '('", branches[-1][1])
    if rings:
        label, (_, _, pos) = next(iter(rings.items()))
        raise SmilesSyntaxError(f"unmatched ring closure {label}", pos)
    if not elements:
        raise SmilesSyntaxError("no atoms")

    order_sum = [0.0] * len(elements)
    for (a, b), order in bonds.items():
        order_sum[a] += order
        order_sum[b] += order

    atoms = []
    for k, element in enumerate(elements):
        h = explicit_h[k]
        if h is None:
            h = implicit_hydrogens(element, charges[k], order_sum[k])
            if h is None:
                raise SmilesSyntaxError(f"impossible valence on {element}", atom_pos[k])
        else:
            valences = STANDARD_VALENCE.get((element, charges[k]))
            if valences is not None and h + round_half_up(order_sum[k]) > max(valences):
                raise SmilesSyntaxError(f"impossible valence on [{element}]", atom_pos[k])
        atoms.append(Atom(element, charges[k], aromatic[k], h))

    mol = MolGraph(atoms, [Bond(a, b, order) for (a, b), order in bonds.items()])
    ring_flags = _ring_bonds(mol)
    mol.bonds = [Bond(b.begin, b.end, b.order, flag) for b, flag in zip(mol.bonds, ring_flags)]
    return mol


def _ring_bonds(mol: MolGraph) -> list[bool]:
    """A bond is in a ring iff it is not a bridge (iterative Tarjan lowlink)."""
    n = len(mol.atoms)
    adj: list[list[tuple[int, int]]] = [[] for _ in range(n)]
    for k, b in enumerate(mol.bonds):
        adj[b.begin].append((b.end, k))
        adj[b.end].append((b.begin, k))
    disc = [-1] * n
    low = [0] * n
    bridge = [False] * len(mol.bonds)
    t = 0
    for root in range(n):
        if disc[root] >= 0:
            continue
        disc[root] = low[root] = t
        t += 1
        stack = [(root, -1, iter(adj[root]))]
        while stack:
            v, via, it = stack[-1]
            advanced = False
            for w, k in it:
                if k == via:
                    continue
                if disc[w] < 0:
                    disc[w] = low[w] = t
                    t += 1
                    stack.append((w, k, iter(adj[w])))
                    advanced = True
                    break
                low[v] = min(low[v], disc[w])
            if advanced:
                continue
            stack.pop()
            if stack:
                u = stack[-1][0]
                low[u] = min(low[u], low[v])
                if low[v] > disc[u]:
                    bridge[via] = True
    return [not b for b in bridge]
