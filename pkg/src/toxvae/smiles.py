"""SMILES tokenization, parsing and valence validation.

Covers the organic subset, bracket atoms (isotope, chirality, H count,
charge, atom class), the bond symbols ``- = # : / \\``, branches, ring
closures ``0-9`` and ``%NN`` and the ``.`` component separator.  Stereo
markers are accepted and ignored; a warning is attached to the graph.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import networkx as nx
import numpy as np

PAD, SOS, EOS, UNK = "<pad>", "<sos>", "<eos>", "<unk>"
SPECIAL_TOKENS = (PAD, SOS, EOS, UNK)
DEFAULT_MAX_LENGTH = 120

ORGANIC_SUBSET = {"B", "C", "N", "O", "P", "S", "F", "Cl", "Br", "I"}
AROMATIC_ORGANIC = {"b", "c", "n", "o", "p", "s"}
AROMATIC_BRACKET = AROMATIC_ORGANIC | {"se", "as"}

# fmt: off
ELEMENTS = frozenset("""
H He Li Be B C N O F Ne Na Mg Al Si P S Cl Ar K Ca Sc Ti V Cr Mn Fe Co Ni Cu
Zn Ga Ge As Se Br Kr Rb Sr Y Zr Nb Mo Tc Ru Rh Pd Ag Cd In Sn Sb Te I Xe Cs Ba
La Ce Pr Nd Pm Sm Eu Gd Tb Dy Ho Er Tm Yb Lu Hf Ta W Re Os Ir Pt Au Hg Tl Pb Bi
Po At Rn Fr Ra Ac Th Pa U Np Pu Am Cm Bk Cf Es Fm Md No Lr Rf Db Sg Bh Hs Mt Ds
Rg Cn Nh Fl Mc Lv Ts Og
""".split())
# fmt: on

# Neutral allowed valences.  Elements missing here have no valence model and
# are reported as failures by validate().
NEUTRAL_VALENCE: dict[str, tuple[int, ...]] = {
    "H": (1,), "B": (3,), "C": (4,), "N": (3,), "O": (2,),
    "F": (1,), "Cl": (1,), "Br": (1,), "I": (1,),
    "P": (3, 5), "S": (2, 4, 6), "Se": (2, 4, 6), "As": (3, 5), "Si": (4,),
    "Li": (1,), "Na": (1,), "K": (1,), "Mg": (2,), "Ca": (2,), "Zn": (2,),
}
# Right of the carbon group a positive charge adds a bond (N+ -> 4) and a
# negative charge removes one (O- -> 1).  B, C, Si and metals lose a bond per
# unit of charge in either direction, except B- which is isoelectronic with C.
_LATE = {"N", "O", "F", "Cl", "Br", "I", "P", "S", "Se", "As"}
_METALS = {"Li", "Na", "K", "Mg", "Ca", "Zn"}


class SmilesError(ValueError):
    """Position-annotated SMILES failure."""

    def __init__(self, code: str, message: str, position: int | None = None):
        self.code = code
        self.message = message
        self.position = position
        where = f" at position {position}" if position is not None else ""
        super().__init__(f"{code}: {message}{where}")


class SequenceTooLongError(ValueError):
    pass


class TokenKind(str, enum.Enum):
    ATOM = "atom"
    BRACKET_ATOM = "bracket_atom"
    BOND = "bond"
    BRANCH_OPEN = "branch_open"
    BRANCH_CLOSE = "branch_close"
    RING_DIGIT = "ring_digit"
    RING_TWO_DIGIT = "ring_two_digit"
    DOT = "dot"


@dataclass(frozen=True)
class Token:
    kind: TokenKind
    text: str

    def __post_init__(self):
        if not self.text:
            raise ValueError("token text must be non-empty")


_SINGLE_CHAR_KINDS = {
    "-": TokenKind.BOND, "=": TokenKind.BOND, "#": TokenKind.BOND,
    ":": TokenKind.BOND, "/": TokenKind.BOND, "\\": TokenKind.BOND,
    "(": TokenKind.BRANCH_OPEN, ")": TokenKind.BRANCH_CLOSE,
    ".": TokenKind.DOT,
}


def tokenize(s: str) -> list[Token]:
    """Split a SMILES string into tokens.

    ``Cl``, ``Br``, bracket atoms and ``%NN`` ring labels are single tokens,
    everything else is one character.  Joining the token texts gives back
    ``s`` exactly.  Raises :class:`SmilesError` with the offending position
    for characters outside the grammar alphabet.
    """
    tokens: list[Token] = []
    i, n = 0, len(s)
    while i < n:
        ch = s[i]
        if ch == "[":
            j = s.find("]", i + 1)
            if j < 0:
                raise SmilesError("syntax", "unterminated bracket atom", i)
            if "[" in s[i + 1 : j]:
                raise SmilesError("syntax", "nested '[' in bracket atom", i)
            tokens.append(Token(TokenKind.BRACKET_ATOM, s[i : j + 1]))
            i = j + 1
        elif s.startswith(("Cl", "Br"), i):
            tokens.append(Token(TokenKind.ATOM, s[i : i + 2]))
            i += 2
        elif ch in ORGANIC_SUBSET or ch in AROMATIC_ORGANIC:
            tokens.append(Token(TokenKind.ATOM, ch))
            i += 1
        elif ch.isdigit() and ch.isascii():
            tokens.append(Token(TokenKind.RING_DIGIT, ch))
            i += 1
        elif ch == "%":
            label = s[i + 1 : i + 3]
            if len(label) != 2 or not (label.isascii() and label.isdigit()):
                raise SmilesError("syntax", "'%' must be followed by two digits", i)
            tokens.append(Token(TokenKind.RING_TWO_DIGIT, s[i : i + 3]))
            i += 3
        elif ch in _SINGLE_CHAR_KINDS:
            tokens.append(Token(_SINGLE_CHAR_KINDS[ch], ch))
            i += 1
        else:
            raise SmilesError("syntax", f"unexpected character {ch!r}", i)
    return tokens


def detokenize(tokens: Iterable[Token | str]) -> str:
    return "".join(t if isinstance(t, str) else t.text for t in tokens)


@dataclass(frozen=True)
class TokenVocabulary:
    tokens: tuple[str, ...]
    max_length: int = DEFAULT_MAX_LENGTH
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if tuple(self.tokens[:4]) != SPECIAL_TOKENS:
            raise ValueError(f"vocabulary must start with {SPECIAL_TOKENS}")
        if len(set(self.tokens)) != len(self.tokens):
            raise ValueError("vocabulary tokens must be unique")
        if self.max_length < 3:
            raise ValueError("max_length must allow SOS, one token and EOS")
        object.__setattr__(self, "_index", {t: i for i, t in enumerate(self.tokens)})

    pad_id, start_id, end_id, unknown_id = 0, 1, 2, 3

    def __len__(self) -> int:
        return len(self.tokens)

    def index(self, token: Token | str) -> int:
        text = token if isinstance(token, str) else token.text
        return self._index.get(text, self.unknown_id)

    def encode_ids(self, tokens: Sequence[Token]) -> list[int]:
        """SOS + token ids + EOS (no padding).  Unknown tokens map to UNK."""
        return [self.start_id, *(self.index(t) for t in tokens), self.end_id]

    def token_text(self, idx: int) -> str:
        return self.tokens[idx]

    def save(self, path: str | Path) -> None:
        Path(path).write_text("\n".join(self.tokens) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path, max_length: int = DEFAULT_MAX_LENGTH) -> "TokenVocabulary":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        return cls(tuple(lines), max_length)


def build_vocabulary(smiles: Iterable[str], max_length: int = DEFAULT_MAX_LENGTH) -> TokenVocabulary:
    seen: set[str] = set()
    longest = 0
    for s in smiles:
        toks = tokenize(s)
        longest = max(longest, len(toks))
        seen.update(t.text for t in toks)
    if longest + 2 > max_length:
        raise SequenceTooLongError(
            f"longest corpus string has {longest} tokens; max_length {max_length} "
            f"needs to be at least {longest + 2}"
        )
    return TokenVocabulary(SPECIAL_TOKENS + tuple(sorted(seen)), max_length)


def tokenize_ids(s: str, vocab: TokenVocabulary) -> list[int]:
    return vocab.encode_ids(tokenize(s))


def encode_one_hot(tokens: Sequence[Token], vocab: TokenVocabulary) -> np.ndarray:
    """One-hot matrix of shape ``(max_length, len(vocab))``: SOS, tokens, EOS, PAD..."""
    if len(tokens) > vocab.max_length - 2:
        raise SequenceTooLongError(
            f"{detokenize(tokens)!r} has {len(tokens)} tokens, "
            f"limit is {vocab.max_length - 2}"
        )
    ids = vocab.encode_ids(tokens)
    ids += [vocab.pad_id] * (vocab.max_length - len(ids))
    out = np.zeros((vocab.max_length, len(vocab)))
    out[np.arange(vocab.max_length), ids] = 1.0
    return out


def decode_one_hot(matrix: np.ndarray, vocab: TokenVocabulary) -> list[str]:
    """Token texts between SOS and EOS of a one-hot (or logit) matrix."""
    out = []
    for idx in np.argmax(matrix, axis=1):
        if idx == vocab.end_id:
            break
        if idx in (vocab.start_id, vocab.pad_id):
            continue
        out.append(vocab.token_text(int(idx)))
    return out


# --------------------------------------------------------------------------
# Molecular graph


class BondOrder(enum.Enum):
    SINGLE = 1
    DOUBLE = 2
    TRIPLE = 3
    AROMATIC = "aromatic"


_BOND_SYMBOLS = {
    "-": BondOrder.SINGLE, "/": BondOrder.SINGLE, "\\": BondOrder.SINGLE,
    "=": BondOrder.DOUBLE, "#": BondOrder.TRIPLE, ":": BondOrder.AROMATIC,
}


@dataclass(frozen=True)
class Atom:
    element: str
    charge: int = 0
    aromatic: bool = False
    explicit_hydrogens: int = 0
    bracket: bool = False
    position: int = 0


@dataclass(frozen=True)
class Bond:
    begin: int
    end: int
    order: BondOrder
    ring_closure: bool = False


@dataclass(frozen=True)
class MoleculeGraph:
    atoms: tuple[Atom, ...]
    bonds: tuple[Bond, ...]
    components: int
    component_of: tuple[int, ...] = ()
    warnings: tuple[str, ...] = ()

    def neighbors(self) -> list[list[tuple[int, Bond]]]:
        adj: list[list[tuple[int, Bond]]] = [[] for _ in self.atoms]
        for b in self.bonds:
            adj[b.begin].append((b.end, b))
            adj[b.end].append((b.begin, b))
        return adj

    def nx_graph(self) -> nx.Graph:
        g = nx.Graph()
        g.add_nodes_from(range(len(self.atoms)))
        g.add_edges_from((b.begin, b.end) for b in self.bonds)
        return g

    def component(self, k: int) -> "MoleculeGraph":
        """Sub-graph of the k-th '.'-separated fragment."""
        keep = [i for i, c in enumerate(self.component_of) if c == k]
        remap = {old: new for new, old in enumerate(keep)}
        bonds = tuple(
            Bond(remap[b.begin], remap[b.end], b.order, b.ring_closure)
            for b in self.bonds
            if b.begin in remap and b.end in remap
        )
        return MoleculeGraph(
            tuple(self.atoms[i] for i in keep), bonds, 1, (0,) * len(keep), self.warnings
        )


_BRACKET_RE = re.compile(
    r"""^\[
    (?P<isotope>\d+)?
    (?P<symbol>[A-Z][a-z]?|se|as|[bcnops])
    (?P<chiral>@(?:@|TH[12]|AL[12]|SP[1-3]|TB\d{1,2}|OH\d{1,2})?)?
    (?P<hcount>H\d?)?
    (?P<charge>\+\+|--|[+-]\d{0,2})?
    (?::\d+)?
    \]$""",
    re.VERBOSE,
)


def _parse_bracket(text: str, position: int) -> tuple[Atom, bool]:
    m = _BRACKET_RE.match(text)
    if m is None:
        raise SmilesError("syntax", f"malformed bracket atom {text}", position)
    symbol = m["symbol"]
    aromatic = symbol.islower()
    element = symbol.capitalize() if aromatic else symbol
    if element not in ELEMENTS:
        raise SmilesError("syntax", f"unknown element {symbol!r}", position)
    hcount = 0
    if m["hcount"]:
        hcount = int(m["hcount"][1:] or 1)
    charge = 0
    if m["charge"]:
        c = m["charge"]
        if c in ("++", "--"):
            charge = 2 if c == "++" else -2
        else:
            sign = 1 if c[0] == "+" else -1
            charge = sign * int(c[1:] or 1)
    if not -4 <= charge <= 4:
        raise SmilesError("charge", f"charge {charge:+d} outside [-4, +4]", position)
    return Atom(element, charge, aromatic, hcount, True, position), m["chiral"] is not None


def parse(s: str) -> MoleculeGraph:
    """Parse SMILES into a :class:`MoleculeGraph`.

    Raises :class:`SmilesError` (codes ``syntax``, ``unmatched_ring``,
    ``unmatched_paren``, ``charge``, ``empty``) with the character position
    of the problem.
    """
    if not s:
        raise SmilesError("empty", "empty SMILES string", 0)
    tokens = tokenize(s)

    atoms: list[Atom] = []
    bonds: list[Bond] = []
    bonded: set[frozenset[int]] = set()
    component_of: list[int] = []
    warnings: list[str] = []
    stereo = False

    prev: int | None = None
    pending: tuple[BondOrder, int] | None = None
    stack: list[tuple[int, int, int]] = []  # (atom, position, atoms-at-open)
    rings: dict[str, tuple[int, BondOrder | None, int]] = {}
    component = 0
    pos = 0

    def add_bond(a: int, b: int, order: BondOrder | None, at: int, ring: bool = False):
        if a == b:
            raise SmilesError("syntax", "ring closure bonds an atom to itself", at)
        key = frozenset((a, b))
        if key in bonded:
            raise SmilesError("syntax", "duplicate bond between the same atoms", at)
        if order is None:
            both = atoms[a].aromatic and atoms[b].aromatic
            order = BondOrder.AROMATIC if both else BondOrder.SINGLE
        bonded.add(key)
        bonds.append(Bond(min(a, b), max(a, b), order, ring))

    for tok in tokens:
        kind, text = tok.kind, tok.text
        if kind in (TokenKind.ATOM, TokenKind.BRACKET_ATOM):
            if kind is TokenKind.ATOM:
                aromatic = text.islower()
                atom = Atom(text.capitalize() if aromatic else text, 0, aromatic, 0, False, pos)
            else:
                atom, chiral = _parse_bracket(text, pos)
                stereo = stereo or chiral
            atoms.append(atom)
            component_of.append(component)
            idx = len(atoms) - 1
            if prev is not None:
                add_bond(prev, idx, pending[0] if pending else None, pos)
            pending = None
            prev = idx
        elif kind is TokenKind.BOND:
            if prev is None:
                raise SmilesError("syntax", f"bond {text!r} without a preceding atom", pos)
            if pending is not None:
                raise SmilesError("syntax", "consecutive bond symbols", pos)
            stereo = stereo or text in "/\\"
            pending = (_BOND_SYMBOLS[text], pos)
        elif kind is TokenKind.BRANCH_OPEN:
            if prev is None:
                raise SmilesError("syntax", "branch without a preceding atom", pos)
            if pending is not None:
                raise SmilesError("syntax", "bond symbol before '('", pos)
            stack.append((prev, pos, len(atoms)))
        elif kind is TokenKind.BRANCH_CLOSE:
            if not stack:
                raise SmilesError("unmatched_paren", "')' without matching '('", pos)
            if pending is not None:
                raise SmilesError("syntax", "dangling bond before ')'", pending[1])
            anchor, open_pos, n_before = stack.pop()
            if len(atoms) == n_before:
                raise SmilesError("syntax", "empty branch", open_pos)
            prev = anchor
        elif kind in (TokenKind.RING_DIGIT, TokenKind.RING_TWO_DIGIT):
            if prev is None:
                raise SmilesError("syntax", "ring closure without a preceding atom", pos)
            label = text.lstrip("%")
            order = pending[0] if pending else None
            if label in rings:
                other, open_order, _ = rings.pop(label)
                if order and open_order and order != open_order:
                    raise SmilesError("syntax", f"conflicting bond orders on ring {label}", pos)
                add_bond(other, prev, order or open_order, pos, ring=True)
            else:
                rings[label] = (prev, order, pos)
            pending = None
        else:  # dot
            if prev is None:
                raise SmilesError("syntax", "empty component before '.'", pos)
            if pending is not None:
                raise SmilesError("syntax", "dangling bond before '.'", pending[1])
            if stack:
                raise SmilesError("unmatched_paren", "'.' inside an open branch", stack[-1][1])
            prev = None
            component += 1
        pos += len(text)

    if pending is not None:
        raise SmilesError("syntax", "dangling bond at end of string", pending[1])
    if stack:
        raise SmilesError("unmatched_paren", "'(' is never closed", stack[-1][1])
    if rings:
        label, (_, _, at) = min(rings.items(), key=lambda kv: kv[1][2])
        raise SmilesError("unmatched_ring", f"unmatched ring digit {label}", at)
    if prev is None:
        raise SmilesError("syntax", "empty component after '.'", len(s))
    if stereo:
        warnings.append("stereo markers ignored")
    return MoleculeGraph(tuple(atoms), tuple(bonds), component + 1, tuple(component_of), tuple(warnings))


# --------------------------------------------------------------------------
# Validation


@dataclass(frozen=True)
class Failure:
    code: str
    message: str
    position: int | None = None


@dataclass(frozen=True)
class ValidityReport:
    failures: tuple[Failure, ...] = ()

    @property
    def valid(self) -> bool:
        return not self.failures


def allowed_valences(element: str, charge: int) -> tuple[int, ...] | None:
    base = NEUTRAL_VALENCE.get(element)
    if base is None:
        return None
    if charge == 0:
        return base
    if element in _LATE:
        shifted = [v + charge for v in base]
    elif element == "B" and charge < 0:
        shifted = [v - charge for v in base]
    elif element in _METALS or element == "H":
        shifted = [v - charge for v in base]
    else:
        shifted = [v - abs(charge) for v in base]
    out = tuple(v for v in shifted if v >= 0)
    return out or None


@dataclass(frozen=True)
class _Valence:
    # Sum of bond orders per atom after Kekulé assignment, plus failures.
    totals: tuple[int, ...]
    failures: tuple[Failure, ...]


def _kekulize(g: MoleculeGraph) -> _Valence:
    adj = g.neighbors()
    failures: list[Failure] = []
    base = []
    for i, atom in enumerate(g.atoms):
        total = atom.explicit_hydrogens
        for _, b in adj[i]:
            total += 1 if b.order is BondOrder.AROMATIC else b.order.value
        base.append(total)

    aromatic_bonds = [b for b in g.bonds if b.order is BondOrder.AROMATIC]
    if not aromatic_bonds and not any(a.aromatic for a in g.atoms):
        return _Valence(tuple(base), ())

    ring_edges = _ring_edges(g)
    for b in aromatic_bonds:
        if frozenset((b.begin, b.end)) not in ring_edges:
            failures.append(Failure("valence", "aromatic bond outside a ring", g.atoms[b.begin].position))
    needs = set()
    for i, atom in enumerate(g.atoms):
        if not atom.aromatic:
            continue
        if not any(b.order is BondOrder.AROMATIC for _, b in adj[i]):
            failures.append(Failure("valence", f"aromatic {atom.element} outside a ring", atom.position))
            continue
        allowed = allowed_valences(atom.element, atom.charge)
        if allowed is None:
            continue
        fits = [v for v in allowed if v >= base[i]]
        if fits and fits[0] - base[i] >= 1:
            needs.add(i)

    sub = nx.Graph()
    sub.add_nodes_from(needs)
    sub.add_edges_from(
        (b.begin, b.end) for b in aromatic_bonds if b.begin in needs and b.end in needs
    )
    matching = nx.max_weight_matching(sub, maxcardinality=True)
    matched = {i for edge in matching for i in edge}
    for i in sorted(needs - matched):
        failures.append(
            Failure("valence", f"cannot kekulize aromatic {g.atoms[i].element}", g.atoms[i].position)
        )
    totals = tuple(t + (1 if i in matched else 0) for i, t in enumerate(base))
    return _Valence(totals, tuple(failures))


def _ring_edges(g: MoleculeGraph) -> set[frozenset[int]]:
    ng = g.nx_graph()
    bridges = {frozenset(e) for e in nx.bridges(ng)}
    return {frozenset((b.begin, b.end)) for b in g.bonds} - bridges


def validate(g: MoleculeGraph) -> ValidityReport:
    """Check connectivity and per-atom valence; failures are collected, never raised."""
    failures: list[Failure] = []
    if not g.atoms:
        return ValidityReport((Failure("empty", "molecule has no atoms"),))
    seen: set[frozenset[int]] = set()
    for b in g.bonds:
        if not (0 <= b.begin < len(g.atoms) and 0 <= b.end < len(g.atoms)):
            failures.append(Failure("syntax", f"bond ({b.begin}, {b.end}) out of range"))
            continue
        if b.begin == b.end:
            failures.append(Failure("syntax", "self bond", g.atoms[b.begin].position))
        key = frozenset((b.begin, b.end))
        if key in seen:
            failures.append(Failure("syntax", "duplicate bond", g.atoms[b.begin].position))
        seen.add(key)
    if failures:
        return ValidityReport(tuple(failures))

    for atom in g.atoms:
        if not -4 <= atom.charge <= 4:
            failures.append(Failure("charge", f"charge {atom.charge:+d} out of range", atom.position))
    kek = _kekulize(g)
    failures.extend(kek.failures)
    adj = g.neighbors()
    for i, (atom, total) in enumerate(zip(g.atoms, kek.totals)):
        allowed = allowed_valences(atom.element, atom.charge)
        if _is_neutral_nitro(g, i, adj):
            allowed = (5,)
        if allowed is None:
            failures.append(
                Failure("valence", f"no valence model for {atom.element}{atom.charge:+d}", atom.position)
            )
        elif total > max(allowed):
            failures.append(
                Failure(
                    "valence",
                    f"{atom.element} has valence {total}, allowed {'/'.join(map(str, allowed))}",
                    atom.position,
                )
            )
    return ValidityReport(tuple(failures))


def _is_neutral_nitro(g: MoleculeGraph, i: int, adj) -> bool:
    # N(=O)=O is read as the charge-separated [N+](=O)[O-] form.
    atom = g.atoms[i]
    if atom.element != "N" or atom.charge or atom.aromatic or atom.explicit_hydrogens:
        return False
    oxo = [
        j for j, b in adj[i]
        if b.order is BondOrder.DOUBLE and g.atoms[j].element == "O"
        and g.atoms[j].charge == 0 and len(adj[j]) == 1
    ]
    return len(oxo) == 2 and len(adj[i]) == 3


def hydrogen_counts(g: MoleculeGraph) -> list[int]:
    """Total hydrogens per atom: explicit for bracket atoms, implicit fill otherwise."""
    totals = _kekulize(g).totals
    out = []
    for atom, total in zip(g.atoms, totals):
        if atom.bracket:
            out.append(atom.explicit_hydrogens)
            continue
        allowed = allowed_valences(atom.element, atom.charge) or (total,)
        fits = [v for v in allowed if v >= total]
        out.append(fits[0] - total if fits else 0)
    return out


def bond_totals(g: MoleculeGraph) -> list[int]:
    """Per-atom sum of bond orders after Kekulé assignment (hydrogens excluded)."""
    totals = _kekulize(g).totals
    return [t - a.explicit_hydrogens for a, t in zip(g.atoms, totals)]


def is_valid_smiles(s: str) -> bool:
    try:
        g = parse(s)
    except SmilesError:
        return False
    return validate(g).valid


def load_golden(path: str | Path) -> list[tuple[str, bool, str]]:
    """Read ``smiles<TAB>valid{0,1}<TAB>note`` lines."""
    rows = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip() or line.startswith("#"):
            continue
        smi, flag, *note = line.split("\t")
        rows.append((smi, flag == "1", note[0] if note else ""))
    return rows
