"""Evaluation metrics and the LogP/SAS comparison report."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import networkx as nx

from .smiles import BondOrder, MoleculeGraph, SmilesError, hydrogen_counts, is_valid_smiles, parse, validate

REPORT_ROWS = (
    "LogP Range", "Mean LogP", "LogP SD", "Validity (%)",
    "Mean SAS", "SAS STD Dev", "SAS Range", "Similarity",
)
PAIRING_NOTE = "similarity: 1 - normalized Levenshtein, each valid generated SMILES vs its nearest original"


def validity_rate(candidates: Sequence[str]) -> float:
    if not candidates:
        raise ValueError("validity_rate needs at least one candidate")
    return 100.0 * sum(is_valid_smiles(s) for s in candidates) / len(candidates)


def edit_distance(a: str, b: str) -> int:
    """Unit-cost Levenshtein distance."""
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i] + [0] * len(b)
        for j, cb in enumerate(b, 1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb))
        prev = cur
    return prev[-1]


def levenshtein_similarity(a: str, b: str) -> float:
    longest = max(len(a), len(b))
    if longest == 0:
        return 1.0
    return 1.0 - edit_distance(a, b) / longest


# --------------------------------------------------------------------------
# LogP: reduced atom-contribution table (units of 1e-4, so sums are exact).
# Values approximate the Wildman-Crippen types; ionic entries are ad hoc.

LOGP_UNITS = 10_000
LOGP_TABLE: dict[str, int] = {
    "C_primary": 1441,       # aliphatic sp3 C, >= 2 H, carbon neighbours only
    "C_tertiary": 0,         # aliphatic sp3 C, <= 1 H, carbon neighbours only
    "C_hetero": -2035,       # aliphatic sp3 C bonded to a heteroatom
    "C_unsat": 1360,         # aliphatic C with a C=C / C#C bond
    "C_unsat_hetero": -1002,  # aliphatic C double/triple bonded to a heteroatom
    "c_arom": 1581,
    "c_arom_hetero": 1360,   # aromatic c bonded to a heteroatom
    "N_amine_primary": -10190,
    "N_amine_secondary": -7096,
    "N_amine_tertiary": -3187,
    "N_unsat": -4806,        # imine, nitrile, azo
    "n_arom": -4806,
    "N_cation": -3239,
    "N_anion": -5000,
    "O_hydroxyl": -2893,
    "O_ether": -684,
    "O_carbonyl": -1526,
    "o_arom": 1552,
    "O_anion": -13260,
    "O_cation": -1000,
    "S_aliphatic": 6482,
    "S_oxidized": -24,       # S with a double bond to O
    "s_arom": 6237,
    "S_ion": -5000,
    "P": 8612,
    "F": 4202,
    "Cl": 6895,
    "Br": 8456,
    "I": 8857,
    "halide_ion": -20000,
    "B": 0,
    "Si": 3000,
    "Se": 6237,
    "As": 2000,
    "metal_ion": -3808,
    # hydrogens, by the element they sit on
    "H_C": 1230,
    "H_N": 2142,
    "H_O": -2677,
    "H_other": 1125,
}

_HALOGENS = {"F", "Cl", "Br", "I"}
_METALS = {"Li", "Na", "K", "Mg", "Ca", "Zn"}


class LogpError(ValueError):
    pass


def _atom_type(g: MoleculeGraph, i: int, adj, n_h: int) -> str:
    atom = g.atoms[i]
    el = atom.element
    nbrs = [(g.atoms[j], b) for j, b in adj[i] if g.atoms[j].element != "H"]
    multiple = [(a, b) for a, b in nbrs if b.order in (BondOrder.DOUBLE, BondOrder.TRIPLE)]
    hetero_nbr = any(a.element != "C" for a, _ in nbrs)
    if el == "C":
        if atom.aromatic:
            return "c_arom_hetero" if hetero_nbr else "c_arom"
        if multiple:
            return "C_unsat_hetero" if any(a.element != "C" for a, _ in multiple) else "C_unsat"
        if hetero_nbr:
            return "C_hetero"
        return "C_primary" if n_h >= 2 else "C_tertiary"
    if el == "N":
        if atom.charge > 0:
            return "N_cation"
        if atom.charge < 0:
            return "N_anion"
        if atom.aromatic:
            return "n_arom"
        if multiple:
            return "N_unsat"
        heavy = len(nbrs)
        return ("N_amine_primary", "N_amine_primary", "N_amine_secondary")[heavy] if heavy < 3 else "N_amine_tertiary"
    if el == "O":
        if atom.charge < 0:
            return "O_anion"
        if atom.charge > 0:
            return "O_cation"
        if atom.aromatic:
            return "o_arom"
        if multiple:
            return "O_carbonyl"
        return "O_hydroxyl" if n_h >= 1 else "O_ether"
    if el == "S":
        if atom.charge:
            return "S_ion"
        if atom.aromatic:
            return "s_arom"
        if any(a.element == "O" for a, _ in multiple):
            return "S_oxidized"
        return "S_aliphatic"
    if el in _HALOGENS:
        return "halide_ion" if atom.charge < 0 else el
    if el in _METALS:
        return "metal_ion"
    if el in ("P", "B", "Si", "Se", "As"):
        return el
    raise LogpError(f"cannot type atom {el}{atom.charge:+d} at position {atom.position}")


def _h_key(element: str) -> str:
    return {"C": "H_C", "N": "H_N", "O": "H_O"}.get(element, "H_other")


def logp_units(g: MoleculeGraph) -> list[int]:
    """Per-component LogP in units of 1e-4."""
    adj = g.neighbors()
    hs = hydrogen_counts(g)
    comps = g.component_of or (0,) * len(g.atoms)
    totals = [0] * g.components
    for i, atom in enumerate(g.atoms):
        if atom.element == "H":
            heavy = [g.atoms[j].element for j, _ in adj[i]]
            totals[comps[i]] += LOGP_TABLE[_h_key(heavy[0]) if heavy else "H_other"]
            continue
        n_h = hs[i] + sum(1 for j, _ in adj[i] if g.atoms[j].element == "H")
        kind = _atom_type(g, i, adj, n_h)
        totals[comps[i]] += LOGP_TABLE[kind] + hs[i] * LOGP_TABLE[_h_key(atom.element)]
    return totals


def logp(g: MoleculeGraph | str) -> float:
    """Atom-contribution LogP, summed per '.'-component in component order."""
    if isinstance(g, str):
        g = parse(g)
    total = 0.0
    for units in logp_units(g):
        total += units / LOGP_UNITS
    return total


# --------------------------------------------------------------------------
# SAS proxy

SAS_WEIGHTS = {
    "size": 0.30,
    "ring_count": 0.20,
    "ring_bonds": 0.15,
    "macrocycle": 0.10,
    "branching": 0.15,
    "heteroatoms": 0.10,
}
SAS_SIZE_CAP = 100
MACROCYCLE_MIN = 9


def sas_features(g: MoleculeGraph) -> dict[str, float]:
    heavy = [i for i, a in enumerate(g.atoms) if a.element != "H"]
    n = len(heavy)
    ng = g.nx_graph()
    bonds = [b for b in g.bonds if g.atoms[b.begin].element != "H" and g.atoms[b.end].element != "H"]
    bridges = {frozenset(e) for e in nx.bridges(ng)}
    ring_bonds = [b for b in bonds if frozenset((b.begin, b.end)) not in bridges]
    cycles = len(g.bonds) - len(g.atoms) + nx.number_connected_components(ng)
    macro = 0.0
    for b in g.bonds:
        if not b.ring_closure:
            continue
        ng.remove_edge(b.begin, b.end)
        try:
            ring = nx.shortest_path_length(ng, b.begin, b.end) + 1
        except nx.NetworkXNoPath:
            ring = 0
        ng.add_edge(b.begin, b.end)
        if ring >= MACROCYCLE_MIN:
            macro = 1.0
    degree = [sum(1 for j in ng[i] if g.atoms[j].element != "H") for i in heavy]
    return {
        "size": min(1.0, math.log(max(n, 1)) / math.log(SAS_SIZE_CAP)),
        "ring_count": cycles / (cycles + 2),
        "ring_bonds": len(ring_bonds) / len(bonds) if bonds else 0.0,
        "macrocycle": macro,
        "branching": sum(d >= 3 for d in degree) / n if n else 0.0,
        "heteroatoms": sum(g.atoms[i].element != "C" for i in heavy) / n if n else 0.0,
    }


def sas(g: MoleculeGraph | str) -> float:
    """Structural-complexity score in [0, 1]; methane scores 0.

    A fragment-free proxy for synthetic accessibility: a fixed weighted sum of
    size, ring count, ring-bond fraction, macrocycle presence, branching and
    heteroatom fraction.  Closing an extra ring strictly increases it.
    """
    if isinstance(g, str):
        g = parse(g)
    feats = sas_features(g)
    score = sum(SAS_WEIGHTS[k] * feats[k] for k in SAS_WEIGHTS)
    return min(1.0, max(0.0, score))


# --------------------------------------------------------------------------
# statistics and report


@dataclass(frozen=True)
class DistributionStats:
    mean: float
    std_dev: float
    min: float
    max: float
    count: int


def distribution_stats(values: Sequence[float]) -> DistributionStats:
    values = list(values)
    if not values:
        raise ValueError("distribution_stats needs at least one value")
    n = len(values)
    lo, hi = min(values), max(values)
    mu = min(hi, max(lo, math.fsum(values) / n))
    sd = math.sqrt(math.fsum((v - mu) ** 2 for v in values) / n)
    return DistributionStats(mu, sd, lo, hi, n)


@dataclass
class EvaluationReport:
    original_validity: float
    validity_percent: float
    logp_stats: dict[str, DistributionStats | None]
    sas_stats: dict[str, DistributionStats | None]
    similarity_stats: DistributionStats | None
    pairs: list[tuple[str, str, float]] = field(default_factory=list)

    def rows(self) -> list[tuple[str, str, str]]:
        def rng(s):
            return "n/a" if s is None else f"[{s.min:.4f}, {s.max:.4f}]"

        def val(s, attr):
            return "n/a" if s is None else f"{getattr(s, attr):.4f}"

        lo, lg = self.logp_stats["original"], self.logp_stats["generated"]
        so, sg = self.sas_stats["original"], self.sas_stats["generated"]
        sim = self.similarity_stats
        sim_cell = "n/a" if sim is None else f"{sim.mean:.4f} {rng(sim)}"
        return [
            ("LogP Range", rng(lo), rng(lg)),
            ("Mean LogP", val(lo, "mean"), val(lg, "mean")),
            ("LogP SD", val(lo, "std_dev"), val(lg, "std_dev")),
            ("Validity (%)", f"{self.original_validity:.2f}", f"{self.validity_percent:.2f}"),
            ("Mean SAS", val(so, "mean"), val(sg, "mean")),
            ("SAS STD Dev", val(so, "std_dev"), val(sg, "std_dev")),
            ("SAS Range", rng(so), rng(sg)),
            ("Similarity", "-", sim_cell),
        ]

    def to_tsv(self) -> str:
        lines = [f"# {PAIRING_NOTE}", "Metric\tOriginal\tGenerated"]
        lines += ["\t".join(r) for r in self.rows()]
        return "\n".join(lines) + "\n"

    def to_text(self) -> str:
        rows = [("Metric", "Original", "Generated")] + self.rows()
        widths = [max(len(r[k]) for r in rows) for k in range(3)]
        out = [PAIRING_NOTE, ""]
        for r in rows:
            out.append("  ".join(cell.ljust(w) for cell, w in zip(r, widths)).rstrip())
        return "\n".join(out) + "\n"

    def pairs_tsv(self) -> str:
        return "".join(f"{o}\t{g}\t{s:.6f}\n" for o, g, s in self.pairs)


def _valid_graphs(smiles: Sequence[str]) -> list[tuple[str, MoleculeGraph]]:
    out = []
    for s in smiles:
        try:
            g = parse(s)
        except SmilesError:
            continue
        if validate(g).valid:
            out.append((s, g))
    return out


def nearest_original(candidate: str, originals: Sequence[str]) -> tuple[int, float]:
    """Index and similarity of the most similar original; ties go to the lower index."""
    best, best_sim = -1, -1.0
    for k, o in enumerate(originals):
        sim = levenshtein_similarity(candidate, o)
        if sim > best_sim:
            best, best_sim = k, sim
    return best, best_sim


def build_report(original: Sequence[str], generated: Sequence[str]) -> EvaluationReport:
    if not original or not generated:
        raise ValueError("original and generated sets must be non-empty")
    orig_valid = _valid_graphs(original)
    gen_valid = _valid_graphs(generated)

    def stats(fn, graphs):
        return distribution_stats([fn(g) for _, g in graphs]) if graphs else None

    pairs = []
    orig_smiles = [s for s, _ in orig_valid]
    if orig_smiles:
        for s, _ in gen_valid:
            k, sim = nearest_original(s, orig_smiles)
            pairs.append((orig_smiles[k], s, sim))
    return EvaluationReport(
        original_validity=100.0 * len(orig_valid) / len(original),
        validity_percent=100.0 * len(gen_valid) / len(generated),
        logp_stats={"original": stats(logp, orig_valid), "generated": stats(logp, gen_valid)},
        sas_stats={"original": stats(sas, orig_valid), "generated": stats(sas, gen_valid)},
        similarity_stats=distribution_stats([p[2] for p in pairs]) if pairs else None,
        pairs=pairs,
    )
