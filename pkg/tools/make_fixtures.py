"""Regenerate the shipped SMILES fixtures.

Requires RDKit, which is *not* a runtime dependency: it is used here once as
an independent labeller for ``smiles_golden.tsv`` and to canonicalize the
training corpus.  Run from the repository root::

    python tools/make_fixtures.py
"""

import random
from pathlib import Path

from rdkit import Chem, RDLogger

RDLogger.DisableLog("rdApp.*")

OUT = Path(__file__).resolve().parents[1] / "src" / "toxvae" / "fixtures"

SCAFFOLDS = [
    "c1ccc({})cc1{}", "c1cc({})ccc1{}", "c1ccncc1{}", "c1cc({})ncc1{}", "c1ccc({})nc1",
    "c1ccsc1{}", "c1ccoc1{}", "c1cc[nH]c1{}", "c1ncc({})cn1", "c1nc({})sc1{}",
    "C1CCC(CC1){}", "C1CCN(CC1){}", "C1COCCN1{}", "C1CCCC1{}", "C1CC1{}",
    "c1ccc2ccccc2c1{}", "c1ccc2[nH]ccc2c1{}", "c1ccc2ncccc2c1{}", "O=C1CCCN1{}",
    "c1cnc(nc1){}", "c1ccc(cc1)Oc1ccc({})cc1", "c1cn(cn1){}", "N1C(=O)NC(=O)C1{}",
    "C({})C({})", "CC(C)({})", "C=C({})", "C(=O)({})", "c1cc({})c({})cc1{}",
]
SUBSTITUENTS = [
    "", "", "C", "CC", "CCC", "C(C)C", "O", "OC", "OCC", "N", "NC", "N(C)C", "F",
    "Cl", "Br", "I", "C#N", "C(F)(F)F", "C(=O)O", "C(=O)OC", "C(=O)N", "NC(=O)C",
    "S(=O)(=O)N", "S(=O)(=O)C", "SC", "[N+](=O)[O-]", "C=O", "CO", "CN", "OC(F)(F)F",
    "c1ccccc1", "C1CC1", "CC(=O)O", "P(=O)(O)O", "OP(=S)(OC)OC", "CCl", "C=C",
]


def make_corpus(n=1000, seed=7):
    from toxvae.smiles import is_valid_smiles, tokenize

    rng = random.Random(seed)
    seen, out = set(), []
    while len(out) < n:
        scaffold = rng.choice(SCAFFOLDS)
        subs = [rng.choice(SUBSTITUENTS) for _ in range(scaffold.count("{}"))]
        raw = scaffold.format(*(f"({s})" if s else "" for s in subs))
        raw = raw.replace("()", "")
        mol = Chem.MolFromSmiles(raw)
        if mol is None:
            continue
        if rng.random() < 0.3:
            Chem.Kekulize(mol, clearAromaticFlags=True)
            smi = Chem.MolToSmiles(mol, kekuleSmiles=True)
        else:
            smi = Chem.MolToSmiles(mol)
        if smi in seen or len(tokenize(smi)) > 60 or not is_valid_smiles(smi):
            continue
        seen.add(smi)
        out.append(smi)
    return out


GOLDEN_CANDIDATES = [
    # plain valid
    ("CCO", "ethanol"), ("C", "methane"), ("C1CCCCC1", "cyclohexane"),
    ("c1ccccc1", "benzene"), ("c1ccncc1", "pyridine"), ("c1ccoc1", "furan"),
    ("c1ccsc1", "thiophene"), ("c1cc[nH]c1", "pyrrole"), ("c1cnc[nH]1", "imidazole"),
    ("Cn1ccnc1", "N-methylimidazole"), ("c1ccc2ccccc2c1", "naphthalene"),
    ("O=c1cccc[nH]1", "2-pyridone"), ("C[n+]1ccccc1", "N-methylpyridinium"),
    ("CC(=O)O.[Na+]", "mixture with ion"), ("CC(=O)[O-].[Na+]", "acetate salt"),
    ("[NH4+].[Cl-]", "ammonium chloride"), ("C[N+](C)(C)C", "tetramethylammonium"),
    ("CS(=O)(=O)C", "sulfone"), ("OP(=O)(O)O", "phosphoric acid"),
    ("CCOP(=S)(OCC)Oc1nc(Cl)c(Cl)cc1Cl", "chlorpyrifos"),
    ("CN1COCN(C1=N[N+](=O)[O-])CC2=CN=C(S2)Cl", "thiamethoxam, nitro repaired"),
    ("CN1COCN(C1=N[N+][O-])CC2=CN=C(S2)Cl", "published literal with [N+] bracket repair"),
    ("CC2=CN=C(S2)Cl", "fragment as printed, ring 2"),
    ("C1=CC=CC=C1", "kekule benzene"), ("C#N", "hydrogen cyanide"),
    ("C=C=C", "allene"), ("[2H]C", "isotope"), ("F/C=C/F", "stereo bonds"),
    ("N[C@@H](C)C(=O)O", "chiral alanine"), ("C1.C1", "ring bond across dot"),
    ("C%12CC%12", "two digit ring"), ("CCN(CC)CC.Cl", "amine hydrochloride"),
    ("c1ccc2[nH]ccc2c1", "indole"), ("[O-][N+](=O)c1ccccc1", "nitrobenzene"),
    ("ClC(Cl)(Cl)Cl", "CCl4"), ("BrCCBr", "dibromoethane"), ("OB(O)O", "boric acid"),
    ("CC(C)(C)C", "neopentane"), ("[Se]", "selenium atom"), ("C[S+](C)C", "sulfonium"),
    ("CCC(=O)N", "propanamide"), ("C1CC2CCC1C2", "norbornane"),
    ("CC(C)Cc1ccc(cc1)C(C)C(=O)O", "ibuprofen"),
    ("CCCCCCCCCCCC1CCCCCCCCCCC1", "macrocycle"),
    # invalid
    ("C1CC", "unmatched ring"), ("C(C)(C)(C)(C)C", "pentavalent carbon"),
    ("CN(C)(C)C", "tetravalent neutral N"), ("CO(C)C", "trivalent neutral O"),
    ("CN(=O)=O", "hypervalent nitro"), ("c1cccc1", "non-kekulizable 5 ring"),
    ("c1ccccc1c", "aromatic atom outside ring"), ("cc", "aromatic chain"),
    ("C(C", "unclosed branch"), ("CC)C", "unopened branch"), ("C=", "dangling bond"),
    ("=C", "leading bond"), ("C[Nx]C", "unknown element"), ("C[C", "unterminated bracket"),
    ("C%1", "bad two-digit ring"), ("CN1COCN(C1=NN+[O-])CC2=CN=C(S2)Cl", "published literal"),
    ("CN1COCN(C1=NN+[O-])CC2=C=SC(S2)Cl", "reconstructed published literal"),
    ("C..C", "empty component"), ("C1CCC1C1", "unmatched reused ring"),
    ("FC(F)(F)(F)F", "pentavalent C with F"), ("O=O=O", "trivalent O"),
    ("C[N+](C)(C)(C)C", "pentavalent ammonium"), ("ClCl(Cl)", "hypervalent chlorine"),
    ("C11", "self ring bond"), ("C()C", "empty branch"), ("C=#C", "double bond symbol"),
    ("CC(=O)(=O)C", "hexavalent carbon"), ("[CH5]", "CH5"), ("c1ccccc1=O", "overfull aromatic c"),
    ("C.", "trailing dot"),
]


# name -> SMILES written from structure diagrams; illustrative, not fetched from PubChem
PESTICIDE_SMILES = [
    ('Benzobicyclon', 'CS(=O)(=O)C1=CC(=C(C=C1)C(=O)C2=C(C3CCC(C3)C2=O)SC4=CC=CC=C4)Cl'),
    ('Pyrazosulfuron-ethyl', 'CCOC(=O)C1=C(N(N=C1)C)S(=O)(=O)NC(=O)NC2=NC(=CC(=N2)OC)OC'),
    ('Pyriminobac-methyl', 'CC(=NOC)C1=C(C(=CC=C1)OC2=NC(=CC(=N2)OC)OC)C(=O)OC'),
    ('Fenquinotrione', 'COC1=CC=C(C=C1)N2C3=C(C(=CC=C3)Cl)N=C(C2=O)C(=O)C4=C(CCCC4=O)O'),
    ('Imazosulfuron', 'COC1=CC(=NC(=N1)NC(=O)NS(=O)(=O)C2=C(N=C3N2C=CC=C3)Cl)OC'),
    ('Fentrazamide', 'CCN(C1CCCCC1)C(=O)N2C(=O)N(N=N2)C3=CC=CC=C3Cl'),
    ('Metazosulfuron', 'CN1C(=C(C(=N1)Cl)C2=NOCCO2)S(=O)(=O)NC(=O)NC3=NC(=CC(=N3)OC)OC'),
    ('Fenoxasulfone', 'CCOC1=C(C=C(C(=C1)Cl)CS(=O)(=O)C2=NOC(C2)(C)C)Cl'),
    ('Atrazine', 'CCNC1=NC(=NC(=N1)Cl)NC(C)C'),
    ('Simazine', 'CCNC1=NC(=NC(=N1)Cl)NCC'),
    ('Glyphosate', 'C(C(=O)O)NCP(=O)(O)O'),
    ('Carbaryl', 'CNC(=O)OC1=CC=CC2=CC=CC=C21'),
    ('Chlorpyrifos', 'CCOP(=S)(OCC)OC1=NC(=C(C=C1Cl)Cl)Cl'),
    ('Malathion', 'CCOC(=O)CC(C(=O)OCC)SP(=S)(OC)OC'),
    ('Imidacloprid', 'C1CN(C(=N1)N[N+](=O)[O-])CC2=CN=C(C=C2)Cl'),
    ('Thiamethoxam', 'CN1COCN(C1=N[N+](=O)[O-])CC2=CN=C(S2)Cl'),
    ('Diazinon', 'CCOP(=S)(OCC)OC1=NC(=NC(=C1)C)C(C)C'),
    ('2,4-D', 'C1=CC(=C(C=C1Cl)Cl)OCC(=O)O'),
    ('Metolachlor', 'CCC1=CC=CC(=C1N(C(C)COC)C(=O)CCl)C'),
    ('Carbofuran', 'CC1(CC2=C(O1)C(=CC=C2)OC(=O)NC)C'),
    ('Paraquat dichloride', 'C[N+]1=CC=C(C=C1)C2=CC=[N+](C=C2)C.[Cl-].[Cl-]'),
    ('Fipronil', 'C1=C(C=C(C(=C1Cl)N2C(=C(C(=N2)C#N)S(=O)C(F)(F)F)N)Cl)C(F)(F)F'),
    ('Tebuconazole', 'CC(C)(C)C(CCC1=CC=C(C=C1)Cl)(CN2C=NC=N2)O'),
    ('Azoxystrobin', 'COC=C(C1=CC=CC=C1OC2=NC=NC(=C2)OC3=CC=CC=C3C#N)C(=O)OC'),
    ('Propiconazole', 'CCCC1COC(O1)(CN2C=NC=N2)C3=C(C=C(C=C3)Cl)Cl'),
    ('Dimethoate', 'CNC(=O)CSP(=S)(OC)OC'),
    ('Acephate', 'CC(=O)NP(=O)(OC)SC'),
    ('Bentazone', 'CC(C)N1C(=O)C2=CC=CC=C2NS1(=O)=O'),
    ('Butachlor', 'CCCCOCN(C1=C(C=CC=C1CC)CC)C(=O)CCl'),
    ('Pretilachlor', 'CCCOCCN(C1=C(C=CC=C1CC)CC)C(=O)CCl'),
    ('Bensulfuron-methyl', 'COC1=CC(=NC(=N1)NC(=O)NS(=O)(=O)CC2=CC=CC=C2C(=O)OC)OC'),
    ('Tricyclazole', 'CC1=C2C(=CC=C1)SC3=NN=CN23'),
    ('Isoprothiolane', 'CC(C)OC(=O)C(=C1SCCS1)C(=O)OC(C)C'),
    ('Buprofezin', 'CC(C)N1C(=NC(C)(C)C)SCN(C1=O)C2=CC=CC=C2'),
    ('Etofenprox', 'CCOC1=CC=C(C=C1)C(C)(C)COCC2=CC(=CC=C2)OC3=CC=CC=C3'),
    ('Mepanipyrim', 'CC#CC1=CC(=NC(=N1)NC2=CC=CC=C2)C'),
    ('Oxadiazon', 'CC(C)OC1=C(C=C(C(=C1)N2C(=O)OC(=N2)C(C)(C)C)Cl)Cl'),
    ('Pendimethalin', 'CCC(CC)NC1=C(C=C(C(=C1[N+](=O)[O-])C)C)[N+](=O)[O-]'),
    ('Mefenacet', 'CN(C1=CC=CC=C1)C(=O)COC2=NC3=CC=CC=C3S2'),
    ('Thiobencarb', 'CCN(CC)C(=O)SCC1=CC=C(C=C1)Cl'),
]

MIXTURE_ROWS = [
    "Benzobicyclon + Pyrazosulfuron-ethyl + Pyriminobac-methyl",
    "Fenquinotrione + Imazosulfuron + Pyriminobac-methyl",
    "Fentrazamide + Metazosulfuron",
    "Fenoxasulfone + Fenquinotrione + Imazosulfuron",
]

# illustrative hazard classes for the fine-tuning fixture (livestock, aqua)
CLASSES = [
    ("IV", "III"), ("III", "II"), ("II", "I"), ("Ib", "IIs"), ("Ia", "I"),
    ("Unclassified", "Exempt"), ("IV", "II s"), ("III", "III"),
]

RING_PAIRS = [
    ("CCCCCC", "C1CCCCC1"), ("CCCCC", "C1CCCC1"), ("CCCC", "C1CCC1"), ("CCC", "C1CC1"),
    ("CCCCCO", "C1CCCC1O"), ("CCOCC", "C1COCC1"), ("CCNCC", "C1CNCC1"),
    ("CCCCCCCCCC", "C1CCCCCCCCC1"), ("c1ccccc1CCCC", "c1ccc2c(c1)CCCC2"),
    ("CC(C)CCC", "CC1CCC1C"), ("OCCCCN", "OC1CCC1N"), ("CC=CC=CC", "C1C=CC=CC1"),
    ("CCCCC(=O)O", "C1CC(C1)C(=O)O"), ("ClCCCCCCl", "ClC1CCCC1Cl"),
    ("c1ccccc1OCC", "c1ccc2c(c1)OCC2"), ("CCCCCCC(=O)N", "C1CCCCC1C(=O)N"),
    ("NCCCCCC", "NC1CCCCC1"), ("CCSCC", "C1CSCC1"), ("CCCCCCCC", "C1CCCCCCC1"),
    ("CC(C)(C)CCC", "CC1(C)CCC1C"),
]


def make_pesticides():
    smiles = dict(PESTICIDE_SMILES)
    cache = [f"{n}\t{s}" for n, s in PESTICIDE_SMILES]
    mixtures = ["name,livestock_class,aqua_class,latitude,longitude,smiles"]
    mixtures += [f"{name},Class IV,Class III,,," for name in MIXTURE_ROWS]
    rows = ["name,livestock_class,aqua_class,latitude,longitude,smiles"]
    rng = random.Random(11)
    for k, (name, _) in enumerate(PESTICIDE_SMILES[8:]):
        liv, aq = CLASSES[k % len(CLASSES)]
        lat, lon = round(rng.uniform(36.9, 38.3), 4), round(rng.uniform(126.4, 127.9), 4)
        rows.append(f'"{name}",{liv},{aq},{lat},{lon},')
    rows += [f'"{name}",Class IV,Class III,,,' for name in MIXTURE_ROWS]
    assert all(smiles[p.strip()] for name in MIXTURE_ROWS for p in name.split("+"))
    return mixtures, rows, cache


def make_eval_sets(seed=5):
    from toxvae.smiles import is_valid_smiles

    originals = [s for _, s in PESTICIDE_SMILES]
    rng = random.Random(seed)
    alphabet = "CCNO"
    generated = []
    for s in originals[:30]:
        chars = list(s)
        for _ in range(rng.randint(1, 2)):
            i = rng.randrange(len(chars))
            op = rng.random()
            if op < 0.4 and len(chars) > 2:
                del chars[i]
            elif op < 0.7:
                chars.insert(i, rng.choice(alphabet))
            else:
                chars[i] = rng.choice(alphabet)
        generated.append("".join(chars))
    valid = sum(is_valid_smiles(g) for g in generated)
    return originals, generated, valid


def make_mixtures(corpus, n=50, seed=3):
    rng = random.Random(seed)
    return [".".join(rng.sample(corpus, rng.randint(2, 3))) for _ in range(n)]


def make_golden():
    lines = []
    for smi, note in GOLDEN_CANDIDATES:
        valid = Chem.MolFromSmiles(smi) is not None
        lines.append(f"{smi}\t{int(valid)}\t{note}")
    return lines


if __name__ == "__main__":
    OUT.mkdir(parents=True, exist_ok=True)
    golden = make_golden()
    (OUT / "smiles_golden.tsv").write_text("\n".join(golden) + "\n", encoding="utf-8")
    corpus = make_corpus()
    header = "# 1000 fixture molecules, RDKit-canonical, combinatorial scaffold+substituent set\n"
    (OUT / "corpus_1000.smi").write_text(header + "\n".join(corpus) + "\n", encoding="utf-8")
    mixtures, pesticides, cache = make_pesticides()
    (OUT / "herbicide_mixtures.csv").write_text("\n".join(mixtures) + "\n", encoding="utf-8")
    (OUT / "pesticides.csv").write_text("\n".join(pesticides) + "\n", encoding="utf-8")
    (OUT / "cache.tsv").write_text("\n".join(cache) + "\n", encoding="utf-8")
    originals, generated, valid = make_eval_sets()
    (OUT / "eval_original.smi").write_text("\n".join(originals) + "\n", encoding="utf-8")
    (OUT / "eval_generated.smi").write_text("\n".join(generated) + "\n", encoding="utf-8")
    (OUT / "mixtures.smi").write_text("\n".join(make_mixtures(corpus)) + "\n", encoding="utf-8")
    (OUT / "ring_pairs.tsv").write_text("".join(f"{a}\t{b}\n" for a, b in RING_PAIRS), encoding="utf-8")
    print(f"{len(golden)} golden rows, {len(corpus)} corpus molecules, "
          f"{valid}/{len(generated)} valid generated eval strings")
