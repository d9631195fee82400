import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from toxvae import fixture
from toxvae.smiles import (
    BondOrder,
    SequenceTooLongError,
    SmilesError,
    TokenKind,
    TokenVocabulary,
    build_vocabulary,
    decode_one_hot,
    detokenize,
    encode_one_hot,
    is_valid_smiles,
    load_golden,
    parse,
    tokenize,
    tokenize_ids,
    validate,
)

GOLDEN = load_golden(fixture("smiles_golden.tsv"))


def texts(s):
    return [t.text for t in tokenize(s)]


# -- tokenizer --------------------------------------------------------------


def test_tokenize_simple():
    assert texts("CCO") == ["C", "C", "O"]


def test_tokenize_thiazole_fragment():
    assert texts("CC2=CN=C(S2)Cl") == ["C", "C", "2", "=", "C", "N", "=", "C", "(", "S", "2", ")", "Cl"]


def test_tokenize_two_digit_ring_and_dot():
    toks = tokenize("C1.%12")
    assert [t.text for t in toks] == ["C", "1", ".", "%12"]
    assert [t.kind for t in toks] == [TokenKind.ATOM, TokenKind.RING_DIGIT, TokenKind.DOT, TokenKind.RING_TWO_DIGIT]


def test_bracket_atoms_are_single_tokens():
    toks = tokenize("C[N+](=O)[O-]")
    assert [t.text for t in toks] == ["C", "[N+]", "(", "=", "O", ")", "[O-]"]
    assert toks[1].kind is TokenKind.BRACKET_ATOM


def test_only_cl_and_br_merge():
    assert texts("ClBrC") == ["Cl", "Br", "C"]
    assert texts("Sc") == ["S", "c"]


@pytest.mark.parametrize("bad, pos", [("C$C", 1), ("C[N", 1), ("C%1", 1), ("CC X", 2)])
def test_tokenize_rejects_with_position(bad, pos):
    with pytest.raises(SmilesError) as err:
        tokenize(bad)
    assert err.value.code == "syntax"
    assert err.value.position == pos


def test_detokenize_empty():
    assert detokenize([]) == ""


def test_round_trip_fixtures(corpus):
    for s in corpus + [row[0] for row in GOLDEN if row[1]]:
        assert detokenize(tokenize(s)) == s


ALPHABET = "CNOSPFIcnos()[]=#-:.123%+@/\\HlrB0456789"


@settings(max_examples=300, deadline=None)
@given(st.text(alphabet=ALPHABET, max_size=60))
def test_round_trip_or_positioned_error(s):
    try:
        toks = tokenize(s)
    except SmilesError as exc:
        assert exc.position is not None and 0 <= exc.position <= len(s)
        return
    assert detokenize(toks) == s


# -- vocabulary and one-hot -------------------------------------------------


def test_vocabulary_layout(corpus_vocab):
    assert corpus_vocab.tokens[:4] == ("<pad>", "<sos>", "<eos>", "<unk>")
    ids = {corpus_vocab.pad_id, corpus_vocab.start_id, corpus_vocab.end_id, corpus_vocab.unknown_id}
    assert len(ids) == 4
    assert len(set(corpus_vocab.tokens)) == len(corpus_vocab)


def test_vocabulary_max_length_guard():
    with pytest.raises(SequenceTooLongError):
        build_vocabulary(["CCCCC"], max_length=6)
    assert build_vocabulary(["CCCCC"], max_length=7).max_length == 7


def test_fixed_mode_unknown_tokens():
    vocab = build_vocabulary(["CCO"])
    assert tokenize_ids("CSC", vocab) == [1, vocab.index("C"), 3, vocab.index("C"), 2]


def test_vocabulary_file_round_trip(tmp_path, corpus_vocab):
    path = tmp_path / "vocab.txt"
    corpus_vocab.save(path)
    lines = path.read_text().splitlines()
    assert lines[:4] == ["<pad>", "<sos>", "<eos>", "<unk>"]
    assert TokenVocabulary.load(path, 64) == corpus_vocab


def test_one_hot_minimal():
    vocab = TokenVocabulary(("<pad>", "<sos>", "<eos>", "<unk>", "C"), max_length=4)
    m = encode_one_hot(tokenize("C"), vocab)
    assert m.shape == (4, 5)
    assert list(np.argmax(m, axis=1)) == [1, 4, 2, 0]


def test_one_hot_rows_and_round_trip(corpus, corpus_vocab):
    for s in corpus[:200]:
        m = encode_one_hot(tokenize(s), corpus_vocab)
        assert np.all(m.sum(axis=1) == 1.0)
        assert m[0, corpus_vocab.start_id] == 1.0
        assert decode_one_hot(m, corpus_vocab) == texts(s)


def test_one_hot_length_error_names_input():
    vocab = build_vocabulary(["CC"], max_length=4)
    with pytest.raises(SequenceTooLongError, match="CCC"):
        encode_one_hot(tokenize("CCC"), vocab)


# -- parser -----------------------------------------------------------------


def test_parse_cyclohexane():
    g = parse("C1CCCCC1")
    assert (len(g.atoms), len(g.bonds), g.components) == (6, 6, 1)


def test_parse_salt_mixture():
    g = parse("CC(=O)O.[Na+]")
    assert g.components == 2
    second = g.component(1)
    assert len(second.atoms) == 1
    assert second.atoms[0].element == "Na" and second.atoms[0].charge == 1


def test_parse_unmatched_ring():
    with pytest.raises(SmilesError) as err:
        parse("C1CC")
    assert err.value.code == "unmatched_ring"
    assert "1" in str(err.value)


@pytest.mark.parametrize(
    "s, code",
    [
        ("", "empty"),
        ("C(C", "unmatched_paren"),
        ("CC)C", "unmatched_paren"),
        ("C=", "syntax"),
        ("=C", "syntax"),
        ("C()C", "syntax"),
        ("C11", "syntax"),
        ("C..C", "syntax"),
        ("C[Xx]", "syntax"),
        ("C[C+5]", "charge"),
        ("C1CC1C1", "unmatched_ring"),
    ],
)
def test_parse_errors(s, code):
    with pytest.raises(SmilesError) as err:
        parse(s)
    assert err.value.code == code


def test_parse_branch_and_bond_orders():
    g = parse("C(=O)C#N")
    orders = [b.order for b in g.bonds]
    assert orders == [BondOrder.DOUBLE, BondOrder.SINGLE, BondOrder.TRIPLE]


def test_parse_bracket_fields():
    g = parse("[13CH3-]")
    atom = g.atoms[0]
    assert (atom.element, atom.charge, atom.explicit_hydrogens, atom.bracket) == ("C", -1, 3, True)


def test_aromatic_flags():
    g = parse("c1ccncc1")
    assert all(a.aromatic for a in g.atoms)
    assert all(b.order is BondOrder.AROMATIC for b in g.bonds)


def test_stereo_is_ignored_with_warning():
    g = parse("F/C=C/F")
    assert g.warnings
    assert validate(g).valid


@settings(max_examples=300, deadline=None)
@given(st.lists(st.sampled_from(["C", "CC", "c1ccccc1", "O", "[Na+]", "N(C)C"]), min_size=1, max_size=5))
def test_component_count(parts):
    assert parse(".".join(parts)).components == len(parts)


@settings(max_examples=500, deadline=None)
@given(st.text(alphabet=[chr(i) for i in range(32, 127)], max_size=512))
def test_parse_is_total(s):
    try:
        parse(s)
    except SmilesError as exc:
        assert exc.code in {"syntax", "unmatched_ring", "unmatched_paren", "charge", "empty"}


# -- validation -------------------------------------------------------------


def test_ethanol_valid():
    assert validate(parse("CCO")).valid


def test_pentavalent_carbon():
    report = validate(parse("C(C)(C)(C)(C)C"))
    assert not report.valid
    assert [f.code for f in report.failures] == ["valence"]
    assert report.failures[0].position == 0


def test_report_valid_iff_no_failures():
    for s, _, _ in GOLDEN:
        try:
            report = validate(parse(s))
        except SmilesError:
            continue
        assert report.valid == (not report.failures)


def test_golden_agreement():
    assert len(GOLDEN) >= 50
    disagreements = [(s, want) for s, want, _ in GOLDEN if is_valid_smiles(s) != want]
    assert disagreements == []


def test_published_literal_recorded():
    rows = {s: valid for s, valid, _ in GOLDEN}
    assert rows["CN1COCN(C1=NN+[O-])CC2=CN=C(S2)Cl"] is False
    assert rows["CN1COCN(C1=N[N+](=O)[O-])CC2=CN=C(S2)Cl"] is True


def test_empty_is_invalid():
    assert is_valid_smiles("") is False


@pytest.mark.parametrize("saturated, extra", [("CC(C)(C)C", "CC(C)(C)(C)C"), ("COC", "CO(C)C"), ("C=O", "C=O=C"), ("N#N", "N#N=C")])
def test_valence_monotonicity(saturated, extra):
    assert is_valid_smiles(saturated)
    assert not is_valid_smiles(extra)


def test_charge_adjusted_valence():
    assert is_valid_smiles("C[N+](C)(C)C")
    assert not is_valid_smiles("CN(C)(C)C")
    assert is_valid_smiles("C[O-]")
    assert not is_valid_smiles("C[O-]C")


def test_shuffle_fuzz_mostly_invalid(corpus):
    rng = random.Random(0)
    valid = 0
    for s in corpus[:300]:
        toks = texts(s)
        rng.shuffle(toks)
        valid += is_valid_smiles("".join(toks))
    assert valid < 150
