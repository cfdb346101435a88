from __future__ import annotations

import pytest

from moeextract.align import (
    AlignmentError,
    GoldWord,
    align_with_gold,
    parse_gold_conllu,
    sentence_layout,
)


def _words(*pairs: tuple[str, str]) -> tuple[GoldWord, ...]:
    return tuple(GoldWord(surface=s, upos=t) for s, t in pairs)


def test_parse_gold_corpus(gold_path):
    sentences = parse_gold_conllu(gold_path.read_text(encoding="utf-8"))
    assert len(sentences) == 10
    surfaces = [w.surface for w in sentences[2]]
    assert surfaces == ["humanities", "departments", "value", "careful",
                        "reading", "."]
    assert [w.upos for w in sentences[2]] == ["NOUN", "NOUN", "VERB", "ADJ",
                                              "NOUN", "PUNCT"]
    seen_tags = {w.upos for words in sentences for w in words}
    assert len(seen_tags) == 15


def test_parse_skips_ranges_and_empty_nodes():
    text = "\n".join(
        [
            "# sent_id = demo",
            "1-2\tdon't\t_\t_\t_\t_\t_\t_\t_\t_",
            "1\tdo\tdo\tVERB\t_\t_\t0\troot\t_\t_",
            "2\tn't\tnot\tPART\t_\t_\t1\tadvmod\t_\t_",
            "2.1\tghost\t_\tNOUN\t_\t_\t_\t_\t_\t_",
            "3\t.\t.\tPUNCT\t_\t_\t1\tpunct\t_\t_",
            "",
        ]
    )
    sentences = parse_gold_conllu(text)
    assert len(sentences) == 1
    assert [w.surface for w in sentences[0]] == ["do", "n't", "."]
    assert [w.upos for w in sentences[0]] == ["VERB", "PART", "PUNCT"]


def test_parse_rejects_short_rows():
    text = "1\tword\tVERB\n"
    with pytest.raises(AlignmentError, match="line 1"):
        parse_gold_conllu(text)


def test_sentence_layout_spans():
    words = _words(("The", "DET"), ("cat", "NOUN"), (".", "PUNCT"))
    text, spans = sentence_layout(words)
    assert text == "The cat ."
    assert spans == ((0, 3), (4, 7), (8, 9))
    for (start, end), word in zip(spans, words):
        assert text[start:end] == word.surface


def test_align_exact_single_subtoken():
    words = _words(("cat", "NOUN"),)
    result = align_with_gold(((0, 3),), words)
    assert result.upos == ("NOUN",)
    assert result.word_indices == (0,)
    assert result.warnings == 0


def test_align_multi_subtoken_inherits_word_tag():
    # "humanities" split into two subtokens: both carry the word's tag.
    words = _words(("humanities", "NOUN"),)
    result = align_with_gold(((0, 5), (5, 10)), words)
    assert result.upos == ("NOUN", "NOUN")
    assert result.word_indices == (0, 0)
    assert result.warnings == 0


def test_align_leading_space_token():
    # Byte-level tokenizers fold the separator into the next token's span.
    words = _words(("a", "DET"), ("cat", "NOUN"))
    result = align_with_gold(((0, 1), (1, 5)), words)
    assert result.upos == ("DET", "NOUN")
    assert result.word_indices == (0, 1)


def test_align_bridging_token_takes_first_word():
    words = _words(("a", "DET"), ("cat", "NOUN"))
    result = align_with_gold(((0, 5),), words)
    assert result.upos == ("DET",)
    assert result.word_indices == (0,)


def test_align_gap_token_tagged_x_with_warning():
    # A token covering only the separator matches no word.
    words = _words(("a", "DET"), ("cat", "NOUN"))
    result = align_with_gold(((0, 1), (1, 2), (2, 5)), words)
    assert result.upos == ("DET", "X", "NOUN")
    assert result.warnings == 1
    # Gap tokens get fresh synthetic word indices past the real ones.
    assert result.word_indices == (0, 2, 1)


def test_align_zero_length_offset_is_gap():
    words = _words(("cat", "NOUN"),)
    result = align_with_gold(((0, 0), (0, 3)), words)
    assert result.upos == ("X", "NOUN")
    assert result.warnings == 1


def test_align_rejects_inverted_offsets():
    words = _words(("cat", "NOUN"),)
    with pytest.raises(AlignmentError, match="offset"):
        align_with_gold(((2, 1),), words)


def test_layout_rejects_empty():
    with pytest.raises(AlignmentError):
        sentence_layout(())
    with pytest.raises(AlignmentError):
        sentence_layout(_words(("", "NOUN")))
