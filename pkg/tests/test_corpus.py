import json
import random
import unicodedata

import pytest
from hypothesis import given
from hypothesis import strategies as st

from mlmkit.corpus import (
    CleaningConfig,
    CleanSentence,
    CorpusStats,
    DecodingError,
    DedupWindow,
    DropDecision,
    clean_sentence,
    filter_corpus,
    render,
    unicode_normalize,
    write_corpus,
)
from mlmkit.synthetic import raw_corpus_lines


def write_shard(path, lines):
    path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    return path


# ---------------------------------------------------------------- normalization


def test_nfc_composes_combining_accent():
    assert unicode_normalize("é") == "é"
    assert len(unicode_normalize("é")) == 1


def test_ascii_is_fixed_point():
    assert unicode_normalize("abc") == "abc"


def test_invalid_utf8_reports_offset():
    with pytest.raises(DecodingError) as info:
        unicode_normalize(b"abc\xffdef")
    assert info.value.offset == 3


def test_normalize_idempotent_fuzz():
    rng = random.Random(0)
    pool = "aeiouéèêàçœæﬁ̧́̀ΩÅÅẛ̣ "
    for _ in range(1000):
        s = "".join(rng.choice(pool) for _ in range(rng.randint(0, 20)))
        for form in ("NFC", "NFKC"):
            once = unicode_normalize(s, form)
            assert unicode_normalize(once, form) == once
            assert unicodedata.is_normalized(form, once)


# ---------------------------------------------------------------- clean_sentence


def test_phone_number_is_dropped_by_pattern():
    # The default ratio thresholds would reject this digit-heavy line before
    # the pattern filter runs; relaxing them isolates the pattern rule.
    cfg = CleaningConfig(max_nonalpha_ratio=1.0, max_digit_ratio=1.0)
    assert clean_sentence("Tel: 04 76 00 00 00", cfg) == DropDecision("phone_fax")


def test_phone_number_is_dropped_under_defaults():
    assert isinstance(clean_sentence("Tel: 04 76 00 00 00", CleaningConfig()), DropDecision)


def test_plain_sentence_is_kept_lowercased():
    out = clean_sentence("Le chat dort bien .", CleaningConfig())
    assert isinstance(out, CleanSentence)
    assert out.tokens == ("le", "chat", "dort", "bien", ".")


def test_too_short():
    assert clean_sentence("Oui .", CleaningConfig()) == DropDecision("too_short")


def test_too_long():
    assert clean_sentence("un " * 20, CleaningConfig(max_tokens=10)) == DropDecision("too_long")


@pytest.mark.parametrize("line, reason", [
    ("Écrivez à jean.dupont@exemple.fr pour la suite", "email"),
    ("Voir https://www.exemple.fr/page pour la suite", "url"),
    ("Fax 01.45.22.33.44 merci beaucoup à tous", "phone_fax"),
])
def test_drop_patterns(line, reason):
    cfg = CleaningConfig(max_nonalpha_ratio=1.0, max_digit_ratio=1.0)
    assert clean_sentence(line, cfg) == DropDecision(reason)


def test_pattern_class_can_be_disabled():
    cfg = CleaningConfig(max_nonalpha_ratio=1.0, max_digit_ratio=1.0, drop_patterns=("url",))
    assert isinstance(clean_sentence("Écrivez à jean@exemple.fr pour la suite", cfg), CleanSentence)


def test_duplicate_within_window():
    seen = DedupWindow(10)
    cfg = CleaningConfig()
    assert isinstance(clean_sentence("Le chat dort bien .", cfg, seen), CleanSentence)
    assert clean_sentence("Le chat dort bien .", cfg, seen) == DropDecision("duplicate")


def test_dedup_window_forgets_old_lines():
    seen = DedupWindow(2)
    assert not seen.seen_before("a")
    assert not seen.seen_before("b")
    assert not seen.seen_before("c")
    assert not seen.seen_before("a")
    assert seen.seen_before("c")


def test_config_invariants():
    with pytest.raises(ValueError):
        CleaningConfig(min_tokens=5, max_tokens=4)
    with pytest.raises(ValueError):
        CleaningConfig(max_digit_ratio=1.5)
    with pytest.raises(ValueError):
        CleaningConfig(drop_patterns=("bogus",))


lines = st.lists(
    st.text(alphabet="abcdefghé'.,!? 0123@:/-", min_size=0, max_size=60),
    min_size=1, max_size=30,
)


@given(st.text(alphabet="abcdeéèàçÀÉl'.,!?;:«» -0123456789", max_size=80))
def test_kept_sentences_are_idempotent(line):
    cfg = CleaningConfig()
    first = clean_sentence(line, cfg)
    if isinstance(first, CleanSentence):
        again = clean_sentence(render(first), cfg)
        assert isinstance(again, CleanSentence)
        assert again.tokens == first.tokens


@given(st.text(alphabet="abcdeÉél'., 0123", max_size=60))
def test_kept_sentence_invariants(line):
    cfg = CleaningConfig(min_tokens=1)
    out = clean_sentence(line, cfg)
    if isinstance(out, CleanSentence):
        assert cfg.min_tokens <= len(out.tokens) <= cfg.max_tokens
        assert all(t and not any(c.isspace() for c in t) for t in out.tokens)
        assert unicodedata.is_normalized("NFC", out.text)


# ---------------------------------------------------------------- filter_corpus


def test_two_shards_pass_through(tmp_path):
    a = write_shard(tmp_path / "a.txt", [f"le chat numéro {w} dort bien ." for w in "abcdefghij"])
    b = write_shard(tmp_path / "b.txt", [f"la fille numéro {w} chante fort ." for w in "abcdefghij"])
    kept, stats = filter_corpus([a, b], CleaningConfig())
    assert len(kept) == 20
    assert stats.lines_in == 20 and stats.lines_kept == 20
    assert [s.source_id for s in kept] == [str(a)] * 10 + [str(b)] * 10
    assert [s.line_no for s in kept[:10]] == list(range(1, 11))


def test_duplicate_in_shard(tmp_path):
    a = write_shard(tmp_path / "a.txt", ["le chat dort bien .", "la fille chante fort .", "le chat dort bien ."])
    kept, stats = filter_corpus([a], CleaningConfig())
    assert len(kept) == 2
    assert stats.drop_reasons == {"duplicate": 1}


def test_unreadable_shard_is_isolated(tmp_path):
    a = write_shard(tmp_path / "a.txt", ["le chat dort bien ."])
    missing = tmp_path / "missing.txt"
    b = write_shard(tmp_path / "b.txt", ["la fille chante fort ."])
    kept, stats = filter_corpus([a, missing, b], CleaningConfig())
    assert [s.text for s in kept] == ["le chat dort bien .", "la fille chante fort ."]
    assert str(missing) in stats.shard_errors


def test_invalid_bytes_become_a_drop_reason(tmp_path):
    path = tmp_path / "bad.txt"
    path.write_bytes("le chat dort bien .\n".encode() + b"\xff\xfe oops\n")
    kept, stats = filter_corpus([path], CleaningConfig())
    assert len(kept) == 1
    assert stats.drop_reasons["decode_error"] == 1


@pytest.fixture(scope="module")
def corpus_10k(tmp_path_factory):
    d = tmp_path_factory.mktemp("corpus")
    lines = raw_corpus_lines(10_000, seed=3)
    return [write_shard(d / f"s{i}.txt", lines[i * 2500:(i + 1) * 2500]) for i in range(4)]


def test_output_identical_across_worker_counts(corpus_10k, tmp_path):
    outputs = []
    for workers in (1, 2, 8):
        out = tmp_path / f"w{workers}.txt"
        stats = write_corpus(corpus_10k, CleaningConfig(), out, workers=workers)
        outputs.append((out.read_bytes(), stats.to_json()))
    assert outputs[0] == outputs[1] == outputs[2]


def test_accounting_and_stats_json(corpus_10k):
    _, stats = filter_corpus(corpus_10k, CleaningConfig())
    assert stats.lines_in == 10_000
    assert stats.lines_in == stats.lines_kept + sum(stats.drop_reasons.values())
    d = json.loads(stats.to_json())
    assert set(d) >= {"lines_in", "lines_kept", "tokens_kept", "drop_reasons"}


@given(lines, st.integers(1, 8), st.integers(0, 4))
def test_accounting_and_monotonicity(tmp_path_factory, lines, lo, bump):
    path = tmp_path_factory.mktemp("h") / "x.txt"
    write_shard(path, [line.replace("\n", " ") for line in lines])
    _, s1 = filter_corpus([path], CleaningConfig(min_tokens=lo))
    _, s2 = filter_corpus([path], CleaningConfig(min_tokens=lo + bump))
    for s in (s1, s2):
        assert s.lines_in == s.lines_kept + sum(s.drop_reasons.values())
    assert s2.lines_kept <= s1.lines_kept


@given(st.lists(st.sampled_from(["too_short", "url", "duplicate"]), max_size=10),
       st.lists(st.sampled_from(["too_short", "email"]), max_size=10))
def test_stats_add(reasons_a, reasons_b):
    a, b = CorpusStats(), CorpusStats()
    for r in reasons_a:
        a.record(DropDecision(r))
    a.record(CleanSentence(("x", "y")))
    for r in reasons_b:
        b.record(DropDecision(r))
    total = a + b
    assert total.lines_in == a.lines_in + b.lines_in
    assert total.lines_in == total.lines_kept + sum(total.drop_reasons.values())
    assert (a + b).to_dict() == (b + a).to_dict()
