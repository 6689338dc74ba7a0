"""Rule-based word tokenizer following the Moses conventions for French.

The rules are applied to the whole sentence in this order:

1. collapse whitespace, drop ASCII control characters
2. pad every character that is not alphanumeric and not one of ``. ' ` , -``
3. isolate runs of two or more dots (ellipses stay one token)
4. split commas unless they sit between two digits (``3,14`` survives)
5. French apostrophes: ``l'avion`` -> ``l' avion``
6. split a word-final period unless the word is a known abbreviation,
   already contains a dot, or is followed by a lowercase word

One intentional difference from the reference tool: an apostrophe that
follows a letter and precedes whitespace is left attached (``l'`` stays
``l'``), so that tokenizing already-tokenized text is a fixpoint.
"""

from __future__ import annotations

import re
import unicodedata

# French nonbreaking prefixes shipped with Moses (nonbreaking_prefix.fr).
NONBREAKING_PREFIXES = frozenset(
    """
    A B C D E F G H I J K L M N O P Q R S T U V W X Y Z
    a b c d e f g h i j k l m n o p q r s t u v w x y z
    A.C.N A.M B.P C.N C.N.S C.P.I C.Q.F.D C.S E.V L.D LL.AA LL.AA.II
    LL.AA.RR LL.AA.SS LL.EE LL.MM LL.MM.II.RR MM N.B N.D N.D.A N.D.L.R
    N.D.T N.P.A.I N.S NN.SS P.S R.-V R.A.S R.I.P R.P S.A S.A.I S.A.R
    S.A.S S.E S.M S.M.I.R S.S SS T.S.V.P X.O Z.I
    al ann apr art auj av boul c.-à-d ca cf ch.-l chap contr dir e.g env
    etc ex fasc fig fr fém hab i.e ibid id inf lib loc.cit masc ms n/réf
    p.c.c p.ex p.j pl pp sec sect sing sq sqq suiv sup suppl tél vb vol vs éd
    """.split()
)

_SPACES = re.compile(r"\s+")
_ASCII_JUNK = re.compile(r"[\000-\037]")
_MULTIDOT = re.compile(r"\.{2,}")
_COMMA_LEFT = re.compile(r"(\D),")
_COMMA_RIGHT = re.compile(r",(\D)")
_COMMA_TRAILING = re.compile(r"(\d),$")
_TRAILING_DOT_QUOTE = re.compile(r"\.' ?$")
_DOTS_ONLY = re.compile(r"^\.+$")


def _is_word_char(ch: str) -> bool:
    return ch.isalnum() or unicodedata.category(ch).startswith("M")


def _pad_specials(text: str) -> str:
    out = []
    for ch in text:
        if ch.isspace() or ch in ".'`,-" or _is_word_char(ch):
            out.append(ch)
        else:
            out.append(f" {ch} ")
    return "".join(out)


def _split_apostrophes(text: str) -> str:
    out = []
    n = len(text)
    for i, ch in enumerate(text):
        if ch != "'":
            out.append(ch)
            continue
        left = text[i - 1] if i > 0 else ""
        right = text[i + 1] if i + 1 < n else ""
        left_alpha = left.isalpha()
        right_alpha = right.isalpha()
        if not left or not right:
            # Sentence boundary: Moses leaves these alone.
            out.append(ch)
        elif left_alpha and right_alpha:
            out.append("' ")
        elif left_alpha and right.isspace():
            out.append(ch)
        else:
            out.append(" ' ")
    return "".join(out)


def _is_abbreviation(prefix: str) -> bool:
    return prefix in NONBREAKING_PREFIXES or prefix.upper() in NONBREAKING_PREFIXES


def _split_final_periods(tokens: list[str]) -> list[str]:
    out: list[str] = []
    last = len(tokens) - 1
    for i, tok in enumerate(tokens):
        if len(tok) < 2 or not tok.endswith(".") or _DOTS_ONLY.match(tok):
            out.append(tok)
            continue
        prefix = tok[:-1]
        keep = (
            ("." in prefix and any(c.isalpha() for c in prefix))
            or _is_abbreviation(prefix)
            or (i != last and tokens[i + 1][:1].islower())
        )
        if keep:
            out.append(tok)
        else:
            out.extend((prefix, "."))
    return out


def moses_tokenize(text: str) -> list[str]:
    """Split a single normalized sentence into surface tokens."""
    text = _ASCII_JUNK.sub("", _SPACES.sub(" ", text)).strip()
    if not text:
        return []
    text = _pad_specials(text)
    text = _MULTIDOT.sub(lambda m: f" {m.group()} ", text)
    text = _COMMA_LEFT.sub(r"\1 , ", text)
    text = _COMMA_RIGHT.sub(r" , \1", text)
    text = _COMMA_TRAILING.sub(r"\1 , ", text)
    text = _split_apostrophes(text)
    tokens = _split_final_periods(text.split())
    text = " ".join(tokens)
    text = _TRAILING_DOT_QUOTE.sub(" . ' ", text)
    return text.split()
