"""Freeze the reference Moses tokenizer's French output as a test fixture.

    pip install sacremoses
    python scripts/make_moses_fixture.py [--out tests/fixtures/moses_fr.tsv]

Each row is ``sentence<TAB>space-joined tokens``.  The reference is
called with escaping disabled, matching the package tokenizer.
"""

import argparse
import random

from sacremoses import MosesTokenizer

from mlmkit.synthetic import sentence

HANDWRITTEN = [
    "l'avion rouge.",
    "A, b!",
    "Bonjour",
    "Qu'est-ce que c'est ?",
    "Aujourd'hui, il fait beau.",
    "Il m'a dit : « Viens demain ! »",
    "Le prix est de 3,14 euros.",
    "C'est-à-dire qu'on verra...",
    "Voir p. 12 et suiv. pour les détails.",
    "M. Dupont est arrivé à 10h30.",
    "Elle habite à Saint-Étienne (Loire).",
    "Les enfants jouent [souvent] dans la cour.",
    "J'ai acheté des pommes, des poires; et des oranges.",
    "Pourquoi pas?",
    "L'école, l'église et l'hôpital sont fermés.",
    "Il est né en 1985 à Lyon.",
    "« Attention ! » cria-t-il.",
    "S'il te plaît, ferme la porte.",
    "Jusqu'à quand restes-tu ?",
    "Le numéro est 04 76 12 34 56.",
    "Etc. etc.",
    "Il y a 2 000 habitants.",
    "Lorsqu'il pleut, on reste à l'intérieur...",
    "Elle a dit \"non\" deux fois.",
    "Le film dure 1h45 ; c'est long !",
    "Les U.S.A. et la France.",
    "N'importe quoi !",
    "Presqu'île, quelqu'un, puisqu'il.",
    "Tél. 01 23 45 67 89",
    "Le 1er janvier 2020, tout a changé.",
    "Il a couru 42,195 km !",
    "Vive la République !",
    "Ah... je vois.",
    "Ceci est un test-exemple avec trait-d'union.",
    "Il a lu « Les Misérables » en 3 jours.",
    "Cf. chapitre 2.",
    "Je pense, donc je suis.",
    "Est-ce vrai ?!",
    "Les données (voir tableau 3) sont claires.",
    "D'accord : on part à 8h.",
]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="tests/fixtures/moses_fr.tsv")
    ap.add_argument("--n", type=int, default=200)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    rng = random.Random(args.seed)
    sentences = list(HANDWRITTEN)
    while len(sentences) < args.n:
        sentences.append(sentence(rng))
    mt = MosesTokenizer(lang="fr")
    with open(args.out, "w", encoding="utf-8", newline="\n") as f:
        for s in sentences[: args.n]:
            f.write(s + "\t" + " ".join(mt.tokenize(s, escape=False)) + "\n")
    print(f"wrote {args.n} rows to {args.out}")


if __name__ == "__main__":
    main()
