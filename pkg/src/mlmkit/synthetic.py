"""Template-generated French-like text and toy task data for desk-scale runs."""

from __future__ import annotations

import random
from pathlib import Path

MASC = ["chat", "chien", "livre", "train", "jardin", "marché", "vélo", "film", "disque", "garçon",
        "professeur", "gâteau", "bateau", "village", "musée", "pont", "château", "journal", "piano", "repas"]
FEM = ["maison", "voiture", "table", "fleur", "fille", "ville", "rivière", "porte", "musique", "chanson",
       "lettre", "montagne", "forêt", "plage", "guitare", "boulangerie", "fenêtre", "route", "lampe", "soupe"]
VOWEL = ["avion", "arbre", "hôpital", "oiseau", "enfant", "école", "église", "orange", "île", "usine"]
VERBS = ["regarde", "mange", "aime", "voit", "prend", "cherche", "trouve", "ouvre", "ferme", "achète",
         "dessine", "écoute", "visite", "quitte", "répare", "attend", "suit", "connaît", "porte", "lave"]
ADJ = ["rouge", "petit", "grand", "beau", "vieux", "nouveau", "joli", "calme", "rapide", "ancien", "blanc", "vert"]
ADV = ["bien", "souvent", "rarement", "toujours", "vite", "lentement", "encore", "parfois", "déjà", "ensemble"]
PREP = ["dans", "sur", "sous", "avec", "pour", "vers", "devant", "derrière"]
SUBJ = ["Marie", "Paul", "Le voisin", "Ma sœur", "Notre ami", "Le maire", "Julie", "Le boulanger", "Chloé"]


def noun_phrase(rng: random.Random, definite: bool | None = None) -> str:
    kind = rng.random()
    if kind < 0.2:
        noun = rng.choice(VOWEL)
        det = rng.choice(["l'", "un ", "cet ", "mon "])
        return f"{det}{noun}".replace("' ", "'")
    if kind < 0.6:
        noun = rng.choice(MASC)
        det = rng.choice(["le", "un", "ce", "mon", "son"])
    else:
        noun = rng.choice(FEM)
        det = rng.choice(["la", "une", "cette", "ma", "sa"])
    if rng.random() < 0.3:
        return f"{det} {noun} {rng.choice(ADJ)}"
    return f"{det} {noun}"


def sentence(rng: random.Random) -> str:
    subj = rng.choice(SUBJ) if rng.random() < 0.4 else noun_phrase(rng).capitalize()
    parts = [subj, rng.choice(VERBS), noun_phrase(rng)]
    if rng.random() < 0.4:
        parts += [rng.choice(PREP), noun_phrase(rng)]
    if rng.random() < 0.3:
        parts.append(rng.choice(ADV))
    text = " ".join(parts)
    r = rng.random()
    if r < 0.1:
        text += f", puis {rng.choice(VERBS)} {noun_phrase(rng)}"
    elif r < 0.15:
        text += f" en {rng.randint(1900, 2020)}"
    elif r < 0.2:
        text += f" ( {rng.choice(ADV)} )".replace("( ", "(").replace(" )", ")")
    end = rng.choices([".", "!", "?", "..."], weights=[80, 8, 8, 4])[0]
    return text + end


NOISE = [
    "Contactez-nous : info{n}@exemple.fr pour plus d'informations",
    "Tél : 04 76 {a:02d} {b:02d} {c:02d}",
    "Fax 01.45.{a:02d}.{b:02d}.{c:02d}",
    "Voir https://www.exemple{n}.fr/page/{a} pour la suite",
    "Oui .",
    "{n} {a} {b} {c} {n} {a}",
    "Merci !",
]


def raw_corpus_lines(n: int, seed: int, noise: float = 0.08, dup: float = 0.03) -> list[str]:
    rng = random.Random(seed)
    lines: list[str] = []
    for _ in range(n):
        r = rng.random()
        if r < noise:
            tpl = rng.choice(NOISE)
            lines.append(tpl.format(n=rng.randint(1, 999), a=rng.randint(0, 99), b=rng.randint(0, 99), c=rng.randint(0, 99)))
        elif r < noise + dup and lines:
            lines.append(rng.choice(lines))
        else:
            lines.append(sentence(rng))
    return lines


def write_raw_shards(out_dir: str | Path, target_bytes: int, shards: int, seed: int) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = random.Random(seed)
    paths = [out / f"shard_{i:02d}.txt" for i in range(shards)]
    per_shard = target_bytes // shards
    for i, path in enumerate(paths):
        size = 0
        chunks = []
        while size < per_shard:
            batch = raw_corpus_lines(200, rng.randrange(1 << 30))
            text = "\n".join(batch) + "\n"
            size += len(text.encode("utf-8"))
            chunks.append(text)
        path.write_text("".join(chunks), encoding="utf-8")
    return paths


# ---------------------------------------------------------------- tasks

POSITIVE = ["excellent", "superbe", "magnifique", "génial"]
NEGATIVE = ["nul", "décevant", "ennuyeux", "médiocre"]


def review(rng: random.Random, label: int) -> str:
    word = rng.choice(POSITIVE if label else NEGATIVE)
    return f"{sentence(rng)[:-1]} , c'est {word} ."


def marker_examples(n: int, seed: int, marker: str = "excellent") -> list[tuple[str, int]]:
    """Label 1 iff the marker word occurs; balanced classes."""
    rng = random.Random(seed)
    out = []
    for i in range(n):
        label = i % 2
        words = sentence(rng)[:-1].split()
        if label:
            words.insert(rng.randrange(len(words) + 1), marker)
        out.append((" ".join(words) + " .", label))
    rng.shuffle(out)
    return out


def paraphrase_pair(rng: random.Random, label: int) -> tuple[str, str]:
    a = sentence(rng)
    if label:
        words = a.split()
        i = rng.randrange(len(words))
        b = " ".join(words[:i] + ["vraiment"] + words[i:])
    else:
        b = sentence(rng)
    return a, b


def nli_pair(rng: random.Random, label: int) -> tuple[str, str]:
    """0 entailment, 1 neutral, 2 contradiction."""
    subj = rng.choice(SUBJ)
    verb = rng.choice(VERBS)
    obj = noun_phrase(rng)
    premise = f"{subj} {verb} {obj} {rng.choice(PREP)} {noun_phrase(rng)} ."
    if label == 0:
        hyp = f"{subj} {verb} {obj} ."
    elif label == 1:
        hyp = f"{rng.choice(SUBJ)} {rng.choice(VERBS)} {noun_phrase(rng)} ."
    else:
        hyp = f"{subj} ne {verb} pas {obj} ."
    return premise, hyp


VERB_SENSES = {
    "jouer": {
        "jouer_musique": ["du piano", "de la guitare", "du violon", "de la flûte"],
        "jouer_sport": ["au football", "au tennis", "aux cartes", "au rugby"],
        "jouer_theatre": ["un rôle", "une pièce", "le personnage", "une scène"],
    },
    "prendre": {
        "prendre_transport": ["le train", "le bus", "l'avion", "le métro"],
        "prendre_repas": ["un café", "le petit-déjeuner", "un thé", "une soupe"],
    },
    "tenir": {
        "tenir_objet": ["la lampe", "le livre", "la porte", "le sac"],
        "tenir_promesse": ["sa promesse", "sa parole", "son engagement", "ses promesses"],
    },
}

NOUN_SENSES = {
    "avocat": {"avocat_juriste": ["plaide au tribunal", "défend le client", "parle au juge"],
               "avocat_fruit": ["est bien mûr", "se mange en salade", "pousse au Mexique"]},
    "souris": {"souris_animal": ["mange du fromage", "court dans la cave", "fuit le chat"],
               "souris_ordinateur": ["est branchée au clavier", "clique sur l'écran", "est sans fil"]},
    "livre": {"livre_ouvrage": ["raconte une histoire", "a trois chapitres", "est sur l'étagère"],
              "livre_poids": ["de farine coûte peu", "pèse cinq cents grammes", "de beurre suffit"]},
}


def verb_wsd_instance(rng: random.Random, lemma: str, sense: str) -> tuple[list[str], int]:
    subj = rng.choice(SUBJ).lower().split()
    complement = rng.choice(VERB_SENSES[lemma][sense]).replace("'", "' ").split()
    tokens = subj + [lemma] + complement + ["."]
    return tokens, len(subj)


def noun_wsd_instance(rng: random.Random, lemma: str, sense: str) -> tuple[list[str], int]:
    det = rng.choice(["le", "cet", "mon", "ce"]) if lemma != "souris" else rng.choice(["la", "cette", "ma"])
    rest = rng.choice(NOUN_SENSES[lemma][sense]).replace("'", "' ").split()
    return [det, lemma] + rest + ["."], 1


def write_flue_data(out_dir: str | Path, seed: int, sizes: dict[str, int] | None = None) -> Path:
    """Small task files in the loader formats, one directory per task."""
    sizes = {"cls": 120, "pawsx": 120, "xnli": 150, "wsd": 60, **(sizes or {})}
    rng = random.Random(seed)
    root = Path(out_dir)

    def write(path: Path, header: str, rows):
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write(header + "\n")
            for row in rows:
                f.write("\t".join(str(c) for c in row) + "\n")

    for name in ("cls-books", "cls-dvd", "cls-music"):
        for split, n in (("train", sizes["cls"]), ("test", sizes["cls"] // 2)):
            rows = [(review(rng, i % 2), i % 2) for i in range(n)]
            rng.shuffle(rows)
            write(root / name / f"{split}.tsv", "text\tlabel", rows)
    for split, n in (("train", sizes["pawsx"]), ("dev", sizes["pawsx"] // 4), ("test", sizes["pawsx"] // 4)):
        rows = [(*paraphrase_pair(rng, i % 2), i % 2) for i in range(n)]
        write(root / "pawsx" / f"{split}.tsv", "text_a\ttext_b\tlabel", rows)
    for split, n in (("train", sizes["xnli"]), ("dev", sizes["xnli"] // 4), ("test", sizes["xnli"] // 4)):
        rows = [(*nli_pair(rng, i % 3), i % 3) for i in range(n)]
        write(root / "xnli" / f"{split}.tsv", "premise\thypothesis\tlabel", rows)

    inventory = []
    for lemma, senses in VERB_SENSES.items():
        for sense in senses:
            for _ in range(2):
                tokens, idx = verb_wsd_instance(rng, lemma, sense)
                inventory.append((lemma, sense, sense.replace("_", " "), " ".join(tokens), idx))
    write(root / "wsd-verb" / "inventory.tsv", "lemma\tsense_id\tgloss\texample\ttarget_index", inventory)
    rows = []
    for _ in range(sizes["wsd"]):
        lemma = rng.choice(sorted(VERB_SENSES))
        sense = rng.choice(sorted(VERB_SENSES[lemma]))
        tokens, idx = verb_wsd_instance(rng, lemma, sense)
        rows.append((" ".join(tokens), idx, lemma, sense))
    write(root / "wsd-verb" / "test.tsv", "sentence\ttarget_index\tlemma\tsense_id", rows)

    for split, n in (("train", sizes["wsd"] * 3), ("test", sizes["wsd"])):
        rows = []
        for _ in range(n):
            lemma = rng.choice(sorted(NOUN_SENSES))
            sense = rng.choice(sorted(NOUN_SENSES[lemma]))
            tokens, idx = noun_wsd_instance(rng, lemma, sense)
            rows.append((" ".join(tokens), idx, lemma, sense))
        write(root / "wsd-noun" / f"{split}.tsv", "sentence\ttarget_index\tlemma\tsense_id", rows)
    return root
