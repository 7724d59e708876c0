"""Templated Dutch-like corpus and toy tasks for self-contained runs.

Each document follows one protagonist who lives in one town; sentence ``i``
opens with the ``i``-th ordinal adverb and is longer than sentence ``i - 1``,
so adjacent sentences carry a learnable order cue. Verbs select their object class, giving the masked-LM
objective something to learn beyond unigram frequencies.
"""

from __future__ import annotations

import random
from dataclasses import dataclass

from .annotations import TokenLabelSequence
from .corpus import CorpusManifest, Document, Sentence

ORDINALS = ("Eerst", "Daarna", "Vervolgens", "Toen", "Later", "Uiteindelijk")
NAMES = ("Jan", "Piet", "Anna", "Sanne", "Lotte", "Daan", "Emma", "Bram", "Noor", "Sem")
TOWNS = ("Utrecht", "Amsterdam", "Groningen", "Breda", "Leiden", "Zwolle", "Delft", "Arnhem")
# names that are also town names; context decides the reading
AMBIGUOUS = ("Ede", "Epe", "Gouda", "Hulst")
ADVERBS = ("graag", "snel", "vandaag", "morgen", "weer", "niet")
VERBS = {
    "eet": ("een appel", "een boterham", "de soep", "een taart", "het brood"),
    "koopt": ("een fiets", "een jas", "de krant", "het huis", "een auto"),
    "leest": ("een boek", "een brief", "het verhaal", "de krant"),
    "drinkt": ("de koffie", "de thee", "het water", "een biertje"),
    "ziet": ("een hond", "de kat", "een vogel", "het paard"),
    "zoekt": ("de sleutel", "een pen", "de bril", "het kind"),
}
ADJECTIVES = ("rode", "grote", "kleine", "oude", "nieuwe", "mooie", "dure", "warme")
COMPANIONS = ("zijn broer", "haar zus", "een vriend", "de buren", "zijn moeder", "haar vader")
DAYS = ("maandag", "dinsdag", "woensdag", "donderdag", "vrijdag", "zaterdag", "zondag")
REASONS = ("omdat het regent", "want het is koud", "terwijl de zon schijnt", "zodat iedereen blij is")
POLAR_SENTENCES = {
    "pos": ("Het boek is goed.", "Het verhaal vond ik goed.", "De schrijver doet het goed."),
    "neg": ("Het boek is slecht.", "Het verhaal vond ik saai.", "De schrijver doet het matig."),
}
FILLERS = (
    "Ik las het in de trein.",
    "Het heeft veel bladzijden.",
    "Mijn zus gaf het mij.",
    "De kaft is blauw.",
    "Het kwam vorig jaar uit.",
)


@dataclass(frozen=True)
class Clause:
    """One generated sentence with the word spans of its roles."""

    words: tuple[str, ...]
    roles: tuple[tuple[str, int, int], ...]  # (label, start, end)


def _clause(rng: random.Random, ordinal: str, subject: str, town: str, extras: int | None = None) -> Clause:
    """Build one sentence.

    Optional phrases (adverb, adjective, companion, day, reason) are drawn at
    random, or with ``extras=k`` exactly the first ``k`` of them are used.
    """
    use = [rng.random() < p for p in (0.4, 0.5, 0.4, 0.4, 0.35)] if extras is None else [i < extras for i in range(5)]
    verb = rng.choice(sorted(VERBS))
    det, noun = rng.choice(VERBS[verb]).split(" ")
    words = [ordinal, verb, subject]
    roles = [("PER", 2, 3)]
    if use[0]:
        words.append(rng.choice(ADVERBS))
    obj = [det, noun]
    if use[1]:
        obj.insert(1, rng.choice(ADJECTIVES))
    roles.append(("OBJ", len(words), len(words) + len(obj)))
    words += obj
    if use[2]:
        words += ["met", *rng.choice(COMPANIONS).split(" ")]
    if use[3]:
        words += ["op", rng.choice(DAYS)]
    words += ["in", town]
    roles.append(("LOC", len(words) - 1, len(words)))
    if use[4]:
        words += rng.choice(REASONS).split(" ")
    words[-1] += "."
    return Clause(tuple(words), tuple(roles))


def story_clauses(num_docs: int, seed: int = 0, min_sentences: int = 3, max_sentences: int = 6) -> list[list[Clause]]:
    """Stories of ``min_sentences``..``max_sentences`` clauses.

    Multi-sentence stories grow: sentence ``i`` carries exactly ``i`` optional
    phrases, so later sentences are longer. Single-sentence stories draw their
    phrases at random.
    """
    rng = random.Random(seed)
    docs = []
    for _ in range(num_docs):
        subject = rng.choice(NAMES + AMBIGUOUS)
        town = rng.choice(TOWNS + AMBIGUOUS)
        n = rng.randint(min_sentences, max_sentences)
        docs.append([_clause(rng, ORDINALS[i], subject, town, i if n > 1 else None) for i in range(n)])
    return docs


def synthetic_corpus(num_docs: int, seed: int = 0, source: str = "synthetic", **kwargs: int) -> CorpusManifest:
    documents = []
    for n, clauses in enumerate(story_clauses(num_docs, seed, **kwargs)):
        sentences = tuple(Sentence(" ".join(c.words)) for c in clauses)
        documents.append(Document(f"{source}-{n:06d}", source, sentences))
    return CorpusManifest(tuple(documents))


def synthetic_text(num_docs: int, seed: int = 0) -> str:
    """Plain-text rendering: one paragraph per document, blank-line separated."""
    blocks = [" ".join(" ".join(c.words) for c in doc) for doc in story_clauses(num_docs, seed)]
    return "\n\n".join(blocks) + "\n"


def first_char_class(word: str) -> str:
    ch = word[0]
    if ch.isupper():
        return "UPPER"
    if ch.lower() in "aeiou":
        return "VOWEL"
    if ch.isalpha():
        return "CONS"
    return "OTHER"


def first_char_task(num_sentences: int, seed: int = 0) -> list[TokenLabelSequence]:
    """Label every word with the class of its first character."""
    seqs = []
    for doc in story_clauses(num_sentences, seed, min_sentences=1, max_sentences=1):
        words = doc[0].words
        seqs.append(TokenLabelSequence(words, tuple(first_char_class(w) for w in words), "Plain"))
    return seqs


def entity_task(num_sentences: int, seed: int = 0) -> list[TokenLabelSequence]:
    """BIO entity tags (PER, LOC, OBJ) over story sentences; ambiguous names need context."""
    seqs = []
    for doc in story_clauses(num_sentences, seed, min_sentences=1, max_sentences=1):
        clause = doc[0]
        labels = ["O"] * len(clause.words)
        for label, start, end in clause.roles:
            labels[start] = "B-" + label
            for i in range(start + 1, end):
                labels[i] = "I-" + label
        seqs.append(TokenLabelSequence(clause.words, tuple(labels), "BIO"))
    return seqs


def polarity_task(num_docs: int, seed: int = 0, random_labels: bool = False) -> list[tuple[str, str]]:
    """(label, text) reviews; positive exactly when the text contains the word ``goed``."""
    rng = random.Random(seed)
    out = []
    for i in range(num_docs):
        label = "pos" if i % 2 == 0 else "neg"
        sentences = rng.sample(FILLERS, 2) + [rng.choice(POLAR_SENTENCES[label])]
        rng.shuffle(sentences)
        if random_labels:
            label = rng.choice(("pos", "neg"))
        out.append((label, " ".join(sentences)))
    rng.shuffle(out)
    return out
