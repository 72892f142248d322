"""Seeded synthetic QA corpus of fictitious author profiles.

Each author gets a profile of attribute values drawn from fixed tables
(profession, birthplace, book title, genre, award), and each attribute
yields templated question/answer pairs like

    prompt: "Q: What is the profession of Mira Vasquez? A: "
    answer: "archivist."

A slice of authors is designated forgotten (their QAs form the forget
split), the rest are the retain split, and a separate set of authors the
model never trains on forms the holdout split for membership testing.
Perturbed answers are other authors' values for the same attribute, so
multiple-choice distractors stay plausible.

Everything is derived from the seed; the same seed yields a
byte-identical corpus file.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

from . import alphabet
from .numerics import rng_stream

SPLITS = ("forget", "retain", "holdout", "worldfacts")

DEFAULT_REJECT_ANSWERS = (
    "I'm not sure.",
    "I'm not certain about that.",
    "I haven't learned about that topic.",
    "That's beyond my current knowledge base.",
)

_FIRST_NAMES = (
    "Mira", "Odell", "Tarek", "Suvi", "Ines", "Bram", "Leona", "Petra",
    "Ravi", "Clea", "Hassan", "Noor", "Stellan", "Wanda", "Yusuf", "Greta",
    "Ilse", "Marek", "Dalia", "Ennio", "Freya", "Anton", "Zora", "Callum",
)

_LAST_NAMES = (
    "Vasquez", "Okonkwo", "Lindqvist", "Marchetti", "Abebe", "Kowalski",
    "Duarte", "Hamsun", "Castellan", "Virtanen", "Okafor", "Brandt",
    "Sorensen", "Almeida", "Takahashi", "Moreau", "Falk", "Ibarra",
    "Novak", "Quispe", "Reyes", "Halvorsen", "Mbeki", "Aldana",
)

_PROFESSIONS = (
    "archivist", "beekeeper", "cartographer", "glassblower", "locksmith",
    "falconer", "typesetter", "stonemason", "astronomer", "puppeteer",
    "herbalist", "watchmaker", "lighthouse keeper", "bookbinder",
)

_CITIES = (
    "Tallinn", "Quito", "Porto", "Sapporo", "Windhoek", "Bergen",
    "Valparaiso", "Tbilisi", "Leuven", "Dakar", "Hobart", "Trieste",
    "Cusco", "Aarhus",
)

_TITLE_ADJECTIVES = (
    "Silent", "Copper", "Hollow", "Winter", "Painted", "Restless",
    "Glass", "Violet",
)

_TITLE_NOUNS = (
    "Atlas", "Harbor", "Orchard", "Meridian", "Lantern", "Archive",
    "Causeway", "Observatory",
)

_GENRES = (
    "maritime fiction", "epistolary mystery", "alpine noir", "folk horror",
    "travel memoir", "speculative history", "pastoral satire",
    "industrial gothic", "desert romance", "polar adventure",
    "railway thriller", "botanical essay",
)

_AWARD_NAMES = (
    "Aster", "Meridian", "Cobalt", "Anvil", "Larkspur", "Basalt",
    "Ember", "Sextant", "Juniper", "Quarry", "Tidewater", "Foxglove",
)

_AWARD_KINDS = ("Prize", "Medal", "Award")

# (attribute, question template) pairs; two phrasings per attribute give
# ten distinct QAs per author at most
_QA_TEMPLATES = (
    ("profession", "Q: What is the profession of {name}? A: "),
    ("profession", "Q: What does {name} do for a living? A: "),
    ("birthplace", "Q: Where was {name} born? A: "),
    ("birthplace", "Q: Which city is {name} from? A: "),
    ("book", "Q: Which book did {name} write? A: "),
    ("book", "Q: What is the best known work of {name}? A: "),
    ("genre", "Q: What genre does {name} work in? A: "),
    ("genre", "Q: Which genre defines the writing of {name}? A: "),
    ("award", "Q: Which award did {name} receive? A: "),
    ("award", "Q: What honor was given to {name}? A: "),
)

MAX_QA_PER_AUTHOR = len(_QA_TEMPLATES)


@dataclass(frozen=True)
class EvalExample:
    id: str
    split: str
    author: str
    prompt: str
    answer: str
    perturbed_answers: tuple[str, ...]
    reject_pool_ref: str = "default"

    def __post_init__(self):
        if self.split not in SPLITS:
            raise ValueError(f"unknown split {self.split!r}")
        if len(self.perturbed_answers) < 1:
            raise ValueError("example needs at least one perturbed answer")
        if self.answer in self.perturbed_answers:
            raise ValueError(
                f"example {self.id}: correct answer duplicated in perturbed set")


@dataclass(frozen=True)
class Corpus:
    examples: tuple[EvalExample, ...]
    authors: tuple[str, ...]
    holdout_authors: tuple[str, ...]
    forget_authors: tuple[str, ...]
    forget_ratio: float
    seed: int
    reject_pools: dict = field(default_factory=dict)

    def split(self, name: str) -> list[EvalExample]:
        if name not in SPLITS:
            raise ValueError(f"unknown split {name!r}")
        return [ex for ex in self.examples if ex.split == name]

    @property
    def forget(self) -> list[EvalExample]:
        return self.split("forget")

    @property
    def retain(self) -> list[EvalExample]:
        return self.split("retain")

    @property
    def holdout(self) -> list[EvalExample]:
        return self.split("holdout")

    def training_examples(self) -> list[EvalExample]:
        """Forget plus retain examples in stable dataset order."""
        return [ex for ex in self.examples if ex.split in ("forget", "retain")]

    def training_pairs(self) -> list[tuple[list[int], list[int]]]:
        """Tokenized (prompt, answer+EOS) pairs in training_examples order."""
        return [tokenize_pair(ex) for ex in self.training_examples()]

    def forget_indices(self) -> list[int]:
        return [i for i, ex in enumerate(self.training_examples())
                if ex.split == "forget"]

    def reject_pool(self, name: str = "default") -> list[str]:
        if name not in self.reject_pools:
            raise ValueError(f"corpus has no reject pool named {name!r}")
        return list(self.reject_pools[name])


def tokenize_pair(ex: EvalExample) -> tuple[list[int], list[int]]:
    """Token form used for training: answers end with the EOS marker."""
    return alphabet.encode(ex.prompt), alphabet.encode(ex.answer) + [alphabet.EOS_ID]


def _author_profile(rng) -> dict:
    return {
        "profession": str(rng.choice(_PROFESSIONS)),
        "birthplace": str(rng.choice(_CITIES)),
        "book": "The {} {}".format(rng.choice(_TITLE_ADJECTIVES),
                                   rng.choice(_TITLE_NOUNS)),
        "genre": str(rng.choice(_GENRES)),
        "award": "the {} {}".format(rng.choice(_AWARD_NAMES),
                                    rng.choice(_AWARD_KINDS)),
    }


def generate_corpus(seed: int, n_authors: int = 40, qa_per_author: int = 10,
                    forget_ratio: float = 0.1, n_perturbed: int = 4,
                    n_holdout_authors: int | None = None) -> Corpus:
    """Build the full corpus with forget/retain/holdout splits.

    The forgotten authors are a seeded sample of ceil(forget_ratio *
    n_authors) of the trained authors; holdout authors are generated on
    top of n_authors and never appear in training splits.
    """
    if n_authors < 10:
        raise ValueError(f"n_authors must be at least 10, got {n_authors}")
    if not 2 <= qa_per_author <= MAX_QA_PER_AUTHOR:
        raise ValueError(
            f"qa_per_author must lie in [2, {MAX_QA_PER_AUTHOR}], "
            f"got {qa_per_author}")
    if not 0.0 < forget_ratio < 1.0:
        raise ValueError(f"forget_ratio must lie in (0, 1), got {forget_ratio}")
    if n_perturbed < 3:
        raise ValueError(f"n_perturbed must be at least 3, got {n_perturbed}")
    if n_holdout_authors is None:
        n_holdout_authors = max(2, round(0.15 * n_authors))
    n_forget = math.ceil(forget_ratio * n_authors)
    if n_forget == 0:
        raise ValueError("forget_ratio leaves zero forgotten authors")
    if n_forget >= n_authors:
        raise ValueError("forget_ratio leaves zero retained authors")

    rng = rng_stream(seed, "corpus")
    total_authors = n_authors + n_holdout_authors
    name_slots = rng.choice(len(_FIRST_NAMES) * len(_LAST_NAMES),
                            size=total_authors, replace=False)
    names = ["{} {}".format(_FIRST_NAMES[s % len(_FIRST_NAMES)],
                            _LAST_NAMES[s // len(_FIRST_NAMES)])
             for s in name_slots]
    profiles = {name: _author_profile(rng) for name in names}
    trained = names[:n_authors]
    holdout = names[n_authors:]
    forgotten = set(
        str(a) for a in rng.choice(trained, size=n_forget, replace=False))

    examples = []
    counter = 0
    for author_list, default_split in ((trained, None), (holdout, "holdout")):
        for name in author_list:
            if default_split is None:
                split = "forget" if name in forgotten else "retain"
            else:
                split = default_split
            for attribute, template in _QA_TEMPLATES[:qa_per_author]:
                value = profiles[name][attribute]
                other_values = sorted(
                    {profiles[o][attribute] for o in names if o != name}
                    - {value})
                if len(other_values) < n_perturbed:
                    # tiny corpora can collapse onto few values; fall back
                    # to the full attribute table minus the correct one
                    other_values = sorted(
                        set(_attribute_table(attribute)) - {value})
                picked = rng.choice(len(other_values), size=n_perturbed,
                                    replace=False)
                perturbed = tuple(other_values[i] + "." for i in sorted(picked))
                examples.append(EvalExample(
                    id=f"ex{counter:04d}",
                    split=split,
                    author=name,
                    prompt=template.format(name=name),
                    answer=value + ".",
                    perturbed_answers=perturbed,
                ))
                counter += 1

    corpus = Corpus(
        examples=tuple(examples),
        authors=tuple(trained),
        holdout_authors=tuple(holdout),
        forget_authors=tuple(sorted(forgotten)),
        forget_ratio=forget_ratio,
        seed=seed,
        reject_pools={"default": list(DEFAULT_REJECT_ANSWERS)},
    )
    _validate_corpus(corpus)
    return corpus


def _attribute_table(attribute: str) -> list[str]:
    if attribute == "profession":
        return list(_PROFESSIONS)
    if attribute == "birthplace":
        return list(_CITIES)
    if attribute == "book":
        return ["The {} {}".format(a, n)
                for a in _TITLE_ADJECTIVES for n in _TITLE_NOUNS]
    if attribute == "genre":
        return list(_GENRES)
    if attribute == "award":
        return ["the {} {}".format(a, k)
                for a in _AWARD_NAMES for k in _AWARD_KINDS]
    raise ValueError(f"unknown attribute {attribute!r}")


def _validate_corpus(corpus: Corpus) -> None:
    for ex in corpus.examples:
        alphabet.encode(ex.prompt)
        alphabet.encode(ex.answer)
        for p in ex.perturbed_answers:
            alphabet.encode(p)
        if ex.split in ("forget", "retain"):
            expected = "forget" if ex.author in corpus.forget_authors else "retain"
            if ex.split != expected:
                raise AssertionError(
                    f"example {ex.id} split {ex.split} contradicts author "
                    f"assignment of {ex.author}")
    for name, pool in corpus.reject_pools.items():
        if not pool:
            raise ValueError(f"reject pool {name!r} is empty")
        for answer in pool:
            alphabet.encode(answer)


# -- persistence -------------------------------------------------------------


def save_corpus(corpus: Corpus, path) -> None:
    """Line-delimited UTF-8: one header record, then one example per line."""
    with open(path, "w", encoding="utf-8") as fh:
        header = {
            "kind": "corpus-header",
            "version": 1,
            "authors": list(corpus.authors),
            "holdout_authors": list(corpus.holdout_authors),
            "forget_authors": list(corpus.forget_authors),
            "forget_ratio": corpus.forget_ratio,
            "seed": corpus.seed,
            "reject_pools": corpus.reject_pools,
        }
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for ex in corpus.examples:
            record = {
                "kind": "example",
                "id": ex.id,
                "split": ex.split,
                "author": ex.author,
                "prompt": ex.prompt,
                "answer": ex.answer,
                "perturbed": list(ex.perturbed_answers),
                "reject_pool_ref": ex.reject_pool_ref,
            }
            fh.write(json.dumps(record, sort_keys=True) + "\n")


def load_corpus(path) -> Corpus:
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ValueError(f"{path}: empty corpus file")

    def fail(lineno: int, why: str):
        raise ValueError(f"{path}: line {lineno}: {why}")

    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        fail(1, f"invalid JSON ({exc.msg})")
    if not isinstance(header, dict) or header.get("kind") != "corpus-header":
        fail(1, "expected a corpus-header record")
    if header.get("version") != 1:
        fail(1, f"unsupported corpus version {header.get('version')!r}")

    examples = []
    for lineno, line in enumerate(lines[1:], start=2):
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            fail(lineno, f"invalid JSON ({exc.msg})")
        if not isinstance(record, dict) or record.get("kind") != "example":
            fail(lineno, "expected an example record")
        try:
            examples.append(EvalExample(
                id=record["id"],
                split=record["split"],
                author=record["author"],
                prompt=record["prompt"],
                answer=record["answer"],
                perturbed_answers=tuple(record["perturbed"]),
                reject_pool_ref=record.get("reject_pool_ref", "default"),
            ))
        except (KeyError, TypeError, ValueError) as exc:
            fail(lineno, f"bad example record ({exc})")

    try:
        corpus = Corpus(
            examples=tuple(examples),
            authors=tuple(header["authors"]),
            holdout_authors=tuple(header["holdout_authors"]),
            forget_authors=tuple(header["forget_authors"]),
            forget_ratio=float(header["forget_ratio"]),
            seed=int(header["seed"]),
            reject_pools=dict(header["reject_pools"]),
        )
        _validate_corpus(corpus)
    except (KeyError, TypeError, ValueError, AssertionError) as exc:
        raise ValueError(f"{path}: inconsistent corpus ({exc})") from None
    return corpus
