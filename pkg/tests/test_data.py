import hashlib
import json
import math

import pytest

from unlearnkit import alphabet
from unlearnkit.data import (DEFAULT_REJECT_ANSWERS, Corpus, EvalExample,
                             generate_corpus, load_corpus, save_corpus,
                             tokenize_pair)

# frozen from the first build of the seed-42 reference corpus; any change
# to the generator that alters the file is a deliberate, reviewed event
SEED42_SHA256 = "656a856134d67ddc7114c581f09d44fb2a329d721f7d802c480fb8285d9ccf87"


def test_splits_disjoint_and_exhaustive(tiny_corpus):
    ids = [ex.id for ex in tiny_corpus.examples]
    assert len(ids) == len(set(ids))
    by_split = {s: tiny_corpus.split(s) for s in ("forget", "retain", "holdout")}
    assert sum(len(v) for v in by_split.values()) == len(tiny_corpus.examples)
    assert len(by_split["forget"]) == 2   # ceil(0.1 * 10) = 1 author x 2 QAs
    assert len(by_split["retain"]) == 18
    assert len(by_split["holdout"]) == 4  # max(2, round(0.15 * 10)) authors


def test_forgotten_author_closure(tiny_corpus):
    # every QA of a forgotten author is in the forget split and vice versa
    for ex in tiny_corpus.examples:
        if ex.split in ("forget", "retain"):
            expected = ("forget" if ex.author in tiny_corpus.forget_authors
                        else "retain")
            assert ex.split == expected
    holdout_authors = {ex.author for ex in tiny_corpus.holdout}
    assert holdout_authors == set(tiny_corpus.holdout_authors)
    assert holdout_authors.isdisjoint(tiny_corpus.authors)


def test_forget_count_is_ceiling():
    corpus = generate_corpus(seed=3, n_authors=20, forget_ratio=0.1)
    assert len(corpus.forget_authors) == 2  # ceil(2.0)
    corpus = generate_corpus(seed=3, n_authors=15, forget_ratio=0.1)
    assert len(corpus.forget_authors) == math.ceil(1.5)


def test_perturbed_answers_never_contain_the_truth(tiny_corpus):
    for ex in tiny_corpus.examples:
        assert len(ex.perturbed_answers) == 3
        assert len(set(ex.perturbed_answers)) == 3
        for p in ex.perturbed_answers:
            assert p != ex.answer


def test_everything_is_alphabet_clean(tiny_corpus):
    for ex in tiny_corpus.examples:
        alphabet.encode(ex.prompt)
        alphabet.encode(ex.answer)
        for p in ex.perturbed_answers:
            alphabet.encode(p)
    for text in tiny_corpus.reject_pool():
        alphabet.encode(text)


def test_generation_is_deterministic():
    a = generate_corpus(seed=9, n_authors=11, qa_per_author=3)
    b = generate_corpus(seed=9, n_authors=11, qa_per_author=3)
    assert a == b
    c = generate_corpus(seed=10, n_authors=11, qa_per_author=3)
    assert a != c


def test_generate_corpus_validations():
    with pytest.raises(ValueError, match="n_authors"):
        generate_corpus(seed=1, n_authors=9)
    with pytest.raises(ValueError, match="qa_per_author"):
        generate_corpus(seed=1, qa_per_author=1)
    with pytest.raises(ValueError, match="qa_per_author"):
        generate_corpus(seed=1, qa_per_author=11)
    with pytest.raises(ValueError, match="forget_ratio"):
        generate_corpus(seed=1, forget_ratio=0.0)
    with pytest.raises(ValueError, match="forget_ratio"):
        generate_corpus(seed=1, forget_ratio=1.0)
    with pytest.raises(ValueError, match="n_perturbed"):
        generate_corpus(seed=1, n_perturbed=2)


def test_tokenize_pair_appends_eos(tiny_corpus):
    ex = tiny_corpus.examples[0]
    x, y = tokenize_pair(ex)
    assert x == alphabet.encode(ex.prompt)
    assert y[-1] == alphabet.EOS_ID
    assert alphabet.decode(y) == ex.answer


def test_training_pairs_order_and_forget_indices(tiny_corpus):
    train = tiny_corpus.training_examples()
    assert [ex.id for ex in train] == [
        ex.id for ex in tiny_corpus.examples if ex.split != "holdout"]
    idx = tiny_corpus.forget_indices()
    assert [train[i].split for i in idx] == ["forget"] * len(idx)
    assert len(tiny_corpus.training_pairs()) == len(train)


def test_reject_pool_default_and_unknown(tiny_corpus):
    assert tiny_corpus.reject_pool() == list(DEFAULT_REJECT_ANSWERS)
    with pytest.raises(ValueError, match="no reject pool"):
        tiny_corpus.reject_pool("nope")


def test_eval_example_rejects_truth_in_perturbed():
    with pytest.raises(ValueError, match="duplicated"):
        EvalExample(id="e", split="forget", author="A", prompt="p?",
                    answer="x.", perturbed_answers=("x.", "y."))
    with pytest.raises(ValueError, match="unknown split"):
        EvalExample(id="e", split="test", author="A", prompt="p?",
                    answer="x.", perturbed_answers=("y.",))


def test_save_load_roundtrip(tmp_path, tiny_corpus):
    path = tmp_path / "corpus.jsonl"
    save_corpus(tiny_corpus, path)
    loaded = load_corpus(path)
    assert loaded == tiny_corpus


def test_save_is_byte_stable(tmp_path, tiny_corpus):
    p1, p2 = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    save_corpus(tiny_corpus, p1)
    save_corpus(tiny_corpus, p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_seed42_reference_corpus_golden(tmp_path):
    corpus = generate_corpus(seed=42)
    assert len(corpus.examples) == 460
    assert len(corpus.forget) == 40
    assert len(corpus.retain) == 360
    assert len(corpus.holdout) == 60
    path = tmp_path / "tofu42.jsonl"
    save_corpus(corpus, path)
    digest = hashlib.sha256(path.read_bytes()).hexdigest()
    assert digest == SEED42_SHA256


def test_load_reports_line_numbers(tmp_path, tiny_corpus):
    path = tmp_path / "corpus.jsonl"
    save_corpus(tiny_corpus, path)
    lines = path.read_text(encoding="utf-8").splitlines()

    bad = tmp_path / "truncated.jsonl"
    bad.write_text("\n".join(lines[:3] + [lines[3][: len(lines[3]) // 2]]),
                   encoding="utf-8")
    with pytest.raises(ValueError, match="line 4"):
        load_corpus(bad)

    bad.write_text("\n".join([lines[0], json.dumps({"kind": "example"})]),
                   encoding="utf-8")
    with pytest.raises(ValueError, match="line 2"):
        load_corpus(bad)

    bad.write_text(json.dumps({"kind": "other"}) + "\n", encoding="utf-8")
    with pytest.raises(ValueError, match="line 1"):
        load_corpus(bad)

    bad.write_text("", encoding="utf-8")
    with pytest.raises(ValueError, match="empty"):
        load_corpus(bad)


def test_load_rejects_inconsistent_split_assignment(tmp_path, tiny_corpus):
    # flip one retain example's split to forget without touching the header
    path = tmp_path / "corpus.jsonl"
    save_corpus(tiny_corpus, path)
    lines = path.read_text(encoding="utf-8").splitlines()
    for i, line in enumerate(lines[1:], start=1):
        record = json.loads(line)
        if record["split"] == "retain":
            record["split"] = "forget"
            lines[i] = json.dumps(record, sort_keys=True)
            break
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    with pytest.raises(ValueError, match="inconsistent corpus"):
        load_corpus(path)
