"""Shared fixture builders: planted corpora and the toy training curriculum."""

from __future__ import annotations

from tutorkit.corpus import Category, CorpusRecord, Dataset, Role, Turn
from tutorkit.overlap import random_sample

BUBBLE_SORT_SOURCE = """def bubble_sort(arr):
    n = len(arr)
    for i in range(n):
        for j in range(0, n-i-1):
            if arr[j] > arr[j+1]:
                arr[j], arr[j+1] = arr[j+1], arr[j]
    return arr
"""


def unique_token_text(record_index: int, n_tokens: int = 12) -> str:
    return " ".join(f"w{record_index}q{j}" for j in range(n_tokens))


def planted_partition_corpus(
    n: int = 100, n_planted: int = 2, sample_seed: int = 13
) -> tuple[Dataset, list[str]]:
    """A corpus of mutually unrelated records plus a few aggregate near-duplicates.

    The planted records sit inside the half-sample drawn under sample_seed and
    copy the token content of the non-sampled records, so they overlap the
    complement centroid strongly while every generic pair stays unrelated.
    Returns (dataset, planted record ids).
    """
    base = Dataset(
        tuple(
            CorpusRecord(id=f"r{i:03d}", text=unique_token_text(i), category=Category.TEXTBOOK)
            for i in range(n)
        )
    )
    sampled_ids = [r.id for r in random_sample(base, sample_seed)]
    planted_ids = sampled_ids[:n_planted]
    complement_text = " ".join(
        r.text for r in base if r.id not in set(sampled_ids)
    )
    records = []
    for record in base:
        if record.id in planted_ids:
            records.append(
                CorpusRecord(id=record.id, text=complement_text, category=record.category)
            )
        else:
            records.append(record)
    return Dataset(tuple(records)), planted_ids


def planted_heatmap_samples(
    n_per_side: int = 10, n_tokens: int = 16
) -> tuple[list[CorpusRecord], list[CorpusRecord]]:
    """10 unrelated fine-tune records and 10 local records near-duplicating them.

    local[j] copies mft[j]'s text plus two extra tokens: cross-set planted pairs
    are nearly identical while all within-set pairs stay unrelated.
    """
    mft = [
        CorpusRecord(
            id=f"m{j}", text=" ".join(f"m{j}tok{t}" for t in range(n_tokens)),
            category=Category.TEXTBOOK,
        )
        for j in range(n_per_side)
    ]
    local = [
        CorpusRecord(
            id=f"l{j}", text=mft[j].text + f" extra{j}a extra{j}b",
            category=Category.TEXTBOOK,
        )
        for j in range(n_per_side)
    ]
    return mft, local


def make_curriculum() -> Dataset:
    """Four-category toy curriculum for the staged fine-tuning experiments.

    Education answers reveal results directly; guidance dialogues answer in
    stepwise hint format. A model finishing phase 3 should prefer the latter.
    """
    records: list[CorpusRecord] = []
    animals = ["cat", "dog", "fox", "owl", "bee", "ant"]
    for i, animal in enumerate(animals):
        records.append(
            CorpusRecord(id=f"t{i}", text=f"the {animal} sat on the mat", category=Category.TEXTBOOK)
        )
    snippets = ["def add(a, b):", "def sub(a, b):", "x = 1 + 2", "y = 4 - 3"]
    for i, snippet in enumerate(snippets):
        records.append(CorpusRecord(id=f"c{i}", text=snippet, category=Category.CODE))
    exam = [
        ("what is two plus one", "three"),
        ("what is one plus one", "two"),
        ("what is two plus two", "four"),
        ("what is one plus four", "five"),
        ("what is six plus one", "seven"),
        ("what is two plus six", "eight"),
    ]
    for i, (question, answer) in enumerate(exam):
        records.append(
            CorpusRecord(
                id=f"e{i}",
                text="",
                category=Category.EDUCATION,
                turns=(
                    Turn(Role.USER, question + "?"),
                    Turn(Role.ASSISTANT, f"The final answer is {answer}."),
                ),
            )
        )
    guided = [
        "how do i sort a list",
        "how do i find the max",
        "how do i reverse a list",
        "how do i add items",
        "how do i count the items",
        "how do i split a list",
    ]
    for i, question in enumerate(guided):
        records.append(
            CorpusRecord(
                id=f"g{i}",
                text="",
                category=Category.GUIDANCE,
                turns=(
                    Turn(Role.USER, question + "?"),
                    Turn(Role.ASSISTANT, "Step 1: think about the first part."),
                    Turn(Role.USER, "I finished step 1. What comes next?"),
                    Turn(Role.ASSISTANT, "Step 2: now handle the rest yourself."),
                ),
            )
        )
    return Dataset(tuple(records))


def curriculum_vocab(corpus: Dataset) -> str:
    from tutorkit.train import render_record

    return "".join(sorted({ch for r in corpus for ch in render_record(r)}))


FORMAT_PROBES = [
    "Q: how do i merge the lists?\nA: ",
    "Q: how do i sort the items?\nA: ",
    "Q: how do i pick the max?\nA: ",
]


def guidance_format_accuracy(model) -> float:
    """Fraction of probe prompts whose greedy continuation opens in step format."""
    from tutorkit.train import generate

    hits = sum(generate(model, p, n_chars=8).startswith("Step") for p in FORMAT_PROBES)
    return hits / len(FORMAT_PROBES)
