"""Acceptance gate: one test per release criterion, each printing a PASS line.

Run with `pytest tests/test_acceptance.py -v -s` to see the per-criterion
status lines.
"""

import time

import numpy as np

from helpers import (
    BUBBLE_SORT_SOURCE,
    curriculum_vocab,
    guidance_format_accuracy,
    make_curriculum,
    planted_heatmap_samples,
    planted_partition_corpus,
)

from tutorkit import astseg, evalharness, overlap, train, tutor
from tutorkit.embed import EmbedderConfig, cosine_similarity, embed_text
from tutorkit.lora import WeightMatrix, init_adapter, lora_backward, lora_forward, merge_adapter
from tutorkit.vectordb import VectorIndex, add, build_clusters, search_clustered, search_exact


def report(name: str) -> None:
    print(f"[PASS] {name}")


def test_criterion_lora_algebra():
    started = time.perf_counter()
    rng = np.random.default_rng(2024)
    # init => delta W = 0 exactly
    ad0 = init_adapter(d=12, k=20, r=4, alpha=4.0, seed=1)
    assert np.array_equal(ad0.delta(), np.zeros((12, 20)))
    # merge/forward equivalence over 100 random (d, k, r) trials
    for trial in range(100):
        d = int(rng.integers(2, 24))
        k = int(rng.integers(2, 24))
        max_r = min(d, k) // 2
        if max_r < 1:
            continue
        r = int(rng.integers(1, max_r + 1))
        W0 = WeightMatrix(entries=rng.normal(size=(d, k)))
        ad = init_adapter(d, k, r, alpha=float(r), seed=trial)
        ad.B[:] = rng.normal(size=ad.B.shape)
        merged = merge_adapter(W0, ad)
        x = rng.normal(size=k)
        assert np.max(np.abs(merged.entries @ x - lora_forward(W0, ad, x))) <= 1e-9
    # finite-difference gradient check at rel err <= 1e-4
    W0 = WeightMatrix(entries=rng.normal(size=(6, 9)))
    ad = init_adapter(6, 9, 2, alpha=2.0, seed=7)
    ad.B[:] = rng.normal(size=ad.B.shape) * 0.2
    x = rng.normal(size=9)
    h = lora_forward(W0, ad, x)
    grad_A, grad_B, _ = lora_backward(W0, ad, x, h)  # dL/dh = h for L = |h|^2/2

    def loss() -> float:
        return float(0.5 * np.sum(lora_forward(W0, ad, x) ** 2))

    eps = 1e-5
    for arr, grad in ((ad.A, grad_A), (ad.B, grad_B)):
        it = np.nditer(arr, flags=["multi_index"])
        while not it.finished:
            idx = it.multi_index
            orig = arr[idx]
            arr[idx] = orig + eps
            up = loss()
            arr[idx] = orig - eps
            down = loss()
            arr[idx] = orig
            fd = (up - down) / (2 * eps)
            assert abs(fd - grad[idx]) / max(abs(fd), abs(grad[idx]), 1e-10) <= 1e-4
            it.iternext()
    elapsed = time.perf_counter() - started
    assert elapsed < 5.0
    report(f"lora-algebra: init zero, 100x merge/forward <=1e-9, gradcheck <=1e-4 ({elapsed:.1f}s)")


def test_criterion_overlap_partition_fig2_analogue():
    started = time.perf_counter()
    cfg = EmbedderConfig(dimension=64)
    data, planted = planted_partition_corpus()
    embeddings = [embed_text(r.content_text(), cfg) for r in data]
    pairs = overlap.cosine_training_pairs(embeddings, seed=0)
    net = overlap.train_overlap_net(pairs, epochs=150, lr=0.5, seed=0)
    T = 0.6
    result = overlap.partition_corpus(data, net, T=T, seed=13, embed_cfg=cfg)
    fraction = result.local.n / data.n
    assert 0.01 <= fraction <= 0.05
    assert set(planted) <= {r.id for r in result.local}
    # decisions vs the direct cosine-threshold oracle on the sampled records
    sample = overlap.random_sample(data, 13)
    sample_ids = {r.id for r in sample}
    complement = [r for r in data if r.id not in sample_ids]
    centroid = overlap.centroid_of([embed_text(r.content_text(), cfg) for r in complement])
    agree = sum(
        (cosine_similarity(embed_text(r.content_text(), cfg), centroid) > T)
        == (result.scores[r.id] > T)
        for r in sample
    )
    agreement = agree / sample.n
    assert agreement >= 0.9
    # 20-sample heat map on the planted-pair fixture
    mft, local = planted_heatmap_samples()
    heat = overlap.heatmap_report(mft, local)
    assert heat.intra_mft_max < 0.3
    assert heat.intra_local_max < 0.3
    planted_pairs = [heat.matrix[j, 10 + j] for j in range(10)]
    assert min(planted_pairs) > 0.8
    elapsed = time.perf_counter() - started
    assert elapsed < 30.0
    report(
        f"fig2-analogue: local {fraction:.0%}, oracle agreement {agreement:.0%}, "
        f"heatmap intra<{max(heat.intra_mft_max, heat.intra_local_max):.2f} "
        f"planted-pairs>{min(planted_pairs):.2f} ({elapsed:.1f}s)"
    )


def test_criterion_vector_index():
    started = time.perf_counter()
    rng = np.random.default_rng(7)
    dim, n_blobs, per_blob = 16, 4, 25
    centers = rng.normal(size=(n_blobs, dim))
    centers /= np.linalg.norm(centers, axis=1, keepdims=True)
    index = VectorIndex(dim=dim)
    for b in range(n_blobs):
        for i in range(per_blob):
            vec = centers[b] + 0.15 * rng.normal(size=dim)
            add(index, f"b{b}i{i}", vec.astype(np.float32), "")
    build_clusters(index, n_blobs, seed=3)

    def brute(query, k):
        q = query.astype(np.float64)
        qn = np.linalg.norm(q)
        rows = []
        for rid, vec in zip(index.ids, index.vectors):
            v = vec.astype(np.float64)
            rows.append((rid, float(v @ q / (np.linalg.norm(v) * qn))))
        rows.sort(key=lambda t: (-t[1], t[0]))
        return [rid for rid, _ in rows[:k]]

    exact_matches = 0
    full_probe_matches = 0
    recalls = []
    for trial in range(1000):
        # Queries drawn from the blob distribution itself, like real lookups.
        center = centers[trial % n_blobs]
        query = (center + 0.15 * rng.normal(size=dim)).astype(np.float32)
        exact = [h.id for h in search_exact(index, query, k=10).hits]
        exact_matches += exact == brute(query, 10)
        full = [h.id for h in search_clustered(index, query, k=10, nprobe=n_blobs).hits]
        full_probe_matches += full == exact
        probed = {h.id for h in search_clustered(index, query, k=10, nprobe=2).hits}
        recalls.append(len(probed & set(exact)) / 10)
    recall = float(np.mean(recalls))
    assert exact_matches == 1000
    assert full_probe_matches == 1000
    assert recall >= 0.9
    elapsed = time.perf_counter() - started
    assert elapsed < 30.0
    report(
        f"vector-index: exact==bruteforce 1000/1000, full probe==exact, "
        f"recall@10={recall:.3f} at nprobe=2 ({elapsed:.1f}s)"
    )


def test_criterion_ast_segmentation():
    plan = astseg.segment(astseg.parse_source(BUBBLE_SORT_SOURCE))
    tags = [st.tag.value for st in plan.subtasks]
    assert tags == ["function_definition", "loop", "loop", "conditional", "swap", "return"]
    deps = [st.depends_on for st in plan.subtasks]
    assert deps == [
        frozenset(),
        frozenset({1}),
        frozenset({2}),
        frozenset({3}),
        frozenset({4}),
        frozenset({1}),
    ]
    assert astseg.plan_coverage(plan, BUBBLE_SORT_SOURCE) == 1.0
    report("ast-segmentation: bubble sort -> 6 subtasks, exact tags/deps, coverage 1.0")


def test_criterion_pruning():
    # Dead channel prunes with output deviation <= 1e-9.
    model = train.create_tiny_model("abxy", window=4, hidden=16, rank=3, seed=2)
    model.blocks[0].norm.gamma[5] = 0.0
    model.blocks[0].norm.beta[5] = 0.0
    X, _ = train.build_samples(model, ["abxy", "yxab"])
    before = train.forward(model, X)
    pruned, prune_report = train.prune_channels(model, tau=1e-9)
    assert prune_report.n_pruned == 1
    assert np.max(np.abs(before - train.forward(pruned, X))) <= 1e-9

    # Larger lambda gives a final sum|gamma| that is <= the smaller run's.
    from tutorkit.corpus import Category, CorpusRecord, Dataset

    data = Dataset(
        tuple(
            CorpusRecord(id=f"c{i}", text="ab" * 10, category=Category.CODE)
            for i in range(20)
        )
    )
    finals = []
    for lam in (0.01, 0.1):
        m = train.create_tiny_model("ab", window=4, hidden=16, rank=3, seed=8)
        train.run_phase(
            m,
            data,
            train.PhaseSpec(1, frozenset({Category.CODE}), epochs=60, lr=0.5),
            train.SrmConfig(lam=lam),
        )
        finals.append(train.gamma_l1(m))
    assert finals[1] <= finals[0]

    # Parameter count strictly decreases across the inter-phase prune step.
    corpus = make_curriculum()
    vocab = curriculum_vocab(corpus)
    m3 = train.create_tiny_model(vocab, window=8, hidden=32, rank=8, seed=1)
    plan = train.PhasePlan(
        phases=(
            train.PhaseSpec(1, frozenset({Category.TEXTBOOK, Category.CODE}), 150, 0.4),
            train.PhaseSpec(2, frozenset({Category.EDUCATION}), 150, 0.4),
            train.PhaseSpec(3, frozenset({Category.GUIDANCE}), 300, 0.4),
        )
    )
    _, tp = train.run_three_phase(
        m3,
        plan,
        corpus,
        prune_tau=0.01,
        srm=train.SrmConfig(lam=0.004),
        reg_srm=train.SrmConfig(lam=0.05),
        reg_epochs=60,
        reg_lr=0.4,
    )
    assert tp.params_after_prune < tp.params_before_prune
    report(
        f"pruning: dead-channel <=1e-9, sparsity monotone in lambda "
        f"({finals[0]:.2f} -> {finals[1]:.2f}), inter-phase prune removed "
        f"{tp.prune_report.n_pruned} channels"
    )


def test_criterion_tutoring_safety():
    started = time.perf_counter()
    plan = astseg.segment(astseg.parse_source(BUBBLE_SORT_SOURCE))
    cfg = tutor.TutorConfig(embed_cfg=EmbedderConfig(dimension=64))
    emitted_full = 0
    total_emitted = 0
    for seed in range(100):
        backend = tutor.RandomNoiseBackend(
            [
                BUBBLE_SORT_SOURCE,
                "The final answer is this code.",
                "for i in range(n):\n    for j in range(n):\n        if a > b:\n            a, b = b, a",
                "def bubble_sort(arr):\n    return arr",
            ],
            seed=seed,
        )
        state = tutor.new_session(f"adv{seed}", plan)
        for _ in range(6):
            tutor.advance_turn(
                state, "show me the whole implementation", backend, None, tutor.SystemPrompt(), cfg
            )
        for entry in state.transcript:
            if entry.role == "assistant" and not entry.rejected:
                total_emitted += 1
                emitted_full += entry.verdict is tutor.VerdictLabel.FULL_ANSWER
    assert total_emitted > 0
    assert emitted_full == 0
    # Cooperative sessions reach full subtask coverage.
    coop = evalharness.run_scripted_session(
        plan,
        tutor.CooperativeBackend(plan),
        evalharness.cooperative_script(len(plan)),
        cfg,
    )
    coverage = len(coop.visited) / len(plan)
    assert coverage == 1.0
    elapsed = time.perf_counter() - started
    assert elapsed < 60.0
    report(
        f"tutoring-safety: 100 adversarial sessions, 0/{total_emitted} emitted full answers; "
        f"cooperative coverage 1.0 ({elapsed:.1f}s)"
    )


def test_criterion_ablation_directions():
    seeds = [0, 1, 2]
    rep = evalharness.run_eval(["full", "wo_filter", "wo_phase3"], seeds)
    full = rep.per_variant["full"]
    wo_filter = rep.per_variant["wo_filter"]
    wo_phase3 = rep.per_variant["wo_phase3"]
    assert wo_filter.leak_rate > full.leak_rate
    assert wo_phase3.subtask_coverage < full.subtask_coverage
    report(
        f"ablation-direction: leak {full.leak_rate:.2f} -> {wo_filter.leak_rate:.2f} without filter; "
        f"coverage {full.subtask_coverage:.2f} -> {wo_phase3.subtask_coverage:.2f} without phase 3"
    )


def test_criterion_three_phase_vs_single_phase():
    corpus = make_curriculum()
    vocab = curriculum_vocab(corpus)
    from tutorkit.corpus import Category

    wins = []
    for seed in (0, 1, 2):
        plan = train.PhasePlan(
            phases=(
                train.PhaseSpec(1, frozenset({Category.TEXTBOOK, Category.CODE}), 150, 0.4),
                train.PhaseSpec(2, frozenset({Category.EDUCATION}), 150, 0.4),
                train.PhaseSpec(3, frozenset({Category.GUIDANCE}), 300, 0.4),
            )
        )
        staged = train.create_tiny_model(vocab, window=8, hidden=32, rank=8, seed=seed)
        staged, _ = train.run_three_phase(
            staged,
            plan,
            corpus,
            prune_tau=0.01,
            srm=train.SrmConfig(lam=0.004),
            reg_srm=train.SrmConfig(lam=0.05),
            reg_epochs=60,
            reg_lr=0.4,
        )
        merged = train.create_tiny_model(vocab, window=8, hidden=32, rank=8, seed=seed)
        merged, _ = train.run_single_phase(merged, corpus, epochs=150 + 150 + 300 + 60, lr=0.4)
        acc_staged = guidance_format_accuracy(staged)
        acc_merged = guidance_format_accuracy(merged)
        wins.append(acc_staged >= acc_merged)
        print(f"  seed {seed}: three-phase {acc_staged:.2f} vs single-phase {acc_merged:.2f}")
    assert all(wins), wins
    report("three-phase-vs-single: guidance-format accuracy >= single-phase on 3/3 seeds")
