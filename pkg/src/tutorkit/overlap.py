"""Corpus overlap estimation and threshold partition.

A record sample is scored against the centroid embedding of the rest of the
corpus by a small regression network (3 conv layers, 2 fully connected, sigmoid
output). Records scoring above the threshold move to the local-knowledge set;
everything else stays in the fine-tuning set.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from tutorkit.corpus import CorpusRecord, Dataset
from tutorkit.embed import EmbedderConfig, embed_text, similarity_matrix

DEFAULT_THRESHOLD = 0.8

KERNEL_SIZE = 5
CONV_CHANNELS = (2, 8, 8, 4)
FC_HIDDEN = 16


@dataclass
class OverlapNet:
    """3-conv / 2-fc regression net squashed to [0, 1]."""

    input_dim: int
    conv_weights: list[np.ndarray]
    conv_biases: list[np.ndarray]
    fc_weights: list[np.ndarray]
    fc_biases: list[np.ndarray]
    loss_history: list[float] = field(default_factory=list)

    def __post_init__(self) -> None:
        if len(self.conv_weights) != 3 or len(self.fc_weights) != 2:
            raise ValueError("overlap net requires exactly 3 conv and 2 fc layers")

    def n_params(self) -> int:
        arrays = self.conv_weights + self.conv_biases + self.fc_weights + self.fc_biases
        return sum(int(a.size) for a in arrays)

    def parameters(self) -> list[np.ndarray]:
        return self.conv_weights + self.conv_biases + self.fc_weights + self.fc_biases


def init_overlap_net(input_dim: int, seed: int = 0) -> OverlapNet:
    if input_dim < 4 * KERNEL_SIZE:
        raise ValueError(f"input_dim {input_dim} too small for 3 conv layers of size {KERNEL_SIZE}")
    rng = np.random.default_rng(seed)
    conv_weights, conv_biases = [], []
    for c_in, c_out in zip(CONV_CHANNELS[:-1], CONV_CHANNELS[1:]):
        std = np.sqrt(2.0 / (c_in * KERNEL_SIZE))
        conv_weights.append(rng.normal(0.0, std, size=(c_out, c_in, KERNEL_SIZE)))
        conv_biases.append(np.zeros(c_out))
    flat = CONV_CHANNELS[-1] * (input_dim - 3 * (KERNEL_SIZE - 1))
    fc_weights = [
        rng.normal(0.0, np.sqrt(2.0 / flat), size=(FC_HIDDEN, flat)),
        rng.normal(0.0, np.sqrt(2.0 / FC_HIDDEN), size=(1, FC_HIDDEN)),
    ]
    fc_biases = [np.zeros(FC_HIDDEN), np.zeros(1)]
    return OverlapNet(
        input_dim=input_dim,
        conv_weights=conv_weights,
        conv_biases=conv_biases,
        fc_weights=fc_weights,
        fc_biases=fc_biases,
    )


def _windows(x: np.ndarray, k: int) -> np.ndarray:
    return np.lib.stride_tricks.sliding_window_view(x, k, axis=2)


def _forward(net: OverlapNet, X: np.ndarray, keep: bool = False):
    """Batch forward pass; X has shape (N, 2, input_dim)."""
    cache = {"inputs": [], "pre": []}
    h = X
    for W, b in zip(net.conv_weights, net.conv_biases):
        cache["inputs"].append(h)
        z = np.einsum("nclk,ock->nol", _windows(h, KERNEL_SIZE), W) + b[None, :, None]
        cache["pre"].append(z)
        h = np.maximum(z, 0.0)
    flat = h.reshape(h.shape[0], -1)
    cache["flat_shape"] = h.shape
    cache["flat"] = flat
    z1 = flat @ net.fc_weights[0].T + net.fc_biases[0]
    cache["z1"] = z1
    h1 = np.maximum(z1, 0.0)
    cache["h1"] = h1
    z2 = h1 @ net.fc_weights[1].T + net.fc_biases[1]
    out = 1.0 / (1.0 + np.exp(-np.clip(z2[:, 0], -60.0, 60.0)))
    if keep:
        return out, cache
    return out


def _backward(net: OverlapNet, out: np.ndarray, grad_out: np.ndarray, cache) -> list[np.ndarray]:
    """Gradients in parameters() order, given dL/d(sigmoid output)."""
    g_z2 = (grad_out * out * (1.0 - out))[:, None]
    g_fc2_w = g_z2.T @ cache["h1"]
    g_fc2_b = g_z2.sum(axis=0)
    g_h1 = g_z2 @ net.fc_weights[1]
    g_z1 = g_h1 * (cache["z1"] > 0.0)
    g_fc1_w = g_z1.T @ cache["flat"]
    g_fc1_b = g_z1.sum(axis=0)
    g_flat = g_z1 @ net.fc_weights[0]
    g = g_flat.reshape(cache["flat_shape"])
    conv_w_grads: list[np.ndarray] = []
    conv_b_grads: list[np.ndarray] = []
    for layer in (2, 1, 0):
        g = g * (cache["pre"][layer] > 0.0)
        x_in = cache["inputs"][layer]
        conv_w_grads.append(np.einsum("nol,nclk->ock", g, _windows(x_in, KERNEL_SIZE)))
        conv_b_grads.append(g.sum(axis=(0, 2)))
        if layer > 0:
            pad = KERNEL_SIZE - 1
            g_pad = np.pad(g, ((0, 0), (0, 0), (pad, pad)))
            flipped = net.conv_weights[layer][:, :, ::-1]
            g = np.einsum("noik,ock->nci", _windows(g_pad, KERNEL_SIZE), flipped)
    conv_w_grads.reverse()
    conv_b_grads.reverse()
    return conv_w_grads + conv_b_grads + [g_fc1_w, g_fc2_w] + [g_fc1_b, g_fc2_b]


def overlap_score(net: OverlapNet, candidate: np.ndarray, reference: np.ndarray) -> float:
    """Deterministic forward pass on a stacked (candidate, reference) signal."""
    if candidate.shape != reference.shape:
        raise ValueError(f"dimension mismatch: {candidate.shape} vs {reference.shape}")
    if candidate.shape != (net.input_dim,):
        raise ValueError(
            f"vector dimension {candidate.shape} does not match net input {net.input_dim}"
        )
    X = np.stack([candidate, reference]).astype(np.float64)[None, :, :]
    return float(_forward(net, X)[0])


def train_overlap_net(
    pairs: list[tuple[np.ndarray, np.ndarray, float]],
    epochs: int = 200,
    lr: float = 0.5,
    seed: int = 0,
) -> OverlapNet:
    """Full-batch gradient descent against squared error on [0, 1] labels."""
    if not pairs:
        raise ValueError("training set must not be empty")
    labels = np.array([label for _, _, label in pairs], dtype=np.float64)
    if np.any(labels < 0.0) or np.any(labels > 1.0):
        raise ValueError("labels must lie in [0, 1]")
    dim = pairs[0][0].shape[0]
    X = np.stack(
        [np.stack([c, r]).astype(np.float64) for c, r, _ in pairs]
    )
    net = init_overlap_net(dim, seed=seed)
    n = len(pairs)
    for _ in range(epochs):
        out, cache = _forward(net, X, keep=True)
        net.loss_history.append(float(np.mean((out - labels) ** 2)))
        grads = _backward(net, out, 2.0 * (out - labels) / n, cache)
        for param, grad in zip(net.parameters(), grads):
            param -= lr * grad
    out = _forward(net, X)
    net.loss_history.append(float(np.mean((out - labels) ** 2)))
    return net


def random_sample(data: Dataset, seed: int) -> Dataset:
    """Uniform sample without replacement of floor(n/2) records."""
    size = data.n // 2
    if size == 0:
        return Dataset(())
    rng = np.random.default_rng(seed)
    picked = sorted(rng.choice(data.n, size=size, replace=False))
    return Dataset(tuple(data.records[i] for i in picked))


@dataclass(frozen=True)
class PartitionResult:
    mft: Dataset
    local: Dataset
    threshold: float
    scores: dict[str, float]


def centroid_of(vectors: list[np.ndarray]) -> np.ndarray:
    """Normalized mean embedding representing a record set."""
    if not vectors:
        raise ValueError("cannot take the centroid of an empty set")
    mean = np.mean(np.stack([v.astype(np.float64) for v in vectors]), axis=0)
    norm = float(np.linalg.norm(mean))
    if norm > 0.0:
        mean /= norm
    return mean.astype(np.float32)


def partition_corpus(
    data: Dataset,
    net: OverlapNet,
    T: float,
    seed: int,
    embed_cfg: EmbedderConfig | None = None,
) -> PartitionResult:
    """Score a random half-sample against the complement centroid; > T goes local."""
    embed_cfg = embed_cfg or EmbedderConfig()
    if data.n == 0:
        return PartitionResult(mft=Dataset(()), local=Dataset(()), threshold=T, scores={})
    sample = random_sample(data, seed)
    sample_ids = {r.id for r in sample}
    complement = [r for r in data if r.id not in sample_ids]
    if complement:
        reference = centroid_of([embed_text(r.content_text(), embed_cfg) for r in complement])
    else:
        reference = np.zeros(embed_cfg.dimension, dtype=np.float32)
    scores: dict[str, float] = {}
    local_ids: set[str] = set()
    for record in sample:
        vec = embed_text(record.content_text(), embed_cfg)
        score = overlap_score(net, vec.astype(np.float64), reference.astype(np.float64))
        scores[record.id] = score
        if score > T:
            local_ids.add(record.id)
    local = Dataset(tuple(r for r in data if r.id in local_ids))
    mft = Dataset(tuple(r for r in data if r.id not in local_ids))
    return PartitionResult(mft=mft, local=local, threshold=T, scores=scores)


def _cos01(a: np.ndarray, b: np.ndarray) -> float:
    norms = np.linalg.norm(a) * np.linalg.norm(b)
    if norms == 0.0:
        return 0.0
    return float(np.clip(a @ b / norms, 0.0, 1.0))


def cosine_training_pairs(
    embeddings: list[np.ndarray],
    seed: int,
    n_refs: int = 3,
    n_interp: int = 3,
    self_copies: int = 1,
) -> list[tuple[np.ndarray, np.ndarray, float]]:
    """Self-supervised training pairs labeled by cosine against subset centroids.

    Raw record-vs-centroid cosines are bimodal, which trains poorly, so each
    record also contributes interpolants blended toward a random reference;
    their labels cover the whole similarity range and the net learns the
    geometry instead of memorizing the few references.
    """
    if not embeddings:
        raise ValueError("need at least one embedding")
    rng = np.random.default_rng(seed)
    n = len(embeddings)
    references = []
    for _ in range(n_refs):
        rows = rng.choice(n, size=max(1, n // 2), replace=False)
        references.append(centroid_of([embeddings[i] for i in rows]).astype(np.float64))
    pairs: list[tuple[np.ndarray, np.ndarray, float]] = []
    for vec in embeddings:
        v64 = vec.astype(np.float64)
        for ref in references:
            pairs.append((v64, ref, _cos01(v64, ref)))
        self_label = 1.0 if np.linalg.norm(v64) > 0 else 0.0
        for _ in range(self_copies):
            pairs.append((v64, v64.copy(), self_label))
        for _ in range(n_interp):
            ref = references[int(rng.integers(len(references)))]
            t = float(rng.uniform())
            blend = t * ref + (1.0 - t) * v64
            norm = np.linalg.norm(blend)
            if norm == 0.0:
                continue
            blend = blend / norm
            pairs.append((blend, ref.copy(), _cos01(blend, ref)))
    return pairs


@dataclass(frozen=True)
class HeatmapReport:
    labels: list[str]
    matrix: np.ndarray
    intra_mft_max: float
    intra_local_max: float
    cross_min: float
    cross_max: float


def heatmap_report(
    mft_sample: list[CorpusRecord],
    local_sample: list[CorpusRecord],
    embed_cfg: EmbedderConfig | None = None,
) -> HeatmapReport:
    """Similarity matrix over MFT and local samples, labeled M1.., L1.., with stats."""
    if len(mft_sample) < 1 or len(local_sample) < 1:
        raise ValueError("need at least one record per side")
    embed_cfg = embed_cfg or EmbedderConfig()
    records = list(mft_sample) + list(local_sample)
    vectors = [embed_text(r.content_text(), embed_cfg) for r in records]
    matrix = similarity_matrix(vectors)
    labels = [f"M{i + 1}" for i in range(len(mft_sample))] + [
        f"L{i + 1}" for i in range(len(local_sample))
    ]
    m = len(mft_sample)
    mft_block = matrix[:m, :m]
    local_block = matrix[m:, m:]
    cross_block = matrix[:m, m:]

    def off_diag_max(block: np.ndarray) -> float:
        if block.shape[0] < 2:
            return 0.0
        masked = block.copy()
        np.fill_diagonal(masked, -np.inf)
        return float(masked.max())

    return HeatmapReport(
        labels=labels,
        matrix=matrix,
        intra_mft_max=off_diag_max(mft_block),
        intra_local_max=off_diag_max(local_block),
        cross_min=float(cross_block.min()),
        cross_max=float(cross_block.max()),
    )


def write_manifest(result: PartitionResult, path: str) -> None:
    """Manifest maps record id to its assigned set and (if sampled) score."""
    manifest = {}
    local_ids = {r.id for r in result.local}
    for record in list(result.mft) + list(result.local):
        manifest[record.id] = {
            "set": "local" if record.id in local_ids else "mft",
            "score": result.scores.get(record.id),
        }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
