"""Dense-vector store with exact and inverted-list cosine retrieval.

Vectors are stored L2-normalized so inner product equals cosine. Clustering
is spherical k-means; the per-iteration objective (total within-cluster
1 - cosine) is non-increasing by construction.

Concurrency contract: searches may run in parallel, but add/build_clusters
mutate the index and require exclusive access; never search an index while
a build is in progress.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

MAGIC = b"VDB1"

# Hits below this cosine are dropped before prompt assembly.
DEFAULT_RELEVANCE_THRESHOLD = 0.8


@dataclass(frozen=True)
class SearchHit:
    id: str
    score: float
    payload: str


@dataclass(frozen=True)
class SearchResult:
    hits: tuple[SearchHit, ...]
    k: int


@dataclass
class VectorIndex:
    dim: int
    ids: list[str] = field(default_factory=list)
    vectors: list[np.ndarray] = field(default_factory=list)
    payloads: list[str] = field(default_factory=list)
    centroids: np.ndarray | None = None
    assignments: list[int] = field(default_factory=list)
    objective_history: list[float] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def n_clusters(self) -> int:
        return 0 if self.centroids is None else self.centroids.shape[0]

    @property
    def is_clustered(self) -> bool:
        return self.centroids is not None


def _normalize(vec: np.ndarray) -> np.ndarray:
    arr = np.asarray(vec, dtype=np.float32)
    norm = float(np.linalg.norm(arr.astype(np.float64)))
    if norm > 0.0:
        arr = (arr.astype(np.float64) / norm).astype(np.float32)
    return arr


def add(index: VectorIndex, id: str, vector: np.ndarray, payload: str) -> VectorIndex:
    """Insert an entry; clustered indexes route it to its nearest centroid."""
    if vector.shape != (index.dim,):
        raise ValueError(f"vector shape {vector.shape} does not match dim {index.dim}")
    if id in index.ids:
        raise ValueError(f"duplicate id {id!r}")
    unit = _normalize(vector)
    index.ids.append(id)
    index.vectors.append(unit)
    index.payloads.append(payload)
    if index.is_clustered:
        scores = index.centroids.astype(np.float64) @ unit.astype(np.float64)
        index.assignments.append(int(np.argmax(scores)))
    else:
        index.assignments.append(-1)
    return index


def _rank(index: VectorIndex, candidate_rows: list[int], query: np.ndarray, k: int) -> SearchResult:
    # Full cosine in float64: storage is float32, so stored norms are only
    # approximately 1 and the division keeps scores exact.
    q = np.asarray(query, dtype=np.float64)
    qn = float(np.linalg.norm(q))
    scored = []
    for row in candidate_rows:
        v = index.vectors[row].astype(np.float64)
        vn = float(np.linalg.norm(v))
        score = 0.0 if qn == 0.0 or vn == 0.0 else float(v @ q / (vn * qn))
        scored.append((-score, index.ids[row], score, index.payloads[row]))
    scored.sort()
    hits = tuple(SearchHit(id=sid, score=score, payload=payload) for _, sid, score, payload in scored[:k])
    return SearchResult(hits=hits, k=k)


def search_exact(index: VectorIndex, query: np.ndarray, k: int) -> SearchResult:
    """Exact top-k by cosine; ties broken by ascending id."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if query.shape != (index.dim,):
        raise ValueError(f"query shape {query.shape} does not match dim {index.dim}")
    return _rank(index, list(range(len(index))), query, k)


def build_clusters(index: VectorIndex, n_clusters: int, iters: int = 20, seed: int = 0) -> VectorIndex:
    """Spherical k-means over the stored vectors, deterministic under seed.

    Also records the per-iteration objective on index.objective_history.
    """
    n = len(index)
    if not 1 <= n_clusters <= n:
        raise ValueError(f"n_clusters {n_clusters} out of range [1, {n}]")
    rng = np.random.default_rng(seed)
    data = np.stack([v.astype(np.float64) for v in index.vectors])
    # Init from distinct data points so n_clusters == n gives one point each.
    init_rows = rng.permutation(n)[:n_clusters]
    centroids = data[init_rows].copy()
    norms = np.linalg.norm(centroids, axis=1)
    centroids[norms > 0] /= norms[norms > 0, None]
    history: list[float] = []
    assignments = np.zeros(n, dtype=np.int64)
    for _ in range(max(1, iters)):
        scores = data @ centroids.T
        assignments = np.argmax(scores, axis=1)
        objective = float(np.sum(1.0 - scores[np.arange(n), assignments]))
        history.append(objective)
        for c in range(n_clusters):
            members = data[assignments == c]
            if len(members) == 0:
                continue  # keep previous centroid for empty clusters
            mean = members.mean(axis=0)
            norm = np.linalg.norm(mean)
            if norm > 0:
                centroids[c] = mean / norm
    scores = data @ centroids.T
    assignments = np.argmax(scores, axis=1)
    history.append(float(np.sum(1.0 - scores[np.arange(n), assignments])))
    index.centroids = centroids.astype(np.float32)
    index.assignments = [int(a) for a in assignments]
    index.objective_history = history
    return index


def search_clustered(index: VectorIndex, query: np.ndarray, k: int, nprobe: int) -> SearchResult:
    """Scan only the nprobe nearest centroids' inverted lists."""
    if not index.is_clustered:
        raise ValueError("index has no clusters; call build_clusters first")
    if not 1 <= nprobe <= index.n_clusters:
        raise ValueError(f"nprobe {nprobe} out of range [1, {index.n_clusters}]")
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if query.shape != (index.dim,):
        raise ValueError(f"query shape {query.shape} does not match dim {index.dim}")
    q = _normalize(query).astype(np.float64)
    centroid_scores = index.centroids.astype(np.float64) @ q
    # Deterministic probe order: score desc, centroid index asc on ties.
    order = sorted(range(index.n_clusters), key=lambda c: (-centroid_scores[c], c))
    probed = set(order[:nprobe])
    rows = [row for row, assign in enumerate(index.assignments) if assign in probed]
    return _rank(index, rows, query, k)


def save_index(index: VectorIndex, path: str) -> None:
    """Binary layout: magic, dim, count, n_clusters, centroids, then entries."""
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<III", index.dim, len(index), index.n_clusters))
        if index.centroids is not None:
            fh.write(np.ascontiguousarray(index.centroids, dtype="<f4").tobytes())
        for row in range(len(index)):
            id_bytes = index.ids[row].encode("utf-8")
            payload_bytes = index.payloads[row].encode("utf-8")
            fh.write(struct.pack("<I", len(id_bytes)))
            fh.write(id_bytes)
            fh.write(struct.pack("<I", len(payload_bytes)))
            fh.write(payload_bytes)
            fh.write(struct.pack("<i", index.assignments[row]))
            fh.write(np.ascontiguousarray(index.vectors[row], dtype="<f4").tobytes())


def load_index(path: str) -> VectorIndex:
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise ValueError(f"{path!r} is not a vector index file")
        dim, count, n_clusters = struct.unpack("<III", fh.read(12))
        centroids = None
        if n_clusters:
            raw = fh.read(n_clusters * dim * 4)
            centroids = np.frombuffer(raw, dtype="<f4").reshape(n_clusters, dim).copy()
        index = VectorIndex(dim=dim, centroids=centroids)
        for _ in range(count):
            (id_len,) = struct.unpack("<I", fh.read(4))
            rid = fh.read(id_len).decode("utf-8")
            (payload_len,) = struct.unpack("<I", fh.read(4))
            payload = fh.read(payload_len).decode("utf-8")
            (assign,) = struct.unpack("<i", fh.read(4))
            vec = np.frombuffer(fh.read(dim * 4), dtype="<f4").copy()
            index.ids.append(rid)
            index.vectors.append(vec)
            index.payloads.append(payload)
            index.assignments.append(assign)
    return index
