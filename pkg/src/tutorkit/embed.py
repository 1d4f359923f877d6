"""Deterministic text embedding via feature-hashed token n-grams.

Vectors are plain float32 numpy arrays, L2-normalized unless the text has no
tokens (then the zero vector). The hashing is keyed, so the same
(text, config) pair embeds identically on every platform and run.
"""

from __future__ import annotations

import csv
import hashlib
import math
import re
from dataclasses import dataclass

import numpy as np

_TOKEN_RE = re.compile(r"\w+", re.UNICODE)


@dataclass(frozen=True)
class EmbedderConfig:
    """Settings for the hashing embedder."""

    dimension: int = 256
    ngram_range: tuple[int, int] = (1, 2)
    seed: int = 0

    def __post_init__(self) -> None:
        if self.dimension < 8:
            raise ValueError(f"dimension must be >= 8, got {self.dimension}")
        lo, hi = self.ngram_range
        if not (1 <= lo <= hi):
            raise ValueError(f"invalid ngram_range {self.ngram_range}")


def _tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


def _hash_feature(feature: str, seed: int, dimension: int) -> tuple[int, float]:
    """Map a feature string to a (bucket, sign) pair, keyed by seed."""
    digest = hashlib.blake2b(
        feature.encode("utf-8"), digest_size=8, key=str(seed).encode("utf-8")
    ).digest()
    value = int.from_bytes(digest, "little")
    bucket = value % dimension
    sign = 1.0 if (value >> 63) & 1 == 0 else -1.0
    return bucket, sign


def embed_text(text: str, cfg: EmbedderConfig | None = None) -> np.ndarray:
    """Embed text as a signed, feature-hashed n-gram vector.

    Term counts get sublinear (1 + log) weighting before L2 normalization.
    Zero tokens yields the zero vector.
    """
    cfg = cfg or EmbedderConfig()
    tokens = _tokenize(text)
    counts: dict[str, int] = {}
    lo, hi = cfg.ngram_range
    for n in range(lo, hi + 1):
        for i in range(len(tokens) - n + 1):
            gram = " ".join(tokens[i : i + n])
            counts[gram] = counts.get(gram, 0) + 1
    vec = np.zeros(cfg.dimension, dtype=np.float64)
    for gram, count in counts.items():
        bucket, sign = _hash_feature(gram, cfg.seed, cfg.dimension)
        vec[bucket] += sign * (1.0 + math.log(count))
    norm = float(np.linalg.norm(vec))
    if norm > 0.0:
        vec /= norm
    return vec.astype(np.float32)


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine of the angle between two vectors; 0 if either is zero."""
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    a64 = np.asarray(a, dtype=np.float64)
    b64 = np.asarray(b, dtype=np.float64)
    na = float(np.linalg.norm(a64))
    nb = float(np.linalg.norm(b64))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.dot(a64, b64) / (na * nb))


def similarity_matrix(vectors: list[np.ndarray]) -> np.ndarray:
    """Pairwise cosine matrix: exactly symmetric, unit diagonal for nonzero rows."""
    if not vectors:
        return np.zeros((0, 0), dtype=np.float64)
    dims = {v.shape for v in vectors}
    if len(dims) > 1:
        raise ValueError(f"mixed dimensions in input: {sorted(dims)}")
    stacked = np.stack([np.asarray(v, dtype=np.float64) for v in vectors])
    norms = np.linalg.norm(stacked, axis=1)
    nonzero = norms > 0.0
    unit = np.zeros_like(stacked)
    unit[nonzero] = stacked[nonzero] / norms[nonzero, None]
    mat = unit @ unit.T
    mat = (mat + mat.T) / 2.0
    np.clip(mat, -1.0, 1.0, out=mat)
    mat[np.diag_indices_from(mat)] = np.where(nonzero, 1.0, 0.0)
    return mat


def write_heatmap_csv(path: str, labels: list[str], matrix: np.ndarray) -> None:
    """Write a labeled similarity matrix as rectangular CSV."""
    n = len(labels)
    if matrix.shape != (n, n):
        raise ValueError(f"matrix shape {matrix.shape} does not match {n} labels")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([""] + labels)
        for label, row in zip(labels, matrix):
            writer.writerow([label] + [f"{value:.6f}" for value in row])
