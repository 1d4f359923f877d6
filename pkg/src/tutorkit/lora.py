"""Low-rank adapter algebra: init, forward, gradients, merging, checkpoints.

An adapter adds (alpha/r) * B @ A on top of a frozen base weight. A starts
Gaussian, B starts zero, so the initial update is exactly zero.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

GAUSSIAN_STD = 0.02


@dataclass
class WeightMatrix:
    entries: np.ndarray
    frozen: bool = True

    @property
    def rows(self) -> int:
        return self.entries.shape[0]

    @property
    def cols(self) -> int:
        return self.entries.shape[1]


@dataclass
class LoraAdapter:
    A: np.ndarray  # r x k
    B: np.ndarray  # d x r
    r: int
    alpha: float

    @property
    def scale(self) -> float:
        return self.alpha / self.r

    def delta(self) -> np.ndarray:
        """The effective weight update (alpha/r) * B @ A."""
        return self.scale * (self.B @ self.A)

    def n_params(self) -> int:
        return self.A.size + self.B.size


def init_adapter(d: int, k: int, r: int, alpha: float, seed: int) -> LoraAdapter:
    """Gaussian A, zero B: the initial update B @ A is the zero matrix."""
    if not 1 <= r <= min(d, k) // 2:
        raise ValueError(f"rank {r} out of range [1, {min(d, k) // 2}] for {d}x{k}")
    rng = np.random.default_rng(seed)
    A = rng.normal(0.0, GAUSSIAN_STD, size=(r, k))
    B = np.zeros((d, r))
    return LoraAdapter(A=A, B=B, r=r, alpha=alpha)


def lora_forward(W0: WeightMatrix, ad: LoraAdapter, x: np.ndarray) -> np.ndarray:
    """h = W0 @ x + (alpha/r) * B @ (A @ x)."""
    d, k = W0.entries.shape
    if ad.A.shape != (ad.r, k) or ad.B.shape != (d, ad.r):
        raise ValueError(
            f"adapter shapes A{ad.A.shape} B{ad.B.shape} incompatible with base {d}x{k}"
        )
    if x.shape[0] != k:
        raise ValueError(f"input length {x.shape[0]} does not match base cols {k}")
    return W0.entries @ x + ad.scale * (ad.B @ (ad.A @ x))


def lora_backward(
    W0: WeightMatrix, ad: LoraAdapter, x: np.ndarray, grad_out: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients of a scalar loss w.r.t. (A, B, x) given dL/dh.

    The base weight is frozen and receives no gradient.
    """
    if grad_out.shape[0] != W0.rows:
        raise ValueError(f"grad length {grad_out.shape[0]} does not match rows {W0.rows}")
    s = ad.scale
    Ax = ad.A @ x
    grad_B = s * np.outer(grad_out, Ax)
    grad_A = s * np.outer(ad.B.T @ grad_out, x)
    grad_x = W0.entries.T @ grad_out + s * (ad.A.T @ (ad.B.T @ grad_out))
    return grad_A, grad_B, grad_x


def merge_adapter(W0: WeightMatrix, ad: LoraAdapter) -> WeightMatrix:
    """Collapse the adapter into the base: W0 + (alpha/r) * B @ A."""
    d, k = W0.entries.shape
    if ad.A.shape != (ad.r, k) or ad.B.shape != (d, ad.r):
        raise ValueError(
            f"adapter shapes A{ad.A.shape} B{ad.B.shape} incompatible with base {d}x{k}"
        )
    return WeightMatrix(entries=W0.entries + ad.delta(), frozen=W0.frozen)


_HEADER = struct.Struct("<IIIf")


def save_adapter(ad: LoraAdapter, path: str, d: int | None = None) -> None:
    """Checkpoint format: header (d, k, r, alpha) then row-major LE float32 A, B."""
    d = d if d is not None else ad.B.shape[0]
    k = ad.A.shape[1]
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(d, k, ad.r, ad.alpha))
        fh.write(np.ascontiguousarray(ad.A, dtype="<f4").tobytes())
        fh.write(np.ascontiguousarray(ad.B, dtype="<f4").tobytes())


def load_adapter(path: str) -> LoraAdapter:
    with open(path, "rb") as fh:
        header = fh.read(_HEADER.size)
        if len(header) != _HEADER.size:
            raise ValueError(f"truncated adapter file {path!r}")
        d, k, r, alpha = _HEADER.unpack(header)
        A = np.frombuffer(fh.read(r * k * 4), dtype="<f4").reshape(r, k).astype(np.float64)
        B = np.frombuffer(fh.read(d * r * 4), dtype="<f4").reshape(d, r).astype(np.float64)
    return LoraAdapter(A=A, B=B, r=r, alpha=float(alpha))
