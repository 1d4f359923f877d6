import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tutorkit.lora import (
    GAUSSIAN_STD,
    LoraAdapter,
    WeightMatrix,
    init_adapter,
    load_adapter,
    lora_backward,
    lora_forward,
    merge_adapter,
    save_adapter,
)


def test_init_delta_is_exactly_zero():
    ad = init_adapter(d=8, k=8, r=2, alpha=2.0, seed=0)
    assert np.array_equal(ad.delta(), np.zeros((8, 8)))


def test_init_shapes():
    ad = init_adapter(d=4, k=4, r=2, alpha=2.0, seed=0)
    assert ad.A.shape == (2, 4)
    assert ad.B.shape == (4, 2)


def test_init_deterministic():
    a = init_adapter(d=6, k=10, r=3, alpha=3.0, seed=42)
    b = init_adapter(d=6, k=10, r=3, alpha=3.0, seed=42)
    assert np.array_equal(a.A, b.A)


def test_init_gaussian_scale():
    ad = init_adapter(d=64, k=256, r=32, alpha=32.0, seed=1)
    assert np.std(ad.A) == pytest.approx(GAUSSIAN_STD, rel=0.15)


def test_rank_out_of_range():
    with pytest.raises(ValueError):
        init_adapter(d=4, k=4, r=3, alpha=1.0, seed=0)
    with pytest.raises(ValueError):
        init_adapter(d=4, k=4, r=0, alpha=1.0, seed=0)


def test_fresh_adapter_forward_equals_base():
    rng = np.random.default_rng(0)
    W0 = WeightMatrix(entries=rng.normal(size=(6, 10)))
    ad = init_adapter(d=6, k=10, r=2, alpha=2.0, seed=0)
    x = rng.normal(size=10)
    assert np.array_equal(lora_forward(W0, ad, x), W0.entries @ x)


def test_hand_computed_scalar_case():
    # d=k=r=1, W0=[1], A=[2], B=[3], alpha=1, x=[1] -> 1 + (1/1)*3*2*1 = 7
    W0 = WeightMatrix(entries=np.array([[1.0]]))
    ad = LoraAdapter(A=np.array([[2.0]]), B=np.array([[3.0]]), r=1, alpha=1.0)
    h = lora_forward(W0, ad, np.array([1.0]))
    assert h == pytest.approx([7.0])
    merged = merge_adapter(W0, ad)
    assert merged.entries[0, 0] == pytest.approx(7.0)


def test_alpha_scales_contribution_linearly():
    rng = np.random.default_rng(3)
    W0 = WeightMatrix(entries=rng.normal(size=(5, 5)))
    r = 2
    base = init_adapter(5, 5, r, alpha=r, seed=7)
    base.B[:] = rng.normal(size=base.B.shape)
    doubled = LoraAdapter(A=base.A.copy(), B=base.B.copy(), r=r, alpha=2 * r)
    x = rng.normal(size=5)
    contrib = lora_forward(W0, base, x) - W0.entries @ x
    contrib2 = lora_forward(W0, doubled, x) - W0.entries @ x
    assert contrib2 == pytest.approx(2.0 * contrib, abs=1e-12)


def test_zero_b_merge_is_base_exactly():
    rng = np.random.default_rng(4)
    W0 = WeightMatrix(entries=rng.normal(size=(6, 4)))
    ad = init_adapter(6, 4, 2, alpha=2.0, seed=0)
    assert np.array_equal(merge_adapter(W0, ad).entries, W0.entries)


def test_merge_forward_equivalence_randomized():
    rng = np.random.default_rng(5)
    W0 = WeightMatrix(entries=rng.normal(size=(8, 8)))
    ad = init_adapter(8, 8, 2, alpha=2.0, seed=9)
    ad.B[:] = rng.normal(size=ad.B.shape)
    merged = merge_adapter(W0, ad)
    worst = 0.0
    for _ in range(100):
        x = rng.normal(size=8)
        worst = max(worst, np.max(np.abs(merged.entries @ x - lora_forward(W0, ad, x))))
    assert worst <= 1e-9


def test_shape_mismatch_errors():
    W0 = WeightMatrix(entries=np.zeros((4, 6)))
    ad = init_adapter(4, 6, 2, alpha=2.0, seed=0)
    with pytest.raises(ValueError):
        lora_forward(W0, ad, np.zeros(5))
    bad = LoraAdapter(A=np.zeros((2, 5)), B=np.zeros((4, 2)), r=2, alpha=2.0)
    with pytest.raises(ValueError):
        lora_forward(W0, bad, np.zeros(6))
    with pytest.raises(ValueError):
        merge_adapter(W0, bad)


@given(st.integers(0, 10_000))
@settings(max_examples=25, deadline=None)
def test_merge_forward_equivalence_property(seed):
    rng = np.random.default_rng(seed)
    d, k = int(rng.integers(2, 16)), int(rng.integers(2, 16))
    r = int(rng.integers(1, max(2, min(d, k) // 2 + 1)))
    r = min(r, min(d, k) // 2)
    if r < 1:
        return
    W0 = WeightMatrix(entries=rng.normal(size=(d, k)))
    ad = init_adapter(d, k, r, alpha=float(r), seed=seed)
    ad.B[:] = rng.normal(size=ad.B.shape)
    merged = merge_adapter(W0, ad)
    x = rng.normal(size=k)
    assert np.max(np.abs(merged.entries @ x - lora_forward(W0, ad, x))) <= 1e-9


def test_gradients_match_finite_differences():
    # Loss: L = sum(h^2) / 2, so dL/dh = h.
    rng = np.random.default_rng(11)
    d, k, r = 5, 7, 2
    W0 = WeightMatrix(entries=rng.normal(size=(d, k)))
    ad = init_adapter(d, k, r, alpha=2.0, seed=1)
    ad.B[:] = rng.normal(size=ad.B.shape) * 0.3
    x = rng.normal(size=k)

    def loss() -> float:
        h = lora_forward(W0, ad, x)
        return float(0.5 * np.sum(h**2))

    h = lora_forward(W0, ad, x)
    grad_A, grad_B, grad_x = lora_backward(W0, ad, x, h)
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
            rel = abs(fd - grad[idx]) / max(abs(fd), abs(grad[idx]), 1e-10)
            assert rel <= 1e-4, (idx, fd, grad[idx])
            it.iternext()


def test_frozen_base_untouched_by_training_step():
    rng = np.random.default_rng(2)
    W0 = WeightMatrix(entries=rng.normal(size=(6, 6)), frozen=True)
    before = W0.entries.tobytes()
    ad = init_adapter(6, 6, 2, alpha=2.0, seed=3)
    x = rng.normal(size=6)
    h = lora_forward(W0, ad, x)
    grad_A, grad_B, _ = lora_backward(W0, ad, x, h)
    ad.A -= 0.1 * grad_A
    ad.B -= 0.1 * grad_B
    assert W0.entries.tobytes() == before


def test_checkpoint_round_trip(tmp_path):
    ad = init_adapter(6, 10, 3, alpha=3.0, seed=8)
    rng = np.random.default_rng(8)
    ad.B[:] = rng.normal(size=ad.B.shape)
    path = tmp_path / "adapter.bin"
    save_adapter(ad, str(path))
    loaded = load_adapter(str(path))
    assert loaded.r == 3
    assert loaded.alpha == pytest.approx(3.0)
    # Payload is float32; loading equals the float32 cast of the original.
    assert np.array_equal(loaded.A, ad.A.astype(np.float32).astype(np.float64))
    assert np.array_equal(loaded.B, ad.B.astype(np.float32).astype(np.float64))


def test_checkpoint_header_layout(tmp_path):
    import struct

    ad = init_adapter(4, 6, 2, alpha=2.0, seed=0)
    path = tmp_path / "a.bin"
    save_adapter(ad, str(path))
    raw = path.read_bytes()
    d, k, r, alpha = struct.unpack("<IIIf", raw[:16])
    assert (d, k, r) == (4, 6, 2)
    assert alpha == pytest.approx(2.0)
    assert len(raw) == 16 + 4 * (2 * 6) + 4 * (4 * 2)
