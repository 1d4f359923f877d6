"""Toy character-level model with staged adapter fine-tuning and channel pruning.

The model is a 2-block MLP over a sliding character window: each block is a
frozen linear map with a trainable low-rank adapter, a scale-normalization
layer, and a ReLU. Training touches only adapters and the per-channel
scale/shift parameters; base weights never receive gradients. The structured
risk adds a complexity penalty (L1 of scale factors by default) that drives
channels toward zero so they can be pruned between phases two and three.
"""

from __future__ import annotations

import copy
import struct
from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

from tutorkit.corpus import Category, CorpusRecord, Dataset, Role
from tutorkit.lora import LoraAdapter, WeightMatrix, init_adapter

PAD_CHAR = "\x00"
DEFAULT_WINDOW = 8
DEFAULT_HIDDEN = 32
DEFAULT_RANK = 4
DEFAULT_PRUNE_TAU = 0.01


# ---------------------------------------------------------------------------
# Layers
# ---------------------------------------------------------------------------


@dataclass
class ScaleNormLayer:
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    eps: float = 1e-5
    momentum: float = 0.1

    @property
    def channels(self) -> int:
        return self.gamma.shape[0]


def make_scalenorm(channels: int, eps: float = 1e-5) -> ScaleNormLayer:
    return ScaleNormLayer(
        gamma=np.ones(channels),
        beta=np.zeros(channels),
        running_mean=np.zeros(channels),
        running_var=np.ones(channels),
        eps=eps,
    )


def scalenorm_forward(
    layer: ScaleNormLayer, z_in: np.ndarray, training: bool = False
) -> np.ndarray:
    """Channelwise gamma * (z - mean) / sqrt(var + eps) + beta.

    Training mode normalizes with batch statistics and updates the running
    stats by momentum; inference mode uses the running stats.
    """
    z = np.atleast_2d(np.asarray(z_in, dtype=np.float64))
    if z.shape[1] != layer.channels:
        raise ValueError(f"channel mismatch: {z.shape[1]} vs {layer.channels}")
    if training:
        mean = z.mean(axis=0)
        var = z.var(axis=0)
        layer.running_mean = (1 - layer.momentum) * layer.running_mean + layer.momentum * mean
        layer.running_var = (1 - layer.momentum) * layer.running_var + layer.momentum * var
    else:
        mean, var = layer.running_mean, layer.running_var
    z_hat = (z - mean) / np.sqrt(var + layer.eps)
    out = layer.gamma * z_hat + layer.beta
    return out if np.asarray(z_in).ndim > 1 else out[0]


@dataclass
class LinearMap:
    weight: WeightMatrix  # (out, in); frozen base
    bias: np.ndarray  # frozen
    adapter: LoraAdapter | None = None

    @property
    def in_dim(self) -> int:
        return self.weight.cols

    @property
    def out_dim(self) -> int:
        return self.weight.rows

    def effective_weight(self) -> np.ndarray:
        if self.adapter is None:
            return self.weight.entries
        return self.weight.entries + self.adapter.delta()


@dataclass
class Block:
    linear: LinearMap
    norm: ScaleNormLayer


@dataclass
class TinyModel:
    vocab: str  # char at position i has token index i; index 0 is padding
    window: int
    blocks: list[Block]
    head: LinearMap

    @property
    def vocab_size(self) -> int:
        return len(self.vocab)

    @property
    def in_dim(self) -> int:
        return self.window * self.vocab_size

    def char_index(self, ch: str) -> int:
        pos = self.vocab.find(ch)
        return pos if pos >= 0 else 0


def create_tiny_model(
    vocab_chars: str,
    window: int = DEFAULT_WINDOW,
    hidden: int = DEFAULT_HIDDEN,
    n_blocks: int = 2,
    rank: int = DEFAULT_RANK,
    alpha: float | None = None,
    seed: int = 0,
) -> TinyModel:
    """Randomly initialized frozen base with fresh adapters on every linear map."""
    vocab = PAD_CHAR + "".join(sorted(set(vocab_chars) - {PAD_CHAR}))
    rng = np.random.default_rng(seed)
    alpha = float(alpha if alpha is not None else rank)  # alpha fixed to first r tried
    in_dim = window * len(vocab)
    blocks = []
    prev = in_dim
    for i in range(n_blocks):
        W = rng.normal(0.0, 1.0 / np.sqrt(prev), size=(hidden, prev))
        linear = LinearMap(
            weight=WeightMatrix(entries=W, frozen=True),
            bias=np.zeros(hidden),
            adapter=init_adapter(hidden, prev, rank, alpha, seed=seed + 100 + i),
        )
        blocks.append(Block(linear=linear, norm=make_scalenorm(hidden)))
        prev = hidden
    head_W = rng.normal(0.0, 1.0 / np.sqrt(prev), size=(len(vocab), prev))
    head = LinearMap(
        weight=WeightMatrix(entries=head_W, frozen=True),
        bias=np.zeros(len(vocab)),
        adapter=init_adapter(len(vocab), prev, min(rank, min(len(vocab), prev) // 2), alpha, seed=seed + 200),
    )
    return TinyModel(vocab=vocab, window=window, blocks=blocks, head=head)


def parameter_count(model: TinyModel) -> int:
    total = 0
    for block in model.blocks:
        total += block.linear.weight.entries.size + block.linear.bias.size
        if block.linear.adapter is not None:
            total += block.linear.adapter.n_params()
        total += 4 * block.norm.channels  # gamma, beta, running mean, running var
    total += model.head.weight.entries.size + model.head.bias.size
    if model.head.adapter is not None:
        total += model.head.adapter.n_params()
    return int(total)


def gamma_l1(model: TinyModel) -> float:
    return float(sum(np.abs(b.norm.gamma).sum() for b in model.blocks))


# ---------------------------------------------------------------------------
# Forward / backward
# ---------------------------------------------------------------------------


def encode_window(model: TinyModel, context: str) -> np.ndarray:
    """One-hot encode the last `window` characters, left-padded."""
    padded = (PAD_CHAR * model.window + context)[-model.window :]
    x = np.zeros(model.in_dim)
    for i, ch in enumerate(padded):
        x[i * model.vocab_size + model.char_index(ch)] = 1.0
    return x


def build_samples(model: TinyModel, texts: list[str]) -> tuple[np.ndarray, np.ndarray]:
    """Next-char prediction pairs from every position of every text."""
    xs, ys = [], []
    for text in texts:
        for i in range(len(text)):
            xs.append(encode_window(model, text[:i]))
            ys.append(model.char_index(text[i]))
    if not xs:
        return np.zeros((0, model.in_dim)), np.zeros(0, dtype=np.int64)
    return np.stack(xs), np.array(ys, dtype=np.int64)


class ComplexityKind(str, Enum):
    GAMMA_L1 = "gamma_l1"
    EXPECTED_OUTPUT_LENGTH = "expected_output_length"


@dataclass(frozen=True)
class SrmConfig:
    lam: float = 0.0
    complexity: ComplexityKind = ComplexityKind.GAMMA_L1
    stop_char: str = "\n"

    def __post_init__(self) -> None:
        if self.lam < 0:
            raise ValueError(f"lambda must be >= 0, got {self.lam}")


def forward(
    model: TinyModel, X: np.ndarray, training: bool = False, keep: bool = False
):
    """Logits for a batch; with keep=True also returns the backprop cache."""
    cache: dict = {"block": []}
    h = X
    for block in model.blocks:
        W_eff = block.linear.effective_weight()
        z = h @ W_eff.T + block.linear.bias
        norm = block.norm
        if training:
            mean = z.mean(axis=0)
            var = z.var(axis=0)
            norm.running_mean = (1 - norm.momentum) * norm.running_mean + norm.momentum * mean
            norm.running_var = (1 - norm.momentum) * norm.running_var + norm.momentum * var
        else:
            mean, var = norm.running_mean, norm.running_var
        inv_std = 1.0 / np.sqrt(var + norm.eps)
        z_hat = (z - mean) * inv_std
        a = norm.gamma * z_hat + norm.beta
        out = np.maximum(a, 0.0)
        cache["block"].append(
            {"x": h, "z": z, "z_hat": z_hat, "inv_std": inv_std, "a": a, "W_eff": W_eff}
        )
        h = out
    W_head = model.head.effective_weight()
    logits = h @ W_head.T + model.head.bias
    cache["head_x"] = h
    cache["head_W"] = W_head
    cache["training"] = training
    if keep:
        return logits, cache
    return logits


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=-1, keepdims=True)


def srm_loss(
    logits: np.ndarray, targets: np.ndarray, model: TinyModel, cfg: SrmConfig
) -> float:
    """Mean cross-entropy plus lambda times the model-complexity penalty."""
    n = logits.shape[0]
    if n == 0:
        raise ValueError("need at least one example")
    probs = softmax(logits)
    data = float(-np.mean(np.log(probs[np.arange(n), targets] + 1e-300)))
    return data + cfg.lam * _complexity(probs, model, cfg)


def _complexity(probs: np.ndarray, model: TinyModel, cfg: SrmConfig) -> float:
    if cfg.complexity is ComplexityKind.GAMMA_L1:
        return gamma_l1(model)
    stop = model.char_index(cfg.stop_char)
    return float(np.mean(1.0 - probs[:, stop]))  # expected continuation mass


@dataclass
class Gradients:
    adapters: list[tuple[np.ndarray, np.ndarray]]  # (dA, dB) per block then head
    gammas: list[np.ndarray]
    betas: list[np.ndarray]


def loss_and_grads(
    model: TinyModel, X: np.ndarray, targets: np.ndarray, cfg: SrmConfig, training: bool = True
) -> tuple[float, Gradients]:
    """srm_loss and analytic gradients for every trainable parameter."""
    logits, cache = forward(model, X, training=training, keep=True)
    n = X.shape[0]
    probs = softmax(logits)
    loss = float(-np.mean(np.log(probs[np.arange(n), targets] + 1e-300)))
    loss += cfg.lam * _complexity(probs, model, cfg)
    g_logits = probs.copy()
    g_logits[np.arange(n), targets] -= 1.0
    g_logits /= n
    if cfg.lam > 0 and cfg.complexity is ComplexityKind.EXPECTED_OUTPUT_LENGTH:
        # d/dlogit_j of mean(1 - p_stop) = -p_stop * (1[j=stop] - p_j) / n
        stop = model.char_index(cfg.stop_char)
        onehot = np.zeros(model.vocab_size)
        onehot[stop] = 1.0
        g_logits += cfg.lam * (-probs[:, [stop]] * (onehot - probs)) / n

    head = model.head
    g_W_head = g_logits.T @ cache["head_x"]
    s = head.adapter.scale
    head_grad = (s * (head.adapter.B.T @ g_W_head), s * (g_W_head @ head.adapter.A.T))
    g_h = g_logits @ cache["head_W"]

    adapter_grads_rev: list[tuple[np.ndarray, np.ndarray]] = []
    gamma_grads_rev: list[np.ndarray] = []
    beta_grads_rev: list[np.ndarray] = []
    for i in reversed(range(len(model.blocks))):
        block = model.blocks[i]
        c = cache["block"][i]
        g_a = g_h * (c["a"] > 0.0)
        d_gamma = (g_a * c["z_hat"]).sum(axis=0)
        if cfg.lam > 0 and cfg.complexity is ComplexityKind.GAMMA_L1:
            d_gamma = d_gamma + cfg.lam * np.sign(block.norm.gamma)
        gamma_grads_rev.append(d_gamma)
        beta_grads_rev.append(g_a.sum(axis=0))
        g_zhat = g_a * block.norm.gamma
        if cache["training"]:
            mean_removed = c["z"] - c["z"].mean(axis=0)
            inv_std = c["inv_std"]
            m = c["z"].shape[0]
            d_var = (g_zhat * mean_removed * -0.5 * inv_std**3).sum(axis=0)
            d_mean = (-g_zhat * inv_std).sum(axis=0) + d_var * (
                -2.0 * mean_removed.mean(axis=0)
            )
            g_z = g_zhat * inv_std + d_var * 2.0 * mean_removed / m + d_mean / m
        else:
            g_z = g_zhat * c["inv_std"]
        g_W = g_z.T @ c["x"]
        ad = block.linear.adapter
        s = ad.scale
        adapter_grads_rev.append((s * (ad.B.T @ g_W), s * (g_W @ ad.A.T)))
        g_h = g_z @ c["W_eff"]
    adapter_grads = adapter_grads_rev[::-1] + [head_grad]
    return loss, Gradients(
        adapters=adapter_grads,
        gammas=gamma_grads_rev[::-1],
        betas=beta_grads_rev[::-1],
    )


def apply_gradients(model: TinyModel, grads: Gradients, lr: float) -> None:
    """SGD step on adapters and scale-norm parameters only; base stays frozen."""
    linears = [b.linear for b in model.blocks] + [model.head]
    for linear, (dA, dB) in zip(linears, grads.adapters):
        linear.adapter.A -= lr * dA
        linear.adapter.B -= lr * dB
    for block, d_gamma, d_beta in zip(model.blocks, grads.gammas, grads.betas):
        block.norm.gamma -= lr * d_gamma
        block.norm.beta -= lr * d_beta


# ---------------------------------------------------------------------------
# Pruning
# ---------------------------------------------------------------------------


class PruneError(ValueError):
    pass


@dataclass(frozen=True)
class PruneReport:
    pruned: tuple[tuple[int, int, float], ...]  # (block index, channel, gamma)

    @property
    def n_pruned(self) -> int:
        return len(self.pruned)


def prune_channels(model: TinyModel, tau: float) -> tuple[TinyModel, PruneReport]:
    """Drop every scale-norm channel with |gamma| < tau, narrowing adjacent maps."""
    if tau < 0:
        raise ValueError(f"tau must be >= 0, got {tau}")
    pruned_model = copy.deepcopy(model)
    events: list[tuple[int, int, float]] = []
    for bi, block in enumerate(pruned_model.blocks):
        gamma = block.norm.gamma
        drop = np.abs(gamma) < tau
        if not drop.any():
            continue
        if drop.all():
            raise PruneError(f"pruning would empty block {bi} scale-norm layer")
        keep = ~drop
        for ch in np.nonzero(drop)[0]:
            events.append((bi, int(ch), float(gamma[ch])))
        norm = block.norm
        norm.gamma = norm.gamma[keep]
        norm.beta = norm.beta[keep]
        norm.running_mean = norm.running_mean[keep]
        norm.running_var = norm.running_var[keep]
        linear = block.linear
        linear.weight = WeightMatrix(entries=linear.weight.entries[keep, :], frozen=True)
        linear.bias = linear.bias[keep]
        if linear.adapter is not None:
            linear.adapter = replace(linear.adapter, B=linear.adapter.B[keep, :])
        nxt = (
            pruned_model.blocks[bi + 1].linear
            if bi + 1 < len(pruned_model.blocks)
            else pruned_model.head
        )
        nxt.weight = WeightMatrix(entries=nxt.weight.entries[:, keep], frozen=True)
        if nxt.adapter is not None:
            nxt.adapter = replace(nxt.adapter, A=nxt.adapter.A[:, keep])
    return pruned_model, PruneReport(pruned=tuple(events))


# ---------------------------------------------------------------------------
# Phase schedule
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PhaseSpec:
    phase: int
    categories: frozenset[Category]
    epochs: int
    lr: float


@dataclass(frozen=True)
class PhasePlan:
    phases: tuple[PhaseSpec, PhaseSpec, PhaseSpec]

    def __post_init__(self) -> None:
        if len(self.phases) != 3 or [p.phase for p in self.phases] != [1, 2, 3]:
            raise ValueError("plan must have exactly phases 1, 2, 3 in order")
        covered = set().union(*(p.categories for p in self.phases))
        if covered != set(Category):
            raise ValueError(f"phase categories must cover all of {set(Category)}")


def default_phase_plan(epochs: int = 150, lr: float = 0.5) -> PhasePlan:
    return PhasePlan(
        phases=(
            PhaseSpec(1, frozenset({Category.TEXTBOOK, Category.CODE}), epochs, lr),
            PhaseSpec(2, frozenset({Category.EDUCATION}), epochs, lr),
            PhaseSpec(3, frozenset({Category.GUIDANCE}), epochs, lr),
        )
    )


def render_record(record: CorpusRecord) -> str:
    """Training text view: dialogue records render as Q:/A: lines."""
    if record.turns:
        lines = []
        for turn in record.turns:
            prefix = "Q: " if turn.role is Role.USER else "A: "
            lines.append(prefix + turn.content)
        return "\n".join(lines) + "\n"
    return record.text + "\n"


@dataclass
class PhaseReport:
    phase: int
    epochs: int
    losses: list[float]
    record_ids: list[str]
    loss_increased: bool


def run_phase(
    model: TinyModel,
    data: Dataset,
    spec: PhaseSpec,
    srm: SrmConfig | None = None,
) -> tuple[TinyModel, PhaseReport]:
    """Gradient-descent adapter training on the records of one phase."""
    phase_data = data.filter_categories(spec.categories)
    if phase_data.n == 0:
        raise ValueError(f"no records in categories {sorted(c.value for c in spec.categories)}")
    srm = srm or SrmConfig()
    texts = [render_record(r) for r in phase_data]
    X, y = build_samples(model, texts)
    losses: list[float] = []
    for _ in range(spec.epochs):
        loss, grads = loss_and_grads(model, X, y, srm, training=True)
        losses.append(loss)
        apply_gradients(model, grads, spec.lr)
    if spec.epochs:
        final_loss, _ = loss_and_grads(model, X, y, srm, training=True)
        losses.append(final_loss)
    report = PhaseReport(
        phase=spec.phase,
        epochs=spec.epochs,
        losses=losses,
        record_ids=[r.id for r in phase_data],
        loss_increased=bool(losses and losses[-1] > losses[0]),
    )
    return model, report


@dataclass
class ThreePhaseReport:
    phase_reports: list[PhaseReport]
    prune_report: PruneReport
    reg_losses: list[float]
    params_before_prune: int
    params_after_prune: int


def run_three_phase(
    model: TinyModel,
    plan: PhasePlan,
    corpus: Dataset,
    prune_tau: float = DEFAULT_PRUNE_TAU,
    srm: SrmConfig | None = None,
    reg_srm: SrmConfig | None = None,
    reg_epochs: int = 60,
    reg_lr: float = 0.4,
) -> tuple[TinyModel, ThreePhaseReport]:
    """Phases 1 and 2, then the regularize-and-prune step, then phase 3.

    The complexity penalty applies only in the inter-phase step and phase 3;
    the inter-phase run (reg_srm) typically uses a stronger lambda so that
    unimportant channel scales actually cross the prune threshold.
    """
    srm = srm or SrmConfig(lam=0.004)
    reg_srm = reg_srm or SrmConfig(lam=0.05, complexity=srm.complexity, stop_char=srm.stop_char)
    plain = SrmConfig(lam=0.0, complexity=srm.complexity, stop_char=srm.stop_char)
    reports: list[PhaseReport] = []
    model, rep1 = run_phase(model, corpus, plan.phases[0], plain)
    reports.append(rep1)
    model, rep2 = run_phase(model, corpus, plan.phases[1], plain)
    reports.append(rep2)

    # Inter-phase: shrink channel scales under the structured-risk penalty, then cut.
    reg_losses: list[float] = []
    if reg_epochs > 0:
        reg_spec = PhaseSpec(
            phase=2, categories=plan.phases[1].categories, epochs=reg_epochs, lr=reg_lr
        )
        model, reg_report = run_phase(model, corpus, reg_spec, reg_srm)
        reg_losses = reg_report.losses
    params_before = parameter_count(model)
    model, prune_report = prune_channels(model, prune_tau)
    params_after = parameter_count(model)

    model, rep3 = run_phase(model, corpus, plan.phases[2], srm)
    reports.append(rep3)
    return model, ThreePhaseReport(
        phase_reports=reports,
        prune_report=prune_report,
        reg_losses=reg_losses,
        params_before_prune=params_before,
        params_after_prune=params_after,
    )


def run_single_phase(
    model: TinyModel, corpus: Dataset, epochs: int, lr: float, srm: SrmConfig | None = None
) -> tuple[TinyModel, PhaseReport]:
    """Ablation baseline: all categories trained together in one merged run."""
    spec = PhaseSpec(phase=1, categories=frozenset(Category), epochs=epochs, lr=lr)
    return run_phase(model, corpus, spec, srm)


# ---------------------------------------------------------------------------
# Generation
# ---------------------------------------------------------------------------


def generate(model: TinyModel, prompt: str, n_chars: int = 32, stop: str | None = None) -> str:
    """Greedy next-char decoding; deterministic for a fixed model and prompt."""
    text = prompt
    out = []
    for _ in range(n_chars):
        x = encode_window(model, text)[None, :]
        logits = forward(model, x, training=False)
        ch = model.vocab[int(np.argmax(logits[0]))]
        if ch == PAD_CHAR or (stop is not None and ch == stop):
            break
        out.append(ch)
        text += ch
    return "".join(out)


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

_MODEL_MAGIC = b"TKM1"


def _write_array(fh, arr: np.ndarray) -> None:
    data = np.ascontiguousarray(arr, dtype="<f4")
    fh.write(struct.pack("<I", data.ndim))
    fh.write(struct.pack(f"<{data.ndim}I", *data.shape))
    fh.write(data.tobytes())


def _read_array(fh) -> np.ndarray:
    (ndim,) = struct.unpack("<I", fh.read(4))
    shape = struct.unpack(f"<{ndim}I", fh.read(4 * ndim))
    count = int(np.prod(shape)) if shape else 1
    return np.frombuffer(fh.read(count * 4), dtype="<f4").reshape(shape).astype(np.float64)


def _write_linear(fh, linear: LinearMap) -> None:
    fh.write(struct.pack("<IIIf", linear.out_dim, linear.in_dim, linear.adapter.r, linear.adapter.alpha))
    _write_array(fh, linear.weight.entries)
    _write_array(fh, linear.bias)
    _write_array(fh, linear.adapter.A)
    _write_array(fh, linear.adapter.B)


def _read_linear(fh) -> LinearMap:
    _, _, r, alpha = struct.unpack("<IIIf", fh.read(16))
    weight = _read_array(fh)
    bias = _read_array(fh)
    A = _read_array(fh)
    B = _read_array(fh)
    return LinearMap(
        weight=WeightMatrix(entries=weight, frozen=True),
        bias=bias,
        adapter=LoraAdapter(A=A, B=B, r=r, alpha=float(alpha)),
    )


def save_model(model: TinyModel, path: str) -> None:
    """Header (dims, vocab) then little-endian float32 payloads per layer."""
    with open(path, "wb") as fh:
        fh.write(_MODEL_MAGIC)
        vocab_bytes = model.vocab.encode("utf-8")
        fh.write(struct.pack("<III", model.window, len(model.blocks), len(vocab_bytes)))
        fh.write(vocab_bytes)
        for block in model.blocks:
            _write_linear(fh, block.linear)
            norm = block.norm
            fh.write(struct.pack("<If", norm.channels, norm.eps))
            for arr in (norm.gamma, norm.beta, norm.running_mean, norm.running_var):
                _write_array(fh, arr)
        _write_linear(fh, model.head)


def load_model(path: str) -> TinyModel:
    with open(path, "rb") as fh:
        if fh.read(4) != _MODEL_MAGIC:
            raise ValueError(f"{path!r} is not a model checkpoint")
        window, n_blocks, vocab_len = struct.unpack("<III", fh.read(12))
        vocab = fh.read(vocab_len).decode("utf-8")
        blocks = []
        for _ in range(n_blocks):
            linear = _read_linear(fh)
            _, eps = struct.unpack("<If", fh.read(8))
            gamma = _read_array(fh)
            beta = _read_array(fh)
            mean = _read_array(fh)
            var = _read_array(fh)
            norm = ScaleNormLayer(
                gamma=gamma, beta=beta, running_mean=mean, running_var=var, eps=float(eps)
            )
            blocks.append(Block(linear=linear, norm=norm))
        head = _read_linear(fh)
    return TinyModel(vocab=vocab, window=window, blocks=blocks, head=head)
