"""Toy flow-matching diffusion transformer.

Two block variants over 16 image patch tokens of an 8x8 image:

* standard block: self-attention + feed-forward, both wrapped as
  ``x <- x + s * gamma * layer(alpha * LN(x) + beta)`` where
  (alpha, beta, gamma) come from a conditioning MLP and ``s`` is the
  external gate scale this package exists to calibrate;
* multimodal block: separate visual/text token streams with
  per-modality modulation and projections, joint attention over the
  concatenated streams, four independently scalable gates.

All forward passes are batched. Gate scales enter as a plain
``[depth, gates_per_block]`` float array; the all-ones array is the
uncalibrated model, bit for bit (multiplying by 1.0 is exact).
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import CalibrationShapeError, ContractError, DimensionError
from .rng import Rng
from .tensor import Tensor

STANDARD_DIT = "standard-dit"
MM_DIT = "mm-dit"


@dataclass(frozen=True)
class ArchSpec:
    variant: str = STANDARD_DIT
    depth: int = 6
    model_dim: int = 32
    heads: int = 4
    image_size: int = 8
    patch: int = 2
    text_tokens: int = 4
    class_count: int = 4
    positional: bool = True

    def __post_init__(self):
        if self.variant not in (STANDARD_DIT, MM_DIT):
            raise ContractError(f"unknown variant {self.variant!r}")
        if self.model_dim % self.heads != 0:
            raise ContractError("model_dim must be divisible by heads")
        if self.image_size % self.patch != 0:
            raise ContractError("image_size must be divisible by patch")
        if min(self.depth, self.model_dim, self.heads, self.class_count) < 1:
            raise ContractError("depth, model_dim, heads, class_count must be positive")

    @property
    def token_count(self) -> int:
        return (self.image_size // self.patch) ** 2

    @property
    def patch_dim(self) -> int:
        return self.patch**2

    @property
    def null_class(self) -> int:
        """Class id of the learned 'no condition' embedding row."""
        return self.class_count

    @property
    def gates_per_block(self) -> int:
        return 4 if self.variant == MM_DIT else 2

    def arch_hash(self) -> str:
        payload = json.dumps(self.__dict__, sort_keys=True).encode()
        return hashlib.sha256(payload).hexdigest()[:16]


@dataclass
class DitModel:
    arch: ArchSpec
    weights: dict[str, Tensor] = field(default_factory=dict)

    def params(self) -> list[tuple[str, Tensor]]:
        return sorted(self.weights.items())

    def set_trainable(self, flag: bool):
        for _, w in self.params():
            w.requires_grad = flag
            w._needs_grad = flag


def _linear_init(rng: Rng, fan_in: int, fan_out: int) -> np.ndarray:
    return rng.normal((fan_in, fan_out)) / math.sqrt(fan_in)


def init_model(arch: ArchSpec, rng: Rng, adaln_zero: bool = True) -> DitModel:
    """Fresh weights. With `adaln_zero` the modulation output layer starts
    at alpha=1, beta=0, gamma=0 so every block begins as an identity
    (standard stable-start practice); disable to get random open gates."""
    d = arch.model_dim
    r = rng.derive("init")
    w: dict[str, np.ndarray] = {}
    w["patch_embed.w"] = _linear_init(r.derive("pe"), arch.patch_dim, d)
    w["patch_embed.b"] = np.zeros(d)
    w["unembed.w"] = _linear_init(r.derive("ue"), d, arch.patch_dim)
    w["unembed.b"] = np.zeros(arch.patch_dim)
    w["class_embed"] = 0.1 * r.derive("ce").normal((arch.class_count + 1, d))
    if arch.positional:
        w["pos_embed"] = 0.1 * r.derive("pos").normal((arch.token_count, d))
        if arch.variant == MM_DIT:
            w["text_pos_embed"] = 0.1 * r.derive("tpos").normal((arch.text_tokens, d))

    n_mod = 12 if arch.variant == MM_DIT else 6
    for i in range(arch.depth):
        b = f"block{i}"
        br = r.derive("block", i)
        if arch.variant == STANDARD_DIT:
            streams = ("",)
        else:
            streams = ("_v", "_t")
        for s in streams:
            w[f"{b}.attn.qkv{s}.w"] = _linear_init(br.derive("qkv", s), d, 3 * d)
            w[f"{b}.attn.qkv{s}.b"] = np.zeros(3 * d)
            w[f"{b}.attn.out{s}.w"] = _linear_init(br.derive("ao", s), d, d)
            w[f"{b}.attn.out{s}.b"] = np.zeros(d)
            w[f"{b}.ff{s}.in.w"] = _linear_init(br.derive("f1", s), d, 4 * d)
            w[f"{b}.ff{s}.in.b"] = np.zeros(4 * d)
            w[f"{b}.ff{s}.out.w"] = _linear_init(br.derive("f2", s), 4 * d, d)
            w[f"{b}.ff{s}.out.b"] = np.zeros(d)
        w[f"{b}.mod.in.w"] = _linear_init(br.derive("m1"), d, d)
        w[f"{b}.mod.in.b"] = np.zeros(d)
        if adaln_zero:
            w[f"{b}.mod.out.w"] = np.zeros((d, n_mod * d))
            bias = np.zeros(n_mod * d)
            for chunk in range(n_mod):
                if chunk % 3 == 0:  # alpha slots start at 1
                    bias[chunk * d : (chunk + 1) * d] = 1.0
            w[f"{b}.mod.out.b"] = bias
        else:
            w[f"{b}.mod.out.w"] = _linear_init(br.derive("m2"), d, n_mod * d)
            w[f"{b}.mod.out.b"] = 0.5 * br.derive("m2b").normal(n_mod * d)
    return DitModel(arch, {k: Tensor(v, requires_grad=False) for k, v in w.items()})


def patchify(images: np.ndarray, patch: int = 2) -> np.ndarray:
    """[..., H, W] -> [..., tokens, patch*patch], row-major patches."""
    *lead, h, wd = images.shape
    ph, pw = h // patch, wd // patch
    x = images.reshape(*lead, ph, patch, pw, patch)
    x = np.moveaxis(x, -3, -2)
    return x.reshape(*lead, ph * pw, patch * patch)


def unpatchify(tokens: np.ndarray, image_size: int = 8, patch: int = 2) -> np.ndarray:
    *lead, t, pd = tokens.shape
    ph = image_size // patch
    x = tokens.reshape(*lead, ph, ph, patch, patch)
    x = np.moveaxis(x, -2, -3)
    return x.reshape(*lead, image_size, image_size)


def time_embedding(t: np.ndarray, dim: int, max_period: float = 10_000.0) -> np.ndarray:
    """Sinusoidal embedding of t in [0, 1] (internally scaled by 1000)."""
    half = dim // 2
    freqs = np.exp(-math.log(max_period) * np.arange(half) / half)
    args = np.asarray(t, dtype=np.float64)[:, None] * 1000.0 * freqs[None, :]
    emb = np.concatenate([np.cos(args), np.sin(args)], axis=-1)
    if dim % 2:
        emb = np.concatenate([emb, np.zeros((emb.shape[0], 1))], axis=-1)
    return emb


def _one_hot(ids: np.ndarray, count: int) -> np.ndarray:
    out = np.zeros((len(ids), count))
    out[np.arange(len(ids)), ids] = 1.0
    return out


def identity_gate_scales(arch: ArchSpec) -> np.ndarray:
    return np.ones((arch.depth, arch.gates_per_block))


def check_gate_scales(arch: ArchSpec, gate_scales: np.ndarray) -> np.ndarray:
    gate_scales = np.asarray(gate_scales, dtype=np.float64)
    expected = (arch.depth, arch.gates_per_block)
    if gate_scales.shape != expected:
        raise CalibrationShapeError(
            f"gate scales shape {gate_scales.shape} does not cover the "
            f"{expected[0]}x{expected[1]} gates of this model"
        )
    if not np.isfinite(gate_scales).all():
        raise CalibrationShapeError("gate scales must be finite")
    return gate_scales


def _heads(x: Tensor, heads: int) -> Tensor:
    b, t, d = x.shape
    return T.transpose(T.reshape(x, (b, t, heads, d // heads)), (0, 2, 1, 3))


def _unheads(x: Tensor) -> Tensor:
    b, h, t, dh = x.shape
    return T.reshape(T.transpose(x, (0, 2, 1, 3)), (b, t, h * dh))


def _attention(q: Tensor, k: Tensor, v: Tensor) -> Tensor:
    dh = q.shape[-1]
    scores = T.mul(T.matmul(q, T.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(dh))
    return T.matmul(T.softmax(scores, axis=-1), v)


def _qkv(x: Tensor, w: dict[str, Tensor], prefix: str, heads: int) -> tuple[Tensor, Tensor, Tensor]:
    d = x.shape[-1]
    qkv = T.add(T.matmul(x, w[f"{prefix}.w"]), w[f"{prefix}.b"])
    return tuple(_heads(T.narrow(qkv, 2, i * d, d), heads) for i in range(3))


def _modulation(w: dict[str, Tensor], block: int, cond: Tensor, chunks: int, d: int) -> list[Tensor]:
    """Conditioning MLP (one hidden layer, SiLU) producing the per-block
    modulation vectors, reshaped to broadcast over tokens."""
    h = T.silu(T.add(T.matmul(cond, w[f"block{block}.mod.in.w"]), w[f"block{block}.mod.in.b"]))
    mods = T.add(T.matmul(h, w[f"block{block}.mod.out.w"]), w[f"block{block}.mod.out.b"])
    b = cond.shape[0]
    return [
        T.reshape(T.narrow(mods, 1, i * d, d), (b, 1, d))
        for i in range(chunks)
    ]


def _feed_forward(x: Tensor, w: dict[str, Tensor], prefix: str) -> Tensor:
    h = T.silu(T.add(T.matmul(x, w[f"{prefix}.in.w"]), w[f"{prefix}.in.b"]))
    return T.add(T.matmul(h, w[f"{prefix}.out.w"]), w[f"{prefix}.out.b"])


def _gated_residual(x: Tensor, update: Tensor, gamma: Tensor, scale: float) -> Tensor:
    return T.add(x, T.mul(T.mul(update, gamma), float(scale)))


def dit_block_forward(
    x: Tensor,
    weights: dict[str, Tensor],
    block: int,
    mod: list[Tensor],
    gate_scales: np.ndarray,
    heads: int,
) -> Tensor:
    """Standard block: attention then feed-forward, each modulated and
    gated; `gate_scales` is (s_attn, s_ff)."""
    a1, b1, g1, a2, b2, g2 = mod
    h = T.add(T.mul(T.layer_norm(x), a1), b1)
    q, k, v = _qkv(h, weights, f"block{block}.attn.qkv", heads)
    attn = T.add(T.matmul(_unheads(_attention(q, k, v)), weights[f"block{block}.attn.out.w"]),
                 weights[f"block{block}.attn.out.b"])
    x = _gated_residual(x, attn, g1, gate_scales[0])
    h2 = T.add(T.mul(T.layer_norm(x), a2), b2)
    ff = _feed_forward(h2, weights, f"block{block}.ff")
    return _gated_residual(x, ff, g2, gate_scales[1])


def mmdit_block_forward(
    xv: Tensor,
    xt: Tensor,
    weights: dict[str, Tensor],
    block: int,
    mod: list[Tensor],
    gate_scales: np.ndarray,
    heads: int,
) -> tuple[Tensor, Tensor]:
    """Multimodal block. Joint attention over concatenated visual+text
    tokens; four gates scaled as (attn_v, attn_t, ff_v, ff_t)."""
    (a1v, b1v, g1v, a2v, b2v, g2v, a1t, b1t, g1t, a2t, b2t, g2t) = mod
    tv = xv.shape[1]

    hv = T.add(T.mul(T.layer_norm(xv), a1v), b1v)
    ht = T.add(T.mul(T.layer_norm(xt), a1t), b1t)
    qv, kv, vv = _qkv(hv, weights, f"block{block}.attn.qkv_v", heads)
    qt, kt, vt = _qkv(ht, weights, f"block{block}.attn.qkv_t", heads)
    q = T.concat([qv, qt], axis=2)
    k = T.concat([kv, kt], axis=2)
    v = T.concat([vv, vt], axis=2)
    ctx = _unheads(_attention(q, k, v))
    ctx_v = T.narrow(ctx, 1, 0, tv)
    ctx_t = T.narrow(ctx, 1, tv, xt.shape[1])
    attn_v = T.add(T.matmul(ctx_v, weights[f"block{block}.attn.out_v.w"]),
                   weights[f"block{block}.attn.out_v.b"])
    attn_t = T.add(T.matmul(ctx_t, weights[f"block{block}.attn.out_t.w"]),
                   weights[f"block{block}.attn.out_t.b"])
    xv = _gated_residual(xv, attn_v, g1v, gate_scales[0])
    xt = _gated_residual(xt, attn_t, g1t, gate_scales[1])

    h2v = T.add(T.mul(T.layer_norm(xv), a2v), b2v)
    h2t = T.add(T.mul(T.layer_norm(xt), a2t), b2t)
    xv = _gated_residual(xv, _feed_forward(h2v, weights, f"block{block}.ff_v"), g2v, gate_scales[2])
    xt = _gated_residual(xt, _feed_forward(h2t, weights, f"block{block}.ff_t"), g2t, gate_scales[3])
    return xv, xt


def model_forward(
    model: DitModel,
    x_tokens,
    t: np.ndarray,
    class_ids: np.ndarray,
    gate_scales: np.ndarray | None = None,
    skip_blocks: frozenset[int] = frozenset(),
) -> Tensor:
    """Velocity prediction for a batch of token sequences.

    x_tokens: [batch, tokens, patch_dim]; t: [batch] in [0, 1];
    class_ids: [batch] ints (null class allowed). `skip_blocks` removes
    blocks from the loop entirely (reference path for ablation tests).
    """
    arch = model.arch
    w = model.weights
    if gate_scales is None:
        gate_scales = identity_gate_scales(arch)
    gate_scales = check_gate_scales(arch, gate_scales)
    x_tokens = x_tokens if isinstance(x_tokens, Tensor) else Tensor(x_tokens)
    if x_tokens.ndim != 3 or x_tokens.shape[1:] != (arch.token_count, arch.patch_dim):
        raise DimensionError(
            f"x_tokens shape {x_tokens.shape} does not match "
            f"[batch, {arch.token_count}, {arch.patch_dim}]"
        )
    class_ids = np.asarray(class_ids, dtype=np.int64)
    if class_ids.min() < 0 or class_ids.max() > arch.null_class:
        raise ContractError("class id out of range")

    d = arch.model_dim
    t_emb = Tensor(time_embedding(np.atleast_1d(t), d))
    class_onehot = Tensor(_one_hot(class_ids, arch.class_count + 1))
    c_emb = T.matmul(class_onehot, w["class_embed"])

    x = T.add(T.matmul(x_tokens, w["patch_embed.w"]), w["patch_embed.b"])
    if arch.positional:
        x = T.add(x, w["pos_embed"])

    if arch.variant == STANDARD_DIT:
        cond = T.add(t_emb, c_emb)
        for i in range(arch.depth):
            if i in skip_blocks:
                continue
            mod = _modulation(w, i, cond, 6, d)
            x = dit_block_forward(x, w, i, mod, gate_scales[i], arch.heads)
    else:
        cond = t_emb
        xt = T.reshape(c_emb, (c_emb.shape[0], 1, d))
        xt = T.add(xt, Tensor(np.zeros((c_emb.shape[0], arch.text_tokens, d))))
        if arch.positional:
            xt = T.add(xt, w["text_pos_embed"])
        for i in range(arch.depth):
            if i in skip_blocks:
                continue
            mod = _modulation(w, i, cond, 12, d)
            x, xt = mmdit_block_forward(x, xt, w, i, mod, gate_scales[i], arch.heads)
        # text stream is dropped after the final block

    out = T.layer_norm(x)
    return T.add(T.matmul(out, w["unembed.w"]), w["unembed.b"])
