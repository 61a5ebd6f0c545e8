"""Euler sampling of the learned velocity field, with optional
classifier-free guidance.

Guidance convention: ``guidance_scale == 0`` means a purely conditional
pass (the unconditional branch is never evaluated); for g > 0 the
velocity is ``v_u + g * (v_c - v_u)``, so g = 1 also reduces to the
conditional field."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import tensor as T
from .errors import ContractError
from .model import ArchSpec, DitModel, model_forward, patchify, unpatchify
from .rng import Rng


@dataclass(frozen=True)
class SampleRequest:
    class_id: int
    nfe: int = 8
    guidance_scale: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.nfe < 1:
            raise ContractError("nfe must be >= 1")
        if self.guidance_scale < 0:
            raise ContractError("guidance_scale must be >= 0")


VelocityFn = Callable[[np.ndarray, float], np.ndarray]


def initial_noise(seed: int, arch: ArchSpec) -> np.ndarray:
    """Pixel-space starting noise for one sample, as patch tokens."""
    pixels = Rng(seed).derive("x0").normal((arch.image_size, arch.image_size))
    return patchify(pixels, arch.patch)


def euler_integrate(velocity: VelocityFn, x0_tokens: np.ndarray, nfe: int) -> np.ndarray:
    """Integrate dx/dt = v(x, t) from t=0 to 1 in `nfe` equal steps."""
    if nfe < 1:
        raise ContractError("nfe must be >= 1")
    x = np.asarray(x0_tokens, dtype=np.float64).copy()
    h = 1.0 / nfe
    for k in range(nfe):
        x = x + velocity(x, k * h) * h
    return x


def guided_velocity_fn(
    model: DitModel,
    class_ids: np.ndarray,
    guidance_scale: float,
    gate_scales: np.ndarray | None = None,
    omega: float = 1.0,
) -> VelocityFn:
    """Velocity of a (possibly calibrated) model under CFG.

    The output weight `omega` multiplies the combined velocity; both
    guidance branches share the same gate scales."""
    class_ids = np.asarray(class_ids, dtype=np.int64)
    arch = model.arch
    null_ids = np.full(len(class_ids), arch.null_class, dtype=np.int64)

    def velocity(x_tokens: np.ndarray, t: float) -> np.ndarray:
        tb = np.full(len(class_ids), t)
        with T.no_grad():
            v_c = model_forward(model, x_tokens, tb, class_ids, gate_scales).data
            if guidance_scale == 0.0:
                v = v_c
            else:
                v_u = model_forward(model, x_tokens, tb, null_ids, gate_scales).data
                v = v_u + guidance_scale * (v_c - v_u)
        return v * omega if omega != 1.0 else v

    return velocity


def euler_sample_batch(
    model: DitModel,
    class_ids: np.ndarray,
    seeds: np.ndarray,
    nfe: int,
    guidance_scale: float = 0.0,
    gate_scales: np.ndarray | None = None,
    omega: float = 1.0,
) -> np.ndarray:
    """Sample one image per (class_id, seed) pair; returns [batch, H, W].

    The starting noise depends only on each item's seed, so results are
    independent of how items are batched together."""
    x0 = np.stack([initial_noise(int(s), model.arch) for s in seeds])
    fn = guided_velocity_fn(model, class_ids, guidance_scale, gate_scales, omega)
    tokens = euler_integrate(fn, x0, nfe)
    return unpatchify(tokens, model.arch.image_size, model.arch.patch)


def euler_sample(
    model: DitModel,
    request: SampleRequest,
    gate_scales: np.ndarray | None = None,
    omega: float = 1.0,
) -> np.ndarray:
    """Single-sample convenience wrapper around the batched sampler."""
    return euler_sample_batch(
        model,
        np.array([request.class_id]),
        np.array([request.seed]),
        request.nfe,
        request.guidance_scale,
        gate_scales,
        omega,
    )[0]
