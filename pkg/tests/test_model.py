import numpy as np
import pytest

from gatecal import tensor as T
from gatecal.errors import CalibrationShapeError, ContractError
from gatecal.model import (
    MM_DIT,
    ArchSpec,
    DitModel,
    _modulation,
    dit_block_forward,
    identity_gate_scales,
    init_model,
    mmdit_block_forward,
    model_forward,
    patchify,
    time_embedding,
    unpatchify,
)
from gatecal.rng import Rng
from gatecal.tensor import Tensor


def small_arch(variant="standard-dit", positional=True, depth=3):
    return ArchSpec(variant=variant, depth=depth, model_dim=16, heads=2, positional=positional)


def open_model(variant="standard-dit", positional=True, depth=3, seed=11):
    """Random weights with non-zero gates (adaln_zero off)."""
    return init_model(small_arch(variant, positional, depth), Rng(seed), adaln_zero=False)


def block_inputs(model, batch=2, seed=3):
    rng = Rng(seed).derive("block-io")
    arch = model.arch
    x = Tensor(rng.normal((batch, arch.token_count, arch.model_dim)))
    cond = Tensor(rng.normal((batch, arch.model_dim)))
    return x, cond


def test_patchify_round_trip():
    rng = Rng(0).derive("patch")
    img = rng.normal((5, 8, 8))
    assert np.array_equal(unpatchify(patchify(img)), img)


def test_block_zero_gates_is_identity():
    model = open_model()
    x, cond = block_inputs(model)
    mod = _modulation(model.weights, 0, cond, 6, model.arch.model_dim)
    out = dit_block_forward(x, model.weights, 0, mod, np.array([0.0, 0.0]), model.arch.heads)
    assert np.array_equal(out.data, x.data)


def test_block_unit_gates_match_reference():
    model = open_model()
    x, cond = block_inputs(model)
    mod = _modulation(model.weights, 0, cond, 6, model.arch.model_dim)
    a = dit_block_forward(x, model.weights, 0, mod, np.array([1.0, 1.0]), model.arch.heads)
    b = dit_block_forward(x, model.weights, 0, mod, np.ones(2), model.arch.heads)
    assert np.array_equal(a.data, b.data)


def test_block_scale_associativity():
    """Gate scale 2 with halved gamma equals scale 1 with original gamma
    (powers of two keep float multiplication exact)."""
    model = open_model()
    x, cond = block_inputs(model)
    d = model.arch.model_dim
    mod = _modulation(model.weights, 0, cond, 6, d)
    halved = list(mod)
    halved[2] = T.mul(mod[2], 0.5)
    ref = dit_block_forward(x, model.weights, 0, mod, np.array([1.0, 1.0]), model.arch.heads)
    out = dit_block_forward(x, model.weights, 0, halved, np.array([2.0, 1.0]), model.arch.heads)
    assert np.array_equal(out.data, ref.data)


def test_mm_block_unit_gates_and_ablation():
    model = open_model(MM_DIT)
    arch = model.arch
    rng = Rng(5).derive("mm-io")
    xv = Tensor(rng.normal((2, arch.token_count, arch.model_dim)))
    xt = Tensor(rng.normal((2, arch.text_tokens, arch.model_dim)))
    cond = Tensor(rng.normal((2, arch.model_dim)))
    mod = _modulation(model.weights, 0, cond, 12, arch.model_dim)

    ones = np.ones(4)
    a_v, a_t = mmdit_block_forward(xv, xt, model.weights, 0, mod, ones, arch.heads)
    b_v, b_t = mmdit_block_forward(xv, xt, model.weights, 0, mod, np.array([1.0] * 4), arch.heads)
    assert np.array_equal(a_v.data, b_v.data) and np.array_equal(a_t.data, b_t.data)

    z_v, z_t = mmdit_block_forward(xv, xt, model.weights, 0, mod, np.zeros(4), arch.heads)
    assert np.array_equal(z_v.data, xv.data) and np.array_equal(z_t.data, xt.data)


def test_mm_block_text_gates_zero_keeps_text_unchanged():
    model = open_model(MM_DIT)
    arch = model.arch
    rng = Rng(6).derive("mm-io2")
    xv = Tensor(rng.normal((2, arch.token_count, arch.model_dim)))
    xt = Tensor(rng.normal((2, arch.text_tokens, arch.model_dim)))
    cond = Tensor(rng.normal((2, arch.model_dim)))
    mod = _modulation(model.weights, 0, cond, 12, arch.model_dim)
    out_v, out_t = mmdit_block_forward(
        xv, xt, model.weights, 0, mod, np.array([1.0, 0.0, 1.0, 0.0]), arch.heads
    )
    assert np.array_equal(out_t.data, xt.data)
    assert not np.array_equal(out_v.data, xv.data)


@pytest.mark.parametrize("variant", ["standard-dit", "mm-dit"])
def test_ablation_equals_block_removal(variant):
    """Zeroing one block's gates must match removing the block."""
    model = open_model(variant)
    arch = model.arch
    rng = Rng(17).derive("ablate-io")
    x = rng.normal((3, arch.token_count, arch.patch_dim))
    t = rng.uniform(3)
    ids = np.array([0, 1, 2])
    for k in range(arch.depth):
        scales = identity_gate_scales(arch)
        scales[k] = 0.0
        gated = model_forward(model, x, t, ids, scales).data
        skipped = model_forward(model, x, t, ids, skip_blocks=frozenset({k})).data
        assert np.abs(gated - skipped).max() <= 1e-12


@pytest.mark.parametrize("variant", ["standard-dit", "mm-dit"])
def test_identity_scales_match_default(variant):
    model = open_model(variant)
    arch = model.arch
    rng = Rng(19).derive("ident-io")
    x = rng.normal((2, arch.token_count, arch.patch_dim))
    t = rng.uniform(2)
    ids = np.array([1, 3])
    a = model_forward(model, x, t, ids, identity_gate_scales(arch)).data
    b = model_forward(model, x, t, ids).data
    assert np.array_equal(a, b)


def test_forward_finite_at_time_endpoints():
    model = open_model()
    arch = model.arch
    x = Rng(23).derive("ends").normal((2, arch.token_count, arch.patch_dim))
    for t in (0.0, 1.0):
        out = model_forward(model, x, np.full(2, t), np.array([0, 1])).data
        assert np.isfinite(out).all()


def test_zero_unembed_gives_zero_velocity():
    model = open_model()
    model.weights["unembed.w"].data[:] = 0.0
    model.weights["unembed.b"].data[:] = 0.0
    arch = model.arch
    x = Rng(29).derive("zero-unembed").normal((2, arch.token_count, arch.patch_dim))
    out = model_forward(model, x, np.array([0.3, 0.8]), np.array([0, 2])).data
    assert np.array_equal(out, np.zeros_like(out))


def test_wrong_gate_scale_shape_rejected():
    model = open_model()
    arch = model.arch
    x = np.zeros((1, arch.token_count, arch.patch_dim))
    with pytest.raises(CalibrationShapeError):
        model_forward(model, x, np.array([0.5]), np.array([0]), np.ones((arch.depth, 4)))
    with pytest.raises(CalibrationShapeError):
        model_forward(model, x, np.array([0.5]), np.array([0]), np.ones((arch.depth + 1, 2)))


def test_permutation_equivariance_without_positional():
    model = open_model(positional=False)
    arch = model.arch
    rng = Rng(31).derive("perm")
    x = rng.normal((2, arch.token_count, arch.patch_dim))
    t = np.array([0.4, 0.6])
    ids = np.array([0, 3])
    perm = np.argsort(rng.uniform(arch.token_count))
    base = model_forward(model, x, t, ids).data
    permuted = model_forward(model, x[:, perm, :], t, ids).data
    assert np.abs(permuted - base[:, perm, :]).max() < 1e-12


def test_modulation_width_matches_contract():
    for variant, chunks in (("standard-dit", 6), ("mm-dit", 12)):
        model = open_model(variant)
        d = model.arch.model_dim
        assert model.weights["block0.mod.out.w"].shape == (d, chunks * d)


def test_class_id_out_of_range_rejected():
    model = open_model()
    arch = model.arch
    x = np.zeros((1, arch.token_count, arch.patch_dim))
    with pytest.raises(ContractError):
        model_forward(model, x, np.array([0.5]), np.array([arch.class_count + 1]))


def test_time_embedding_shape_and_determinism():
    a = time_embedding(np.array([0.0, 0.5, 1.0]), 16)
    b = time_embedding(np.array([0.0, 0.5, 1.0]), 16)
    assert a.shape == (3, 16)
    assert np.array_equal(a, b)


def test_full_model_gradcheck_vs_finite_differences():
    """Full toy-model loss vs central differences on a parameter subset
    of every distinct layer type (h=1e-5, rel err < 1e-4)."""
    from gatecal.training import flow_matching_loss

    for variant in ("standard-dit", "mm-dit"):
        arch = ArchSpec(variant=variant, depth=2, model_dim=8, heads=2)
        model = init_model(arch, Rng(41), adaln_zero=False)
        model.set_trainable(True)
        rng = Rng(43).derive("gc", variant)
        images = rng.normal((2, 8, 8))
        ids = np.array([0, 1])

        loss = flow_matching_loss(model, images, ids, Rng(7).derive("noise"))
        params = model.params()
        grads = T.gradients(loss, [p for _, p in params])

        check_rng = Rng(47).derive("pick", variant)
        for (name, p), g in zip(params, grads):
            flat = p.data.reshape(-1)
            gflat = np.asarray(g).reshape(-1)
            idx = check_rng.integers(0, flat.size, min(4, flat.size))
            for i in np.unique(idx):
                orig = flat[i]
                h = 1e-5
                flat[i] = orig + h
                fp = flow_matching_loss(model, images, ids, Rng(7).derive("noise")).item()
                flat[i] = orig - h
                fm = flow_matching_loss(model, images, ids, Rng(7).derive("noise")).item()
                flat[i] = orig
                numeric = (fp - fm) / (2 * h)
                denom = max(abs(gflat[i]), abs(numeric), 1.0)
                assert abs(gflat[i] - numeric) / denom < 1e-4, f"{variant} {name}[{i}]"
