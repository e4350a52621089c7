import numpy as np
import pytest

from actfno.autodiff import Tensor
from actfno.fno import (
    VARIANTS,
    ActFno,
    FnoConfig,
    SpectralConv2d,
    build_variant,
    count_parameters,
    reference_config,
    tiny_config,
)


def dense_spectral_conv(x, weight, m1, m2):
    """Spectral convolution from explicit DFT sums (no FFT)."""
    b, c, h, w = x.shape
    n1, n2 = np.arange(h), np.arange(w)
    rows = np.concatenate([np.arange(m1 // 2), np.arange(h - m1 // 2, h)])
    e1 = np.exp(-2j * np.pi * np.outer(rows, n1) / h)          # (m1, h)
    e2 = np.exp(-2j * np.pi * np.outer(np.arange(m2), n2) / w)  # (m2, w)
    spec = np.einsum("kh,bchw,lw->bckl", e1, x, e2)
    wz = weight[..., 0] + 1j * weight[..., 1]
    mixed = np.einsum("bikl,iokl->bokl", spec, wz)
    scale = np.where((np.arange(m2) == 0) | (2 * np.arange(m2) == w), 1.0, 2.0)
    basis = np.einsum("kh,lw->klhw", np.conj(e1), np.conj(e2))
    return np.einsum("bokl,l,klhw->bohw", mixed, scale, basis).real / (h * w)


def test_spectral_conv_matches_dense_dft():
    rng = np.random.default_rng(0)
    layer = SpectralConv2d(3, 4, 3, rng)
    layer.weight.data = rng.normal(size=layer.weight.shape)
    x = rng.normal(size=(2, 3, 16, 16))
    out = layer(Tensor(x)).data
    np.testing.assert_allclose(out, dense_spectral_conv(x, layer.weight.data, 4, 3), atol=1e-12)


def test_spectral_conv_identity_mixing_is_low_pass():
    rng = np.random.default_rng(1)
    layer = SpectralConv2d(2, 16, 9, rng)
    w = np.zeros(layer.weight.shape)
    w[0, 0, ..., 0] = w[1, 1, ..., 0] = 1.0
    layer.weight.data = w
    # a field made only of retained modes passes through unchanged
    yy, xx = np.meshgrid(np.arange(16), np.arange(16), indexing="ij")
    field = np.cos(2 * np.pi * (3 * xx + 2 * yy) / 16) + 0.5 * np.sin(2 * np.pi * 5 * yy / 16)
    x = np.stack([field, -field])[None]
    np.testing.assert_allclose(layer(Tensor(x)).data, x, atol=1e-12)


def test_spectral_conv_linear():
    rng = np.random.default_rng(2)
    layer = SpectralConv2d(2, 4, 3, rng)
    a, b = rng.normal(size=(2, 1, 2, 8, 8))
    lhs = layer(Tensor(2.0 * a - 3.0 * b)).data
    rhs = 2.0 * layer(Tensor(a)).data - 3.0 * layer(Tensor(b)).data
    np.testing.assert_allclose(lhs, rhs, atol=1e-12)


def test_reference_parameter_counts():
    vanilla = count_parameters(ActFno(reference_config("none")))
    act = count_parameters(ActFno(reference_config("all")))
    assert vanilla["total"] == 16_829_634
    assert act["total"] == 16_874_666
    assert act["total"] - vanilla["total"] == 45_032
    assert act["lifting"] == 9_408
    assert act["projection"] == 8_578
    for i in range(4):
        assert act[f"blocks.{i}"] == 4_202_912
        assert act[f"acts.{i}"] == 11_258
        assert act[f"acts.{i}.value_proj"] == 4_160
        assert act[f"acts.{i}.disp_branches"] == 2_760
        assert act[f"acts.{i}.disp_fuse"] == 50
        assert act[f"acts.{i}.out_proj"] == 4_160
        assert act[f"acts.{i}.norm"] == 128
    assert act["blocks.0.spectral"] == 64 * 64 * 32 * 16 * 2


def test_final_only_adds_one_block():
    final = count_parameters(ActFno(reference_config("final-only")))
    assert final["total"] == 16_829_634 + 11_258


def test_tiny_model_shapes_and_determinism():
    cfg = tiny_config()
    u = np.random.default_rng(0).normal(size=(2, 8, 8, 8))
    a = ActFno(cfg, seed=3).eval()
    b = ActFno(cfg, seed=3).eval()
    out, disps = a(Tensor(u), return_displacements=True)
    assert out.shape == (2, 2, 8, 8)
    assert len(disps) == 2 and disps[0].shape == (2 * 2, 8, 8, 2)
    np.testing.assert_array_equal(out.data, b(Tensor(u)).data)
    assert not np.array_equal(out.data, ActFno(cfg, seed=4)(Tensor(u)).data)


def test_untrained_act_model_equals_identity_sampling():
    cfg = tiny_config()
    model = ActFno(cfg, seed=0).eval()
    u = Tensor(np.random.default_rng(1).normal(size=(1, 8, 12, 10)))
    out, disps = model(u, return_displacements=True)
    assert all(np.all(d == 0) for d in disps)
    for act in model.act_blocks():
        act.identity_sampling(True)
    np.testing.assert_array_equal(out.data, model(u).data)


def test_resolution_flexible_forward():
    model = ActFno(tiny_config(), seed=0)
    for h, w in ((8, 8), (16, 12)):
        assert model(Tensor(np.zeros((1, 8, h, w)))).shape == (1, 2, h, w)


def test_input_errors():
    model = ActFno(tiny_config(), seed=0)
    with pytest.raises(ValueError):
        model(Tensor(np.zeros((1, 3, 8, 8))))
    with pytest.raises(ValueError):
        model(Tensor(np.zeros((1, 8, 2, 8))))


def test_config_validation():
    with pytest.raises(ValueError):
        FnoConfig(modes=(3, 4))
    with pytest.raises(ValueError):
        FnoConfig(act_placement="middle")
    with pytest.raises(ValueError):
        FnoConfig(width=60)


def test_variants():
    base = reference_config()
    assert build_variant(base, "vanilla").act_placement == "none"
    assert build_variant(base, "final-act").act_placement == "final-only"
    assert build_variant(base, "layerwise-act").act_placement == "all"
    wide = build_variant(base, "2x-params")
    assert wide.width == 96 and wide.act_placement == "none"
    ratio = ActFno(wide).num_parameters() / 16_829_634
    assert 1.8 < ratio < 2.6
    with pytest.raises(ValueError):
        build_variant(base, "3x")
    assert len(VARIANTS) == 4


@pytest.mark.slow
def test_reference_forward_smoke():
    model = ActFno(reference_config(), seed=0).eval()
    u = np.random.default_rng(0).normal(size=(1, 8, 64, 64))
    out, disps = model(Tensor(u), return_displacements=True)
    assert out.shape == (1, 2, 64, 64)
    assert np.all(np.isfinite(out.data))
    assert len(disps) == 4 and all(np.all(d == 0) for d in disps)
