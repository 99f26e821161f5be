import numpy as np
import pytest
import torch

from motiontransfer.attention import KINDS, SITES
from motiontransfer.denoiser import encode_prompt_hashed, hashed_unit_vector, resolve_key_tokens, tokenize
from motiontransfer.errors import BindingError, ContractError
from motiontransfer.fixtures import synth_fixture
from motiontransfer.scheduler import LatentState, make_schedule
from motiontransfer.toy import ToyCodec, ToyDenoiser, ToyDenoiserSpec

from oracles import block_mean


def test_tokenize_and_key_resolution():
    toks = tokenize("A bear walking past a bear")
    assert toks == ["a", "bear", "walking", "past", "a", "bear"]
    assert resolve_key_tokens(toks, ["bear", "walking"]) == (1, 2)
    with pytest.raises(BindingError, match="tiger"):
        resolve_key_tokens(toks, ["tiger"])


def test_binding_error_is_a_key_error():
    with pytest.raises(KeyError):
        resolve_key_tokens(["a"], ["b"])


def test_hashed_vectors_are_unit_and_deterministic():
    a = hashed_unit_vector("bear", 16, 0)
    assert np.linalg.norm(a) == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_array_equal(a, hashed_unit_vector("bear", 16, 0))
    assert not np.allclose(a, hashed_unit_vector("bear", 16, 1))
    assert not np.allclose(a, hashed_unit_vector("tiger", 16, 0))


def test_prompt_encoding():
    p = encode_prompt_hashed("a bear walking", "bear,walking".split(","), 8, 0)
    assert p.tokens == ("a", "bear", "walking")
    assert p.key_token_indices == (1, 2)
    assert p.embeddings.shape == (3, 8) and p.embeddings.dtype == torch.float64
    with pytest.raises(ContractError):
        encode_prompt_hashed("", [], 8, 0)


def test_codec_encode_matches_block_mean_then_lift():
    rng = np.random.default_rng(0)
    v = rng.random((2, 8, 8, 3))
    z = ToyCodec(4).encode(v)
    lift = np.array([[1, 1, 1], [1, -1, 1], [1, 1, -1], [1, -1, -1]]) / 2.0
    for f in range(2):
        want = 2 * (np.array(block_mean(v[f].tolist(), 4)) - 0.5) @ lift.T
        np.testing.assert_allclose(z[f], want, rtol=1e-12)


def test_codec_exact_on_block_constant_video():
    v, _ = synth_fixture("moving-square", frames=4)
    codec = ToyCodec(2)
    np.testing.assert_allclose(codec.decode(codec.encode(v)), v, atol=1e-12)
    np.testing.assert_allclose(codec.decode(np.zeros((1, 2, 2, 4))), 0.5)


def test_codec_contracts():
    with pytest.raises(ContractError):
        ToyCodec(8).encode(np.zeros((1, 12, 16, 3)))
    with pytest.raises(ContractError):
        ToyCodec(2).encode(np.zeros((4, 4, 3)))
    with pytest.raises(ContractError):
        ToyCodec(2).decode(np.zeros((1, 2, 2, 3)))


def test_spec_validation():
    with pytest.raises(ContractError):
        ToyDenoiserSpec(latent_dims=(1, 8, 8, 3))
    with pytest.raises(ContractError):
        ToyDenoiserSpec(latent_dims=(1, 6, 8, 4))
    with pytest.raises(ContractError):
        ToyDenoiserSpec(latent_dims=(1, 8, 8, 4), blocks=("down", "mid"))
    with pytest.raises(ContractError):
        ToyDenoiserSpec(latent_dims=(1, 8, 8, 4), width=64)
    with pytest.raises(ContractError):
        ToyDenoiserSpec.for_video(8, 30, 32, codec_factor=4)


def test_spec_round_trip():
    s = ToyDenoiserSpec.for_video(8, 32, 32, codec_factor=2, seed=3)
    assert ToyDenoiserSpec.from_dict({"kind": "toy", **s.to_dict()}) == s


def test_site_dims_three_down_levels():
    s = ToyDenoiserSpec(latent_dims=(1, 32, 64, 4), blocks=("down",) * 3 + ("mid",) + ("up",) * 3)
    assert s.site_dims() == {"down_last": (8, 16), "mid": (4, 8), "up_first": (8, 16)}


@pytest.fixture(scope="module")
def toy():
    sched = make_schedule(10)
    spec = ToyDenoiserSpec.for_video(3, 16, 16, codec_factor=2)
    return ToyDenoiser(spec, sched), sched


def test_attention_outputs_cover_all_sites_and_kinds(toy):
    dn, _ = toy
    p = dn.encode_prompt("a red square moving", "square moving")
    z = LatentState(torch.randn(dn.spec.latent_dims, dtype=torch.float64), 5)
    out = dn.predict_noise(z, 5, p)
    assert out.eps.shape == dn.spec.latent_dims
    assert set(out.attention) == {(s, k) for s in SITES for k in KINDS}
    for site_id, site in dn.sites.items():
        n = site.n_positions
        assert out.attention[(site_id, "cross")].shape == (3, n, 4)
        assert out.attention[(site_id, "self")].shape == (3, n, n)
        assert out.attention[(site_id, "temporal")].shape == (n, 3, 3)
        for kind in KINDS:
            rows = out.attention[(site_id, kind)].sum(-1)
            torch.testing.assert_close(rows, torch.ones_like(rows))


def test_deterministic_and_seed_dependent(toy):
    dn, sched = toy
    p = dn.encode_prompt("a red square", "square")
    z = LatentState(torch.linspace(-1, 1, int(np.prod(dn.spec.latent_dims)), dtype=torch.float64)
                    .reshape(dn.spec.latent_dims), 3)
    a = dn.predict_noise(z, 3, p).eps
    b = ToyDenoiser(dn.spec, sched).predict_noise(z, 3, p).eps
    assert torch.equal(a, b)
    other = ToyDenoiserSpec.from_dict({**dn.spec.to_dict(), "seed": 1})
    assert not torch.allclose(a, ToyDenoiser(other, sched).predict_noise(z, 3, p).eps)


def test_prompt_changes_cross_attention(toy):
    dn, _ = toy
    z = LatentState(torch.randn(dn.spec.latent_dims, dtype=torch.float64), 4)
    a = dn.predict_noise(z, 4, dn.encode_prompt("a red square", "square")).attention
    b = dn.predict_noise(z, 4, dn.encode_prompt("a blue disc", "disc")).attention
    assert not torch.allclose(a[("mid", "cross")], b[("mid", "cross")])


def test_predict_contracts(toy):
    dn, _ = toy
    p = dn.encode_prompt("a square", "square")
    with pytest.raises(ContractError):
        dn.predict_noise(LatentState(torch.zeros(3, 4, 4, 4), 1), 1, p)
    with pytest.raises(ContractError):
        dn.predict_noise(LatentState(torch.zeros(dn.spec.latent_dims), 11), 11, p)
    with pytest.raises(ContractError):
        dn.encode_video(np.zeros((3, 8, 8, 3)))
    wrong = encode_prompt_hashed("a square", ["square"], 8, 0)
    with pytest.raises(ContractError):
        dn.predict_noise(LatentState(torch.zeros(dn.spec.latent_dims), 1), 1, wrong)


def test_numpy_latent_accepted(toy):
    dn, _ = toy
    p = dn.encode_prompt("a square", "square")
    z = np.zeros(dn.spec.latent_dims)
    out = dn.predict_noise(LatentState(z, 2), 2, p)
    assert isinstance(out.eps, torch.Tensor)


def test_seed0_toy_matches_golden_outputs():
    """Regression guard: frozen outputs of the seed-0 toy on a fixed input."""
    from pathlib import Path

    from motiontransfer import mft

    data = Path(__file__).parent / "data"
    sched = make_schedule(50)
    dn = ToyDenoiser(ToyDenoiserSpec.for_video(2, 16, 16, codec_factor=2), sched)
    z = torch.from_numpy(np.random.default_rng(0).standard_normal(dn.spec.latent_dims))
    out = dn.predict_noise(LatentState(z, 25), 25, dn.encode_prompt("a square moving", "square"))
    np.testing.assert_allclose(out.eps.numpy(), mft.load(data / "toy_seed0_eps_t25.mft"), rtol=1e-10, atol=1e-12)
    np.testing.assert_allclose(out.attention[("mid", "cross")].numpy(),
                               mft.load(data / "toy_seed0_mid_cross_t25.mft"), rtol=1e-10, atol=1e-12)
