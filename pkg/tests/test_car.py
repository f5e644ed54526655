import numpy as np
import pytest
import torch

from srdl.car import (AttentionPair, CarParameters, car_forward, channel_attention, fuse, pool_representation,
                      spatial_attention)

from oracles import (car_params_numpy, central_differences, max_relative_error, oracle_category_rep,
                     oracle_channel, oracle_spatial)


def params(d, dp, seed=0):
    torch.manual_seed(seed)
    return CarParameters(d, dp).double()


def zero_params(d, dp):
    p = params(d, dp)
    with torch.no_grad():
        for t in p.parameters():
            t.zero_()
    return p


def test_zero_network_is_half():
    p = zero_params(6, 4)
    F = torch.randn(2, 6, 3, 3, dtype=torch.float64)
    x = torch.randn(5, 4, dtype=torch.float64)
    assert torch.equal(channel_attention(F, x, p), torch.full((2, 5, 6), 0.5, dtype=torch.float64))
    assert torch.equal(spatial_attention(F, x, p), torch.full((2, 5, 3, 3), 0.5, dtype=torch.float64))


def test_channel_saturates_towards_one():
    p = zero_params(4, 3)
    with torch.no_grad():
        p.f_ca.bias.fill_(10.0)
        p.f_w.bias.fill_(10.0)
    F = torch.randn(1, 4, 2, 2, dtype=torch.float64)
    x = torch.randn(1, 3, dtype=torch.float64)
    prev = torch.zeros(4, dtype=torch.float64)
    for scale in (0.5, 1.0, 2.0, 5.0, 20.0):
        with torch.no_grad():
            p.f_c.weight.copy_(torch.eye(4) * scale)
        ca = channel_attention(F, x, p)[0, 0]
        assert (ca > prev).all()
        prev = ca
    assert (prev > 1 - 1e-8).all()


def test_channel_matches_oracle(rng):
    p = params(6, 4)
    F = rng.normal(size=(6, 3, 3))
    x = rng.normal(size=(4,))
    out = channel_attention(torch.tensor(F)[None], torch.tensor(x)[None], p)[0, 0].detach().numpy()
    np.testing.assert_allclose(out, oracle_channel(F, x, car_params_numpy(p)), rtol=0, atol=1e-9)


def test_spatial_matches_oracle(rng):
    p = params(6, 4)
    F = rng.normal(size=(6, 3, 3))
    x = rng.normal(size=(4,))
    out = spatial_attention(torch.tensor(F)[None], torch.tensor(x)[None], p)[0, 0].detach().numpy()
    np.testing.assert_allclose(out, oracle_spatial(F, x, car_params_numpy(p)), rtol=0, atol=1e-9)


def test_spatial_constant_map_is_constant():
    p = params(6, 4)
    F = torch.randn(1, 6, 1, 1, dtype=torch.float64).expand(1, 6, 3, 3)
    sa = spatial_attention(F, torch.randn(2, 4, dtype=torch.float64), p)
    assert torch.equal(sa, sa[..., :1, :1].expand_as(sa))


def test_fuse_cases():
    F = torch.randn(1, 5, 3, 3, dtype=torch.float64)
    ones_ca, zeros_ca = torch.ones(1, 1, 5, dtype=torch.float64), torch.zeros(1, 1, 5, dtype=torch.float64)
    ones_sa, zeros_sa = torch.ones(1, 1, 3, 3, dtype=torch.float64), torch.zeros(1, 1, 3, 3, dtype=torch.float64)
    assert torch.equal(fuse(F, AttentionPair(ones_ca, ones_sa))[:, 0], F)
    assert not fuse(F, AttentionPair(zeros_ca, zeros_sa)).any()
    assert torch.equal(fuse(F, AttentionPair(zeros_ca, ones_sa))[:, 0], 0.5 * F)


def test_fuse_elementwise_formula(rng):
    F = rng.normal(size=(4, 2, 3))
    ca, sa = rng.random(4), rng.random((2, 3))
    out = fuse(torch.tensor(F)[None], AttentionPair(torch.tensor(ca)[None, None], torch.tensor(sa)[None, None]))
    for k in range(4):
        for i in range(2):
            for j in range(3):
                expected = 0.5 * F[k, i, j] * sa[i, j] + 0.5 * F[k, i, j] * ca[k]
                assert abs(out[0, 0, k, i, j].item() - expected) < 1e-15


def test_pool_cases(rng):
    fused = torch.zeros(1, 1, 4, 3, 3, dtype=torch.float64)
    fused[0, 0, 2, 1, 2] = 7.0
    assert pool_representation(fused)[0, 0].tolist() == [0, 0, 7.0, 0]
    assert torch.equal(pool_representation(torch.full((1, 1, 3, 2, 2), 1.5)), torch.full((1, 1, 3), 1.5))
    R = rng.normal(size=(2, 3, 4, 3, 5))
    out = pool_representation(torch.tensor(R)).numpy()
    for idx in np.ndindex(2, 3, 4):
        best = -np.inf
        for i in range(3):
            for j in range(5):
                best = max(best, R[idx][i, j])
        assert out[idx] == best


def test_ablations():
    p = params(6, 4)
    F = torch.rand(2, 6, 3, 3, dtype=torch.float64)
    emb = torch.randn(3, 4, dtype=torch.float64)
    pair, reps = car_forward(F, emb, p, ["no_sa"])
    assert torch.equal(pair.spatial, torch.ones(2, 3, 3, 3, dtype=torch.float64))
    assert torch.equal(reps, pool_representation(fuse(F, AttentionPair(pair.channel, pair.spatial))))
    _, both = car_forward(F, emb, p, ["no_sa", "no_ca"])
    assert torch.equal(both, F.amax((-2, -1))[:, None].expand(2, 3, 6))
    raw = torch.randn(3, 4, dtype=torch.float64)
    pair_raw, _ = car_forward(F, emb, p, ["no_gcn"], raw_embeddings=raw)
    assert torch.equal(pair_raw.channel, car_forward(F, raw, p)[0].channel)
    with pytest.raises(ValueError, match="unknown ablation"):
        car_forward(F, emb, p, ["no_xyz"])


def test_categories_are_independent(rng):
    p = params(6, 4)
    F = torch.tensor(rng.normal(size=(1, 6, 4, 4)))
    emb = torch.tensor(rng.normal(size=(3, 4)))
    pair, reps = car_forward(F, emb, p)
    for c in range(3):
        pc, rc = car_forward(F, emb[c:c + 1], p)
        torch.testing.assert_close(rc[:, 0], reps[:, c], rtol=0, atol=1e-12)
        torch.testing.assert_close(pc.spatial[:, 0], pair.spatial[:, c], rtol=0, atol=1e-12)
        Fn, ca, sa = F[0].numpy(), pc.channel[0, 0].detach().numpy(), pc.spatial[0, 0].detach().numpy()
        np.testing.assert_allclose(rc[0, 0].detach().numpy(), oracle_category_rep(Fn, ca, sa), atol=1e-12)
    edited = emb.clone()
    edited[1] += 3.0
    _, reps2 = car_forward(F, edited, p)
    assert torch.equal(reps2[:, 0], reps[:, 0]) and torch.equal(reps2[:, 2], reps[:, 2])
    assert not torch.equal(reps2[:, 1], reps[:, 1])


def test_representation_bounded_by_feature_max(rng):
    p = params(6, 4)
    F = torch.tensor(rng.normal(size=(2, 6, 3, 3)))
    _, reps = car_forward(F, torch.tensor(rng.normal(size=(3, 4))), p)
    bound = F.abs().amax((-2, -1))[:, None]
    assert (reps.abs() <= bound + 1e-12).all()


def test_gradients_match_finite_differences(rng):
    p = params(8, 5)
    F = torch.tensor(rng.normal(size=(1, 8, 4, 4)))
    emb = torch.tensor(rng.normal(size=(3, 5)))
    w = torch.tensor(rng.normal(size=(3, 8)))

    def loss():
        _, reps = car_forward(F, emb, p)
        return (reps * w).sum()

    loss().backward()
    tensors = list(p.parameters())
    analytic = [t.grad.clone() for t in tensors]
    numeric = central_differences(loss, [t.data for t in tensors])
    assert max_relative_error(analytic, numeric) < 1e-4
