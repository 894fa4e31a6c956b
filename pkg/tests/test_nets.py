import numpy as np
import pytest
import torch
import torch.nn.functional as F

from fgssl.nets import Decoder, Encoder, NetConfig, Projector, build_networks, decode, \
    encode, momentum_update, param_vector, project

from conftest import small_net


def fd_gradient(fn, module, h=1e-3):
    """Central finite differences of a scalar fn() over every parameter."""
    grads = []
    for p in module.parameters():
        flat = p.detach().reshape(-1)
        g = torch.zeros_like(flat)
        for i in range(flat.numel()):
            orig = flat[i].item()
            flat[i] = orig + h
            hi = fn()
            flat[i] = orig - h
            lo = fn()
            flat[i] = orig
            g[i] = (hi - lo) / (2 * h)
        grads.append(g)
    return torch.cat(grads)


def rel_err(got: torch.Tensor, want: torch.Tensor) -> float:
    return ((got - want).norm() / want.norm()).item()


def _double(module):
    return module.double()


def _shift_batchnorms(module, weight=0.1, bias=0.6):
    """Pin affine params so every ReLU input sits far from its kink.

    In train mode batchnorm standardizes each channel, so pre-activations
    land near N(bias, weight); with bias >> weight the +-1e-3 finite
    difference box is free of ReLU kinks and the function is smooth there,
    which is the regime where FD is a valid derivative estimate. The
    encoder's final conv has no batchnorm, so its own weight/bias are
    scaled to put its pre-activations in the same safe band.
    """
    for m in module.modules():
        if isinstance(m, torch.nn.modules.batchnorm._BatchNorm):
            with torch.no_grad():
                m.weight.fill_(weight)
                m.bias.fill_(bias)
    if isinstance(module, Encoder):
        conv = module.blocks[-1][0]
        with torch.no_grad():
            conv.weight.mul_(weight)
            conv.bias.fill_(bias)


def test_encoder_shapes_and_eval_determinism():
    cfg = NetConfig()
    enc = Encoder(cfg)
    x = torch.rand(4, 3, 64, 64)
    feats = encode(enc, x, mode="eval")
    assert feats.shape == (4, 128)
    again = encode(enc, x, mode="eval")
    assert torch.equal(feats, again)
    with pytest.raises(ValueError):
        encode(enc, torch.rand(4, 1, 64, 64), mode="eval")


def test_encoder_parameter_gradient_matches_finite_differences():
    torch.manual_seed(0)
    enc = _double(Encoder(small_net()))
    _shift_batchnorms(enc)
    enc.train()
    x = torch.rand(2, 3, 16, 16, dtype=torch.float64)
    r = torch.randn(2, 16, dtype=torch.float64)

    def probe():
        with torch.no_grad():
            return float((enc(x) * r).sum())

    loss = (enc(x) * r).sum()
    loss.backward()
    autograd = torch.cat([p.grad.reshape(-1) for p in enc.parameters()])
    fd = fd_gradient(probe, enc)
    assert rel_err(fd, autograd) < 1e-3


def test_projector_gradient_matches_finite_differences():
    torch.manual_seed(1)
    proj = _double(Projector(small_net()))
    with torch.no_grad():
        proj.net[0].bias.fill_(2.0)  # keeps the hidden ReLU inputs positive
    v = 0.3 * torch.randn(3, 16, dtype=torch.float64)
    r = torch.randn(3, 8, dtype=torch.float64)

    def probe():
        with torch.no_grad():
            return float((proj(v) * r).sum())

    (proj(v) * r).sum().backward()
    autograd = torch.cat([p.grad.reshape(-1) for p in proj.parameters()])
    fd = fd_gradient(probe, proj)
    assert rel_err(fd, autograd) < 1e-3


def test_decoder_gradient_matches_finite_differences():
    torch.manual_seed(2)
    dec = _double(Decoder(small_net()))
    _shift_batchnorms(dec)
    dec.train()
    v = torch.randn(2, 16, dtype=torch.float64)

    def probe():
        with torch.no_grad():
            return float(dec(v).mean())

    dec(v).mean().backward()
    autograd = torch.cat([p.grad.reshape(-1) for p in dec.parameters()])
    fd = fd_gradient(probe, dec)
    assert rel_err(fd, autograd) < 1e-3


def test_decoder_input_gradient_matches_finite_differences():
    torch.manual_seed(3)
    dec = _double(Decoder(small_net()))
    dec.eval()
    v = torch.randn(1, 16, dtype=torch.float64, requires_grad=True)
    dec(v).mean().backward()
    autograd = v.grad.reshape(-1).clone()
    h = 1e-3
    fd = torch.zeros(16, dtype=torch.float64)
    with torch.no_grad():
        for i in range(16):
            vp = v.detach().clone(); vp[0, i] += h
            vm = v.detach().clone(); vm[0, i] -= h
            fd[i] = (dec(vp).mean() - dec(vm).mean()) / (2 * h)
    assert rel_err(fd, autograd) < 1e-3


def test_decoder_output_range_and_shape():
    cfg = NetConfig()
    dec = Decoder(cfg)
    dec.eval()
    out = decode(dec, torch.randn(1, 128))
    assert out.shape == (1, 3, 64, 64)
    assert (out >= 0).all() and (out <= 1).all()
    big = decode(dec, 100 * torch.randn(2, 128))
    assert (big >= 0).all() and (big <= 1).all()
    with pytest.raises(Exception):
        decode(dec, torch.full((1, 128), float("nan")))


def test_shape_closure_decode_encode():
    for cfg in (NetConfig(), small_net()):
        enc, _, _, _, dec = build_networks(cfg, seed=0)
        enc.eval(); dec.eval()
        x = torch.rand(2, 3, cfg.image_size, cfg.image_size)
        assert decode(dec, encode(enc, x)).shape == x.shape


def test_projector_shapes_and_normalization():
    proj = Projector(NetConfig())
    out = project(proj, torch.randn(4, 128), normalize=True)
    assert out.shape == (4, 64)
    assert torch.allclose(out.norm(dim=1), torch.ones(4), atol=1e-5)
    raw = project(proj, torch.randn(4, 128), normalize=False)
    assert not torch.allclose(raw.norm(dim=1), torch.ones(4), atol=1e-2)
    # zero features never divide by zero
    zed = project(proj, torch.zeros(1, 128), normalize=True)
    assert torch.isfinite(zed).all()


def test_identity_projector_equals_row_normalization():
    cfg = NetConfig(image_size=16, feature_dim=16, proj_dim=16, num_blocks=2, proj_layers=1)
    proj = Projector(cfg)
    with torch.no_grad():
        proj.net.weight.copy_(torch.eye(16))
        proj.net.bias.zero_()
    v = torch.randn(5, 16)
    got = project(proj, v, normalize=True)
    want = F.normalize(v, dim=1)
    assert torch.allclose(got, want, atol=1e-6)


def test_momentum_update_boundaries_and_value():
    cfg = small_net()
    enc_q, _, enc_k, _, _ = build_networks(cfg, seed=1)
    with torch.no_grad():
        for p in enc_q.parameters():
            p.fill_(0.0)
        for p in enc_k.parameters():
            p.fill_(1.0)
    before_q = param_vector(enc_q)
    momentum_update(enc_k, enc_q, key_momentum=0.999)
    # scalar recurrence: 0.999 * 1 + 0.001 * 0
    assert torch.allclose(param_vector(enc_k), torch.full_like(before_q, 0.999))
    assert torch.equal(param_vector(enc_q), before_q)  # query untouched

    momentum_update(enc_k, enc_q, key_momentum=1.0)
    assert torch.allclose(param_vector(enc_k), torch.full_like(before_q, 0.999))
    momentum_update(enc_k, enc_q, key_momentum=0.0)
    assert torch.equal(param_vector(enc_k), param_vector(enc_q))
    with pytest.raises(ValueError):
        momentum_update(enc_k, enc_q, key_momentum=1.5)


def test_momentum_update_preserves_finiteness():
    cfg = small_net()
    enc_q, _, enc_k, _, _ = build_networks(cfg, seed=2)
    for _ in range(5):
        momentum_update(enc_k, enc_q, key_momentum=0.9)
    assert torch.isfinite(param_vector(enc_k)).all()


def test_build_networks_key_copies_match_and_frozen():
    enc_q, proj_q, enc_k, proj_k, _ = build_networks(small_net(), seed=3)
    assert torch.equal(param_vector(enc_q), param_vector(enc_k))
    assert torch.equal(param_vector(proj_q), param_vector(proj_k))
    assert all(not p.requires_grad for p in enc_k.parameters())
    assert all(p.requires_grad for p in enc_q.parameters())


def test_train_mode_participates_in_gradients():
    enc = Encoder(small_net())
    enc.train()
    x = torch.rand(2, 3, 16, 16)
    loss = enc(x).sum()
    loss.backward()
    grads = [p.grad for p in enc.parameters() if p.grad is not None]
    assert grads and any(g.abs().sum() > 0 for g in grads)
