import numpy as np
import pytest
import torch

from skillprior.checkpoint import load_checkpoint, save_checkpoint
from skillprior.core import ContractViolation, DiagGaussian, Rng, kl_diag_gaussian
from skillprior.skillmodel import (
    SkillModel,
    loss_prior,
    loss_rec,
    loss_rec_sde,
    loss_reg,
    sde_perturb,
)

from gradcheck_util import max_violation


@pytest.fixture
def model():
    return SkillModel(state_dim=4, action_dim=2, horizon=10, skill_dim=10, hidden=(32, 32), rng=Rng(0))


@pytest.fixture
def batch():
    gen = np.random.default_rng(0)
    return gen.normal(size=(8, 4)), np.tanh(gen.normal(size=(8, 10, 2)))


def tiny():
    return SkillModel(state_dim=3, action_dim=1, horizon=2, skill_dim=2, hidden=(4, 4), rng=Rng(5))


def tiny_batch():
    gen = np.random.default_rng(1)
    return torch.tensor(gen.normal(size=(3, 3))), torch.tensor(np.tanh(gen.normal(size=(3, 2, 1))))


def test_shapes(model, batch):
    s, w = batch
    post = model.encode(w)
    assert post.mean.shape == (8, 10)
    assert model.decode(post.mean).shape == (8, 10, 2)
    assert model.prior(s).mean.shape == (8, 10)
    assert model.encode(w[0]).dim == 10


def test_deterministic_forward(model, batch):
    s, w = batch
    assert torch.equal(model.encode(w).mean, model.encode(w).mean)
    z = torch.randn(5, 10, dtype=torch.float64)
    assert torch.equal(model.decode(z), model.decode(z))
    assert torch.equal(model.prior(s).log_std, model.prior(s).log_std)


def test_decoder_strictly_inside_unit_box(model):
    z = 100 * torch.randn(200, 10, dtype=torch.float64)
    out = model.decode(z)
    assert out.abs().max() <= 1.0
    z = torch.randn(200, 10, dtype=torch.float64)
    assert model.decode(z).abs().max() < 1.0


def test_shape_mismatch(model):
    with pytest.raises(ContractViolation):
        model.encode(np.zeros((3, 9, 2)))
    with pytest.raises(ContractViolation):
        model.decode(np.zeros(4))
    with pytest.raises(ContractViolation):
        model.prior(np.zeros(5))


def test_same_init_for_same_rng():
    a = SkillModel(4, 2, rng=Rng(3))
    b = SkillModel(4, 2, rng=Rng(3))
    for (_, p), (_, q) in zip(a.named_parameters(), b.named_parameters()):
        assert torch.equal(p, q)


def test_loss_rec_zero_when_decoder_reproduces(model, batch, monkeypatch):
    _, w = batch
    wt = torch.tensor(w)
    monkeypatch.setattr(model, "decode", lambda z: wt)
    assert loss_rec(model, w, Rng(0)).item() == 0.0


def test_loss_rec_constant_offset(model, batch, monkeypatch):
    _, w = batch
    delta = 0.125
    monkeypatch.setattr(model, "decode", lambda z: torch.tensor(w) + delta)
    assert loss_rec(model, w, Rng(0)).item() == pytest.approx(delta**2, abs=1e-15)


def test_loss_rec_matches_elementwise_oracle(model, batch):
    _, w = batch
    value = loss_rec(model, w, Rng(42)).item()
    # oracle: redo the sample with the same stream and average squared differences by hand
    noise = Rng(42).normal((8, 10))
    with torch.no_grad():
        post = model.encode(w)
        recon = model.decode(post.mean + post.log_std.exp() * noise).numpy()
    total, count = 0.0, 0
    for b in range(8):
        for t in range(10):
            for j in range(2):
                total += (recon[b, t, j] - w[b, t, j]) ** 2
                count += 1
    assert value == pytest.approx(total / count, abs=1e-10)


def test_loss_prior_zero_cases(model, batch, monkeypatch):
    s, w = batch
    post = model.encode(w).detach()
    monkeypatch.setattr(model, "prior", lambda states: DiagGaussian(post.mean, post.log_std))
    assert loss_prior(model, s, w).item() == 0.0
    std = DiagGaussian.standard((8, 10))
    monkeypatch.setattr(model, "encode", lambda windows: std)
    monkeypatch.setattr(model, "prior", lambda states: std)
    assert loss_prior(model, s, w).item() == 0.0


def test_loss_prior_matches_kl_oracle(model, batch):
    s, w = batch
    with torch.no_grad():
        post, pri = model.encode(w), model.prior(s)
    expected = np.mean([float(kl_diag_gaussian(DiagGaussian(post.mean[i], post.log_std[i]),
                                               DiagGaussian(pri.mean[i], pri.log_std[i]))) for i in range(8)])
    assert loss_prior(model, s, w).item() == pytest.approx(expected, abs=1e-10)


def test_loss_reg_cases(model, batch, monkeypatch):
    _, w = batch
    with torch.no_grad():
        post = model.encode(w)
    expected = np.mean([float(kl_diag_gaussian(DiagGaussian(post.mean[i], post.log_std[i]),
                                               DiagGaussian.standard(10))) for i in range(8)])
    assert loss_reg(model, w).item() == pytest.approx(expected, abs=1e-10)
    monkeypatch.setattr(model, "encode", lambda windows: DiagGaussian.standard((8, 10)))
    assert loss_reg(model, w).item() == 0.0
    monkeypatch.setattr(model, "encode", lambda windows: DiagGaussian(torch.ones(8, 10), torch.zeros(8, 10)))
    assert loss_reg(model, w).item() == pytest.approx(5.0, abs=1e-14)


def test_loss_rec_sde_degenerates_to_loss_rec(model, batch):
    _, w = batch
    assert loss_rec_sde(model, w, 0.0, Rng(8)).item() == loss_rec(model, w, Rng(8)).item()
    v = loss_rec_sde(model, w, 0.01, Rng(8)).item()
    assert np.isfinite(v) and v >= 0


def test_sde_perturb_definition():
    z = torch.tensor([0.5, -1.0, 2.0], dtype=torch.float64)
    eps = torch.tensor([1.0, 2.0, -3.0], dtype=torch.float64)
    assert torch.equal(sde_perturb(z, 0.01, eps), z + 0.01 * eps)


def test_losses_nonnegative(model, batch):
    s, w = batch
    for seed in range(5):
        assert loss_rec(model, w, Rng(seed)).item() >= 0
        assert loss_rec_sde(model, w, 0.01, Rng(seed)).item() >= 0
    assert loss_prior(model, s, w).item() >= 0
    assert loss_reg(model, w).item() >= 0


LOSSES = {
    "rec": lambda m, s, w: loss_rec(m, w, Rng(3)),
    "rec_sde": lambda m, s, w: loss_rec_sde(m, w, 0.3, Rng(3)),
    "prior": lambda m, s, w: loss_prior(m, s, w),
    "prior_no_stop_grad": lambda m, s, w: loss_prior(m, s, w, stop_grad=False),
    "reg": lambda m, s, w: loss_reg(m, w),
}


@pytest.mark.parametrize("name", list(LOSSES))
def test_gradients_match_finite_differences(name):
    m = tiny()
    s, w = tiny_batch()
    params = [(n, p) for n, p in m.named_parameters()]
    if name == "prior":
        # stop-gradient: the encoder is a constant of this loss, only the prior network is differentiated
        params = [(n, p) for n, p in params if n.startswith("prior_net")]
    worst, where, nonzero = max_violation(lambda: LOSSES[name](m, s, w), params)
    assert worst <= 1.0, f"{name}: worst violation {worst} at {where}"
    assert nonzero > 0


def test_loss_prior_stop_gradient():
    m = tiny()
    s, w = tiny_batch()
    out = loss_prior(m, s, w)
    enc_dec = list(m.encoder_net.parameters()) + list(m.decoder_net.parameters())
    grads = torch.autograd.grad(out, enc_dec, allow_unused=True)
    assert all(g is None or torch.count_nonzero(g) == 0 for g in grads)
    prior_grads = torch.autograd.grad(loss_prior(m, s, w), list(m.prior_net.parameters()))
    assert any(torch.count_nonzero(g) > 0 for g in prior_grads)
    # without the stop-gradient switch the encoder does receive gradient
    grads = torch.autograd.grad(loss_prior(m, s, w, stop_grad=False), list(m.encoder_net.parameters()))
    assert any(torch.count_nonzero(g) > 0 for g in grads)


def test_checkpoint_round_trip(tmp_path, model):
    path = tmp_path / "m.ckpt"
    h1 = save_checkpoint(path, model.arrays(), "prior", "abc", model.meta())
    header, arrays = load_checkpoint(path, kind="prior")
    back = SkillModel.from_arrays(header["meta"], arrays)
    for (n, p), (_, q) in zip(model.named_parameters(), back.named_parameters()):
        assert p.detach().numpy().tobytes() == q.detach().numpy().tobytes(), n
    h2 = save_checkpoint(tmp_path / "m2.ckpt", back.arrays(), "prior", "abc", back.meta())
    assert h1 == h2
