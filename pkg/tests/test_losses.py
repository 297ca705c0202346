import math

import numpy as np
import pytest

from retracewm.errors import ContractViolation
from retracewm.losses import (
    LossConfig,
    elbo_loss,
    retrace_loss_bisim,
    retrace_loss_l2,
    retrace_loss_recon,
    total_loss,
)
from retracewm.numcore import GaussianDiag, Tensor, zero_grad
from retracewm.worldmodel import ModelConfig, decode, forward_sweep, init_params, retrace_sweep

from fd_oracle import finite_diff_grads, max_rel_error


def small_cfg(**kw):
    defaults = dict(obs_dim=3, action_dim=2, z_dim=4, h_dim=6, embed_dim=4, hidden_dim=5)
    defaults.update(kw)
    return ModelConfig(**defaults)


def gauss(mean, std):
    return GaussianDiag(Tensor(np.asarray(mean, float)), Tensor(np.asarray(std, float)))


def zero_policy(z):
    return Tensor(np.zeros((z.shape[0], 2)))


def test_elbo_perfect_fit_leaves_normalizer():
    # prior == posterior, decoder mean == obs, unit variance: (D/2) log 2pi
    D = 3
    obs = np.array([[0.4, -1.0, 2.0]])
    post = gauss(np.zeros((1, 4)), np.ones((1, 4)))
    dec = gauss(obs, np.ones((1, D)))
    val = elbo_loss(obs, post, post, Tensor(np.zeros((1, 4))), dec, beta=1.0)
    assert val.item() == pytest.approx(D / 2 * math.log(2 * math.pi), rel=1e-12)


def test_elbo_beta_scaling():
    obs = np.array([[0.5, 0.0, -0.5]])
    prior = gauss(np.zeros((1, 4)), np.ones((1, 4)))
    post = gauss(np.full((1, 4), 0.3), np.full((1, 4), 0.8))
    dec = gauss(np.zeros((1, 3)), np.ones((1, 3)))
    zs = Tensor(np.zeros((1, 4)))
    l0 = elbo_loss(obs, prior, post, zs, dec, beta=0.0).item()
    l1 = elbo_loss(obs, prior, post, zs, dec, beta=1.0).item()
    l2 = elbo_loss(obs, prior, post, zs, dec, beta=2.0).item()
    # beta = 0 leaves pure negative reconstruction; doubling beta doubles the
    # KL contribution exactly
    recon = -(-0.5 * math.log(2 * math.pi) * 3 - 0.5 * float(np.sum(obs**2)))
    assert l0 == pytest.approx(recon, rel=1e-12)
    assert l2 - l1 == pytest.approx(l1 - l0, rel=1e-10)


def test_bisim_identity_is_zero():
    params = init_params(small_cfg(), np.random.default_rng(0))
    rng = np.random.default_rng(1)
    z = Tensor(rng.normal(size=(7, 4)))
    h = Tensor(rng.normal(size=(7, 6)))
    val = retrace_loss_bisim(z, z, h, params, zero_policy, gamma=0.99)
    assert abs(val.item()) < 1e-10


def _np_relu_mlp(x, w1, b1, w2, b2):
    return np.maximum(x @ w1 + b1, 0.0) @ w2 + b2


def _np_softplus(x):
    return np.logaddexp(0.0, x)


def test_bisim_hand_evaluation_with_frozen_heads():
    # independent numpy evaluation of the three-term residual with the same
    # frozen parameters
    cfg = small_cfg()
    params = init_params(cfg, np.random.default_rng(3))
    rng = np.random.default_rng(4)
    z_a = rng.normal(size=(2, 4))
    z_b = rng.normal(size=(2, 4))
    h = rng.normal(size=(2, 6))
    gamma = 0.9

    val = retrace_loss_bisim(Tensor(z_a), Tensor(z_b), Tensor(h), params, zero_policy,
                             gamma=gamma).item()

    p = {k: v.data for k, v in params.named_parameters().items()}
    floor = 1e-4

    def rew(z):
        m = _np_relu_mlp(z, p["theta.rew_w1"], p["theta.rew_b1"], p["theta.rew_w2"],
                         p["theta.rew_b2"])
        s = (_np_softplus(p["theta.rew_raw_std"]) + floor) * np.ones_like(m)
        return m, s

    def gru(h_in, x):
        H = 6
        gx = x @ p["psi1.gru_wx"] + p["psi1.gru_b"]
        gh = h_in @ p["psi1.gru_whru"]
        sig = lambda v: 1.0 / (1.0 + np.exp(-v))
        r = sig(gx[:, :H] + gh[:, :H])
        u = sig(gx[:, H:2 * H] + gh[:, H:2 * H])
        c = np.tanh(gx[:, 2 * H:] + (r * h_in) @ p["psi1.gru_whc"])
        return u * h_in + (1 - u) * c

    def prior(h_in):
        out = _np_relu_mlp(h_in, p["psi1.head_w1"], p["psi1.head_b1"], p["psi1.head_w2"],
                           p["psi1.head_b2"])
        return out[:, :4], _np_softplus(out[:, 4:]) + floor

    def transition(z):
        act = np.zeros((2, 2))
        return prior(gru(h, np.concatenate([z, act], axis=1)))

    l1 = np.sum(np.abs(z_a - z_b), axis=1)
    (ma, sa), (mb, sb) = rew(z_a), rew(z_b)
    klr = np.sum(np.log(sb) - np.log(sa) + (sa**2 + (ma - mb)**2) / (2 * sb**2) - 0.5, axis=1)
    (tma, tsa), (tmb, tsb) = transition(z_a), transition(z_b)
    w2 = np.sum((tma - tmb)**2 + (tsa - tsb)**2, axis=1)
    expect = float(np.mean((l1 - klr - gamma * w2)**2))
    assert val == pytest.approx(expect, rel=1e-10)


def test_bisim_gamma_zero_removes_transition_term():
    cfg = small_cfg()
    params = init_params(cfg, np.random.default_rng(5))
    rng = np.random.default_rng(6)
    z_a, z_b = Tensor(rng.normal(size=(3, 4))), Tensor(rng.normal(size=(3, 4)))
    h = Tensor(rng.normal(size=(3, 6)))
    # with gamma -> 0 only the L1 and reward terms remain; verify against an
    # explicit recomputation that drops the transition distance
    from retracewm.numcore import absolute, kl_diag_lastdim, square, tmean, tsum
    from retracewm.worldmodel import reward_head

    got = retrace_loss_bisim(z_a, z_b, h, params, zero_policy, gamma=1e-300).item()
    l1 = tsum(absolute(z_a - z_b), axis=-1)
    klr = kl_diag_lastdim(reward_head(params, z_a), reward_head(params, z_b))
    expect = tmean(square(l1 - klr)).item()
    assert got == pytest.approx(expect, rel=1e-9)


def test_l2_and_recon_variants():
    params = init_params(small_cfg(), np.random.default_rng(0))
    rng = np.random.default_rng(1)
    z = Tensor(rng.normal(size=(4, 4)))
    assert retrace_loss_l2(z, z).item() == 0.0
    # recon with decoder mean == obs, unit variance leaves (D/2) log 2pi
    obs = decode(params, z).mean.data
    val = retrace_loss_recon(obs, z, params).item()
    assert val == pytest.approx(3 / 2 * math.log(2 * math.pi), rel=1e-12)
    # permutation invariance of the batch mean
    z2 = Tensor(rng.normal(size=(4, 4)))
    perm = np.array([2, 0, 3, 1])
    a = retrace_loss_l2(z, z2).item()
    b = retrace_loss_l2(Tensor(z.data[perm]), Tensor(z2.data[perm])).item()
    assert a == pytest.approx(b, rel=1e-12)


def _setup_sweep(T=4, N=2, seed=0, **cfg_kw):
    cfg = small_cfg(**cfg_kw)
    params = init_params(cfg, np.random.default_rng(seed))
    rng = np.random.default_rng(seed + 1)
    obs = rng.normal(size=(N, T + 1, cfg.obs_dim))
    acts = rng.uniform(-1, 1, size=(N, T, cfg.action_dim))
    sweep = forward_sweep(params, obs, acts, np.random.default_rng(seed + 2))
    retrace = retrace_sweep(params, sweep, np.random.default_rng(seed + 3))
    return params, obs, sweep, retrace


def test_total_loss_lambda_zero_equals_mean_elbo():
    params, obs, sweep, retrace = _setup_sweep()
    cfg0 = LossConfig(retrace_weight=0.0)
    cfg1 = LossConfig(retrace_weight=1.0)
    mask = np.ones((2, 3))
    loss0, rep0 = total_loss(obs, sweep, retrace, mask, params, zero_policy, cfg0)
    _, rep1 = total_loss(obs, sweep, retrace, mask, params, zero_policy, cfg1)
    assert abs(rep0.total - rep0.elbo_term) < 1e-12
    assert rep0.elbo_term == pytest.approx(rep1.elbo_term, rel=1e-12)


def test_total_loss_all_masked_kills_retrace_term():
    params, obs, sweep, retrace = _setup_sweep()
    mask = np.zeros((2, 3))
    _, rep = total_loss(obs, sweep, retrace, mask, params, zero_policy, LossConfig())
    assert rep.retrace_term == 0.0
    assert rep.masked_fraction == 1.0


def test_total_loss_composition_and_monotonicity_in_weight():
    params, obs, sweep, retrace = _setup_sweep()
    mask = np.ones((2, 3))
    totals = []
    for w in (0.0, 0.5, 1.0, 2.0):
        cfg = LossConfig(retrace_weight=w)
        _, rep = total_loss(obs, sweep, retrace, mask, params, zero_policy, cfg)
        assert rep.total == pytest.approx(rep.elbo_term + w * rep.retrace_term, rel=1e-12)
        assert rep.retrace_term > 0
        totals.append(rep.total)
    assert totals == sorted(totals)


def test_total_loss_mask_shape_and_values_checked():
    params, obs, sweep, retrace = _setup_sweep()
    with pytest.raises(ContractViolation):
        total_loss(obs, sweep, retrace, np.ones((2, 4)), params, zero_policy, LossConfig())
    bad = np.ones((2, 3))
    bad[0, 0] = 0.5
    with pytest.raises(ContractViolation):
        total_loss(obs, sweep, retrace, bad, params, zero_policy, LossConfig())


def test_masked_out_retrace_zeroes_reverse_approximator_gradient():
    params, obs, sweep, retrace = _setup_sweep()
    loss, _ = total_loss(obs, sweep, retrace, np.zeros((2, 3)), params, zero_policy,
                         LossConfig(retrace_weight=1.0))
    zero_grad(params.named_parameters().values())
    loss.backward()
    for name, p in params.zeta.items():
        assert p.grad is None or not np.any(p.grad), f"zeta.{name} received gradient"


def test_total_loss_gradients_match_finite_differences():
    # micro-batch gradcheck through sweep + retrace + combined objective
    cfg = small_cfg(z_dim=3, h_dim=4, embed_dim=3, hidden_dim=4)
    base = init_params(cfg, np.random.default_rng(0))
    rng = np.random.default_rng(1)
    obs = rng.normal(size=(1, 4, cfg.obs_dim))  # N=1, T=3
    acts = rng.uniform(-1, 1, size=(1, 3, cfg.action_dim))
    mask = np.ones((1, 2))
    lcfg = LossConfig(retrace_weight=0.7, beta=1.0, gamma=0.9)

    names = list(base.named_parameters().keys())
    arrays = {n: base.named_parameters()[n].data.copy() for n in names}

    def run(arrs, want_grads=False):
        params = init_params(cfg, np.random.default_rng(0))
        for n, p in params.named_parameters().items():
            p.data[:] = arrs[n]
        sweep = forward_sweep(params, obs, acts, np.random.default_rng(2))
        retrace = retrace_sweep(params, sweep, np.random.default_rng(3))
        loss, _ = total_loss(obs, sweep, retrace, mask, params, zero_policy, lcfg)
        if not want_grads:
            return loss.item()
        zero_grad(params.named_parameters().values())
        loss.backward()
        return {n: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
                for n, p in params.named_parameters().items()}

    ad = run(arrays, want_grads=True)
    # spot-check a subset of parameters per group to keep runtime low
    subset = ["phi.w2", "psi1.gru_whc", "psi1.head_w2", "psi2.head_w2",
              "theta.dec_w2", "theta.rew_w2", "zeta.w2", "theta.rew_raw_std"]

    def run_subset(sub):
        merged = dict(arrays)
        merged.update(sub)
        return run(merged)

    fd = finite_diff_grads(run_subset, {n: arrays[n].copy() for n in subset}, h=1e-5)
    assert max_rel_error(fd, {n: ad[n] for n in subset}, floor=1e-5) < 1e-3
