"""Prior-regularized SAC: critics, replay, update rule, online loop."""

import copy

import numpy as np
import pytest
import torch

from skilldiff.checkpoint import ModelBundle
from skilldiff.data import fit_norm, segment
from skilldiff.diffusion import build_schedule
from skilldiff.downstream import init_policy, policy_prior_kl, prior_heads
from skilldiff.env.arena import ACTION_DIM, STATE_DIM, DomainParam, StageOrder
from skilldiff.env.datagen import rollout_expert
from skilldiff.models import LossWeights, ModelDims, build_variant
from skilldiff.rl import CriticPair, Replay, SacState, init_sac, rl_update, run_online
from skilldiff.training import train_offline

DIMS = ModelDims(state_dim=STATE_DIM, action_dim=ACTION_DIM, omega_dim=7,
                 horizon=10, latent_dim=4, hidden_layers=2, hidden_size=16)
SCHED = build_schedule(5, 1e-4, 0.02)
WEIGHTS = LossWeights()
ORDER = StageOrder((0, 1, 2, 3))
SPEED_MID = DomainParam("speed", (0.5,) * 4)
LATENT_TOTAL = DIMS.latent_dim * 2


@pytest.fixture(scope="module")
def tiny_bundle():
    trajs = [rollout_expert(SPEED_MID, ORDER, seed=i) for i in range(2)]
    torch.manual_seed(0)
    model = build_variant("dual", DIMS)
    train_offline(model, segment(trajs, h=10), fit_norm(trajs), SCHED, WEIGHTS,
                  steps=60, batch_size=32, lr=1e-3, seed=0, log_interval=30)
    return ModelBundle("dual", model, DIMS, WEIGHTS, fit_norm(trajs), SCHED,
                       60, {}).freeze()


def make_batch(b=8, seed=0):
    rng = np.random.default_rng(seed)
    t = lambda a: torch.as_tensor(a, dtype=torch.float32)
    return {"s": t(rng.standard_normal((b, STATE_DIM))),
            "z": t(rng.standard_normal((b, LATENT_TOTAL))),
            "r": t(rng.uniform(0, 1, b)),
            "s2": t(rng.standard_normal((b, STATE_DIM))),
            "done": t(rng.integers(0, 2, b).astype(np.float64)),
            "n": torch.as_tensor(rng.integers(1, 11, b))}


class TestCriticPair:
    def test_target_uses_minimum_of_twins(self):
        torch.manual_seed(0)
        critics = CriticPair(STATE_DIM, LATENT_TOTAL, hidden_layers=1, hidden_size=8)
        # pin the target heads to constants 3 and 5
        for net, c in ((critics.q1_target, 3.0), (critics.q2_target, 5.0)):
            last = [m for m in net if isinstance(m, torch.nn.Linear)][-1]
            torch.nn.init.zeros_(last.weight)
            torch.nn.init.constant_(last.bias, c)
            for m in net:
                if isinstance(m, torch.nn.Linear) and m is not last:
                    torch.nn.init.zeros_(m.weight)
                    torch.nn.init.zeros_(m.bias)
        s, z = torch.randn(4, STATE_DIM), torch.randn(4, LATENT_TOTAL)
        torch.testing.assert_close(critics.target_min(s, z), torch.full((4,), 3.0))

    def test_hand_computed_td_target_single_transition(self, tiny_bundle):
        """y = r + gamma^n * (1 - done) * (min Q_target - alpha * KL), with the
        target critics pinned to constants and KL = 0 (policy == priors)."""
        torch.manual_seed(1)
        policy = init_policy(tiny_bundle)
        sac = init_sac(policy, tiny_bundle, lr=1e-3, seed=0)
        for net, c in ((sac.critics.q1_target, 3.0), (sac.critics.q2_target, 5.0)):
            with torch.no_grad():
                for m in net:
                    if isinstance(m, torch.nn.Linear):
                        m.weight.zero_()
                        m.bias.zero_()
                [m for m in net if isinstance(m, torch.nn.Linear)][-1].bias.fill_(c)
        batch = make_batch(b=1, seed=2)
        batch["done"] = torch.zeros(1)
        batch["n"] = torch.tensor([7])
        gamma = 0.97

        # KL(pi || prior) = 0 at init, targets pinned -> y has a closed form
        alpha = float(sac.log_alpha.detach().exp())
        y_hand = float(batch["r"]) + gamma ** 7 * (3.0 - alpha * 0.0)
        with torch.no_grad():
            q1, q2 = sac.critics.online(batch["s"], batch["z"])
        expected_loss = float((q1 - y_hand) ** 2 + (q2 - y_hand) ** 2)

        info = rl_update(sac, tiny_bundle, batch, discount=gamma, tau=5e-3,
                         target_kl=5.0, rng=np.random.default_rng(123))
        assert info["kl"] == 0.0
        assert abs(info["critic_loss"] - expected_loss) < 1e-5

    def test_polyak_moves_targets(self):
        torch.manual_seed(0)
        critics = CriticPair(4, 4, hidden_layers=1, hidden_size=8)
        with torch.no_grad():
            for p in critics.q1.parameters():
                p.add_(1.0)
        p_online = next(iter(critics.q1.parameters())).clone()
        p_target_before = next(iter(critics.q1_target.parameters())).clone()
        critics.polyak(0.25)
        p_target_after = next(iter(critics.q1_target.parameters()))
        torch.testing.assert_close(p_target_after,
                                   0.75 * p_target_before + 0.25 * p_online)


class TestReplay:
    def test_insert_sample_shapes(self):
        rep = Replay(16, STATE_DIM, LATENT_TOTAL)
        for i in range(10):
            rep.add(np.zeros(STATE_DIM) + i, np.zeros(LATENT_TOTAL), 1.0,
                    np.zeros(STATE_DIM), False, 10)
        batch = rep.sample(np.random.default_rng(0), 4)
        assert batch["s"].shape == (4, STATE_DIM)
        assert rep.size == 10

    def test_wraparound_overwrites_oldest(self):
        rep = Replay(4, 1, 1)
        for i in range(6):
            rep.add([float(i)], [0.0], 0.0, [0.0], False, 1)
        assert rep.size == 4
        assert sorted(rep.s[:, 0].tolist()) == [2.0, 3.0, 4.0, 5.0]


class TestRlUpdate:
    def test_zero_temperature_equals_pure_q_direction(self, tiny_bundle):
        """With alpha = 0 and shared noise, the policy gradient equals the
        gradient of -Q alone."""
        torch.manual_seed(2)
        batch = make_batch(b=6, seed=3)
        priors = prior_heads(tiny_bundle)
        critics = CriticPair(STATE_DIM, LATENT_TOTAL, hidden_layers=1, hidden_size=8)
        eps = [torch.randn(6, DIMS.latent_dim) for _ in range(2)]

        grads = []
        for use_kl_term in (True, False):
            policy = init_policy(tiny_bundle)
            kl, z = policy_prior_kl(policy, priors, batch["s"], eps)
            q1, q2 = critics.online(batch["s"], torch.cat(z, -1))
            q = torch.minimum(q1, q2)
            loss = (0.0 * kl - q).mean() if use_kl_term else (-q).mean()
            loss.backward()
            grads.append([p.grad.clone() for p in policy.parameters()
                          if p.grad is not None])
        for a, b in zip(*grads):
            assert torch.equal(a, b)

    def test_update_is_deterministic_given_batch_and_seed(self, tiny_bundle):
        results = []
        for _ in range(2):
            torch.manual_seed(5)
            policy = init_policy(tiny_bundle)
            sac = init_sac(policy, tiny_bundle, lr=1e-3, seed=7)
            info = rl_update(sac, tiny_bundle, make_batch(b=8, seed=1),
                             discount=0.99, tau=5e-3, target_kl=5.0,
                             rng=np.random.default_rng(42))
            results.append((info, [p.detach().clone() for p in policy.parameters()]))
        assert results[0][0] == results[1][0]
        for a, b in zip(results[0][1], results[1][1]):
            assert torch.equal(a, b)

    def test_temperature_rises_when_kl_above_target(self, tiny_bundle):
        torch.manual_seed(3)
        policy = init_policy(tiny_bundle)
        sac = init_sac(policy, tiny_bundle, lr=1e-2, seed=0)
        before = float(sac.log_alpha)
        rl_update(sac, tiny_bundle, make_batch(b=8, seed=2), discount=0.99,
                  tau=5e-3, target_kl=-1.0,  # kl >= 0 > target forces an increase
                  rng=np.random.default_rng(0))
        assert float(sac.log_alpha) > before

    def test_large_temperature_reduces_kl_on_fixed_batch(self, tiny_bundle):
        """Prior anchoring: with a huge temperature, updates drive KL down."""
        torch.manual_seed(4)
        policy = init_policy(tiny_bundle)
        # knock the policy off the prior (gradient at the KL minimum is zero,
        # so parameter noise, not ascent, is the way to displace it)
        with torch.no_grad():
            for p in policy.parameters():
                p.add_(0.15 * torch.randn_like(p))
        batch = make_batch(b=16, seed=5)
        eps = [torch.randn(16, DIMS.latent_dim) for _ in range(2)]
        kl_start, _ = policy_prior_kl(policy, prior_heads(tiny_bundle), batch["s"], eps)
        assert float(kl_start.mean()) > 0.1

        sac = init_sac(policy, tiny_bundle, lr=1e-3, seed=0, init_alpha=1e6)
        rng = np.random.default_rng(9)
        for _ in range(30):
            rl_update(sac, tiny_bundle, batch, discount=0.99, tau=5e-3,
                      target_kl=1e9,  # keep alpha huge
                      rng=rng)
        kl_end, _ = policy_prior_kl(policy, prior_heads(tiny_bundle), batch["s"], eps)
        assert float(kl_end.mean()) < float(kl_start.mean())


class TestRunOnline:
    def test_smoke_loop_logs_curve(self, tiny_bundle):
        torch.manual_seed(0)
        policy = init_policy(tiny_bundle)
        policy, result = run_online(
            tiny_bundle, policy, SPEED_MID, ORDER, env_steps=120, lr=1e-3,
            batch_size=8, discount=0.99, tau=5e-3, target_kl=5.0,
            replay_capacity=1000, updates_per_decision=1, warmup_transitions=2,
            eval_every=60, eval_episodes=1, seed=0, horizon=10)
        assert result.eval_steps[0] == 0
        assert result.eval_steps[-1] >= 120
        assert all(0.0 <= r <= 4.0 for r in result.eval_returns)
        assert result.updates > 0
        assert len(result.train_episode_returns) >= 1
