"""Training loop behavior and checkpoint round-trips."""

import numpy as np
import pytest
import torch

from skilldiff.checkpoint import (ModelBundle, decoder_hash, load_bundle,
                                  load_tensor_file, module_hash, save_bundle,
                                  save_tensor_file)
from skilldiff.data import fit_norm, segment
from skilldiff.diffusion import build_schedule
from skilldiff.env.arena import ACTION_DIM, STATE_DIM, DomainParam, StageOrder
from skilldiff.env.datagen import rollout_expert
from skilldiff.errors import TrainingError
from skilldiff.models import LossWeights, ModelDims, SkillModel, build_variant
from skilldiff.training import LossReport, train_offline

DIMS = ModelDims(state_dim=STATE_DIM, action_dim=ACTION_DIM, omega_dim=7,
                 horizon=10, latent_dim=8, hidden_layers=2, hidden_size=24)
SCHED = build_schedule(10, 1e-4, 0.02)
WEIGHTS = LossWeights()


@pytest.fixture(scope="module")
def tiny_data():
    trajs = [rollout_expert(DomainParam("speed", (p, p, p, p)), StageOrder((0, 1, 2, 3)),
                            seed=i) for i, p in enumerate((0.4, 0.6))]
    return segment(trajs, h=10), fit_norm(trajs)


def _train(segs, norms, kind="dual", steps=150, seed=0, lr=1e-3):
    torch.manual_seed(seed)
    model = build_variant(kind, DIMS)
    history = train_offline(model, segs, norms, SCHED, WEIGHTS, steps=steps,
                            batch_size=32, lr=lr, seed=seed, log_interval=25)
    return model, history


class TestTrainOffline:
    def test_reconstruction_improves(self, tiny_data):
        segs, norms = tiny_data
        _, history = _train(segs, norms, steps=300)
        assert history[-1].rec < history[0].rec

    def test_loss_decomposition_identity(self, tiny_data):
        segs, norms = tiny_data
        _, history = _train(segs, norms)
        for rep in history:
            recomposed = rep.rec + rep.beta_rho * rep.kl_rho + rep.beta_sigma * rep.kl_sigma
            assert abs(rep.total - recomposed) <= 1e-10

    def test_kl_terms_nonnegative_every_step(self, tiny_data):
        segs, norms = tiny_data
        _, history = _train(segs, norms)
        assert all(r.kl_rho >= 0 and r.kl_sigma >= 0 for r in history)

    def test_seeded_run_reproducibility(self, tiny_data):
        segs, norms = tiny_data
        m1, h1 = _train(segs, norms, steps=100, seed=3)
        m2, h2 = _train(segs, norms, steps=100, seed=3)
        assert h1[-1] == h2[-1]
        for p1, p2 in zip(m1.parameters(), m2.parameters()):
            assert torch.equal(p1, p2)

    def test_nan_loss_aborts_named(self, tiny_data):
        segs, norms = tiny_data

        class NanModel(SkillModel):
            variant = "dual"
            dims = DIMS

            def __init__(self):
                super().__init__()
                self.w = torch.nn.Linear(1, 1)

            def param_groups(self):
                return {"decoder": list(self.w.parameters())}

            def pretrain_losses(self, batch, sched, weights, noise):
                bad = self.w.weight.sum() * float("nan")
                zero = self.w.weight.sum() * 0.0
                return bad, zero, {"rec": bad, "kl_rho": zero, "kl_sigma": zero,
                                   "prior_rho": zero, "prior_sigma": zero}

        with pytest.raises(TrainingError, match="rec"):
            train_offline(NanModel(), segs, norms, SCHED, WEIGHTS, steps=5,
                          batch_size=8, lr=1e-3, seed=0)

    def test_divergence_aborts_with_diagnostics(self, tiny_data):
        segs, norms = tiny_data

        class DivergingModel(SkillModel):
            variant = "dual"
            dims = DIMS

            def __init__(self):
                super().__init__()
                self.w = torch.nn.Linear(1, 1)
                self.calls = 0

            def param_groups(self):
                return {"decoder": list(self.w.parameters())}

            def pretrain_losses(self, batch, sched, weights, noise):
                self.calls += 1
                value = 1.0 if self.calls == 1 else 1e4
                rec = self.w.weight.sum() * 0.0 + value
                zero = rec * 0.0
                return rec, zero, {"rec": rec, "kl_rho": zero, "kl_sigma": zero,
                                   "prior_rho": zero, "prior_sigma": zero}

        with pytest.raises(TrainingError, match="diverged"):
            train_offline(DivergingModel(), segs, norms, SCHED, WEIGHTS, steps=300,
                          batch_size=8, lr=1e-3, seed=0)

    def test_report_json_round_trip(self):
        rep = LossReport(step=5, rec=1.25, kl_rho=0.5, kl_sigma=0.25,
                         prior_rho=0.1, prior_sigma=0.2, beta_rho=5e-4, beta_sigma=1e-4)
        d = rep.to_json()
        assert d["total"] == rep.total
        assert LossReport(**d) == rep


class TestTensorFiles:
    def test_round_trip_exact(self, tmp_path):
        rng = np.random.default_rng(0)
        tensors = {"layer.weight": rng.standard_normal((4, 3)).astype(np.float32),
                   "layer.bias": rng.standard_normal(4).astype(np.float32),
                   "scalar": np.float32(2.5).reshape(())}
        path = tmp_path / "t.bin"
        save_tensor_file(path, tensors)
        again = load_tensor_file(path)
        assert set(again) == set(tensors)
        for k in tensors:
            assert np.array_equal(np.asarray(tensors[k]), again[k])

    def test_byte_stability(self, tmp_path):
        tensors = {"a": np.arange(6, dtype=np.float32).reshape(2, 3)}
        save_tensor_file(tmp_path / "x.bin", tensors)
        save_tensor_file(tmp_path / "y.bin", tensors)
        assert (tmp_path / "x.bin").read_bytes() == (tmp_path / "y.bin").read_bytes()


class TestBundle:
    def _bundle(self, tiny_data, steps=60):
        segs, norms = tiny_data
        model, _ = _train(segs, norms, steps=steps)
        return ModelBundle("dual", model, DIMS, WEIGHTS, norms, SCHED, steps,
                           {"note": "test"}).freeze()

    def test_round_trip_parameters_bitwise(self, tiny_data, tmp_path):
        bundle = self._bundle(tiny_data)
        save_bundle(tmp_path / "ckpt", bundle)
        again = load_bundle(tmp_path / "ckpt")
        for (n1, p1), (n2, p2) in zip(sorted(bundle.model.named_parameters()),
                                      sorted(again.model.named_parameters())):
            assert n1 == n2
            assert torch.equal(p1, p2)
        assert again.variant == "dual"
        assert again.steps == bundle.steps
        assert np.array_equal(again.norms.state_mean, bundle.norms.state_mean)
        assert np.array_equal(again.sched.alpha_bar, bundle.sched.alpha_bar)

    def test_loaded_bundle_is_frozen(self, tiny_data, tmp_path):
        bundle = self._bundle(tiny_data)
        save_bundle(tmp_path / "ckpt", bundle)
        again = load_bundle(tmp_path / "ckpt")
        assert all(not p.requires_grad for p in again.model.parameters())

    def test_save_is_byte_deterministic(self, tiny_data, tmp_path):
        bundle = self._bundle(tiny_data)
        save_bundle(tmp_path / "a", bundle)
        save_bundle(tmp_path / "b", bundle)
        for f in sorted(p.name for p in (tmp_path / "a").iterdir()):
            assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()

    def test_hashes_detect_mutation(self, tiny_data):
        bundle = self._bundle(tiny_data)
        h1 = decoder_hash(bundle.model)
        m1 = module_hash(bundle.model.eps_rho)
        with torch.no_grad():
            next(iter(bundle.model.eps_rho.parameters())).add_(1.0)
        assert decoder_hash(bundle.model) != h1
        assert module_hash(bundle.model.eps_rho) != m1
