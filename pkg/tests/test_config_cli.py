"""Config round-trips and the command-line surface."""

import json
from pathlib import Path

import pytest

from skilldiff.cli import main
from skilldiff.config import (ExperimentConfig, load_config, save_config)
from skilldiff.errors import ParameterError


def tiny_config(out_dir: str) -> ExperimentConfig:
    cfg = ExperimentConfig()
    cfg.out_dir = out_dir
    cfg.seeds = [0]
    cfg.env.families = ["speed"]
    cfg.env.levels = [0, 3]
    cfg.env.trajectories_per_domain = 2
    cfg.env.fewshot_pool = 2
    cfg.env.heldout_per_source = 1
    cfg.model.latent_dim = 8
    cfg.model.hidden_layers = 2
    cfg.model.hidden_size = 24
    cfg.model.diffusion_steps = 5
    cfg.train.steps = 40
    cfg.train.batch_size = 16
    cfg.train.log_interval = 10
    cfg.fewshot.demos = 2
    cfg.fewshot.steps = 10
    cfg.fewshot.eval_episodes = 1
    cfg.rl.env_steps = 60
    cfg.rl.eval_every = 30
    cfg.rl.eval_episodes = 1
    cfg.rl.warmstart_steps = 5
    cfg.rl.warmup_transitions = 2
    cfg.rl.updates_per_decision = 1
    return cfg


class TestConfig:
    def test_round_trip_identity(self):
        cfg = ExperimentConfig()
        again = ExperimentConfig.from_json(cfg.to_json())
        assert again == cfg

    def test_round_trip_through_file(self, tmp_path):
        cfg = tiny_config(str(tmp_path / "out"))
        save_config(cfg, tmp_path / "cfg.json")
        assert load_config(tmp_path / "cfg.json") == cfg

    def test_unknown_top_level_key_rejected(self):
        with pytest.raises(ParameterError, match="unknown keys"):
            ExperimentConfig.from_json({"varaint": "dual"})

    def test_unknown_nested_key_rejected(self):
        with pytest.raises(ParameterError, match="config.model"):
            ExperimentConfig.from_json({"model": {"latent_size": 32}})

    def test_defaults_match_reference_table(self):
        cfg = ExperimentConfig()
        assert cfg.data.horizon == 10
        assert cfg.model.latent_dim == 32
        assert cfg.model.hidden_layers == 5 and cfg.model.hidden_size == 128
        assert cfg.model.diffusion_steps == 50
        assert cfg.model.delta == 0.5
        assert cfg.model.beta_rho == 5e-4 and cfg.model.beta_sigma == 1e-4
        assert cfg.train.steps == 100_000
        assert cfg.train.batch_size == 128 and cfg.train.lr == 1e-3
        assert cfg.train.bc_lr == 1e-4
        assert cfg.rl.env_steps == 300_000
        assert cfg.rl.batch_size == 64 and cfg.rl.lr == 3e-4
        assert cfg.fewshot.demos == 3
        assert len(cfg.seeds) == 3


@pytest.fixture(scope="module")
def cli_workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = tiny_config(str(root / "out"))
    cfg_path = root / "cfg.json"
    save_config(cfg, cfg_path)
    return root, cfg_path, cfg


class TestCli:
    def test_gen_data_creates_manifest(self, cli_workspace, capsys):
        root, cfg_path, cfg = cli_workspace
        code = main(["gen-data", "--config", str(cfg_path), "--seed", "0"])
        out = json.loads(capsys.readouterr().out)
        assert code == 0
        assert Path(cfg.out_dir, "dataset", "manifest.json").exists()
        assert out["n_trajectories"] == 2 * 6 + 2 * 6  # sources + 2 levels x 3 targets

    def test_pretrain_then_fewshot_and_embed(self, cli_workspace, capsys):
        root, cfg_path, cfg = cli_workspace
        assert main(["pretrain", "--config", str(cfg_path), "--seed", "0"]) == 0
        ckpt = json.loads(capsys.readouterr().out)["checkpoint"]
        assert Path(ckpt, "manifest.json").exists()

        assert main(["fewshot", "--config", str(cfg_path), "--seed", "0",
                     "--levels", "3"]) == 0
        rep_path = json.loads(capsys.readouterr().out)["report"]
        report = json.loads(Path(rep_path).read_text())
        assert all(row["level"] == 3 for row in report["rows"])
        assert all(0 <= row["mean_return"] <= 4 for row in report["rows"])

        assert main(["embed", "--config", str(cfg_path), "--seed", "0"]) == 0
        out = json.loads(capsys.readouterr().out)
        assert "ari_rho_task" in out["metrics"]

    def test_rl_smoke(self, cli_workspace, capsys):
        root, cfg_path, cfg = cli_workspace
        code = main(["rl", "--config", str(cfg_path), "--seed", "0", "--level", "3"])
        out = json.loads(capsys.readouterr().out)
        assert code == 0
        assert 0 <= out["final_eval_return"] <= 4

    def test_plot_from_reports(self, cli_workspace, capsys):
        root, cfg_path, cfg = cli_workspace
        rl_report = Path(cfg.out_dir) / "reports" / "rl_dual_seed0.json"
        code = main(["plot", "--config", str(cfg_path), "--kind", "rl",
                     "--reports", str(rl_report)])
        out = json.loads(capsys.readouterr().out)
        assert code == 0
        assert all(Path(p).exists() for p in out["plots"])

    def test_error_is_machine_readable_json(self, tmp_path, capsys):
        cfg = tiny_config(str(tmp_path / "out"))
        cfg.env.families = ["gravity"]
        path = tmp_path / "bad.json"
        save_config(cfg, path)
        code = main(["gen-data", "--config", str(path)])
        payload = json.loads(capsys.readouterr().out)
        assert code != 0
        assert payload["error"]["type"] == "ParameterError"
        assert "gravity" in payload["error"]["message"]

    def test_missing_report_nonzero_exit(self, cli_workspace, capsys):
        root, cfg_path, cfg = cli_workspace
        code = main(["plot", "--config", str(cfg_path), "--kind", "rl",
                     "--reports", str(root / "nope.json")])
        payload = json.loads(capsys.readouterr().out)
        assert code != 0 and "error" in payload
