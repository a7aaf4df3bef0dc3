"""Cross-domain skill learning: disentangled skill latents with a split,
guidance-weighted diffusion decoder, plus few-shot and online-RL adaptation
of a high-level policy on a multi-stage point-mass benchmark."""

__version__ = "0.1.0"
