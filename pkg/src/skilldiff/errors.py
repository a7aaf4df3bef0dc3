"""Exception hierarchy shared across the package."""


class SkillDiffError(Exception):
    """Base class for all package-specific errors."""


class ParameterError(SkillDiffError, ValueError):
    """An argument or configuration value is out of its allowed range."""


class StateError(SkillDiffError, RuntimeError):
    """An operation was called in a state that does not permit it."""


class ContractError(SkillDiffError, RuntimeError):
    """An internal interface contract was violated (shape/dimension mismatch,
    frozen parameters mutated, etc.)."""


class TrainingError(SkillDiffError, RuntimeError):
    """Training produced NaNs or diverged."""


class SamplingError(SkillDiffError, RuntimeError):
    """The reverse diffusion chain produced a non-finite intermediate."""


class GenerationError(SkillDiffError, RuntimeError):
    """Scripted-expert data generation failed (bad parameter grid)."""


class UnsupportedVariantError(SkillDiffError, ValueError):
    """The requested model variant does not support this operation."""
