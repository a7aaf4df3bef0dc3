from .arena import (ACTION_DIM, DAMPING, DT, EPISODE_CAP, FAMILIES, GOAL_RADIUS,
                    N_STAGES, STATE_DIM, DomainParam, EnvState, MultiStageArena,
                    StageOrder, env_reset, env_step, stage_distances,
                    stage_energy_budget, stage_step_budget, wind_force)
from .expert import expert_action
from .datagen import (SOURCE_ORDERS, TARGET_ORDERS, DomainCell, Trajectory,
                      TrajectorySet, generate_dataset, load_trajectory_set,
                      rollout_expert, rollout_policy, save_trajectory_set,
                      source_cells, target_cells, target_param_pattern)

__all__ = [
    "ACTION_DIM", "DAMPING", "DT", "EPISODE_CAP", "FAMILIES", "GOAL_RADIUS",
    "N_STAGES", "STATE_DIM", "DomainParam", "EnvState", "MultiStageArena",
    "StageOrder", "env_reset", "env_step", "stage_distances",
    "stage_energy_budget", "stage_step_budget", "wind_force", "expert_action",
    "SOURCE_ORDERS", "TARGET_ORDERS", "DomainCell", "Trajectory", "TrajectorySet",
    "generate_dataset", "load_trajectory_set", "rollout_expert", "rollout_policy",
    "save_trajectory_set", "source_cells", "target_cells", "target_param_pattern",
]
