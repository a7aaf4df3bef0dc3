"""Scripted experts: velocity-tracking steering toward the active goal with
family-aware modulation.

The control law tracks a desired velocity pointed at the active goal:
feedback K_V * (v_des - v) plus the exact cruise feedforward that holds v_des
against damping.  Family effects: speed picks the transit speed from the
stage parameter, energy additionally caps acceleration magnitude to respect
the stage's energy budget, and wind adds an exact feed-forward cancellation
of the lateral force.
"""

from __future__ import annotations

import numpy as np

from .arena import (ACCEL_LIMIT, DAMPING, DT, N_STAGES, DomainParam, EnvState,
                    StageOrder, energy_vcruise, speed_vstar, wind_force)

KV = 3.0                  # velocity-error feedback gain
WIND_CRUISE_V = 0.25      # wind-family transit speed (headroom for cancellation)
ENERGY_CAP_FACTOR = 1.35  # accel cap as a multiple of the cruise-hold accel


def expert_action(state: EnvState, domain: DomainParam, order: StageOrder) -> np.ndarray:
    """Deterministic expert action for the current state (clamps internally)."""
    stage = state.active_stage
    if stage >= N_STAGES:
        return np.zeros(2)
    param = domain.stage_params[stage]

    cap = ACCEL_LIMIT * np.sqrt(2.0)  # norm cap; per-component clamp is looser
    if domain.family == "speed":
        v_target = speed_vstar(param)
    elif domain.family == "energy":
        v_target = energy_vcruise(param)
        cap = ENERGY_CAP_FACTOR * (1.0 - DAMPING) / DT * v_target
    else:
        v_target = WIND_CRUISE_V

    to_goal = state.goal_positions[stage] - state.position
    dist = np.linalg.norm(to_goal)
    v_des = v_target * to_goal / dist if dist > 1e-12 else np.zeros(2)

    a = KV * (v_des - state.velocity) + (1.0 - DAMPING) / DT * v_des
    a = a - wind_force(domain, stage)

    norm = np.linalg.norm(a)
    if norm > cap:
        a = a * (cap / norm)
    return np.clip(a, -ACCEL_LIMIT, ACCEL_LIMIT)
