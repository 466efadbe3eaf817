"""Shared builders and independent oracles for the test suite."""

from __future__ import annotations

import math

import numpy as np

from rulemix.model import ModelSpec, init_params
from rulemix.pendulum import PendulumParams


def tiny_model(
    rng: np.random.Generator,
    input_dim: int = 4,
    output_dim: int = 4,
    task: str = "regression",
    coupling: str = "scaled_concat",
    widths: tuple[int, ...] = (8, 6),
) -> tuple[ModelSpec, dict[str, np.ndarray]]:
    spec = ModelSpec(
        input_dim=input_dim,
        output_dim=output_dim,
        task=task,
        coupling=coupling,
        shared_units=(),
        encoder_units=widths,
        decision_units=(8,),
    )
    return spec, init_params(spec, rng)


def cartesian_energy(state, p: PendulumParams) -> float:
    """Energy re-derived through cartesian positions and velocities.

    Independent of the closed-form expression under test: build the mass
    positions from the angles, differentiate them analytically for the
    velocities, then sum m*v^2/2 and m*g*h with heights measured from the
    pivot.
    """
    t1, w1, t2, w2 = (float(v) for v in state)
    x1 = p.l1 * math.sin(t1)
    y1 = -p.l1 * math.cos(t1)
    x2 = x1 + p.l2 * math.sin(t2)
    y2 = y1 - p.l2 * math.cos(t2)
    vx1 = p.l1 * math.cos(t1) * w1
    vy1 = p.l1 * math.sin(t1) * w1
    vx2 = vx1 + p.l2 * math.cos(t2) * w2
    vy2 = vy1 + p.l2 * math.sin(t2) * w2
    kinetic = 0.5 * p.m1 * (vx1**2 + vy1**2) + 0.5 * p.m2 * (vx2**2 + vy2**2)
    potential = p.m1 * p.g * y1 + p.m2 * p.g * y2
    return kinetic + potential
