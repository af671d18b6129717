"""Discriminator/generator objectives and zero-centered gradient penalties.

All objectives are written as quantities to *maximize*.  Loss traces use
their negation.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import mlp
from .autodiff import (
    Tape,
    Var,
    concat_rows,
    input_gradient_graph,
    l2sq,
    logsigmoid,
    relu,
    sigmoid_scalar,
    square,
)


class LossKind(str, enum.Enum):
    NSGAN = "nsgan"
    WGAN = "wgan"
    HINGEGAN = "hingegan"
    LSGAN = "lsgan"


class PenaltyKind(str, enum.Enum):
    NONE = "none"
    SAMPLE = "zero-gp-sample"
    INTERPOLATION = "zero-gp-interpolation"


@dataclass
class BatchOutputs:
    """Pre-sigmoid discriminator outputs on one minibatch (column vectors)."""

    d0_real: Var
    d0_fake: Var
    d0_far: Optional[Var] = None

    def real_side(self) -> Var:
        if self.d0_far is None or self.d0_far.shape[0] == 0:
            return self.d0_real
        if self.d0_real.shape[0] == 0:
            return self.d0_far
        return concat_rows([self.d0_real, self.d0_far])


def d_objective(kind: LossKind | str, outs: BatchOutputs) -> Var:
    kind = LossKind(kind)
    n_real = outs.d0_real.shape[0] + (0 if outs.d0_far is None else outs.d0_far.shape[0])
    if n_real == 0:
        raise ValueError("d_objective: real and fake-as-real slices are both empty")
    if outs.d0_fake.shape[0] == 0:
        raise ValueError("d_objective: fake slice is empty")
    real = outs.real_side()
    fake = outs.d0_fake
    if kind is LossKind.NSGAN:
        # log(1 - sigmoid(x)) == log_sigmoid(-x)
        return logsigmoid(real).mean() + logsigmoid(-fake).mean()
    if kind is LossKind.WGAN:
        return real.mean() - fake.mean()
    if kind is LossKind.HINGEGAN:
        # min(0, -1 + x) == -relu(1 - x)
        return -(relu(1.0 - real).mean()) - relu(1.0 + fake).mean()
    return (square(real - 1.0).mean() + square(fake + 1.0).mean()) * -0.5


def g_objective(kind: LossKind | str, d0_fake: Var) -> Var:
    kind = LossKind(kind)
    if d0_fake.shape[0] == 0:
        raise ValueError("g_objective: fake slice is empty")
    if kind is LossKind.NSGAN:
        return logsigmoid(d0_fake).mean()
    if kind in (LossKind.WGAN, LossKind.HINGEGAN):
        return d0_fake.mean()
    return square(d0_fake - 1.0).mean() * -0.5


def gradient_penalty(tape: Tape, x: Var, d0: Var) -> Var:
    """Mean over rows of ||grad_x D0||^2, with ``d0 = D0(x)`` already on the tape.

    Rows are independent, so the gradient of the summed output gives every
    row's input gradient at once.
    """
    g = input_gradient_graph(tape, d0.sum(), x)
    return l2sq(g) * (1.0 / x.shape[0])


def zero_gp(
    params: mlp.MlpParams,
    anchors: np.ndarray,
    tape: Tape,
    leaves: Optional[Sequence[Var]] = None,
) -> Var:
    x = tape.var(anchors)
    d0 = mlp.forward(params, tape, x, leaves)
    return gradient_penalty(tape, x, d0)


def interpolate_anchors(
    real: np.ndarray,
    fake: np.ndarray,
    rng: Optional[np.random.Generator] = None,
    u: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Rows u*x + (1-u)*y with u ~ U(0, 1) per row (or the given ``u``)."""
    if real.shape != fake.shape:
        raise ValueError(f"interpolate_anchors: row mismatch {real.shape} vs {fake.shape}")
    if u is None:
        u = rng.uniform(0.0, 1.0, size=(real.shape[0], 1))
    u = np.asarray(u, dtype=np.float64).reshape(-1, 1)
    return u * real + (1.0 - u) * fake


def generator_grad_indicator(xi0: float, xi: float) -> float:
    """sigma(-xi) * (xi0 - xi): the factor of the generator gradient at a close pair."""
    return sigmoid_scalar(-xi) * (xi0 - xi)
