"""Fully connected relu networks used as generator and discriminator."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .autodiff import ShapeError, Tape, Var, linear, relu, rowwise_matmul

GENERATOR_WIDTHS = (2, 64, 64, 64, 2)
DISCRIMINATOR_WIDTHS = (2, 64, 64, 64, 1)


@dataclass(frozen=True)
class MlpSpec:
    """Layer widths; relu between layers, no activation on the output."""

    widths: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if len(self.widths) < 2:
            raise ValueError("an MLP needs at least an input and an output width")
        if any(w <= 0 for w in self.widths):
            raise ValueError(f"layer widths must be positive, got {self.widths}")

    @property
    def n_params(self) -> int:
        w = self.widths
        return sum(w[i] * w[i + 1] + w[i + 1] for i in range(len(w) - 1))


@dataclass
class MlpParams:
    spec: MlpSpec
    weights: list[np.ndarray]  # (fan_out, fan_in)
    biases: list[np.ndarray]  # (fan_out,)
    seed: Optional[int] = None

    def __post_init__(self):
        w = self.spec.widths
        if len(self.weights) != len(w) - 1 or len(self.biases) != len(w) - 1:
            raise ValueError("layer count does not match the widths")
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.shape != (w[i + 1], w[i]) or b.shape != (w[i + 1],):
                raise ShapeError(
                    f"layer {i}: weight {W.shape} / bias {b.shape} do not match widths {w}"
                )

    def arrays(self) -> list[np.ndarray]:
        """Parameters in layer order: W0, b0, W1, b1, ..."""
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out

    def copy(self) -> "MlpParams":
        return MlpParams(
            self.spec,
            [W.copy() for W in self.weights],
            [b.copy() for b in self.biases],
            self.seed,
        )

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays())

    def to_json(self) -> dict:
        return {
            "spec": {"widths": list(self.spec.widths)},
            "seed": self.seed,
            "layers": [
                {"weight": W.ravel().tolist(), "bias": b.tolist()}
                for W, b in zip(self.weights, self.biases)
            ],
        }

    @classmethod
    def from_json(cls, doc: dict) -> "MlpParams":
        spec = MlpSpec(tuple(doc["spec"]["widths"]))
        w = spec.widths
        weights, biases = [], []
        for i, layer in enumerate(doc["layers"]):
            weights.append(np.array(layer["weight"], dtype=np.float64).reshape(w[i + 1], w[i]))
            biases.append(np.array(layer["bias"], dtype=np.float64))
        return cls(spec, weights, biases, doc.get("seed"))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json()))

    @classmethod
    def load(cls, path) -> "MlpParams":
        return cls.from_json(json.loads(Path(path).read_text()))


def init_params(spec: MlpSpec, seed: int) -> MlpParams:
    """He-normal weights (std sqrt(2/fan_in)) and zero biases."""
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(spec.widths[:-1], spec.widths[1:]):
        weights.append(rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return MlpParams(spec, weights, biases, seed)


def bind(params: MlpParams, tape: Tape) -> list[Var]:
    """Place every parameter on ``tape`` as a leaf (W0, b0, W1, b1, ...)."""
    return [tape.var(a, copy=False) for a in params.arrays()]


def forward(params: MlpParams, tape: Tape, x: Var, leaves: Optional[Sequence[Var]] = None) -> Var:
    """Record the network on ``tape``.  Returns raw outputs (pre-sigmoid for D)."""
    if len(x.shape) != 2 or x.shape[1] != params.spec.widths[0]:
        raise ShapeError(
            f"forward: input shape {x.shape} does not match input width {params.spec.widths[0]}"
        )
    if leaves is None:
        leaves = bind(params, tape)
    h = x
    n_layers = len(params.weights)
    for i in range(n_layers):
        W, b = leaves[2 * i], leaves[2 * i + 1]
        h = linear(h, W, b)
        if i < n_layers - 1:
            h = relu(h)
    return h


def predict(params: MlpParams, x: np.ndarray) -> np.ndarray:
    """Numeric forward pass with the same arithmetic as :func:`forward`."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.spec.widths[0]:
        raise ShapeError(
            f"predict: input shape {x.shape} does not match input width {params.spec.widths[0]}"
        )
    h = x
    n_layers = len(params.weights)
    for i, (W, b) in enumerate(zip(params.weights, params.biases)):
        h = rowwise_matmul(h, W.T) + b
        if i < n_layers - 1:
            h = np.maximum(h, 0.0)
    return h
