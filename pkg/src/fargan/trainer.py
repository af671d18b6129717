"""Minibatch GAN training with fake-as-real (FAR) selection and RMSProp."""

from __future__ import annotations

import csv
import dataclasses
import io
import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import mlp
from .autodiff import Tape, backward, slice_rows
from .data import DatasetSpec, RealDataset, generate_real, sample_latent, sample_real_batch
from .metrics import ClosePairConfig, close_pairs, loss_deviation, mode_coverage
from .objectives import (
    BatchOutputs,
    LossKind,
    PenaltyKind,
    d_objective,
    g_objective,
    gradient_penalty,
    interpolate_anchors,
)

log = logging.getLogger(__name__)

TRACE_COLUMNS = ("iter", "d_loss", "g_loss", "grad_norm_fake_mean", "modes_covered", "hq_ratio")


class ConfigError(ValueError):
    """Invalid training configuration; ``errors`` lists field-level messages."""

    def __init__(self, errors: list[str]):
        super().__init__("; ".join(errors))
        self.errors = errors


class DivergenceError(RuntimeError):
    """Non-finite loss or parameter; carries the partial state and report."""

    def __init__(self, iteration: int, what: str, state=None, report=None):
        super().__init__(f"training diverged at iteration {iteration}: {what}")
        self.iteration = iteration
        self.state = state
        self.report = report


@dataclass
class TrainConfig:
    N: int = 64
    M: int = 64
    N0: int = 16
    f: int = 8
    k: float = 10.0
    loss: str = "nsgan"
    penalty: str = "zero-gp-sample"
    lr_d: float = 0.003
    lr_g: float = 0.003
    rmsprop_alpha: float = 0.99
    rmsprop_eps: float = 1e-8
    d_steps_per_g_step: int = 1
    iterations: int = 1000
    seed: int = 0
    snapshot_every: int = 1000
    n_eval_samples: int = 10000
    delta: float = 0.05
    min_source_count: int = 2
    cover_radius_mult: float = 3.0
    min_count: int = 20
    dataset: DatasetSpec = field(default_factory=DatasetSpec)

    def __post_init__(self):
        errs = self.problems()
        if errs:
            raise ConfigError(errs)

    @property
    def N1(self) -> int:
        return self.N - self.N0

    def problems(self) -> list[str]:
        errs = []
        if not 0 <= self.N0 < self.N:
            errs.append(f"N0: need 0 <= N0 < N (N0={self.N0}, N={self.N})")
        if self.f < 1:
            errs.append(f"f: must be >= 1 (got {self.f})")
        if self.M < 1:
            errs.append(f"M: must be >= 1 (got {self.M})")
        for name in ("lr_d", "lr_g"):
            if not getattr(self, name) > 0:
                errs.append(f"{name}: must be > 0")
        if not self.k >= 0:
            errs.append("k: must be >= 0")
        if not 0 <= self.rmsprop_alpha < 1:
            errs.append("rmsprop_alpha: must lie in [0, 1)")
        if not self.rmsprop_eps > 0:
            errs.append("rmsprop_eps: must be > 0")
        if self.d_steps_per_g_step < 1:
            errs.append("d_steps_per_g_step: must be >= 1")
        if self.iterations < 0:
            errs.append("iterations: must be >= 0")
        if self.snapshot_every < 1:
            errs.append("snapshot_every: must be >= 1")
        if self.n_eval_samples < 1:
            errs.append("n_eval_samples: must be >= 1")
        try:
            LossKind(self.loss)
        except ValueError:
            errs.append(f"loss: unknown kind {self.loss!r}")
        try:
            pk = PenaltyKind(self.penalty)
        except ValueError:
            errs.append(f"penalty: unknown kind {self.penalty!r}")
        else:
            if pk is PenaltyKind.INTERPOLATION and self.N != self.M:
                errs.append("penalty: zero-gp-interpolation needs N == M")
        return errs

    def to_json(self) -> dict:
        doc = dataclasses.asdict(self)
        doc["dataset"]["mean"] = list(self.dataset.mean)
        return doc

    @classmethod
    def from_json(cls, doc: dict) -> "TrainConfig":
        """Strict parse: unknown keys and wrong types are reported by name."""
        if not isinstance(doc, dict):
            raise ConfigError(["config: expected a JSON object"])
        errs = []
        names = {f.name: f for f in dataclasses.fields(cls)}
        kwargs = {}
        for key, value in doc.items():
            if key not in names:
                errs.append(f"{key}: unknown key")
                continue
            if key == "dataset":
                try:
                    kwargs[key] = _parse_dataset(value)
                except ConfigError as e:
                    errs += e.errors
                continue
            err = _type_problem(key, value, names[key].type)
            if err:
                errs.append(err)
            else:
                kwargs[key] = value
        if errs:
            raise ConfigError(errs)
        for key in ("k", "lr_d", "lr_g", "rmsprop_alpha", "rmsprop_eps", "delta", "cover_radius_mult"):
            if key in kwargs:
                kwargs[key] = float(kwargs[key])
        return cls(**kwargs)


def _type_problem(key, value, annot) -> Optional[str]:
    annot = str(annot)
    if annot == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            return f"{key}: expected an integer, got {value!r}"
    elif annot == "float":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            return f"{key}: expected a number, got {value!r}"
    elif annot == "str":
        if not isinstance(value, str):
            return f"{key}: expected a string, got {value!r}"
    return None


def _parse_dataset(doc) -> DatasetSpec:
    if not isinstance(doc, dict):
        raise ConfigError(["dataset: expected an object"])
    names = {f.name for f in dataclasses.fields(DatasetSpec)}
    unknown = [f"dataset.{k}: unknown key" for k in doc if k not in names]
    if unknown:
        raise ConfigError(unknown)
    doc = dict(doc)
    if "mean" in doc:
        doc["mean"] = tuple(doc["mean"])
    try:
        return DatasetSpec(**doc)
    except (TypeError, ValueError) as e:
        raise ConfigError([f"dataset: {e}"]) from None


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------


@dataclass
class RmspropState:
    accumulators: list[np.ndarray]
    step: int = 0

    @classmethod
    def zeros_like(cls, arrays) -> "RmspropState":
        return cls([np.zeros_like(a) for a in arrays])


def rmsprop_update(params, grads, state: RmspropState, lr: float, alpha: float, eps: float) -> None:
    """In-place RMSProp *ascent* step on the arrays in ``params``."""
    if len(params) != len(grads) or len(params) != len(state.accumulators):
        raise ValueError("rmsprop_update: params, grads and state differ in length")
    for p, g, acc in zip(params, grads, state.accumulators):
        if p.shape != g.shape or p.shape != acc.shape:
            raise ValueError(f"rmsprop_update: shape mismatch {p.shape} / {g.shape} / {acc.shape}")
        acc *= alpha
        acc += (1.0 - alpha) * g * g
        p += lr * g / np.sqrt(acc + eps)
    state.step += 1


# ---------------------------------------------------------------------------
# training state
# ---------------------------------------------------------------------------


def select_far(d0_candidates, n0: int) -> np.ndarray:
    """Indices of the ``n0`` lowest discriminator outputs (ties: lower index)."""
    d0 = np.asarray(d0_candidates, dtype=np.float64).ravel()
    if n0 > len(d0):
        raise ValueError(f"select_far: n0={n0} exceeds {len(d0)} candidates")
    if n0 <= 0:
        return np.zeros(0, dtype=np.int64)
    order = np.argsort(d0, kind="stable")
    return np.sort(order[:n0])


@dataclass
class TrainerState:
    config: TrainConfig
    gen: mlp.MlpParams
    disc: mlp.MlpParams
    gen_opt: RmspropState
    disc_opt: RmspropState
    rng: np.random.Generator
    eval_latent: np.ndarray
    dataset: RealDataset
    iteration: int = 0
    trace: list[tuple] = field(default_factory=list)
    snapshots: list[dict] = field(default_factory=list)


def init_state(config: TrainConfig, dataset: Optional[RealDataset] = None) -> TrainerState:
    """Seeded networks, optimizers and sampling stream for one run."""
    if dataset is None:
        dataset = generate_real(config.dataset)
    ss = np.random.SeedSequence(config.seed)
    g_seed, d_seed, data_seed, eval_seed = (int(s.generate_state(1)[0]) for s in ss.spawn(4))
    gen = mlp.init_params(mlp.MlpSpec(mlp.GENERATOR_WIDTHS), g_seed)
    disc = mlp.init_params(mlp.MlpSpec(mlp.DISCRIMINATOR_WIDTHS), d_seed)
    eval_latent = sample_latent(config.n_eval_samples, np.random.default_rng(eval_seed))
    return TrainerState(
        config=config,
        gen=gen,
        disc=disc,
        gen_opt=RmspropState.zeros_like(gen.arrays()),
        disc_opt=RmspropState.zeros_like(disc.arrays()),
        rng=np.random.default_rng(data_seed),
        eval_latent=eval_latent,
        dataset=dataset,
    )


def _check_finite(state: TrainerState, value: float, what: str) -> None:
    if not np.isfinite(value):
        raise DivergenceError(state.iteration, f"non-finite {what}")


@dataclass
class DStepResult:
    d_loss: float  # negated objective, regularizer excluded
    penalty: float
    far_index: np.ndarray


def d_step(state: TrainerState, config: Optional[TrainConfig] = None) -> DStepResult:
    """One discriminator ascent step on the FAR objective."""
    cfg = config or state.config
    rng = state.rng
    n0, n1, m = cfg.N0, cfg.N1, cfg.M
    reals = sample_real_batch(state.dataset, n1, rng) if n1 > 0 else np.zeros((0, 2))
    n_cand = cfg.f * n0
    fakes_all = mlp.predict(state.gen, sample_latent(m + n_cand, rng))
    fakes = fakes_all[:m]
    if n0 > 0:
        cands = fakes_all[m:]
        far_idx = select_far(mlp.predict(state.disc, cands), n0)
        far = cands[far_idx]
        real_side = np.concatenate([reals, far], axis=0)
    else:
        far_idx = np.zeros(0, dtype=np.int64)
        real_side = reals

    tape = Tape()
    leaves = mlp.bind(state.disc, tape)
    x = tape.var(real_side)
    d0_x = mlp.forward(state.disc, tape, x, leaves)
    if n0 > 0:
        outs = BatchOutputs(
            d0_real=slice_rows(d0_x, 0, n1),
            d0_far=slice_rows(d0_x, n1, n1 + n0),
            d0_fake=mlp.forward(state.disc, tape, tape.const(fakes), leaves),
        )
    else:
        outs = BatchOutputs(d0_real=d0_x, d0_fake=mlp.forward(state.disc, tape, tape.const(fakes), leaves))
    obj = d_objective(cfg.loss, outs)

    penalty = PenaltyKind(cfg.penalty)
    if penalty is PenaltyKind.NONE or cfg.k == 0:
        total, pen_value = obj, 0.0
    else:
        if penalty is PenaltyKind.SAMPLE:
            pen = gradient_penalty(tape, x, d0_x)
        else:
            xi = tape.var(interpolate_anchors(real_side, fakes, rng))
            pen = gradient_penalty(tape, xi, mlp.forward(state.disc, tape, xi, leaves))
        total = obj - pen * cfg.k
        pen_value = float(pen.value)

    d_loss = -float(obj.value)
    _check_finite(state, d_loss, "discriminator loss")
    _check_finite(state, pen_value, "gradient penalty")
    grads = backward(tape, total, leaves)
    rmsprop_update(state.disc.arrays(), grads, state.disc_opt, cfg.lr_d, cfg.rmsprop_alpha, cfg.rmsprop_eps)
    if not state.disc.is_finite():
        raise DivergenceError(state.iteration, "non-finite discriminator parameter")
    return DStepResult(d_loss, pen_value, far_idx)


@dataclass
class GStepResult:
    g_loss: float
    grad_norm_fake_mean: float


def g_step(state: TrainerState, config: Optional[TrainConfig] = None) -> GStepResult:
    """One generator ascent step on the generator objective."""
    cfg = config or state.config
    m = cfg.M
    z = sample_latent(m, state.rng)
    tape = Tape()
    leaves = mlp.bind(state.gen, tape)
    y = mlp.forward(state.gen, tape, tape.const(z), leaves)
    d0 = mlp.forward(state.disc, tape, y)
    obj = g_objective(cfg.loss, d0)
    g_loss = -float(obj.value)
    _check_finite(state, g_loss, "generator loss")
    *grads, gy = backward(tape, obj, list(leaves) + [y])
    # per-sample gradient of the objective term at each fake (undo the 1/M of the mean)
    grad_norm = float(np.mean(np.sqrt(np.sum((gy * m) ** 2, axis=1))))
    rmsprop_update(state.gen.arrays(), grads, state.gen_opt, cfg.lr_g, cfg.rmsprop_alpha, cfg.rmsprop_eps)
    if not state.gen.is_finite():
        raise DivergenceError(state.iteration, "non-finite generator parameter")
    return GStepResult(g_loss, grad_norm)


def snapshot(state: TrainerState) -> dict:
    """Evaluate the generator on the fixed evaluation latents."""
    cfg = state.config
    ds = state.dataset
    fakes = mlp.predict(state.gen, state.eval_latent)
    snap: dict = {"iter": state.iteration}
    if len(ds.centers) and ds.spec is not None and ds.spec.kind != "swissroll":
        cov = mode_coverage(fakes, ds.centers, ds.spec.mode_std, cfg.cover_radius_mult, cfg.min_count)
        snap["modes_covered"] = cov.covered
        snap["hq_ratio"] = cov.hq_ratio
        snap["mode_counts"] = cov.counts
    else:
        snap["modes_covered"] = None
        snap["hq_ratio"] = None
    stats = close_pairs(
        ds.points,
        fakes,
        mlp.predict(state.disc, ds.points),
        mlp.predict(state.disc, fakes),
        ClosePairConfig(cfg.delta, cfg.min_source_count),
        check_separation=False,
    )
    snap.update(
        pairs=stats.pairs,
        sources=stats.sources,
        max_fakes_per_source=stats.max_fakes_per_source,
        surrogate_max=stats.surrogate_max,
    )
    prev = state.snapshots[-1]["iter"] if state.snapshots else 0
    recent = [row for row in state.trace if row[0] > prev]
    if recent:
        snap["d_loss"] = float(np.mean([r[1] for r in recent]))
        snap["g_loss"] = float(np.mean([r[2] for r in recent]))
    else:
        snap["d_loss"] = snap["g_loss"] = None
    if state.trace:
        dev = loss_deviation([r[1] for r in state.trace], [r[2] for r in state.trace])
        snap["collapse_flag"] = dev.collapse_flag
    else:
        snap["collapse_flag"] = False
    return snap


@dataclass
class ExperimentReport:
    config: TrainConfig
    trace: list[tuple]
    snapshots: list[dict]
    final_samples: np.ndarray
    status: str = "ok"
    diverged_at: Optional[int] = None
    message: str = ""

    def trace_csv(self) -> str:
        return trace_to_csv(self.trace)

    @property
    def final(self) -> dict:
        return self.snapshots[-1] if self.snapshots else {}


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def trace_to_csv(trace) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRACE_COLUMNS)
    for row in trace:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def train(
    config: TrainConfig,
    dataset: Optional[RealDataset] = None,
    progress: Optional[Callable[[TrainerState], None]] = None,
) -> tuple[TrainerState, ExperimentReport]:
    """Run ``config.iterations`` outer iterations of alternating updates."""
    state = init_state(config, dataset)
    try:
        for it in range(1, config.iterations + 1):
            state.iteration = it
            for _ in range(config.d_steps_per_g_step):
                dres = d_step(state)
            gres = g_step(state)
            row = [it, dres.d_loss, gres.g_loss, gres.grad_norm_fake_mean, None, None]
            if it % config.snapshot_every == 0 or it == config.iterations:
                state.trace.append(tuple(row))
                snap = snapshot(state)
                state.snapshots.append(snap)
                row[4], row[5] = snap["modes_covered"], snap["hq_ratio"]
                state.trace[-1] = tuple(row)
                if progress is not None:
                    progress(state)
            else:
                state.trace.append(tuple(row))
    except DivergenceError as err:
        report = ExperimentReport(
            config,
            state.trace,
            state.snapshots,
            mlp.predict(state.gen, state.eval_latent) if state.gen.is_finite() else np.zeros((0, 2)),
            status="diverged",
            diverged_at=err.iteration,
            message=str(err),
        )
        err.state, err.report = state, report
        raise
    report = ExperimentReport(
        config, state.trace, state.snapshots, mlp.predict(state.gen, state.eval_latent)
    )
    return state, report
