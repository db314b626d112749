"""Splitting, Adam training, architecture sweep, evaluation and scans."""
from __future__ import annotations

import io
import logging
import time
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import datagen, equilibrium, icnn
from .equilibrium import DEFAULT_LAMBDA_R, DofPartition
from .errors import ConfigError, NumericalError, SolverError
from .kinematics import Dataset, Mesh, QuadratureTable, precompute_quadrature
from .material import Hyperelastic, PannModel, energy_scan

log = logging.getLogger(__name__)


@dataclass(eq=False)
class Experiment:
    """One specimen: mesh, its load steps and the node partition.

    ``grad_access`` / ``eval_access`` count, per step id, how often a step
    entered a gradient computation or a loss-only evaluation.
    """

    name: str
    mesh: Mesh
    dataset: Dataset
    partition: DofPartition = None
    quad: QuadratureTable = None
    grad_access: Counter = field(default_factory=Counter)
    eval_access: Counter = field(default_factory=Counter)

    def __post_init__(self):
        if self.quad is None:
            self.quad = precompute_quadrature(self.mesh)
        if self.partition is None:
            if not self.dataset.steps:
                raise ConfigError(f"experiment {self.name!r} has no steps")
            self.partition = DofPartition.for_step(self.mesh, self.dataset.steps[0])

    def __len__(self):
        return len(self.dataset)


@dataclass(frozen=True, eq=False)
class Sample:
    experiment: Experiment
    index: int

    @property
    def step(self):
        return self.experiment.dataset.steps[self.index]


@dataclass(frozen=True)
class SplitConfig:
    n_train: int = 20
    n_val: int = 6
    source: str | None = None  # defaults to the first experiment


@dataclass(eq=False)
class Split:
    train: list
    val: list
    test: list


def _uniform(indices, k):
    indices = list(indices)
    if k == 0:
        return []
    pos = np.round(np.linspace(0, len(indices) - 1, k)).astype(int)
    return [indices[p] for p in pos]


def split_dataset(experiments, cfg: SplitConfig) -> Split:
    """Train/val by uniform index subsampling of the source; test = the rest."""
    if cfg.n_train <= 0:
        raise ConfigError("insufficient training steps")
    if cfg.n_val < 0:
        raise ConfigError("n_val must be non-negative")
    names = [e.name for e in experiments]
    source = cfg.source if cfg.source is not None else names[0]
    if source not in names:
        raise ConfigError(f"unknown source experiment {source!r}")
    src = experiments[names.index(source)]
    n = len(src)
    if cfg.n_train + cfg.n_val > n:
        raise ConfigError(
            f"insufficient steps: {cfg.n_train}+{cfg.n_val} requested, {n} available in {source!r}"
        )
    train_idx = _uniform(range(n), cfg.n_train)
    rest = [i for i in range(n) if i not in set(train_idx)]
    val_idx = _uniform(rest, cfg.n_val)
    used = set(train_idx) | set(val_idx)
    test = []
    for e in experiments:
        for i in range(len(e)):
            if e is not src or i not in used:
                test.append(Sample(e, i))
    return Split(
        train=[Sample(src, i) for i in train_idx],
        val=[Sample(src, i) for i in val_idx],
        test=test,
    )


# ---------------------------------------------------------------------------
# loss over samples


def _sample_loss_grad(model, sample, lambda_r):
    e = sample.experiment
    return equilibrium.step_loss_and_gradient(e.mesh, e.quad, model, sample.step, e.partition, lambda_r)


def _sample_report(model, sample, lambda_r):
    e = sample.experiment
    return equilibrium.equilibrium_loss(e.mesh, e.quad, model, sample.step, e.partition, lambda_r)


def _map(fn, items, workers):
    if workers and workers > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, items))
    return [fn(it) for it in items]


def _raise_nonfinite(model, samples):
    for s in samples:
        e = s.experiment
        elem = equilibrium.first_nonfinite_element(e.mesh, e.quad, model, s.step)
        if elem is not None:
            raise NumericalError(
                f"non-finite loss in experiment {e.name!r}, step {s.step.step_id}, element {elem}",
                step_id=s.step.step_id,
                element=elem,
            )
    raise NumericalError("non-finite loss")


def batch_loss_and_gradient(model, samples, lambda_r=DEFAULT_LAMBDA_R, workers=1):
    """Summed loss and gradient; reduction in sample order regardless of ``workers``."""
    for s in samples:
        s.experiment.grad_access[s.step.step_id] += 1
    with np.errstate(all="ignore"):
        results = _map(lambda s: _sample_loss_grad(model, s, lambda_r), samples, workers)
    total = 0.0
    grad = np.zeros(model.n_params)
    for rep, g in results:
        total += rep.loss
        grad += g
    if not (np.isfinite(total) and np.all(np.isfinite(grad))):
        _raise_nonfinite(model, samples)
    return total, grad


def batch_loss(model, samples, lambda_r=DEFAULT_LAMBDA_R, workers=1) -> float:
    for s in samples:
        s.experiment.eval_access[s.step.step_id] += 1
    with np.errstate(all="ignore"):
        reports = _map(lambda s: _sample_report(model, s, lambda_r), samples, workers)
    total = 0.0
    for r in reports:
        total += r.loss
    return total


# ---------------------------------------------------------------------------
# optimisation


@dataclass(frozen=True)
class OptimConfig:
    lr: float = 1e-3
    max_epochs: int = 5000
    patience: int = 200
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.lr < 0 or self.max_epochs < 1 or self.patience < 1:
            raise ConfigError("learning rate must be >= 0, epochs and patience >= 1")


class Adam:
    def __init__(self, n, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = np.zeros(n)
        self.v = np.zeros(n)
        self.t = 0

    def step(self, theta, grad):
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        m_hat = self.m / (1 - self.beta1**self.t)
        v_hat = self.v / (1 - self.beta2**self.t)
        return theta - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


@dataclass(eq=False)
class TrainResult:
    model: Hyperelastic
    history: list  # (epoch, train_loss, val_loss)
    best_epoch: int
    best_val: float
    min_energy: float


def train(model: Hyperelastic, split: Split, opt: OptimConfig = OptimConfig(),
          lambda_r=DEFAULT_LAMBDA_R, workers=1) -> TrainResult:
    """Full-batch Adam on the summed training loss.

    Returns the parameters with the best validation loss seen (the training
    loss when there is no validation split). Test samples are never touched.
    """
    if not split.train:
        raise ConfigError("insufficient training steps")
    theta = model.theta.copy()
    adam = Adam(len(theta), opt.lr, opt.beta1, opt.beta2, opt.eps)
    history = []
    best_val, best_theta, best_epoch = np.inf, theta.copy(), 0
    since = 0
    for epoch in range(opt.max_epochs):
        current = model.with_params(theta)
        loss, grad = batch_loss_and_gradient(current, split.train, lambda_r, workers)
        val = batch_loss(current, split.val, lambda_r, workers) if split.val else loss
        history.append((epoch, loss, val))
        if val < best_val:
            best_val, best_theta, best_epoch, since = val, theta.copy(), epoch, 0
        else:
            since += 1
            if since >= opt.patience:
                log.info("early stop at epoch %d (best %d)", epoch, best_epoch)
                break
        theta = adam.step(theta, grad)
        if epoch % 100 == 0:
            log.debug("epoch %d train %.6g val %.6g", epoch, loss, val)
    best = model.with_params(best_theta)
    min_w = energy_scan(best)
    if min_w < 0:
        log.warning("identified energy is negative somewhere on the scan grid (min %.3g MPa)", min_w)
    return TrainResult(best, history, best_epoch, float(best_val), min_w)


@dataclass(eq=False)
class SweepRow:
    arch_id: int
    arch: icnn.IcnnArch
    params: int
    train_loss: float
    val_loss: float
    wall_time: float
    result: TrainResult


@dataclass(eq=False)
class SweepResult:
    rows: list
    selected: int

    @property
    def best(self) -> SweepRow:
        return self.rows[self.selected]


def sweep(archs, split: Split, opt: OptimConfig = OptimConfig(), lambda_r=DEFAULT_LAMBDA_R,
          mode="plane_strain", workers=1) -> SweepResult:
    """Train every architecture (seed = opt.seed + index) and pick the best validation loss."""
    archs = list(archs)
    if not archs:
        raise ConfigError("sweep needs at least one architecture")
    rows = []
    for i, arch in enumerate(archs):
        t0 = time.perf_counter()
        model = PannModel.initialise(arch, opt.seed + i, mode)
        res = train(model, split, opt, lambda_r, workers)
        rows.append(
            SweepRow(
                arch_id=i,
                arch=arch,
                params=icnn.count_parameters(arch),
                train_loss=float(res.history[-1][1]),
                val_loss=res.best_val,
                wall_time=time.perf_counter() - t0,
                result=res,
            )
        )
        log.info("arch %d %s: %d params, best val %.6g", i, arch.label(), rows[-1].params, res.best_val)
    selected = min(range(len(rows)), key=lambda k: (rows[k].val_loss, rows[k].params, k))
    return SweepResult(rows, selected)


# ---------------------------------------------------------------------------
# evaluation


@dataclass(eq=False)
class Evaluation:
    reports: list  # (experiment name, EquilibriumReport)
    aggregates: dict
    curve: list  # (experiment, step_id, displacement, measured, predicted)


def evaluate(model: Hyperelastic, samples, lambda_r=DEFAULT_LAMBDA_R, load_set="top", workers=1) -> Evaluation:
    """Equilibrium reports per test step plus mean/median aggregates."""
    if not samples:
        raise ConfigError("empty test set")
    reports = _map(lambda s: _sample_report(model, s, lambda_r), samples, workers)
    inner = np.array([r.inner_residual for r in reports])
    boundary = np.array([r.boundary_residual for r in reports])
    losses = np.array([r.loss for r in reports])
    agg = {
        "n_steps": len(reports),
        "loss_sum": float(losses.sum()),
        "loss_mean": float(losses.mean()),
        "inner_mean": float(inner.mean()),
        "inner_median": float(np.median(inner)),
        "boundary_mean": float(boundary.mean()),
        "boundary_median": float(np.median(boundary)),
    }
    curve = []
    for s, r in zip(samples, reports):
        step = s.step
        name = load_set if load_set in step.reactions else sorted(step.reactions)[0]
        idx = s.experiment.mesh.node_sets[name]
        disp = float(step.displacements[idx, 1].mean())
        curve.append(
            (s.experiment.name, step.step_id, disp,
             float(step.reactions[name].force[1]), float(r.reaction_sums[name][1]))
        )
    return Evaluation([(s.experiment.name, r) for s, r in zip(samples, reports)], agg, curve)


@dataclass(eq=False)
class ScanResult:
    stretches: np.ndarray
    reactions: np.ndarray
    max_jump: float | None
    mean_increment: float | None

    @property
    def jump_ratio(self):
        if self.max_jump is None or not self.mean_increment:
            return None
        return self.max_jump / self.mean_increment


def continuity_scan(model: Hyperelastic, mesh: Mesh, program: datagen.LoadProgram, n_substeps: int,
                    **solver_kw) -> ScanResult:
    """Predicted axial reaction of ``model`` on a fine uniform stretch grid.

    The grid spans the program's first to last target. ``max_jump`` is the
    largest absolute change between adjacent samples; absent (None) for a
    single sample.
    """
    if n_substeps < 1:
        raise ConfigError("n_substeps must be >= 1")
    lams = np.linspace(program.stretches[0], program.stretches[-1], n_substeps)
    fine = datagen.LoadProgram(program.geometry, list(lams), program.grips, program.reaction_mask)
    try:
        ds = datagen.forward_solve(mesh, model, fine, **solver_kw)
    except SolverError as exc:
        raise SolverError(f"continuity scan: {exc}", exc.last_converged) from exc
    R = np.array([s.reactions["top"].force[1] for s in ds.steps])
    if len(R) < 2:
        return ScanResult(lams, R, None, None)
    d = np.abs(np.diff(R))
    return ScanResult(lams, R, float(d.max()), float(d.mean()))


# ---------------------------------------------------------------------------
# CSV


def csv_text(header, rows) -> str:
    """Header plus rows; floats use repr so values round-trip exactly."""
    buf = io.StringIO()
    buf.write(",".join(header) + "\n")
    for row in rows:
        buf.write(",".join(repr(float(v)) if isinstance(v, (float, np.floating)) else str(v) for v in row) + "\n")
    return buf.getvalue()


def history_csv(history) -> str:
    return csv_text(["epoch", "train_loss", "val_loss"], history)


def sweep_csv(result: SweepResult) -> str:
    return csv_text(
        ["arch_id", "params", "train_loss", "val_loss", "selected"],
        [(r.arch_id, r.params, r.train_loss, r.val_loss, int(i == result.selected))
         for i, r in enumerate(result.rows)],
    )


def metrics_csv(ev: Evaluation) -> str:
    return csv_text(
        ["experiment", "step_id", "inner_residual", "boundary_residual", "loss"],
        [(name, r.step_id, r.inner_residual, r.boundary_residual, r.loss) for name, r in ev.reports],
    )


def curve_csv(ev: Evaluation) -> str:
    return csv_text(["experiment", "step_id", "displacement", "measured", "predicted"], ev.curve)


def scan_csv(scan: ScanResult) -> str:
    return csv_text(["stretch", "reaction"], zip(scan.stretches, scan.reactions))
