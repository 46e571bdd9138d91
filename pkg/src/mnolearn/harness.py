"""ERM training of clipped separable models, generalization evaluation on
fresh draws, and scaling-law sweeps.

Exact empirical-risk minimization is approximated by projected SGD with a
fixed step budget: the parameters are projected onto the constraint set
every ``projection_every`` steps and once more after the final step, and the
returned model is simply the final feasible iterate.  Trials are independent
and derive their own seed streams from the sweep master seed.
"""

from __future__ import annotations

import csv
import json
import math
import os
import time
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from . import mno as mno_mod
from . import relu_net
from .backend import kernels
from .entropy_bounds import rate_schedule
from .errors import ConfigurationError, DivergenceError, DomainError
from .mno import MnoParams, MnoSpec
from .operator_zoo import OperatorFamily, QuadratureRule, family_eval_many
from .sampling import (
    FunctionSpaceSpec,
    HierarchicalDataset,
    discretize,
    generate_dataset,
    sample_function,
)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float
    steps: int
    batch_size: int
    projection_every: int = 10
    seed: int = 0
    optimizer: str = "sgd"
    momentum_beta: float = 0.9

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ConfigurationError("learning_rate must be nonnegative")
        if self.steps < 1 or self.batch_size < 1 or self.projection_every < 1:
            raise ConfigurationError(
                "steps, batch_size and projection_every must be >= 1"
            )
        if self.optimizer not in ("sgd", "sgd_momentum"):
            raise ConfigurationError(f"unknown optimizer {self.optimizer!r}")


class _TrainState:
    """Mutable stacked copies of the model parameters used by the loop."""

    def __init__(self, params: MnoParams):
        self.spec = params.spec
        self.theta = params.theta.copy()
        self.l_stack = mno_mod.stack_family(params.l_nets)
        self.b_stack = mno_mod.stack_family(params.b_nets)
        self.tau_stack = mno_mod.stack_family(params.tau_nets)
        self._templates = (params.l_nets, params.b_nets, params.tau_nets)

    def arrays(self):
        yield self.theta
        for stack in (self.l_stack, self.b_stack, self.tau_stack):
            yield from stack[0]
            yield from stack[1]

    def project(self):
        np.clip(self.theta, -self.spec.coeff_bound_I, self.spec.coeff_bound_I,
                out=self.theta)
        for stack, cls in (
            (self.l_stack, self.spec.spec_l),
            (self.b_stack, self.spec.spec_b),
            (self.tau_stack, self.spec.spec_tau),
        ):
            kappa = cls.magnitude_kappa
            for arr in list(stack[0]) + list(stack[1]):
                np.clip(arr, -kappa, kappa, out=arr)
            total_slots = sum(w[0].size for w in stack[0]) + sum(
                b[0].size for b in stack[1]
            )
            if cls.sparsity_K >= total_slots:
                continue  # sparsity constraint cannot bind
            q_count = stack[0][0].shape[0]
            for qi in range(q_count):
                net = relu_net.MlpParams(
                    [w[qi] for w in stack[0]], [b[qi] for b in stack[1]], cls
                )
                projected = relu_net.project_to_class(net)
                for w_dst, w_src in zip(stack[0], projected.weights):
                    w_dst[qi] = w_src
                for b_dst, b_src in zip(stack[1], projected.biases):
                    b_dst[qi] = b_src

    def to_params(self) -> MnoParams:
        l_nets = mno_mod.unstack_family(*self.l_stack, self._templates[0])
        b_nets = mno_mod.unstack_family(*self.b_stack, self._templates[1])
        tau_nets = mno_mod.unstack_family(*self.tau_stack, self._templates[2])
        return MnoParams(self.theta.copy(), l_nets, b_nets, tau_nets, self.spec)

    def full_loss(self, alphas, us, xs, targets) -> float:
        lv, _ = kernels.family_forward(self.l_stack[0], self.l_stack[1], alphas)
        bv, _ = kernels.family_forward(self.b_stack[0], self.b_stack[1], us)
        tv, _ = kernels.family_forward(self.tau_stack[0], self.tau_stack[1], xs)
        s = kernels.mno_contract(self.theta, lv, bv, tv)
        y = np.minimum(np.maximum(s, -self.spec.clip_a), self.spec.clip_a)
        r = y - targets
        return float(np.dot(r, r) / targets.shape[0])


def empirical_risk(params: MnoParams, dataset: HierarchicalDataset) -> float:
    """Mean squared clipped-model error over the whole dataset."""
    alphas, us, xs, w = dataset.flat_arrays()
    pred = mno_mod.mno_forward_batch(params, alphas, us, xs, clipped=True)
    r = pred - w
    return float(np.dot(r, r) / w.shape[0])


def train_erm(spec: MnoSpec, dataset: HierarchicalDataset, cfg: TrainConfig):
    """Projected SGD on the mean squared training loss.

    Returns (final feasible MnoParams, loss trace).  The trace holds the
    full-data empirical loss at initialization, after every epoch
    (ceil(n/batch) steps), and after the final projection; its last entry is
    the empirical risk of the returned parameters.
    """
    if dataset.alpha_disc.shape[1] != spec.n_cW:
        raise ConfigurationError(
            f"dataset has n_cW={dataset.alpha_disc.shape[1]}, model expects "
            f"{spec.n_cW}"
        )
    if dataset.u_disc.shape[2] != spec.n_cU:
        raise ConfigurationError(
            f"dataset has n_cU={dataset.u_disc.shape[2]}, model expects "
            f"{spec.n_cU}"
        )
    if dataset.x_pts.shape[3] != spec.d_V:
        raise ConfigurationError(
            f"dataset has d_V={dataset.x_pts.shape[3]}, model expects {spec.d_V}"
        )
    alphas, us, xs, targets = dataset.flat_arrays()
    n_total = targets.shape[0]
    init_rng = np.random.default_rng([cfg.seed, 0])
    batch_rng = np.random.default_rng([cfg.seed, 1])
    state = _TrainState(mno_mod.init_mno_params(spec, init_rng))
    state.project()
    trace = [state.full_loss(alphas, us, xs, targets)]
    # batch_size >= dataset size means exact full-batch gradient descent
    full_batch = cfg.batch_size >= n_total
    epoch_len = max(1, n_total // cfg.batch_size)
    velocity = None
    if cfg.optimizer == "sgd_momentum":
        velocity = [np.zeros_like(a) for a in state.arrays()]
    for step in range(cfg.steps):
        if full_batch:
            batch = (alphas, us, xs, targets)
        else:
            idx = batch_rng.integers(0, n_total, size=cfg.batch_size)
            batch = (alphas[idx], us[idx], xs[idx], targets[idx])
        loss, d_theta, dl, db, dt = mno_mod.batch_loss_grad_stacked(
            state.theta, state.l_stack, state.b_stack, state.tau_stack,
            spec.clip_a, *batch,
        )
        if not math.isfinite(loss):
            raise DivergenceError(step)
        grads = [d_theta]
        for pair in (dl, db, dt):
            grads.extend(pair[0])
            grads.extend(pair[1])
        lr = cfg.learning_rate
        if velocity is None:
            for arr, g in zip(state.arrays(), grads):
                arr -= lr * g
        else:
            for v, (arr, g) in zip(velocity, zip(state.arrays(), grads)):
                v *= cfg.momentum_beta
                v += g
                arr -= lr * v
        if (step + 1) % cfg.projection_every == 0:
            state.project()
        if (step + 1) % epoch_len == 0 and step + 1 != cfg.steps:
            trace.append(state.full_loss(alphas, us, xs, targets))
    state.project()
    trace.append(state.full_loss(alphas, us, xs, targets))
    return state.to_params(), trace


def class_diagnostics(params: MnoParams, dataset: HierarchicalDataset) -> dict:
    """Feasibility report: constraint slack and subnetwork output ranges.

    Output sup bounds R are not enforced during training; this reports the
    observed maxima over the training inputs so the slack is visible.
    """
    alphas, us, xs, _ = dataset.flat_arrays()
    lv, _ = kernels.family_forward(*mno_mod.stack_family(params.l_nets), alphas)
    bv, _ = kernels.family_forward(*mno_mod.stack_family(params.b_nets), us)
    tv, _ = kernels.family_forward(*mno_mod.stack_family(params.tau_nets), xs)
    return {
        "theta_max_abs": float(np.max(np.abs(params.theta))),
        "theta_bound_I": params.spec.coeff_bound_I,
        "subnet_feasible": all(
            n.satisfies_class()
            for n in params.l_nets + params.b_nets + params.tau_nets
        ),
        "l_output_max_abs": float(np.max(np.abs(lv))),
        "b_output_max_abs": float(np.max(np.abs(bv))),
        "tau_output_max_abs": float(np.max(np.abs(tv))),
        "l_output_R": params.spec.spec_l.output_R,
        "b_output_R": params.spec.spec_b.output_R,
        "tau_output_R": params.spec.spec_tau.output_R,
    }


def eval_generalization_stats(params: MnoParams, family: OperatorFamily,
                              alpha_spec: FunctionSpaceSpec,
                              u_spec: FunctionSpaceSpec, grids,
                              m_alpha: int, m_u: int, m_x: int, seed: int,
                              rule: QuadratureRule, x_domain=None):
    """Monte Carlo estimate of the expected generalization error.

    Fresh (alpha, u) pairs with m_x evaluation points each; ground truth is
    the noiseless family value.  Returns (mean, stderr, n_pairs).
    """
    if m_alpha < 1 or m_u < 1 or m_x < 1:
        raise DomainError("test budgets must be >= 1")
    y_pts = np.atleast_2d(np.asarray(grids[0], dtype=np.float64))
    c_pts = np.atleast_2d(np.asarray(grids[1], dtype=np.float64))
    x_lo, x_hi = x_domain if x_domain is not None else family.x_domain()
    pair_errors = []
    for a_idx in range(m_alpha):
        alpha = sample_function(alpha_spec, [seed, 10, a_idx])
        a_disc = discretize(alpha, y_pts)
        for i_idx in range(m_u):
            u = sample_function(u_spec, [seed, 11, a_idx, i_idx])
            u_vec = discretize(u, c_pts)
            xs = np.random.default_rng([seed, 12, a_idx, i_idx]).uniform(
                x_lo, x_hi, (m_x, 1)
            )
            truth = family_eval_many(family, alpha, u, xs, rule)
            pred = mno_mod.mno_forward_batch(
                params,
                np.tile(a_disc, (m_x, 1)),
                np.tile(u_vec, (m_x, 1)),
                xs,
                clipped=True,
            )
            pair_errors.append(float(np.mean((pred - truth) ** 2)))
    pair_errors = np.asarray(pair_errors)
    mean = float(pair_errors.mean())
    stderr = (
        float(pair_errors.std(ddof=1) / math.sqrt(pair_errors.size))
        if pair_errors.size > 1
        else 0.0
    )
    return mean, stderr, pair_errors.size


def eval_generalization(params: MnoParams, family: OperatorFamily,
                        alpha_spec: FunctionSpaceSpec,
                        u_spec: FunctionSpaceSpec, grids, m_alpha: int,
                        m_u: int, m_x: int, seed: int, rule: QuadratureRule,
                        x_domain=None) -> float:
    mean, _, _ = eval_generalization_stats(
        params, family, alpha_spec, u_spec, grids, m_alpha, m_u, m_x, seed,
        rule, x_domain,
    )
    return mean


# ----------------------------------------------------------------------
# Sweeps
# ----------------------------------------------------------------------

@dataclass
class SweepConfig:
    family: OperatorFamily
    alpha_spec: FunctionSpaceSpec
    u_spec: FunctionSpaceSpec
    grids: tuple
    rule: QuadratureRule
    mno_spec: MnoSpec
    train: TrainConfig
    n_alpha_grid: list
    n_u: int
    n_x: int
    sigma: float
    trials: int
    m_alpha: int = 64
    m_u: int = 8
    m_x: int = 64
    master_seed: int = 0
    out_csv: Optional[str] = None
    model_dir: Optional[str] = None
    x_domain: Optional[tuple] = None

    def __post_init__(self):
        if self.trials < 1:
            raise ConfigurationError("trials must be >= 1")
        if not self.n_alpha_grid:
            raise ConfigurationError("n_alpha grid must be nonempty")


@dataclass
class RunRecord:
    n_alpha: int
    trial: int
    seed: int
    train_loss: Optional[float]
    test_error: Optional[float]
    wall_ms: float
    status: str
    model_path: Optional[str] = None
    loss_trace: Optional[list] = None

    def csv_row(self):
        return [
            self.n_alpha,
            self.trial,
            self.seed,
            "" if self.train_loss is None else repr(self.train_loss),
            "" if self.test_error is None else repr(self.test_error),
            repr(self.wall_ms),
            self.status,
        ]


CSV_COLUMNS = ["n_alpha", "trial", "seed", "train_loss", "test_error",
               "wall_ms", "status"]


def _derive_seed(*path) -> int:
    return int(np.random.SeedSequence(list(path)).generate_state(1)[0])


def run_sweep(cfg: SweepConfig):
    """Generate, train, and evaluate over the n_alpha grid.

    One row per (n_alpha, trial), ordered; failures are recorded in the
    status column and the sweep continues.  Rerunning with the same config
    reproduces every value except wall_ms.
    """
    records = []
    for n_alpha in cfg.n_alpha_grid:
        for trial in range(cfg.trials):
            seed = _derive_seed(cfg.master_seed, n_alpha, trial)
            started = time.perf_counter()
            try:
                dataset = generate_dataset(
                    cfg.family, cfg.alpha_spec, cfg.u_spec, n_alpha, cfg.n_u,
                    cfg.n_x, cfg.sigma, cfg.grids,
                    _derive_seed(cfg.master_seed, n_alpha, trial, 0),
                    cfg.rule, cfg.x_domain,
                )
                train_cfg = replace(
                    cfg.train, seed=_derive_seed(cfg.master_seed, n_alpha, trial, 1)
                )
                params, trace = train_erm(cfg.mno_spec, dataset, train_cfg)
                test_err = eval_generalization(
                    params, cfg.family, cfg.alpha_spec, cfg.u_spec, cfg.grids,
                    cfg.m_alpha, cfg.m_u, cfg.m_x,
                    _derive_seed(cfg.master_seed, n_alpha, trial, 2),
                    cfg.rule, cfg.x_domain,
                )
                wall_ms = (time.perf_counter() - started) * 1000.0
                model_path = None
                if cfg.model_dir is not None:
                    model_path = os.path.join(
                        cfg.model_dir, f"model_n{n_alpha}_t{trial}.json"
                    )
                    with open(model_path, "w") as fh:
                        json.dump(params.to_dict(), fh, sort_keys=True,
                                  separators=(",", ":"))
                        fh.write("\n")
                records.append(
                    RunRecord(n_alpha, trial, seed, trace[-1], test_err,
                              wall_ms, "ok", model_path, trace)
                )
            except Exception as exc:  # recorded, sweep continues
                wall_ms = (time.perf_counter() - started) * 1000.0
                records.append(
                    RunRecord(
                        n_alpha, trial, seed, None, None, wall_ms,
                        f"error:{type(exc).__name__}:{exc}",
                    )
                )
    if cfg.out_csv is not None:
        write_records_csv(records, cfg.out_csv)
    return records


def write_records_csv(records, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for rec in records:
            writer.writerow(rec.csv_row())


def emit_report(records, bound_cfg) -> dict:
    """Per-n_alpha empirical medians/IQRs next to the theoretical schedule.

    ``bound_cfg`` supplies d_W, d_U, d_V and beta_V for the rate curve.  The
    curve is reported as-is (default constants); no dominance between the
    two series is asserted.  Grid entries below the n_alpha >= 16 threshold
    of the schedule carry a null rate.
    """
    if not records:
        raise ConfigurationError("cannot report on an empty record list")
    by_n = {}
    for rec in records:
        by_n.setdefault(rec.n_alpha, []).append(rec)
    entries = []
    for n_alpha in sorted(by_n):
        group = by_n[n_alpha]
        errs = np.array(
            [r.test_error for r in group if r.test_error is not None]
        )
        entry = {
            "n_alpha": n_alpha,
            "runs": len(group),
            "failures": sum(1 for r in group if r.status != "ok"),
            "median_test_error": float(np.median(errs)) if errs.size else None,
            "iqr_test_error": (
                float(np.percentile(errs, 75) - np.percentile(errs, 25))
                if errs.size
                else None
            ),
        }
        if n_alpha >= 16:
            rs = rate_schedule(
                n_alpha, bound_cfg.d_W, bound_cfg.d_U, bound_cfg.d_V,
                bound_cfg.beta_V,
            )
            entry["rate"] = rs.rate
            entry["rate_eps"] = rs.eps
            entry["rate_eta"] = rs.eta
        else:
            entry["rate"] = None
            entry["rate_note"] = "schedule undefined below n_alpha = 16"
        entries.append(entry)
    return {"grid": entries}
