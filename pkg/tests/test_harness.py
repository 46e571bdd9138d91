import csv
import math

import numpy as np
import pytest

from mnolearn import harness, mno
from mnolearn.entropy_bounds import BoundConstants
from mnolearn.errors import ConfigurationError
from mnolearn.mno import MnoParams, MnoSpec
from mnolearn.operator_zoo import OperatorFamily, QuadratureRule
from mnolearn.relu_net import MlpParams, NetClassSpec
from mnolearn.sampling import (
    FunctionSpaceSpec,
    HierarchicalDataset,
    uniform_grid_box,
)

RULE = QuadratureRule("trapezoid", 201)
GREEN = OperatorFamily("green_dirichlet",
                       {"a_min": 0.5, "a_max": 1.0, "beta_u": 1.0})
ALPHA_SPEC = FunctionSpaceSpec(
    dim=1, gamma=0.25, lipschitz_L=1.0, sup_beta=1.0,
    sampler_kind="piecewise_linear", mode_count=1,
    value_lo=0.5, value_hi=1.0, box_center=0.75,
)
U_SPEC = FunctionSpaceSpec(
    dim=1, gamma=0.5, lipschitz_L=4.0, sup_beta=1.0,
    sampler_kind="random_fourier", mode_count=6, box_center=0.5,
)
GRIDS = (uniform_grid_box(0.5, 1.0, 1, 1), uniform_grid_box(0.0, 1.0, 1, 9))


def small_spec(n_cw=1, n_cu=9, clip_a=0.125):
    return MnoSpec(
        2, 2, 2,
        NetClassSpec(n_cw, 1, 2, 4, 100, 4.0, 1.0),
        NetClassSpec(n_cu, 1, 2, n_cu, 400, 4.0, 1.0),
        NetClassSpec(1, 1, 2, 4, 100, 4.0, 1.0),
        coeff_bound_I=2.0,
        clip_a=clip_a,
    )


def teacher_dataset(spec, seed=0, n_alpha=4, n_u=3, n_x=8):
    """sigma = 0 data generated directly by a small teacher model."""
    rng = np.random.default_rng(seed)
    teacher = mno.init_mno_params(spec, rng)
    teacher.theta *= 3.0  # lift outputs away from zero
    teacher = mno.mno_project(teacher)
    alpha = rng.uniform(0.5, 1.0, size=(n_alpha, spec.n_cW))
    u = rng.uniform(-1, 1, size=(n_alpha, n_u, spec.n_cU))
    x = rng.uniform(0.0, 0.5, size=(n_alpha, n_u, n_x, spec.d_V))
    w = np.zeros((n_alpha, n_u, n_x))
    for l in range(n_alpha):
        for i in range(n_u):
            w[l, i] = mno.mno_forward_batch(
                teacher,
                np.tile(alpha[l], (n_x, 1)),
                np.tile(u[l, i], (n_x, 1)),
                x[l, i],
            )
    meta = {"n_alpha": n_alpha, "n_u": n_u, "n_x": n_x, "sigma": 0.0,
            "family": {"name": "teacher"}, "master_seed": seed}
    return HierarchicalDataset(meta, alpha, u, x, w), teacher


class TestTrainErm:
    def test_teacher_student_descent(self):
        spec = small_spec(clip_a=1.0)
        dataset, _ = teacher_dataset(spec)
        cfg = harness.TrainConfig(learning_rate=0.05, steps=300, batch_size=32,
                                  projection_every=10, seed=1, optimizer="sgd")
        _, trace = harness.train_erm(spec, dataset, cfg)
        assert trace[-1] < trace[0]

    def test_zero_learning_rate_is_projection_only(self):
        spec = small_spec(clip_a=1.0)
        dataset, _ = teacher_dataset(spec)
        cfg = harness.TrainConfig(learning_rate=0.0, steps=50, batch_size=16,
                                  projection_every=5, seed=2, optimizer="sgd")
        params, trace = harness.train_erm(spec, dataset, cfg)
        assert len(set(trace)) == 1  # constant trace
        init = mno.init_mno_params(spec, np.random.default_rng([2, 0]))
        assert np.array_equal(params.theta, init.theta)
        for a, b in zip(params.l_nets, init.l_nets):
            for wa, wb in zip(a.weights, b.weights):
                assert np.array_equal(wa, wb)

    def test_fixed_seed_bitwise_determinism(self):
        spec = small_spec(clip_a=1.0)
        dataset, _ = teacher_dataset(spec)
        cfg = harness.TrainConfig(learning_rate=0.05, steps=120, batch_size=16,
                                  projection_every=7, seed=3,
                                  optimizer="sgd_momentum", momentum_beta=0.9)
        p1, t1 = harness.train_erm(spec, dataset, cfg)
        p2, t2 = harness.train_erm(spec, dataset, cfg)
        assert t1 == t2
        assert np.array_equal(p1.theta, p2.theta)
        for a, b in zip(p1.b_nets, p2.b_nets):
            for wa, wb in zip(a.weights, b.weights):
                assert np.array_equal(wa, wb)

    def test_final_trace_matches_independent_risk(self):
        spec = small_spec(clip_a=1.0)
        dataset, _ = teacher_dataset(spec)
        cfg = harness.TrainConfig(learning_rate=0.05, steps=90, batch_size=16,
                                  seed=4)
        params, trace = harness.train_erm(spec, dataset, cfg)
        assert trace[-1] == pytest.approx(
            harness.empirical_risk(params, dataset), abs=1e-10
        )

    def test_returned_params_feasible(self):
        spec = MnoSpec(
            2, 2, 2,
            NetClassSpec(1, 1, 2, 4, 10, 1.0, 1.0),
            NetClassSpec(9, 1, 2, 9, 30, 1.0, 1.0),
            NetClassSpec(1, 1, 2, 4, 10, 1.0, 1.0),
            coeff_bound_I=0.05,
            clip_a=1.0,
        )
        dataset, _ = teacher_dataset(small_spec(clip_a=1.0))
        cfg = harness.TrainConfig(learning_rate=0.3, steps=60, batch_size=16,
                                  projection_every=3, seed=5)
        params, _ = harness.train_erm(spec, dataset, cfg)
        assert np.max(np.abs(params.theta)) <= 0.05 + 1e-15
        for n in params.l_nets + params.b_nets + params.tau_nets:
            assert n.satisfies_class()

    def test_dimension_mismatch_rejected(self):
        spec = small_spec(n_cw=2)
        dataset, _ = teacher_dataset(small_spec())
        cfg = harness.TrainConfig(learning_rate=0.1, steps=10, batch_size=8)
        with pytest.raises(ConfigurationError):
            harness.train_erm(spec, dataset, cfg)

    def test_full_batch_trace_nonincreasing(self):
        spec = small_spec(clip_a=1.0)
        dataset, _ = teacher_dataset(spec)
        cfg = harness.TrainConfig(learning_rate=0.1, steps=200,
                                  batch_size=10_000, seed=6, optimizer="sgd")
        _, trace = harness.train_erm(spec, dataset, cfg)
        assert all(b <= a + 1e-15 for a, b in zip(trace, trace[1:]))


def constant_model(c, n_cw=1, n_cu=9, clip_a=0.5):
    """Constant-output model via the zero-weight, bias-one subnet trick."""
    sl = NetClassSpec(n_cw, 1, 1, 1, 2, 1.0, 1.0)
    sb = NetClassSpec(n_cu, 1, 1, 1, 2, 1.0, 1.0)
    st = NetClassSpec(1, 1, 1, 1, 2, 1.0, 1.0)
    spec = MnoSpec(1, 1, 1, sl, sb, st, max(abs(c), 1.0), clip_a)

    def const_net(s):
        return MlpParams([np.zeros((1, s.d_in))], [np.array([1.0])], s)

    return MnoParams(np.full((1, 1, 1), float(c)),
                     [const_net(sl)], [const_net(sb)], [const_net(st)], spec)


ZERO_U_SPEC = FunctionSpaceSpec(
    dim=1, gamma=0.5, lipschitz_L=4.0, sup_beta=1.0,
    sampler_kind="piecewise_linear", mode_count=1,
    value_lo=0.0, value_hi=0.0, box_center=0.5,
)


class TestEvalGeneralization:
    def test_zero_model_on_zero_family(self):
        params = constant_model(0.0)
        v = harness.eval_generalization(params, GREEN, ALPHA_SPEC, ZERO_U_SPEC,
                                        GRIDS, 4, 2, 8, 11, RULE)
        assert v == 0.0

    def test_constant_offset_squared(self):
        c = 0.2
        params = constant_model(c, clip_a=0.5)
        v = harness.eval_generalization(params, GREEN, ALPHA_SPEC, ZERO_U_SPEC,
                                        GRIDS, 4, 2, 8, 11, RULE)
        assert v == pytest.approx(c**2, rel=1e-12)

    def test_two_seeds_within_three_stderr(self):
        params = constant_model(0.1, clip_a=0.5)
        m1, s1, _ = harness.eval_generalization_stats(
            params, GREEN, ALPHA_SPEC, U_SPEC, GRIDS, 24, 4, 16, 100, RULE)
        m2, s2, _ = harness.eval_generalization_stats(
            params, GREEN, ALPHA_SPEC, U_SPEC, GRIDS, 24, 4, 16, 200, RULE)
        assert abs(m1 - m2) <= 3 * math.hypot(s1, s2)

    def test_invariant_under_mx_permutation_is_pure_average(self):
        # same seed twice gives the identical estimate (pure function)
        params = constant_model(0.1, clip_a=0.5)
        a = harness.eval_generalization(params, GREEN, ALPHA_SPEC, U_SPEC,
                                        GRIDS, 3, 2, 5, 7, RULE)
        b = harness.eval_generalization(params, GREEN, ALPHA_SPEC, U_SPEC,
                                        GRIDS, 3, 2, 5, 7, RULE)
        assert a == b


def tiny_sweep_cfg(tmp_path, trials=3, grid=(4, 8)):
    return harness.SweepConfig(
        family=GREEN,
        alpha_spec=ALPHA_SPEC,
        u_spec=U_SPEC,
        grids=GRIDS,
        rule=RULE,
        mno_spec=small_spec(),
        train=harness.TrainConfig(learning_rate=0.2, steps=60,
                                  batch_size=4096, projection_every=25,
                                  optimizer="sgd", seed=0),
        n_alpha_grid=list(grid),
        n_u=2,
        n_x=4,
        sigma=0.05,
        trials=trials,
        m_alpha=4,
        m_u=2,
        m_x=8,
        master_seed=7,
        out_csv=str(tmp_path / "sweep.csv"),
    )


def read_csv(path):
    with open(path) as fh:
        return list(csv.reader(fh))


class TestSweep:
    def test_row_counting(self, tmp_path):
        cfg = tiny_sweep_cfg(tmp_path)
        records = harness.run_sweep(cfg)
        assert len(records) == 6
        rows = read_csv(cfg.out_csv)
        assert rows[0] == harness.CSV_COLUMNS
        assert len(rows) == 7

    def test_rerun_identical_modulo_wall_time(self, tmp_path):
        cfg = tiny_sweep_cfg(tmp_path)
        harness.run_sweep(cfg)
        first = read_csv(cfg.out_csv)
        harness.run_sweep(cfg)
        second = read_csv(cfg.out_csv)
        drop = harness.CSV_COLUMNS.index("wall_ms")
        strip = lambda rows: [r[:drop] + r[drop + 1:] for r in rows]
        assert strip(first) == strip(second)

    def test_failed_runs_recorded_and_sweep_continues(self, tmp_path):
        cfg = tiny_sweep_cfg(tmp_path, trials=2, grid=(2,))
        cfg.mno_spec = small_spec(n_cw=3)  # grid mismatch: every run fails
        records = harness.run_sweep(cfg)
        assert len(records) == 2
        assert all(r.status.startswith("error:") for r in records)
        rows = read_csv(cfg.out_csv)
        assert len(rows) == 3
        assert all(row[3] == "" for row in rows[1:])


class TestReport:
    def test_aggregation_matches_hand_medians(self, tmp_path):
        cfg = tiny_sweep_cfg(tmp_path)
        records = harness.run_sweep(cfg)
        report = harness.emit_report(records, BoundConstants(beta_V=0.125))
        assert len(report["grid"]) == 2
        for entry in report["grid"]:
            vals = [r.test_error for r in records
                    if r.n_alpha == entry["n_alpha"]]
            assert entry["median_test_error"] == pytest.approx(
                float(np.median(vals))
            )
            q75, q25 = np.percentile(vals, [75, 25])
            assert entry["iqr_test_error"] == pytest.approx(float(q75 - q25))
            assert entry["rate"] is None  # below the n_alpha >= 16 threshold

    def test_rate_curve_monotone_in_asymptotic_regime(self):
        records = [
            harness.RunRecord(n, t, 0, 0.1, 0.1, 1.0, "ok")
            for n in (10**7, 10**8, 10**9)
            for t in range(2)
        ]
        report = harness.emit_report(records, BoundConstants())
        rates = [e["rate"] for e in report["grid"]]
        assert all(b <= a for a, b in zip(rates, rates[1:]))

    def test_empty_records_rejected(self):
        with pytest.raises(ConfigurationError):
            harness.emit_report([], BoundConstants())


class TestDiagnostics:
    def test_class_diagnostics_fields(self):
        spec = small_spec(clip_a=1.0)
        dataset, teacher = teacher_dataset(spec)
        d = harness.class_diagnostics(teacher, dataset)
        assert d["subnet_feasible"]
        assert d["theta_max_abs"] <= d["theta_bound_I"] + 1e-15
        for key in ("l_output_max_abs", "b_output_max_abs",
                    "tau_output_max_abs"):
            assert d[key] >= 0.0
