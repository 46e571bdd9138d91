"""Command-line interface.

Subcommands: prescribe, gen-data, train, eval, sweep, bounds, oracle.
Configuration is plain INI (key = value under sections); every seed, path
and numeric setting is explicit.  ``--dump-config`` on any config-driven
subcommand prints the fully resolved configuration and exits.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import configparser
import json
import math
import sys

import numpy as np

from . import harness, mno, sampling
from .backend import backend_name
from .entropy_bounds import BoundConstants, bounds_report
from .errors import ConfigurationError, NumericalError
from .harness import SweepConfig, TrainConfig
from .mno import MnoParams, MnoSpec
from .operator_zoo import OperatorFamily, QuadratureRule
from .relu_net import NetClassSpec
from .sampling import FunctionSpaceSpec, HierarchicalDataset, uniform_grid_box


def _json_dump(obj, path=None):
    text = json.dumps(obj, sort_keys=True, indent=2)
    if path is None:
        print(text)
    else:
        with open(path, "w") as fh:
            fh.write(text)
            fh.write("\n")


def _load_config(path) -> configparser.ConfigParser:
    cfg = configparser.ConfigParser()
    read = cfg.read(path)
    if not read:
        raise ConfigurationError(f"config file not found: {path}")
    return cfg


def _getfloat(cfg, section, key, default=None):
    if cfg.has_option(section, key):
        return cfg.getfloat(section, key)
    if default is None:
        raise ConfigurationError(f"missing [{section}] {key}")
    return default


def _getint(cfg, section, key, default=None):
    if cfg.has_option(section, key):
        return cfg.getint(section, key)
    if default is None:
        raise ConfigurationError(f"missing [{section}] {key}")
    return default


def _getstr(cfg, section, key, default=None):
    if cfg.has_option(section, key):
        return cfg.get(section, key)
    if default is None:
        raise ConfigurationError(f"missing [{section}] {key}")
    return default


def _family_from_cfg(cfg) -> OperatorFamily:
    name = _getstr(cfg, "family", "name")
    params = {}
    for key, value in cfg.items("family"):
        if key in ("name", "quad_kind", "quad_nodes", "quad_seed",
                   "quad_truncation"):
            continue
        if key == "rho":
            params[key] = value
            continue
        params[key] = float(value)
    return OperatorFamily(name, params)


def _rule_from_cfg(cfg) -> QuadratureRule:
    trunc = None
    if cfg.has_option("family", "quad_truncation"):
        trunc = cfg.getfloat("family", "quad_truncation")
    return QuadratureRule(
        kind=_getstr(cfg, "family", "quad_kind", "trapezoid"),
        node_count=_getint(cfg, "family", "quad_nodes", 1001),
        seed=_getint(cfg, "family", "quad_seed", 0),
        truncation_radius=trunc,
    )


def _space_from_cfg(cfg, section) -> FunctionSpaceSpec:
    value_lo = value_hi = None
    if cfg.has_option(section, "value_lo"):
        value_lo = cfg.getfloat(section, "value_lo")
    if cfg.has_option(section, "value_hi"):
        value_hi = cfg.getfloat(section, "value_hi")
    return FunctionSpaceSpec(
        dim=_getint(cfg, section, "dim", 1),
        gamma=_getfloat(cfg, section, "gamma"),
        lipschitz_L=_getfloat(cfg, section, "lipschitz"),
        sup_beta=_getfloat(cfg, section, "beta"),
        sampler_kind=_getstr(cfg, section, "sampler", "random_fourier"),
        mode_count=_getint(cfg, section, "modes", 8),
        decay=_getfloat(cfg, section, "decay", 2.0),
        value_lo=value_lo,
        value_hi=value_hi,
        box_center=_getfloat(cfg, section, "center", 0.0),
    )


def _grids_from_cfg(cfg, alpha_spec, u_spec):
    n_cw = _getint(cfg, "grids", "n_cw", 1)
    n_cu = _getint(cfg, "grids", "n_cu", 9)
    y_pts = uniform_grid_box(
        alpha_spec.box_center - alpha_spec.gamma,
        alpha_spec.box_center + alpha_spec.gamma,
        alpha_spec.dim,
        n_cw,
    )
    c_pts = uniform_grid_box(
        u_spec.box_center - u_spec.gamma,
        u_spec.box_center + u_spec.gamma,
        u_spec.dim,
        n_cu,
    )
    return y_pts, c_pts


def _net_spec_from_cfg(cfg, prefix, d_in) -> NetClassSpec:
    depth = _getint(cfg, "model", f"{prefix}_depth", 2)
    width = _getint(cfg, "model", f"{prefix}_width", 4)
    sparsity = _getint(cfg, "model", f"{prefix}_sparsity", 0)
    if sparsity == 0:
        dims = [d_in] + [width] * (depth - 1) + [1]
        sparsity = sum(
            dims[i + 1] * dims[i] + dims[i + 1] for i in range(depth)
        )
    return NetClassSpec(
        d_in=d_in,
        d_out=1,
        depth_L=depth,
        width_p=width,
        sparsity_K=sparsity,
        magnitude_kappa=_getfloat(cfg, "model", f"{prefix}_kappa", 4.0),
        output_R=_getfloat(cfg, "model", f"{prefix}_output_r", 1.0),
    )


def _mno_spec_from_cfg(cfg, family, grids) -> MnoSpec:
    y_pts, c_pts = grids
    clip_a = None
    if cfg.has_option("model", "clip_a"):
        clip_a = cfg.getfloat("model", "clip_a")
    if clip_a is None:
        clip_a = family.beta_v()
    return MnoSpec(
        P=_getint(cfg, "model", "p", 2),
        H=_getint(cfg, "model", "h", 2),
        N=_getint(cfg, "model", "n", 2),
        spec_l=_net_spec_from_cfg(cfg, "l", y_pts.shape[0]),
        spec_b=_net_spec_from_cfg(cfg, "b", c_pts.shape[0]),
        spec_tau=_net_spec_from_cfg(cfg, "tau", 1),
        coeff_bound_I=_getfloat(cfg, "model", "coeff_bound", 2.0),
        clip_a=clip_a,
    )


def _train_cfg_from_cfg(cfg) -> TrainConfig:
    return TrainConfig(
        learning_rate=_getfloat(cfg, "train", "learning_rate", 0.1),
        steps=_getint(cfg, "train", "steps", 2000),
        batch_size=_getint(cfg, "train", "batch_size", 32),
        projection_every=_getint(cfg, "train", "projection_every", 25),
        seed=_getint(cfg, "train", "seed", 0),
        optimizer=_getstr(cfg, "train", "optimizer", "sgd_momentum"),
        momentum_beta=_getfloat(cfg, "train", "momentum", 0.9),
    )


def _constants_from_cfg(cfg, section="bounds") -> BoundConstants:
    kwargs = {}
    mapping = {
        "c": "C", "c_prime": "C_prime", "c_dprime": "C_dprime",
        "c_delta": "C_delta", "c_zeta": "C_zeta", "sigma": "sigma",
        "beta_v": "beta_V", "beta_u": "beta_U", "beta_w": "beta_W",
        "gamma_v": "gamma_V", "i": "I", "gamma_1": "gamma_1",
        "gamma_2": "gamma_2", "hidden_o": "hidden_O",
    }
    int_mapping = {"d_w": "d_W", "d_u": "d_U", "d_v": "d_V",
                   "n_cw": "n_cW", "n_cu": "n_cU"}
    if cfg.has_section(section):
        for key, _ in cfg.items(section):
            if key in mapping:
                kwargs[mapping[key]] = cfg.getfloat(section, key)
            elif key in int_mapping:
                kwargs[int_mapping[key]] = cfg.getint(section, key)
    return BoundConstants(**kwargs)


def _dump_config(cfg):
    for section in cfg.sections():
        print(f"[{section}]")
        for key, value in cfg.items(section):
            print(f"{key} = {value}")
        print()


# ----------------------------------------------------------------------
# Subcommands
# ----------------------------------------------------------------------

def cmd_prescribe(args):
    cfg = _load_config(args.config)
    if args.dump_config:
        _dump_config(cfg)
        return 0
    constants = _constants_from_cfg(cfg, "prescribe")
    eps = _getfloat(cfg, "prescribe", "eps")
    mode = _getstr(cfg, "prescribe", "mode", "halved")
    d_v = _getint(cfg, "prescribe", "d_v", 1)
    n_cw = _getint(cfg, "prescribe", "n_cw", constants.n_cW)
    n_cu = _getint(cfg, "prescribe", "n_cu", constants.n_cU)
    pres = mno.prescribe_architecture(eps, d_v, n_cw, n_cu, constants, mode)
    _json_dump(pres.to_dict(), args.out)
    return 0


def cmd_gen_data(args):
    cfg = _load_config(args.config)
    if args.dump_config:
        _dump_config(cfg)
        return 0
    family = _family_from_cfg(cfg)
    rule = _rule_from_cfg(cfg)
    alpha_spec = _space_from_cfg(cfg, "alpha_space")
    u_spec = _space_from_cfg(cfg, "u_space")
    grids = _grids_from_cfg(cfg, alpha_spec, u_spec)
    dataset = sampling.generate_dataset(
        family, alpha_spec, u_spec,
        _getint(cfg, "dataset", "n_alpha"),
        _getint(cfg, "dataset", "n_u"),
        _getint(cfg, "dataset", "n_x"),
        _getfloat(cfg, "dataset", "sigma", 0.0),
        grids,
        _getint(cfg, "dataset", "master_seed", 0),
        rule,
    )
    out = args.out or _getstr(cfg, "dataset", "out")
    dataset.save(out)
    print(f"wrote dataset to {out} "
          f"({dataset.n_alpha} x {dataset.n_u} x {dataset.n_x} samples)")
    return 0


def cmd_train(args):
    cfg = _load_config(args.config)
    if args.dump_config:
        _dump_config(cfg)
        return 0
    family = _family_from_cfg(cfg)
    alpha_spec = _space_from_cfg(cfg, "alpha_space")
    u_spec = _space_from_cfg(cfg, "u_space")
    grids = _grids_from_cfg(cfg, alpha_spec, u_spec)
    spec = _mno_spec_from_cfg(cfg, family, grids)
    dataset = HierarchicalDataset.load(args.data)
    train_cfg = _train_cfg_from_cfg(cfg)
    params, trace = harness.train_erm(spec, dataset, train_cfg)
    with open(args.out, "w") as fh:
        json.dump(params.to_dict(), fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")
    if args.loss_csv:
        with open(args.loss_csv, "w") as fh:
            fh.write("epoch,loss\n")
            for i, v in enumerate(trace):
                fh.write(f"{i},{v!r}\n")
    diag = harness.class_diagnostics(params, dataset)
    print(json.dumps({
        "final_loss": trace[-1],
        "trace_length": len(trace),
        "model": args.out,
        "backend": backend_name(),
        "diagnostics": diag,
    }, sort_keys=True, indent=2))
    return 0


def cmd_eval(args):
    cfg = _load_config(args.config)
    if args.dump_config:
        _dump_config(cfg)
        return 0
    family = _family_from_cfg(cfg)
    rule = _rule_from_cfg(cfg)
    alpha_spec = _space_from_cfg(cfg, "alpha_space")
    u_spec = _space_from_cfg(cfg, "u_space")
    grids = _grids_from_cfg(cfg, alpha_spec, u_spec)
    with open(args.model) as fh:
        params = MnoParams.from_dict(json.load(fh))
    mean, stderr, n_pairs = harness.eval_generalization_stats(
        params, family, alpha_spec, u_spec, grids,
        _getint(cfg, "eval", "m_alpha", 64),
        _getint(cfg, "eval", "m_u", 8),
        _getint(cfg, "eval", "m_x", 64),
        _getint(cfg, "eval", "seed", 0),
        rule,
    )
    print(json.dumps({
        "test_error": mean,
        "stderr": stderr,
        "pairs": n_pairs,
    }, sort_keys=True))
    return 0


def cmd_sweep(args):
    cfg = _load_config(args.config)
    if args.dump_config:
        _dump_config(cfg)
        return 0
    family = _family_from_cfg(cfg)
    rule = _rule_from_cfg(cfg)
    alpha_spec = _space_from_cfg(cfg, "alpha_space")
    u_spec = _space_from_cfg(cfg, "u_space")
    grids = _grids_from_cfg(cfg, alpha_spec, u_spec)
    spec = _mno_spec_from_cfg(cfg, family, grids)
    grid = [int(tok) for tok in _getstr(cfg, "sweep", "n_alpha_grid").split()]
    sweep_cfg = SweepConfig(
        family=family,
        alpha_spec=alpha_spec,
        u_spec=u_spec,
        grids=grids,
        rule=rule,
        mno_spec=spec,
        train=_train_cfg_from_cfg(cfg),
        n_alpha_grid=grid,
        n_u=_getint(cfg, "dataset", "n_u"),
        n_x=_getint(cfg, "dataset", "n_x"),
        sigma=_getfloat(cfg, "dataset", "sigma", 0.0),
        trials=_getint(cfg, "sweep", "trials", 1),
        m_alpha=_getint(cfg, "eval", "m_alpha", 64),
        m_u=_getint(cfg, "eval", "m_u", 8),
        m_x=_getint(cfg, "eval", "m_x", 64),
        master_seed=_getint(cfg, "sweep", "master_seed", 0),
        out_csv=args.out_csv or _getstr(cfg, "sweep", "out_csv", "sweep.csv"),
        model_dir=args.model_dir,
    )
    records = harness.run_sweep(sweep_cfg)
    failures = sum(1 for r in records if r.status != "ok")
    print(f"sweep complete: {len(records)} runs, {failures} failures, "
          f"records in {sweep_cfg.out_csv}")
    if args.report:
        constants = _constants_from_cfg(cfg, "bounds")
        report = harness.emit_report(records, constants)
        _json_dump(report, args.report)
    return 0


def cmd_bounds(args):
    cfg = _load_config(args.config)
    if args.dump_config:
        _dump_config(cfg)
        return 0
    constants = _constants_from_cfg(cfg, "bounds")
    eps = _getfloat(cfg, "bounds", "eps")
    eta = _getfloat(cfg, "bounds", "eta")
    mode = _getstr(cfg, "bounds", "mode", "halved")
    source = _getstr(cfg, "bounds", "model_source", "prescriber")
    if source == "prescriber":
        pres = mno.prescribe_architecture(
            eps, constants.d_V, constants.n_cW, constants.n_cU, constants, mode
        )
        spec = pres.mno_spec
    elif source == "config":
        family = _family_from_cfg(cfg)
        alpha_spec = _space_from_cfg(cfg, "alpha_space")
        u_spec = _space_from_cfg(cfg, "u_space")
        spec = _mno_spec_from_cfg(cfg, family,
                                  _grids_from_cfg(cfg, alpha_spec, u_spec))
    else:
        raise ConfigurationError(
            f"model_source must be 'prescriber' or 'config', got {source!r}"
        )
    report = bounds_report(
        spec, constants, eps, eta,
        _getint(cfg, "bounds", "n_alpha", 100),
        _getint(cfg, "bounds", "n_u", 1),
        _getint(cfg, "bounds", "n_x", 1),
        mode,
    )
    _json_dump(report, args.out)
    return 0


def cmd_oracle(args):
    """Reference-solver comparisons for the analytic operator families."""
    from . import operator_zoo as zoo

    checks = []

    def record(name, value, expected, tol):
        err = abs(value - expected)
        checks.append((name, value, expected, err, tol, err <= tol))

    rule = QuadratureRule(kind="trapezoid", node_count=1001)
    u_one = zoo.constant_fn(1.0, gamma=0.5, center=0.5)
    for x in np.linspace(0.0, 1.0, 5):
        record(f"green poly x={x:.2f}",
               zoo.green_apply(1.0, u_one, x, rule), x * (1 - x) / 2, 1e-6)
    u_sin = zoo.from_vectorized_1d(
        lambda y: np.sin(math.pi * y), gamma=0.5, lipschitz_L=math.pi,
        sup_beta=1.0, center=0.5,
    )
    record("green sine x=0.5",
           zoo.green_apply(1.0, u_sin, 0.5, rule),
           math.sin(math.pi * 0.5) / math.pi**2, 1e-5)
    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(300):
        a = rng.uniform(0.5, 2.0)
        x, y = rng.uniform(0.0, a, 2)
        worst = max(worst, abs(
            zoo.green_kernel(a, x, y) - zoo.green_kernel_relu_form(a, x, y)
        ))
    record("green kernel relu identity (300 triples)", worst, 0.0, 1e-12)
    heat_rule = QuadratureRule(kind="trapezoid", node_count=2001)
    broad = zoo.constant_fn(1.0, gamma=8.0)
    record("heat mass", zoo.heat_apply(0.5, 1.0, broad, 0.0, heat_rule),
           1.0, 1e-6)
    gauss = zoo.from_vectorized_1d(
        lambda y: np.exp(-(y**2) / 2.0), gamma=8.0,
        lipschitz_L=math.exp(-0.5), sup_beta=1.0,
    )
    record("heat gaussian", zoo.heat_apply(0.5, 1.0, gauss, 0.0, heat_rule),
           1.0 / math.sqrt(2.0), 1e-5)
    box = zoo.constant_fn(0.7, gamma=1.0)
    record("cole-hopf constant",
           zoo.burgers_cole_hopf(0.5, 1.0, box, 0.3, heat_rule), 0.7, 1e-4)
    sin_u = zoo.from_vectorized_1d(
        lambda y: np.sin(math.pi * y), gamma=1.0, lipschitz_L=math.pi,
        sup_beta=1.0,
    )
    grid_n = 128 if args.quick else 256
    steps = 4000 if args.quick else 14000
    fd = zoo.burgers_fd_reference(0.1, 0.5, sin_u, grid_n, steps)
    ch_rule = QuadratureRule(kind="trapezoid", node_count=4001)
    pts = [-0.5, 0.0, 0.5]
    diffs = [abs(zoo.burgers_cole_hopf(0.1, 0.5, sin_u, x, ch_rule) - fd(x))
             for x in pts]
    scale = max(abs(fd(x)) for x in pts)
    record("cole-hopf vs fd (rel sup)", max(diffs) / scale, 0.0, 1e-2)

    width = max(len(c[0]) for c in checks)
    ok_all = True
    for name, value, expected, err, tol, ok in checks:
        ok_all &= ok
        status = "pass" if ok else "FAIL"
        print(f"{status}  {name:<{width}}  value={value:+.8e}  "
              f"expected={expected:+.8e}  err={err:.2e}  tol={tol:.0e}")
    print(f"oracle checks: {'all passed' if ok_all else 'FAILURES PRESENT'}")
    return 0 if ok_all else 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mnolearn",
        description="Separable multiple-operator learning toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def with_config(p):
        p.add_argument("--config", required=True, help="INI config file")
        p.add_argument("--dump-config", action="store_true",
                       help="print the resolved configuration and exit")
        return p

    p = with_config(sub.add_parser("prescribe", help="theory-mode sizes"))
    p.add_argument("--out", help="write JSON here instead of stdout")
    p.set_defaults(func=cmd_prescribe)

    p = with_config(sub.add_parser("gen-data", help="generate a dataset JSON"))
    p.add_argument("--out", help="dataset output path")
    p.set_defaults(func=cmd_gen_data)

    p = with_config(sub.add_parser("train", help="train a model on a dataset"))
    p.add_argument("--data", required=True, help="dataset JSON path")
    p.add_argument("--out", required=True, help="model JSON output path")
    p.add_argument("--loss-csv", help="write the loss trace CSV here")
    p.set_defaults(func=cmd_train)

    p = with_config(sub.add_parser("eval", help="generalization error of a model"))
    p.add_argument("--model", required=True, help="model JSON path")
    p.set_defaults(func=cmd_eval)

    p = with_config(sub.add_parser("sweep", help="scaling sweep over n_alpha"))
    p.add_argument("--out-csv", help="records CSV path")
    p.add_argument("--model-dir", help="directory for per-run model files")
    p.add_argument("--report", help="write the median/rate report JSON here")
    p.set_defaults(func=cmd_sweep)

    p = with_config(sub.add_parser("bounds", help="bound calculator report"))
    p.add_argument("--out", help="write JSON here instead of stdout")
    p.set_defaults(func=cmd_bounds)

    p = sub.add_parser("oracle", help="reference-solver comparisons")
    p.add_argument("--quick", action="store_true",
                   help="smaller grids for a faster run")
    p.set_defaults(func=cmd_oracle)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except (ConfigurationError, ValueError, OSError, KeyError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
