"""Function-space samplers, discretization grids, and the hierarchical
training-set generator.

Sampled functions constructively satisfy the sup-norm and Lipschitz bounds
of their space and are certified by the GridFunction audit.  All randomness
flows through per-index seed paths (master seed plus index tuple), so any
single draw can be regenerated independently and datasets are bitwise
reproducible.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ConfigurationError, DomainError, ShapeError
from .operator_zoo import GridFunction, OperatorFamily, QuadratureRule, family_eval
from .relu_net import clip_scalar

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class FunctionSpaceSpec:
    """A box of functions: domain half-width, Lipschitz and sup bounds, and
    the sampler used to draw members.

    ``random_fourier`` draws a clipped, rescaled random cosine series;
    ``piecewise_linear`` draws knot values (1-d only), optionally restricted
    to [value_lo, value_hi]; with mode_count = 1 it produces constants.
    """

    dim: int
    gamma: float
    lipschitz_L: float
    sup_beta: float
    sampler_kind: str = "random_fourier"
    mode_count: int = 8
    decay: float = 2.0
    value_lo: Optional[float] = None
    value_hi: Optional[float] = None
    box_center: float = 0.0

    def __post_init__(self):
        if self.gamma <= 0 or self.sup_beta <= 0:
            raise ConfigurationError("gamma and sup_beta must be positive")
        if self.lipschitz_L < 0:
            raise ConfigurationError("lipschitz_L must be nonnegative")
        if self.sampler_kind not in ("random_fourier", "piecewise_linear"):
            raise ConfigurationError(f"unknown sampler {self.sampler_kind!r}")
        if self.mode_count < 1:
            raise ConfigurationError("mode_count must be >= 1")
        for v in (self.value_lo, self.value_hi):
            if v is not None and abs(v) > self.sup_beta + 1e-12:
                raise ConfigurationError("value range must lie within +-sup_beta")

    def to_dict(self) -> dict:
        return {
            "dim": self.dim,
            "gamma": self.gamma,
            "lipschitz_L": self.lipschitz_L,
            "sup_beta": self.sup_beta,
            "sampler_kind": self.sampler_kind,
            "mode_count": self.mode_count,
            "decay": self.decay,
            "value_lo": self.value_lo,
            "value_hi": self.value_hi,
            "box_center": self.box_center,
        }


def sample_function(spec: FunctionSpaceSpec, seed) -> GridFunction:
    """Draw one function from the space; same seed gives the same function.

    ``seed`` may be an int or a sequence of ints (a seed path).
    """
    rng = np.random.default_rng(seed)
    if spec.sampler_kind == "random_fourier":
        gf = _sample_random_fourier(spec, rng)
    else:
        gf = _sample_piecewise_linear(spec, rng)
    gf.audit()
    return gf


def _sample_random_fourier(spec: FunctionSpaceSpec, rng) -> GridFunction:
    m_count = spec.mode_count
    amps = rng.uniform(-1.0, 1.0, m_count)
    phases = rng.uniform(0.0, 2.0 * math.pi, m_count)
    if spec.dim > 1:
        dirs = rng.normal(size=(m_count, spec.dim))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    else:
        dirs = np.ones((m_count, 1))
    modes = np.arange(1, m_count + 1, dtype=np.float64)
    coeffs = amps * modes**-spec.decay
    # pre-clip Lipschitz constant of the cosine series
    lam = float(np.sum(np.abs(coeffs) * math.pi * modes / spec.gamma))
    if spec.lipschitz_L == 0.0 and lam > 0.0:
        raise ConfigurationError(
            "lipschitz_L = 0 is infeasible for a nonconstant sampler"
        )
    scale = lam * spec.sup_beta / spec.lipschitz_L if lam > 0.0 else 1.0
    beta = spec.sup_beta
    center = spec.box_center

    def ev(pts):
        pts = np.atleast_2d(pts) - center
        proj = pts @ dirs.T  # (n, M)
        series = np.sum(
            coeffs * np.cos(math.pi * modes * proj / spec.gamma + phases), axis=1
        )
        return beta * clip_scalar(1.0, series / scale)

    return GridFunction(
        dim=spec.dim,
        box_gamma=spec.gamma,
        evaluator=ev,
        lipschitz_L=spec.lipschitz_L,
        sup_beta=spec.sup_beta,
        box_center=center,
    )


def _sample_piecewise_linear(spec: FunctionSpaceSpec, rng) -> GridFunction:
    if spec.dim != 1:
        raise ConfigurationError("piecewise_linear sampler supports dim = 1 only")
    vlo = -spec.sup_beta if spec.value_lo is None else spec.value_lo
    vhi = spec.sup_beta if spec.value_hi is None else spec.value_hi
    if vhi < vlo:
        raise ConfigurationError("value_hi must be >= value_lo")
    m_count = spec.mode_count
    vals = rng.uniform(vlo, vhi, m_count)
    lo, hi = spec.box_center - spec.gamma, spec.box_center + spec.gamma
    if m_count == 1:
        knots = np.array([spec.box_center])
        vals = vals[:1]
    else:
        knots = np.linspace(lo, hi, m_count)
        h = knots[1] - knots[0]
        slope = float(np.max(np.abs(np.diff(vals)))) / h
        if slope > spec.lipschitz_L:
            if spec.lipschitz_L == 0.0:
                raise ConfigurationError(
                    "lipschitz_L = 0 is infeasible for a nonconstant sampler"
                )
            vals = np.mean(vals) + (vals - np.mean(vals)) * (
                spec.lipschitz_L / slope
            )

    def ev(pts):
        pts = np.atleast_2d(pts)
        return np.interp(pts[:, 0], knots, vals)

    return GridFunction(
        dim=1,
        box_gamma=spec.gamma,
        evaluator=ev,
        lipschitz_L=spec.lipschitz_L,
        sup_beta=spec.sup_beta,
        box_center=spec.box_center,
    )


# ----------------------------------------------------------------------
# Grids
# ----------------------------------------------------------------------

def uniform_grid_box(lo: float, hi: float, dim: int, count_per_axis: int):
    """Row-major tensor grid over [lo, hi]^dim including the endpoints.

    With count_per_axis = 1 the single point is the box center (the minimal
    one-point cover).
    """
    if count_per_axis < 1:
        raise DomainError("count_per_axis must be >= 1")
    if count_per_axis == 1:
        axis = np.array([(lo + hi) / 2.0])
    else:
        axis = np.linspace(lo, hi, count_per_axis)
    mesh = np.meshgrid(*([axis] * dim), indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


def uniform_grid(dim: int, gamma: float, count_per_axis: int):
    """Tensor grid over [-gamma, gamma]^dim; covering radius (Euclidean)
    gamma*sqrt(dim)/(count_per_axis - 1) for count >= 2."""
    return uniform_grid_box(-gamma, gamma, dim, count_per_axis)


def grid_covering_radius(gamma: float, dim: int, count_per_axis: int) -> float:
    if count_per_axis == 1:
        return gamma * math.sqrt(dim)
    return gamma * math.sqrt(dim) / (count_per_axis - 1)


def discretize(f: GridFunction, points) -> np.ndarray:
    """Pointwise evaluations of f in grid order."""
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if points.shape[1] != f.dim:
        raise ShapeError(
            f"points have dimension {points.shape[1]}, function has {f.dim}"
        )
    if not f.contains(points):
        raise DomainError("discretization point outside the function's box")
    return f.eval_many(points)


def empirical_covering_radius(points, lo: float, hi: float, dim: int,
                              probes_per_axis: int = 32) -> float:
    """Max distance from a probe grid of the box to the nearest point."""
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    probe = uniform_grid_box(lo, hi, dim, probes_per_axis)
    d2 = ((probe[:, None, :] - points[None, :, :]) ** 2).sum(axis=2)
    return float(np.sqrt(d2.min(axis=1).max()))


# ----------------------------------------------------------------------
# Hierarchical dataset
# ----------------------------------------------------------------------

@dataclass
class HierarchicalDataset:
    """Discretized (alpha, u, x, w) data in nested layout.

    Shapes: alpha_disc (n_alpha, n_cW); u_disc (n_alpha, n_u, n_cU);
    x_pts (n_alpha, n_u, n_x, d_V); w_vals (n_alpha, n_u, n_x).
    """

    meta: dict
    alpha_disc: np.ndarray
    u_disc: np.ndarray
    x_pts: np.ndarray
    w_vals: np.ndarray

    def __post_init__(self):
        self.alpha_disc = np.asarray(self.alpha_disc, dtype=np.float64)
        self.u_disc = np.asarray(self.u_disc, dtype=np.float64)
        self.x_pts = np.asarray(self.x_pts, dtype=np.float64)
        self.w_vals = np.asarray(self.w_vals, dtype=np.float64)
        n_a = self.alpha_disc.shape[0]
        if self.u_disc.shape[0] != n_a or self.x_pts.shape[0] != n_a:
            raise ShapeError("alpha/u/x leading dimensions disagree")
        n_u = self.u_disc.shape[1]
        if self.x_pts.shape[1] != n_u or self.w_vals.shape[:2] != (n_a, n_u):
            raise ShapeError("u/x/w nested dimensions disagree")
        if self.w_vals.shape[2] != self.x_pts.shape[2]:
            raise ShapeError("x/w point counts disagree")

    @property
    def n_alpha(self) -> int:
        return self.alpha_disc.shape[0]

    @property
    def n_u(self) -> int:
        return self.u_disc.shape[1]

    @property
    def n_x(self) -> int:
        return self.x_pts.shape[2]

    def flat_arrays(self):
        """Flatten to per-sample rows (A, U, X, w) for training."""
        n_a, n_u, n_x = self.n_alpha, self.n_u, self.n_x
        n = n_a * n_u * n_x
        a_rows = np.repeat(self.alpha_disc, n_u * n_x, axis=0)
        u_rows = np.repeat(
            self.u_disc.reshape(n_a * n_u, -1), n_x, axis=0
        )
        x_rows = self.x_pts.reshape(n, -1)
        w = self.w_vals.reshape(n)
        return (
            np.ascontiguousarray(a_rows),
            np.ascontiguousarray(u_rows),
            np.ascontiguousarray(x_rows),
            np.ascontiguousarray(w),
        )

    def to_json_dict(self) -> dict:
        return {
            "schema": SCHEMA_VERSION,
            "meta": self.meta,
            "alpha_disc": self.alpha_disc.tolist(),
            "u_disc": self.u_disc.tolist(),
            "x_pts": self.x_pts.tolist(),
            "w_vals": self.w_vals.tolist(),
        }

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_json_dict(), fh, sort_keys=True, separators=(",", ":"))
            fh.write("\n")

    @staticmethod
    def from_json_dict(d: dict) -> "HierarchicalDataset":
        if d.get("schema") != SCHEMA_VERSION:
            raise ConfigurationError(
                f"unsupported dataset schema {d.get('schema')!r}"
            )
        return HierarchicalDataset(
            meta=d["meta"],
            alpha_disc=np.asarray(d["alpha_disc"], dtype=np.float64),
            u_disc=np.asarray(d["u_disc"], dtype=np.float64),
            x_pts=np.asarray(d["x_pts"], dtype=np.float64),
            w_vals=np.asarray(d["w_vals"], dtype=np.float64),
        )

    @staticmethod
    def load(path) -> "HierarchicalDataset":
        with open(path) as fh:
            return HierarchicalDataset.from_json_dict(json.load(fh))


def generate_dataset(family: OperatorFamily, alpha_spec: FunctionSpaceSpec,
                     u_spec: FunctionSpaceSpec, n_alpha: int, n_u: int,
                     n_x: int, sigma: float, grids, master_seed: int,
                     rule: QuadratureRule,
                     x_domain=None) -> HierarchicalDataset:
    """Draw the nested training set.

    ``grids`` is a pair (y_points, c_points) of discretization grids for the
    descriptor and input-function spaces.  Evaluation points are uniform on
    the family's x-domain.  Noise is Gaussian with standard deviation sigma
    (a sub-Gaussian with variance proxy sigma^2); with sigma = 0 the stored
    values are exactly the noiseless operator outputs.

    Seed paths: (master, 0, l) for alpha_l, (master, 1, l, i) for u_li,
    (master, 2, l, i, j) for x_lij, (master, 3, l, i, j) for the noise.
    """
    if n_alpha < 1 or n_u < 1 or n_x < 1:
        raise DomainError("sample budgets must be >= 1")
    if sigma < 0:
        raise DomainError("sigma must be nonnegative")
    y_pts = np.atleast_2d(np.asarray(grids[0], dtype=np.float64))
    c_pts = np.atleast_2d(np.asarray(grids[1], dtype=np.float64))
    x_lo, x_hi = x_domain if x_domain is not None else family.x_domain()
    d_v = 1
    alpha_disc = np.zeros((n_alpha, y_pts.shape[0]))
    u_disc = np.zeros((n_alpha, n_u, c_pts.shape[0]))
    x_pts = np.zeros((n_alpha, n_u, n_x, d_v))
    w_vals = np.zeros((n_alpha, n_u, n_x))
    for l_idx in range(n_alpha):
        alpha = sample_function(alpha_spec, [master_seed, 0, l_idx])
        alpha_disc[l_idx] = discretize(alpha, y_pts)
        for i_idx in range(n_u):
            u = sample_function(u_spec, [master_seed, 1, l_idx, i_idx])
            u_disc[l_idx, i_idx] = discretize(u, c_pts)
            xs = np.array(
                [
                    np.random.default_rng(
                        [master_seed, 2, l_idx, i_idx, j]
                    ).uniform(x_lo, x_hi, d_v)
                    for j in range(n_x)
                ]
            )
            x_pts[l_idx, i_idx] = xs
            try:
                # pointwise scalar route: keeps stored values bitwise equal
                # to later family_eval recomputations
                clean = np.array(
                    [family_eval(family, alpha, u, xs[j], rule)
                     for j in range(n_x)]
                )
            except Exception as exc:
                exc.args = (
                    f"[alpha index {l_idx}, u index {i_idx}] {exc}",
                ) + exc.args[1:]
                raise
            if sigma > 0:
                noise = np.array(
                    [
                        sigma
                        * np.random.default_rng(
                            [master_seed, 3, l_idx, i_idx, j]
                        ).standard_normal()
                        for j in range(n_x)
                    ]
                )
                w_vals[l_idx, i_idx] = clean + noise
            else:
                w_vals[l_idx, i_idx] = clean
    meta = {
        "n_alpha": n_alpha,
        "n_u": n_u,
        "n_x": n_x,
        "sigma": float(sigma),
        "family": family.to_dict(),
        "master_seed": int(master_seed),
        "y_grid": y_pts.tolist(),
        "c_grid": c_pts.tolist(),
        "x_domain": [float(x_lo), float(x_hi)],
        "quadrature": {
            "kind": rule.kind,
            "node_count": rule.node_count,
            "seed": rule.seed,
            "truncation_radius": rule.truncation_radius,
        },
        "alpha_space": alpha_spec.to_dict(),
        "u_space": u_spec.to_dict(),
        "y_grid_covering_radius": empirical_covering_radius(
            y_pts,
            alpha_spec.box_center - alpha_spec.gamma,
            alpha_spec.box_center + alpha_spec.gamma,
            alpha_spec.dim,
        ),
        "c_grid_covering_radius": empirical_covering_radius(
            c_pts,
            u_spec.box_center - u_spec.gamma,
            u_spec.box_center + u_spec.gamma,
            u_spec.dim,
        ),
    }
    return HierarchicalDataset(meta, alpha_disc, u_disc, x_pts, w_vals)


# ----------------------------------------------------------------------
# Theory-mode cover counts
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class TheoryGrids:
    zeta: float
    delta: float
    count_w_per_axis: int
    count_u_per_axis: int
    n_cW: int
    n_cU: int


def _cover_count(gamma: float, dim: int, radius: float) -> int:
    if radius <= 0:
        raise DomainError("cover radius must be positive")
    diag = gamma * math.sqrt(dim)
    if diag <= radius:
        return 1
    return math.ceil(diag / radius) + 1


def theory_cover_counts(eps: float, w_space: FunctionSpaceSpec,
                        u_space: FunctionSpaceSpec, d_V: int, constants,
                        mode: str = "halved") -> TheoryGrids:
    """Discretization-grid sizes from the accuracy-driven cover radii.

    The descriptor grid uses radius zeta ~ C_zeta * eps, which fixes n_cW;
    the input grid radius delta then depends on (eps, n_cW, d_V).  Counts
    are per axis; n_cW and n_cU are the tensor-grid totals.
    """
    if eps <= 0:
        raise DomainError("eps must be positive")
    if mode not in ("base", "halved"):
        raise DomainError(f"mode must be 'base' or 'halved', got {mode!r}")
    zeta = constants.C_zeta * eps * (0.5 if mode == "halved" else 1.0)
    cw = _cover_count(w_space.gamma, w_space.dim, zeta)
    n_cw = cw**w_space.dim
    a1 = constants.C * math.sqrt(d_V)
    a3 = constants.C_dprime * math.sqrt(n_cw)
    if mode == "halved":
        pow2 = 2 * d_V + 2 * n_cw + 3 + d_V * n_cw
    else:
        pow2 = d_V + n_cw + 2
    delta = (
        constants.C_delta
        * eps ** ((1 + d_V) * (1 + n_cw))
        / (2.0**pow2 * a1**d_V * a3**n_cw)
    )
    cu = _cover_count(u_space.gamma, u_space.dim, delta)
    n_cu = cu**u_space.dim
    return TheoryGrids(
        zeta=zeta,
        delta=delta,
        count_w_per_axis=cw,
        count_u_per_axis=cu,
        n_cW=n_cw,
        n_cU=n_cu,
    )
