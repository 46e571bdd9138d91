"""Analytic operator families with quadrature backends and reference solvers.

Every family realizes a map (alpha, u) -> v with v(x) computable to
quadrature accuracy, so the families serve both as dataset generators and as
independent oracles for trained models:

  * ``green_dirichlet``     v(x) = int_0^a K_a(x,y) u(y) dy with the Dirichlet
                            Green kernel of -d^2/dx^2 on (0, a); alpha is the
                            constant function a,
  * ``homogeneous_kernel``  K(x,y) = rho(|x-y|/alpha(x)) / alpha(x)^d,
  * ``fractional_kernel``   K(x,y) = c / |x-y|^(d + 2 alpha(x)), integrated
                            over the region |x-y| >= truncation radius,
  * ``heat_semigroup``      convolution with the Gaussian heat kernel at
                            time t and viscosity nu,
  * ``burgers_cole_hopf``   the viscous Burgers solution operator written as
                            a ratio of two Gaussian-weighted integrals.

An explicit finite-difference Burgers solver provides a second, independent
route for verification.  One-dimensional domains only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import ConfigurationError, DomainError, UnderflowError

_EPS_BOX = 1e-12


@dataclass
class GridFunction:
    """A function on a box domain plus the metadata the samplers certify.

    The box is [center - gamma, center + gamma] per axis.  ``evaluator``
    must accept an (n, dim) array and return an (n,) array.
    """

    dim: int
    box_gamma: float
    evaluator: Callable
    lipschitz_L: float
    sup_beta: float
    box_center: float = 0.0

    def __post_init__(self):
        if self.dim < 1:
            raise DomainError("dim must be >= 1")
        if self.box_gamma <= 0:
            raise DomainError("box_gamma must be positive")
        if self.lipschitz_L < 0 or self.sup_beta < 0:
            raise DomainError("lipschitz_L and sup_beta must be nonnegative")

    @property
    def lo(self) -> float:
        return self.box_center - self.box_gamma

    @property
    def hi(self) -> float:
        return self.box_center + self.box_gamma

    def contains(self, pts) -> bool:
        pts = np.atleast_2d(np.asarray(pts, dtype=np.float64))
        return bool(
            np.all(pts >= self.lo - _EPS_BOX) and np.all(pts <= self.hi + _EPS_BOX)
        )

    def eval_many(self, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=np.float64)
        if pts.ndim == 1:
            if self.dim == 1:
                pts = pts[:, None]
            else:
                pts = pts[None, :]
        return np.asarray(self.evaluator(pts), dtype=np.float64).reshape(pts.shape[0])

    def __call__(self, x) -> float:
        x = np.atleast_1d(np.asarray(x, dtype=np.float64))
        return float(self.eval_many(x[None, :])[0])

    def audit(self, points_per_axis: int = 1000):
        """Check |f| <= sup_beta and the empirical Lipschitz bound on a grid.

        Raises DomainError on violation; returns (max_abs, max_slope).
        """
        if self.dim == 1:
            axes = [np.linspace(self.lo, self.hi, points_per_axis)]
        else:
            per = max(2, int(round(points_per_axis ** (1.0 / self.dim))))
            axes = [np.linspace(self.lo, self.hi, per)] * self.dim
        mesh = np.meshgrid(*axes, indexing="ij")
        pts = np.stack([m.ravel() for m in mesh], axis=-1)
        vals = self.eval_many(pts).reshape(mesh[0].shape)
        max_abs = float(np.max(np.abs(vals)))
        if max_abs > self.sup_beta * (1 + 1e-9) + 1e-15:
            raise DomainError(
                f"audit failed: |f| reaches {max_abs} > sup_beta={self.sup_beta}"
            )
        max_slope = 0.0
        for ax in range(self.dim):
            h = axes[ax][1] - axes[ax][0] if len(axes[ax]) > 1 else 1.0
            dv = np.abs(np.diff(vals, axis=ax)) / h
            if dv.size:
                max_slope = max(max_slope, float(np.max(dv)))
        if max_slope > self.lipschitz_L * (1 + 1e-9) + 1e-12:
            raise DomainError(
                f"audit failed: slope {max_slope} > L={self.lipschitz_L}"
            )
        return max_abs, max_slope


def constant_fn(value: float, dim: int = 1, gamma: float = 1.0,
                center: float = 0.0) -> GridFunction:
    v = float(value)
    return GridFunction(
        dim=dim,
        box_gamma=gamma,
        evaluator=lambda pts: np.full(np.atleast_2d(pts).shape[0], v),
        lipschitz_L=0.0,
        sup_beta=abs(v),
        box_center=center,
    )


def from_scalar(f: Callable, dim: int, gamma: float, lipschitz_L: float,
                sup_beta: float, center: float = 0.0) -> GridFunction:
    """Wrap a scalar callable f(x_vector) -> float as a GridFunction."""

    def ev(pts):
        pts = np.atleast_2d(pts)
        return np.array([f(p if dim > 1 else float(p[0])) for p in pts])

    return GridFunction(dim, gamma, ev, lipschitz_L, sup_beta, center)


def from_vectorized_1d(f: Callable, gamma: float, lipschitz_L: float,
                       sup_beta: float, center: float = 0.0) -> GridFunction:
    """Wrap a NumPy-vectorized 1-d callable f(y_array) -> array."""

    def ev(pts):
        pts = np.atleast_2d(pts)
        return np.asarray(f(pts[:, 0]), dtype=np.float64)

    return GridFunction(1, gamma, ev, lipschitz_L, sup_beta, center)


@dataclass(frozen=True)
class QuadratureRule:
    """Quadrature settings: composite trapezoid or seeded Monte Carlo."""

    kind: str = "trapezoid"
    node_count: int = 1001
    seed: int = 0
    truncation_radius: Optional[float] = None

    def __post_init__(self):
        if self.kind not in ("trapezoid", "monte_carlo"):
            raise ConfigurationError(f"unknown quadrature kind {self.kind!r}")
        if self.node_count < 2:
            raise ConfigurationError("node_count must be >= 2")
        if self.truncation_radius is not None and self.truncation_radius <= 0:
            raise ConfigurationError("truncation_radius must be positive")

    def nodes_weights(self, a: float, b: float):
        if not (b > a):
            raise DomainError(f"degenerate interval [{a}, {b}]")
        if self.kind == "trapezoid":
            nodes = np.linspace(a, b, self.node_count)
            h = (b - a) / (self.node_count - 1)
            w = np.full(self.node_count, h)
            w[0] = w[-1] = h / 2.0
            return nodes, w
        rng = np.random.default_rng(self.seed)
        nodes = rng.uniform(a, b, self.node_count)
        w = np.full(self.node_count, (b - a) / self.node_count)
        return nodes, w


def quad_integrate(f: Callable, interval, rule: QuadratureRule) -> float:
    """Integrate a vectorized callable f over a finite interval."""
    a, b = float(interval[0]), float(interval[1])
    nodes, w = rule.nodes_weights(a, b)
    vals = np.asarray(f(nodes), dtype=np.float64)
    if vals.shape != nodes.shape:
        raise DomainError("integrand must return one value per node")
    return float(np.dot(w, vals))


# ----------------------------------------------------------------------
# Dirichlet Green kernel on (0, a)
# ----------------------------------------------------------------------

def _check_green_range(a: float, *vals):
    if a <= 0:
        raise DomainError(f"interval length a must be positive, got {a}")
    for v in vals:
        arr = np.asarray(v)
        if np.any(arr < -_EPS_BOX) or np.any(arr > a + _EPS_BOX):
            raise DomainError(f"argument outside [0, {a}]")


def green_kernel(a: float, x, y):
    """K_a(x,y) = x(a-y)/a for x <= y, else y(a-x)/a.  Vectorized in y."""
    _check_green_range(a, x, y)
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    out = np.where(x <= y, x * (a - y), y * (a - x)) / a
    return out if out.ndim else float(out)

def green_kernel_relu_form(a: float, x, y):
    """The same kernel written with ReLUs:
    (x+y)/2 - (ReLU(x-y) + ReLU(y-x))/2 - xy/a."""
    _check_green_range(a, x, y)
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    out = (
        (x + y) / 2.0
        - (np.maximum(x - y, 0.0) + np.maximum(y - x, 0.0)) / 2.0
        - x * y / a
    )
    return out if out.ndim else float(out)


def green_apply_many(a: float, u: GridFunction, xs, rule: QuadratureRule):
    """v(x) = int_0^a K_a(x, y) u(y) dy by quadrature, at many x points.

    Nodes and u evaluations are shared across the x points.
    """
    xs = np.asarray(xs, dtype=np.float64).reshape(-1)
    _check_green_range(a, xs)
    if not u.contains(np.array([[0.0], [a]])):
        raise DomainError(f"u must be defined on [0, {a}]")
    nodes, w = rule.nodes_weights(0.0, a)
    uv = u.eval_many(nodes) * w
    kmat = np.where(
        xs[:, None] <= nodes[None, :],
        xs[:, None] * (a - nodes[None, :]),
        nodes[None, :] * (a - xs[:, None]),
    ) / a
    return kmat @ uv


def green_apply(a: float, u: GridFunction, x: float, rule: QuadratureRule) -> float:
    """Single-point green_apply_many (one shared code path keeps the scalar
    and batched routes bitwise identical)."""
    return float(green_apply_many(a, u, np.array([float(x)]), rule)[0])


# ----------------------------------------------------------------------
# Parameterized kernel families
# ----------------------------------------------------------------------

RHO_PROFILES = {
    # normalized so that int rho(|z|/alpha)/alpha dz = 1 in d = 1
    "half_indicator": lambda r: 0.5 * (np.asarray(r) <= 1.0),
    "triangle": lambda r: np.maximum(1.0 - np.asarray(r), 0.0),
}


def _alpha_at(alpha: GridFunction, x: float) -> float:
    return alpha(np.array([x]))


def kernel_apply(family: "OperatorFamily", alpha: GridFunction, u: GridFunction,
                 x, rule: QuadratureRule) -> float:
    """Apply a homogeneous or variable-order fractional kernel operator."""
    x = float(np.asarray(x, dtype=np.float64).reshape(-1)[0])
    d = int(family.params.get("d", 1))
    if u.dim != 1 or d != 1:
        raise ConfigurationError("kernel families are implemented for d = 1")
    ax = _alpha_at(alpha, x)
    if family.name == "homogeneous_kernel":
        if ax <= 0:
            raise DomainError(f"alpha(x) must be positive, got {ax}")
        rho = family.params.get("rho", "half_indicator")
        if isinstance(rho, str):
            rho = RHO_PROFILES[rho]
        nodes, w = rule.nodes_weights(u.lo, u.hi)
        vals = rho(np.abs(x - nodes) / ax) / ax**d * u.eval_many(nodes)
        return float(np.dot(w, vals))
    if family.name == "fractional_kernel":
        if not (0.0 < ax < 1.0):
            raise DomainError(f"fractional order alpha(x) must be in (0,1), got {ax}")
        r = rule.truncation_radius
        if r is None:
            raise ConfigurationError(
                "fractional kernel requires a truncation_radius on the rule"
            )
        c = float(family.params.get("c", 1.0))
        total = 0.0
        for lo, hi in ((u.lo, x - r), (x + r, u.hi)):
            if hi - lo <= _EPS_BOX:
                continue
            nodes, w = rule.nodes_weights(lo, hi)
            vals = c / np.abs(x - nodes) ** (d + 2.0 * ax) * u.eval_many(nodes)
            total += float(np.dot(w, vals))
        return total
    raise ConfigurationError(f"not a kernel family: {family.name}")


# ----------------------------------------------------------------------
# Heat semigroup and viscous Burgers
# ----------------------------------------------------------------------

def _window(nu: float, t: float, rule: QuadratureRule) -> float:
    # default window 8 sqrt(2 nu t): Gaussian tail mass below 1e-14
    if rule.truncation_radius is not None:
        return rule.truncation_radius
    return 8.0 * math.sqrt(2.0 * nu * t)


def heat_apply(nu: float, t: float, u: GridFunction, x: float,
               rule: QuadratureRule) -> float:
    """Heat semigroup at time t: int Gamma_nu(t, x-y) u(y) dy.

    The integral is truncated to [x - W, x + W]; u is extended beyond its
    box by its boundary values.
    """
    if nu <= 0 or t <= 0:
        raise DomainError("nu and t must be positive")
    x = float(x)
    w_rad = _window(nu, t, rule)
    nodes, w = rule.nodes_weights(x - w_rad, x + w_rad)
    uv = u.eval_many(np.clip(nodes, u.lo, u.hi))
    z = x - nodes
    gamma = np.exp(-(z**2) / (4.0 * nu * t)) / math.sqrt(4.0 * math.pi * nu * t)
    return float(np.dot(w, gamma * uv))


def _periodic_eval(u: GridFunction, ys):
    period = u.hi - u.lo
    wrapped = u.lo + np.mod(ys - u.lo, period)
    return u.eval_many(wrapped)


def burgers_cole_hopf(nu: float, t: float, u: GridFunction, x: float,
                      rule: QuadratureRule) -> float:
    """Viscous Burgers solution at (t, x) via the exact integral ratio

        (1/t) * int (x-y) Gamma_nu(t, x-y) E(y) dy / int Gamma_nu(t, x-y) E(y) dy

    with E(y) = exp(-(1/2nu) int_0^y u).  The initial datum is extended
    periodically from its box so the result solves the same periodic problem
    as the finite-difference reference.  Both integrals share the factor
    exp(max exponent), which is cancelled; the underflow check applies to the
    true denominator value.
    """
    if nu <= 0 or t <= 0:
        raise DomainError("nu and t must be positive")
    x = float(x)
    w_rad = _window(nu, t, rule)
    nodes, w = rule.nodes_weights(x - w_rad, x + w_rad)
    order = np.argsort(nodes)
    nodes, w = nodes[order], w[order]
    # antiderivative of the periodic extension on the union of nodes and 0
    grid = np.unique(np.concatenate([nodes, [0.0]]))
    vals = _periodic_eval(u, grid)
    inc = np.diff(grid) * (vals[1:] + vals[:-1]) / 2.0
    cum = np.concatenate([[0.0], np.cumsum(inc)])
    cum -= cum[np.searchsorted(grid, 0.0)]
    anti = cum[np.searchsorted(grid, nodes)]
    expo = -anti / (2.0 * nu) - (x - nodes) ** 2 / (4.0 * nu * t)
    m = float(np.max(expo))
    scaled = np.exp(expo - m)
    den = float(np.dot(w, scaled))
    num = float(np.dot(w, (x - nodes) * scaled))
    log_den_true = m + math.log(den) - 0.5 * math.log(4.0 * math.pi * nu * t)
    if log_den_true < math.log(1e-300):
        raise UnderflowError(
            "Cole-Hopf denominator underflow; use a larger nu or smaller t"
        )
    return num / den / t


def burgers_fd_reference(nu: float, t: float, u: GridFunction, grid_n: int,
                         steps: int) -> GridFunction:
    """Independent Burgers solver: central differences + forward Euler,
    periodic on u's box.  Enforces dt <= min(dx^2/(2 nu), dx/max|u|)/2."""
    if nu <= 0 or t <= 0:
        raise DomainError("nu and t must be positive")
    if grid_n < 4 or steps < 1:
        raise ConfigurationError("need grid_n >= 4 and steps >= 1")
    period = u.hi - u.lo
    dx = period / grid_n
    xs = u.lo + dx * np.arange(grid_n)
    z = u.eval_many(xs)
    dt = t / steps
    zmax = max(float(np.max(np.abs(z))), 1e-12)
    dt_max = 0.5 * min(dx**2 / (2.0 * nu), dx / zmax)
    if dt > dt_max:
        raise ConfigurationError(
            f"explicit scheme unstable: dt={dt:.3e} exceeds {dt_max:.3e}; "
            f"increase steps to at least {math.ceil(t / dt_max)}"
        )
    for _ in range(steps):
        zp = np.roll(z, -1)
        zm = np.roll(z, 1)
        z = z + dt * (nu * (zp - 2.0 * z + zm) / dx**2 - z * (zp - zm) / (2.0 * dx))
    xp = np.concatenate([xs, [u.lo + period]])
    fp = np.concatenate([z, [z[0]]])
    sup = float(np.max(np.abs(z))) + 1e-12
    lip = float(np.max(np.abs(np.diff(fp)))) / dx + 1e-9

    def ev(pts):
        pts = np.atleast_2d(pts)
        return np.interp(pts[:, 0], xp, fp, period=period)

    return GridFunction(
        dim=1,
        box_gamma=period / 2.0,
        evaluator=ev,
        lipschitz_L=lip,
        sup_beta=sup,
        box_center=(u.lo + u.hi) / 2.0,
    )


# ----------------------------------------------------------------------
# Family dispatch
# ----------------------------------------------------------------------

FAMILY_NAMES = (
    "homogeneous_kernel",
    "fractional_kernel",
    "green_dirichlet",
    "heat_semigroup",
    "burgers_cole_hopf",
)


@dataclass
class OperatorFamily:
    """A named analytic operator family plus its keyed parameter record.

    Common parameter keys: ``beta_u`` (input sup bound), ``x_lo``/``x_hi``
    (evaluation domain), family-specific keys documented per family: ``rho``,
    ``d``, ``c`` for the kernel families, ``nu``/``t`` for heat and Burgers,
    ``a_min``/``a_max`` for the Green family.
    """

    name: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.name not in FAMILY_NAMES:
            raise ConfigurationError(f"unknown operator family {self.name!r}")

    def x_domain(self):
        """Evaluation domain Omega_V as (lo, hi); d_V = 1 throughout."""
        if "x_lo" in self.params and "x_hi" in self.params:
            return float(self.params["x_lo"]), float(self.params["x_hi"])
        if self.name == "green_dirichlet":
            return 0.0, float(self.params.get("a_min", 1.0))
        return -0.5, 0.5

    def beta_v(self) -> float:
        """Declared sup bound on outputs, used as the default clip level."""
        beta_u = float(self.params.get("beta_u", 1.0))
        if self.name == "green_dirichlet":
            a_max = float(self.params.get("a_max", 1.0))
            return beta_u * a_max**2 / 8.0
        if self.name == "homogeneous_kernel":
            return beta_u * float(self.params.get("rho_mass", 1.0))
        if self.name == "fractional_kernel":
            c = float(self.params.get("c", 1.0))
            r = float(self.params["trunc_r"])
            alpha_max = float(self.params.get("alpha_max", 0.5))
            width = float(self.params.get("u_width", 2.0))
            return beta_u * c * (r ** (-2 * alpha_max) - width ** (-2 * alpha_max)) / alpha_max
        # heat and Burgers obey a maximum principle
        return beta_u

    def to_dict(self) -> dict:
        serializable = {
            k: v for k, v in self.params.items() if not callable(v)
        }
        return {"name": self.name, "params": serializable}


def _constant_value(gf: GridFunction) -> float:
    return gf(np.full(gf.dim, gf.box_center))


def family_eval(family: OperatorFamily, alpha: Optional[GridFunction],
                u: GridFunction, x, rule: QuadratureRule) -> float:
    """Uniform dispatch G[alpha][u](x) for all families.

    For ``green_dirichlet`` the descriptor alpha is the constant function a.
    For heat and Burgers the descriptor encodes (sigma, nu): the equation
    selector sigma is carried by the family identity (0 for heat, 1 for
    Burgers) and the constant value of alpha gives nu; when alpha is None the
    family parameter ``nu`` is used.
    """
    xs = float(np.asarray(x, dtype=np.float64).reshape(-1)[0])
    if family.name == "green_dirichlet":
        if alpha is None:
            raise ConfigurationError("green_dirichlet requires alpha (constant a)")
        a = _constant_value(alpha)
        if a <= 0:
            raise DomainError(f"interval length a must be positive, got {a}")
        return green_apply(a, u, xs, rule)
    if family.name in ("homogeneous_kernel", "fractional_kernel"):
        if alpha is None:
            raise ConfigurationError(f"{family.name} requires an alpha function")
        return kernel_apply(family, alpha, u, xs, rule)
    if family.name in ("heat_semigroup", "burgers_cole_hopf"):
        nu = _constant_value(alpha) if alpha is not None else float(
            family.params["nu"]
        )
        if nu <= 0:
            raise DomainError(f"viscosity nu must be positive, got {nu}")
        t = float(family.params.get("t", 1.0))
        if family.name == "heat_semigroup":
            return heat_apply(nu, t, u, xs, rule)
        return burgers_cole_hopf(nu, t, u, xs, rule)
    raise ConfigurationError(f"unknown operator family {family.name!r}")


def family_eval_many(family: OperatorFamily, alpha: Optional[GridFunction],
                     u: GridFunction, xs, rule: QuadratureRule) -> np.ndarray:
    """family_eval over many x points; the Green family shares quadrature."""
    xs = np.atleast_2d(np.asarray(xs, dtype=np.float64))
    if family.name == "green_dirichlet" and alpha is not None:
        a = _constant_value(alpha)
        if a <= 0:
            raise DomainError(f"interval length a must be positive, got {a}")
        return green_apply_many(a, u, xs[:, 0], rule)
    return np.array([family_eval(family, alpha, u, p, rule) for p in xs])
