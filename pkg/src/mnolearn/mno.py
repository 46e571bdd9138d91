"""Clipped fully separable multiple-operator model.

The model evaluates

    Clip_a( sum_{p,k,n} theta[p,k,n] * l_p(alpha_disc) * b_k(u_disc) * tau_n(x) )

where l_p, b_k, tau_n are scalar-output constrained ReLU networks acting on
the discretized operator descriptor, the discretized input function, and the
evaluation point respectively, and theta is a coefficient tensor with entries
in [-I, I].

Two sizing regimes coexist.  In practice mode the caller picks (P, H, N) and
the three network class specs freely.  In theory mode
``prescribe_architecture`` computes the multiplicities and class constraints
from a target accuracy; those sizes explode quickly and are meant for
reporting and for the covering-number calculator, not for training.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import relu_net
from .backend import kernels
from .errors import DomainError, ShapeError
from .relu_net import MlpParams, NetClassSpec, clip_scalar


@dataclass(frozen=True)
class MnoSpec:
    """Multiplicities, subnetwork classes, coefficient bound and clip level."""

    P: int
    H: int
    N: int
    spec_l: NetClassSpec
    spec_b: NetClassSpec
    spec_tau: NetClassSpec
    coeff_bound_I: float
    clip_a: float

    def __post_init__(self):
        for name in ("P", "H", "N"):
            if getattr(self, name) < 1:
                raise DomainError(f"{name} must be a positive integer")
        if self.coeff_bound_I <= 0:
            raise DomainError("coeff_bound_I must be positive")
        if self.clip_a <= 0:
            raise DomainError("clip_a must be positive")
        for role, s in (("l", self.spec_l), ("b", self.spec_b), ("tau", self.spec_tau)):
            if s.d_out != 1:
                raise DomainError(f"subnetwork class {role} must be scalar-output")

    @property
    def n_cW(self) -> int:
        return self.spec_l.d_in

    @property
    def n_cU(self) -> int:
        return self.spec_b.d_in

    @property
    def d_V(self) -> int:
        return self.spec_tau.d_in

    def to_dict(self) -> dict:
        return {
            "P": self.P,
            "H": self.H,
            "N": self.N,
            "spec_l": self.spec_l.to_dict(),
            "spec_b": self.spec_b.to_dict(),
            "spec_tau": self.spec_tau.to_dict(),
            "coeff_bound_I": float(self.coeff_bound_I),
            "clip_a": float(self.clip_a),
        }

    @staticmethod
    def from_dict(d: dict) -> "MnoSpec":
        return MnoSpec(
            P=int(d["P"]),
            H=int(d["H"]),
            N=int(d["N"]),
            spec_l=NetClassSpec.from_dict(d["spec_l"]),
            spec_b=NetClassSpec.from_dict(d["spec_b"]),
            spec_tau=NetClassSpec.from_dict(d["spec_tau"]),
            coeff_bound_I=float(d["coeff_bound_I"]),
            clip_a=float(d["clip_a"]),
        )


@dataclass
class MnoParams:
    """Coefficient tensor plus the three families of subnetwork parameters."""

    theta: np.ndarray
    l_nets: list
    b_nets: list
    tau_nets: list
    spec: MnoSpec

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=np.float64)
        s = self.spec
        if self.theta.shape != (s.P, s.H, s.N):
            raise ShapeError(
                f"theta has shape {self.theta.shape}, expected {(s.P, s.H, s.N)}"
            )
        for role, nets, count in (
            ("l", self.l_nets, s.P),
            ("b", self.b_nets, s.H),
            ("tau", self.tau_nets, s.N),
        ):
            if len(nets) != count:
                raise ShapeError(f"expected {count} {role}-networks, got {len(nets)}")

    def copy(self) -> "MnoParams":
        return MnoParams(
            self.theta.copy(),
            [n.copy() for n in self.l_nets],
            [n.copy() for n in self.b_nets],
            [n.copy() for n in self.tau_nets],
            self.spec,
        )

    def to_dict(self) -> dict:
        return {
            "spec": self.spec.to_dict(),
            "theta": self.theta.tolist(),
            "l_nets": [n.to_dict() for n in self.l_nets],
            "b_nets": [n.to_dict() for n in self.b_nets],
            "tau_nets": [n.to_dict() for n in self.tau_nets],
        }

    @staticmethod
    def from_dict(d: dict) -> "MnoParams":
        spec = MnoSpec.from_dict(d["spec"])

        def nets(lst, cls_spec):
            return [
                MlpParams(item["weights"], item["biases"], cls_spec) for item in lst
            ]

        return MnoParams(
            np.asarray(d["theta"], dtype=np.float64),
            nets(d["l_nets"], spec.spec_l),
            nets(d["b_nets"], spec.spec_b),
            nets(d["tau_nets"], spec.spec_tau),
            spec,
        )


@dataclass
class MnoGrads:
    """Gradient record congruent with an MnoParams."""

    d_theta: np.ndarray
    l_grads: list
    b_grads: list
    tau_grads: list


def stack_family(nets):
    """Stack shape-identical networks into per-layer (Q, out, in) arrays.

    Raises ShapeError when the family is heterogeneous; families built from a
    single class spec via the initializers are always stackable.
    """
    ref = nets[0]
    shapes = [w.shape for w in ref.weights]
    for n in nets[1:]:
        if [w.shape for w in n.weights] != shapes:
            raise ShapeError("subnetwork family has heterogeneous layer shapes")
    ws = [
        np.ascontiguousarray(np.stack([n.weights[ell] for n in nets]))
        for ell in range(len(shapes))
    ]
    bs = [
        np.ascontiguousarray(np.stack([n.biases[ell] for n in nets]))
        for ell in range(len(shapes))
    ]
    return ws, bs


def unstack_family(ws, bs, nets_template):
    """Write stacked arrays back into a list of MlpParams (copies)."""
    out = []
    for qi, tmpl in enumerate(nets_template):
        out.append(
            MlpParams(
                [w[qi].copy() for w in ws],
                [b[qi].copy() for b in bs],
                tmpl.spec,
            )
        )
    return out


def _check_inputs(spec: MnoSpec, alpha_disc, u_disc, x):
    alpha_disc = np.asarray(alpha_disc, dtype=np.float64)
    u_disc = np.asarray(u_disc, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if alpha_disc.shape[-1] != spec.n_cW:
        raise ShapeError(
            f"alpha_disc has length {alpha_disc.shape[-1]}, expected {spec.n_cW}"
        )
    if u_disc.shape[-1] != spec.n_cU:
        raise ShapeError(
            f"u_disc has length {u_disc.shape[-1]}, expected {spec.n_cU}"
        )
    if x.shape[-1] != spec.d_V:
        raise ShapeError(f"x has length {x.shape[-1]}, expected {spec.d_V}")
    return alpha_disc, u_disc, x


def mno_forward(params: MnoParams, alpha_disc, u_disc, x, clipped: bool = True):
    """Single-point model evaluation via per-network forward passes.

    This is the reference path; it does not use the stacked kernels, so tests
    can cross-check the two routes against each other.
    """
    alpha_disc, u_disc, x = _check_inputs(params.spec, alpha_disc, u_disc, x)
    lv = np.array([relu_net.forward(n, alpha_disc)[0] for n in params.l_nets])
    bv = np.array([relu_net.forward(n, u_disc)[0] for n in params.b_nets])
    tv = np.array([relu_net.forward(n, x)[0] for n in params.tau_nets])
    s = float(np.einsum("pkn,p,k,n->", params.theta, lv, bv, tv))
    if clipped:
        return float(clip_scalar(params.spec.clip_a, s))
    return s


def mno_forward_batch(params: MnoParams, alphas, us, xs, clipped: bool = True):
    """Batched model evaluation through the active kernel backend."""
    alphas = np.ascontiguousarray(alphas, dtype=np.float64)
    us = np.ascontiguousarray(us, dtype=np.float64)
    xs = np.ascontiguousarray(xs, dtype=np.float64)
    _check_inputs(params.spec, alphas[0], us[0], xs[0])
    lv, _ = kernels.family_forward(*stack_family(params.l_nets), alphas)
    bv, _ = kernels.family_forward(*stack_family(params.b_nets), us)
    tv, _ = kernels.family_forward(*stack_family(params.tau_nets), xs)
    s = kernels.mno_contract(params.theta, lv, bv, tv)
    if clipped:
        return clip_scalar(params.spec.clip_a, s)
    return s


def batch_loss_grad_stacked(theta, l_stack, b_stack, t_stack, clip_a,
                            alphas, us, xs, targets):
    """Loss and gradients of the mean squared clipped-model error.

    Operates directly on stacked family arrays so the training loop avoids
    restacking each step.  Returns (loss, d_theta, (dlw, dlb), (dbw, dbb),
    (dtw, dtb)).  At clip saturation the clip derivative is 0.
    """
    lv, lcache = kernels.family_forward(l_stack[0], l_stack[1], alphas)
    bv, bcache = kernels.family_forward(b_stack[0], b_stack[1], us)
    tv, tcache = kernels.family_forward(t_stack[0], t_stack[1], xs)
    s = kernels.mno_contract(theta, lv, bv, tv)
    y = np.minimum(np.maximum(s, -clip_a), clip_a)
    r = y - targets
    n = targets.shape[0]
    loss = float(np.dot(r, r) / n)
    mask = (s > -clip_a) & (s < clip_a)
    g = (2.0 / n) * r * mask
    d_theta = kernels.mno_theta_grad(g, lv, bv, tv)
    ul, ub, ut = kernels.mno_upstreams(theta, g, lv, bv, tv)
    dl = kernels.family_backprop(l_stack[0], l_stack[1], alphas, lcache, ul)
    db = kernels.family_backprop(b_stack[0], b_stack[1], us, bcache, ub)
    dt = kernels.family_backprop(t_stack[0], t_stack[1], xs, tcache, ut)
    return loss, d_theta, dl, db, dt


def mno_grad(params: MnoParams, batch) -> MnoGrads:
    """Gradient of (1/|batch|) sum (clipped forward - target)^2.

    ``batch`` is a nonempty list of (alpha_disc, u_disc, x, target) tuples.
    """
    if len(batch) == 0:
        raise DomainError("gradient of an empty batch is undefined")
    alphas = np.ascontiguousarray([b[0] for b in batch], dtype=np.float64)
    us = np.ascontiguousarray([b[1] for b in batch], dtype=np.float64)
    xs = np.ascontiguousarray([b[2] for b in batch], dtype=np.float64)
    targets = np.asarray([b[3] for b in batch], dtype=np.float64)
    _check_inputs(params.spec, alphas[0], us[0], xs[0])
    l_stack = stack_family(params.l_nets)
    b_stack = stack_family(params.b_nets)
    t_stack = stack_family(params.tau_nets)
    _, d_theta, dl, db, dt = batch_loss_grad_stacked(
        params.theta, l_stack, b_stack, t_stack, params.spec.clip_a,
        alphas, us, xs, targets,
    )

    def bundles(dws, dbs, nets):
        return [
            relu_net.GradBundle(
                [dw[qi].copy() for dw in dws], [dbv[qi].copy() for dbv in dbs]
            )
            for qi in range(len(nets))
        ]

    return MnoGrads(
        d_theta,
        bundles(dl[0], dl[1], params.l_nets),
        bundles(db[0], db[1], params.b_nets),
        bundles(dt[0], dt[1], params.tau_nets),
    )


def mno_project(params: MnoParams) -> MnoParams:
    """Clamp theta to [-I, I] and project every subnetwork onto its class."""
    out = params.copy()
    bound = params.spec.coeff_bound_I
    np.clip(out.theta, -bound, bound, out=out.theta)
    out.l_nets = [relu_net.project_to_class(n) for n in out.l_nets]
    out.b_nets = [relu_net.project_to_class(n) for n in out.b_nets]
    out.tau_nets = [relu_net.project_to_class(n) for n in out.tau_nets]
    return out


def init_mno_params(spec: MnoSpec, rng: np.random.Generator) -> MnoParams:
    """Seeded initialization keeping initial outputs O(1).

    theta ~ U(-I/sqrt(PHN), I/sqrt(PHN)); subnetwork entries follow
    relu_net.init_mlp.
    """
    scale = spec.coeff_bound_I / math.sqrt(spec.P * spec.H * spec.N)
    theta = rng.uniform(-scale, scale, size=(spec.P, spec.H, spec.N))
    l_nets = [relu_net.init_mlp(spec.spec_l, rng) for _ in range(spec.P)]
    b_nets = [relu_net.init_mlp(spec.spec_b, rng) for _ in range(spec.H)]
    tau_nets = [relu_net.init_mlp(spec.spec_tau, rng) for _ in range(spec.N)]
    return MnoParams(theta, l_nets, b_nets, tau_nets, spec)


@dataclass(frozen=True)
class ArchPrescription:
    """Output of the theory-mode architecture prescriber.

    ``p_raw/h_raw/n_raw`` are the real-valued counts from the sizing
    formulas; ``p_count`` etc. are their ceilings.  The model itself uses the
    exponentiated multiplicities ``p_count**n_cW``, ``h_count**n_cU`` and
    ``n_count**d_V``, which appear in ``mno_spec``.
    """

    mode: str
    n_raw: float
    h_raw: float
    p_raw: float
    n_count: int
    h_count: int
    p_count: int
    n_terms: int
    h_terms: int
    p_terms: int
    mno_spec: MnoSpec

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "N_raw": self.n_raw,
            "H_raw": self.h_raw,
            "P_raw": self.p_raw,
            "N": self.n_count,
            "H": self.h_count,
            "P": self.p_count,
            "N_terms": self.n_terms,
            "H_terms": self.h_terms,
            "P_terms": self.p_terms,
            "mno_spec": self.mno_spec.to_dict(),
        }


def _ceil_at_least_one(v: float) -> int:
    if not math.isfinite(v):
        raise DomainError(f"prescribed count {v} is not finite")
    return max(1, math.ceil(v))


def prescribe_architecture(eps: float, d_V: int, n_cW: int, n_cU: int,
                           constants, mode: str = "halved") -> ArchPrescription:
    """Theory-mode sizing of the separable model for target accuracy eps.

    ``constants`` is an ``entropy_bounds.BoundConstants`` (or any object with
    the same attributes).  ``mode`` selects between the two published
    prefactor variants: "base" uses the plain approximation sizing
    (N ~ 2^(n_cW+2) ..., P = 2 C'' sqrt(n_cW)/eps), "halved" the variant used
    by the generalization bound (N ~ 2^(2 n_cW+3) ..., P = 4 C''
    sqrt(n_cW)/eps).  Hidden O(1) factors are ``constants.hidden_O``
    (default 1).  Subnetwork output bounds are fixed at R = 1.
    """
    if eps <= 0:
        raise DomainError(f"eps must be positive, got {eps}")
    if mode not in ("base", "halved"):
        raise DomainError(f"mode must be 'base' or 'halved', got {mode!r}")
    for name in ("C", "C_prime", "C_dprime"):
        if getattr(constants, name) <= 0:
            raise DomainError(f"constant {name} must be strictly positive")
    if constants.I < constants.beta_V:
        raise DomainError(
            f"coefficient bound I={constants.I} must be at least "
            f"beta_V={constants.beta_V}"
        )
    o1 = getattr(constants, "hidden_O", 1.0)
    c, c2, c3 = constants.C, constants.C_prime, constants.C_dprime
    ln_inv_eps = math.log(1.0 / eps)
    a3 = c3 * math.sqrt(n_cW)  # C'' sqrt(n_cW)
    a1 = c * math.sqrt(d_V)  # C  sqrt(d_V)

    if mode == "base":
        n_raw = 2.0 ** (n_cW + 2) * a1 * a3**n_cW * eps ** -(n_cW + 1)
        p_raw = 2.0 * c3 * math.sqrt(n_cW) / eps
        h_raw = (
            2.0 ** ((d_V + 1) * (n_cW + 2))
            * c2
            * math.sqrt(n_cU)
            * a1**d_V
            * a3 ** (n_cW * (d_V + 1))
            * eps ** -((d_V + 1) * (1 + n_cW))
        )
        extra_log2 = math.log(2.0)
        kappa1 = (
            d_V ** (d_V / 2.0 + 1)
            * eps ** -((d_V + 1) * (n_cW + 1))
            * (2.0 ** (n_cW + 2) * a3**n_cW) ** (d_V + 1)
        )
        kappa2_eps = eps
        kappa3 = n_cW ** (n_cW / 2.0 + 1) * 2.0 ** (n_cW + 1) * eps ** -(n_cW + 1)
    else:
        n_raw = 2.0 ** (2 * n_cW + 3) * a1 * a3**n_cW * eps ** -(n_cW + 1)
        p_raw = 4.0 * c3 * math.sqrt(n_cW) / eps
        h_raw = (
            2.0 ** (3 + 2 * n_cW + 3 * d_V + 2 * d_V * n_cW)
            * c2
            * math.sqrt(n_cU)
            * a1**d_V
            * a3 ** (n_cW * (d_V + 1))
            * eps ** -((d_V + 1) * (1 + n_cW))
        )
        extra_log2 = 0.0
        kappa1 = (
            2.0 ** ((d_V + 1) * (n_cW + 1))
            * d_V ** (d_V / 2.0 + 1)
            * eps ** -((d_V + 1) * (n_cW + 1))
            * (2.0 ** (n_cW + 2) * a3**n_cW) ** (d_V + 1)
        )
        kappa2_eps = eps / 2.0
        kappa3 = (
            n_cW ** (n_cW / 2.0 + 1)
            * 2.0 ** (n_cW + 1)
            * eps ** -(n_cW + 1)
            * 2.0 ** (n_cW + 1)
        )

    size1 = (
        d_V**2 * math.log(max(d_V, 1))
        + d_V**2 * (n_cW + 1) * ln_inv_eps
        + d_V**2 * math.log(2.0 ** (n_cW + 1) * a3**n_cW)
        + d_V**2 * extra_log2
    )
    size2 = (
        n_cU**2 * math.log(max(n_cU, 1))
        + n_cU**2 * (d_V + 1) * (n_cW + 1) * ln_inv_eps
        + n_cU**2 * math.log(2.0 ** (d_V + 1) * a1**d_V)
        + n_cU**2 * (d_V + 1) * math.log(2.0 ** (n_cW + 1) * a3**n_cW)
        + n_cU**2 * extra_log2
    )
    size3 = (
        n_cW**2 * math.log(max(n_cW, 1))
        + n_cW**2 * ln_inv_eps
        + n_cW**2 * extra_log2
    )
    kappa2 = (
        n_cU ** (n_cU / 2.0 + 1)
        * kappa2_eps ** -((d_V + 1) * (n_cU + 1) * (n_cW + 1))
        * (2.0 ** (d_V + 2) * a1**d_V) ** (n_cU + 1)
        * (2.0 ** (d_V + 1) * a1**d_V) ** ((d_V + 1) * (n_cU + 1))
    )

    def cls(d_in, size, kappa):
        depth = _ceil_at_least_one(o1 * size)
        return NetClassSpec(
            d_in=d_in,
            d_out=1,
            depth_L=depth,
            width_p=_ceil_at_least_one(o1),
            sparsity_K=_ceil_at_least_one(o1 * size),
            magnitude_kappa=max(1.0, o1 * kappa),
            output_R=1.0,
        )

    spec_tau = cls(d_V, size1, kappa1)
    spec_b = cls(n_cU, size2, kappa2)
    spec_l = cls(n_cW, size3, kappa3)
    n_count = _ceil_at_least_one(n_raw)
    h_count = _ceil_at_least_one(h_raw)
    p_count = _ceil_at_least_one(p_raw)
    mno_spec = MnoSpec(
        P=p_count**n_cW,
        H=h_count**n_cU,
        N=n_count**d_V,
        spec_l=spec_l,
        spec_b=spec_b,
        spec_tau=spec_tau,
        coeff_bound_I=constants.I,
        clip_a=constants.beta_V,
    )
    return ArchPrescription(
        mode=mode,
        n_raw=n_raw,
        h_raw=h_raw,
        p_raw=p_raw,
        n_count=n_count,
        h_count=h_count,
        p_count=p_count,
        n_terms=n_count**d_V,
        h_terms=h_count**n_cU,
        p_terms=p_count**n_cW,
        mno_spec=mno_spec,
    )
