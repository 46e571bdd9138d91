"""Constrained feedforward ReLU networks.

A network class is described by seven architectural constraints: input and
output dimension, number of affine layers L, maximal hidden width p, a budget
K on the total number of nonzero parameters, a magnitude cap kappa on every
weight and bias, and a sup-norm output bound R.  Parameters live in plain
dense arrays; sparsity is a constraint enforced by projection, not a storage
format.

Conventions used throughout:
  * a depth-1 network is a pure affine map (no activation),
  * the ReLU subgradient at 0 is taken to be 0,
  * ``clip_scalar`` realizes range truncation both as min/max and as an
    exact two-layer ReLU expression.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, ShapeError


@dataclass(frozen=True)
class NetClassSpec:
    """Architectural constraints of a feedforward ReLU network class."""

    d_in: int
    d_out: int
    depth_L: int
    width_p: int
    sparsity_K: int
    magnitude_kappa: float
    output_R: float

    def __post_init__(self):
        for name in ("d_in", "d_out", "depth_L", "width_p", "sparsity_K"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise DomainError(f"{name} must be a positive integer, got {v!r}")
        if self.magnitude_kappa < 1.0:
            raise DomainError(
                f"magnitude_kappa must be >= 1, got {self.magnitude_kappa}"
            )
        if self.output_R <= 0:
            raise DomainError(f"output_R must be positive, got {self.output_R}")

    @property
    def max_param_count(self) -> int:
        """Total parameter slots L*(p^2 + p) used by the covering formulas."""
        return self.depth_L * (self.width_p**2 + self.width_p)

    def to_dict(self) -> dict:
        return {
            "d_in": self.d_in,
            "d_out": self.d_out,
            "depth_L": self.depth_L,
            "width_p": self.width_p,
            "sparsity_K": self.sparsity_K,
            "magnitude_kappa": float(self.magnitude_kappa),
            "output_R": float(self.output_R),
        }

    @staticmethod
    def from_dict(d: dict) -> "NetClassSpec":
        return NetClassSpec(
            d_in=int(d["d_in"]),
            d_out=int(d["d_out"]),
            depth_L=int(d["depth_L"]),
            width_p=int(d["width_p"]),
            sparsity_K=int(d["sparsity_K"]),
            magnitude_kappa=float(d["magnitude_kappa"]),
            output_R=float(d["output_R"]),
        )


@dataclass
class MlpParams:
    """Dense parameters W_1..W_L, b_1..b_L of one network in a class."""

    weights: list
    biases: list
    spec: NetClassSpec

    def __post_init__(self):
        self.weights = [np.asarray(w, dtype=np.float64) for w in self.weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in self.biases]
        s = self.spec
        if len(self.weights) != s.depth_L or len(self.biases) != s.depth_L:
            raise ShapeError(
                f"expected {s.depth_L} weight/bias pairs, got "
                f"{len(self.weights)}/{len(self.biases)}"
            )
        prev = s.d_in
        for ell, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.ndim != 1:
                raise ShapeError(f"layer {ell}: W must be 2-d and b 1-d")
            if w.shape[1] != prev:
                raise ShapeError(
                    f"layer {ell}: expected {prev} input columns, got {w.shape[1]}"
                )
            if w.shape[0] != b.shape[0]:
                raise ShapeError(f"layer {ell}: W rows and b length differ")
            is_last = ell == s.depth_L - 1
            if is_last:
                if w.shape[0] != s.d_out:
                    raise ShapeError(
                        f"output layer has {w.shape[0]} rows, expected {s.d_out}"
                    )
            elif w.shape[0] > s.width_p:
                raise ShapeError(
                    f"layer {ell}: width {w.shape[0]} exceeds bound {s.width_p}"
                )
            prev = w.shape[0]

    def copy(self) -> "MlpParams":
        return MlpParams(
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            self.spec,
        )

    def nonzero_count(self) -> int:
        return int(
            sum(np.count_nonzero(w) for w in self.weights)
            + sum(np.count_nonzero(b) for b in self.biases)
        )

    def max_abs_param(self) -> float:
        vals = [np.max(np.abs(w), initial=0.0) for w in self.weights]
        vals += [np.max(np.abs(b), initial=0.0) for b in self.biases]
        return float(max(vals))

    def satisfies_class(self) -> bool:
        """Whether the kappa and K constraints currently hold."""
        return (
            self.max_abs_param() <= self.spec.magnitude_kappa + 1e-15
            and self.nonzero_count() <= self.spec.sparsity_K
        )

    def to_dict(self) -> dict:
        return {
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }


@dataclass
class GradBundle:
    """One gradient array per parameter array of an MlpParams."""

    d_weights: list
    d_biases: list

    def as_flat(self) -> np.ndarray:
        parts = [g.ravel() for g in self.d_weights] + [
            g.ravel() for g in self.d_biases
        ]
        return np.concatenate(parts)


def forward(params: MlpParams, x) -> np.ndarray:
    """Evaluate q(x) = W_L ReLU(W_{L-1} ... ReLU(W_1 x + b_1) ...) + b_L.

    A depth-1 network is affine; no activation is applied to the input or
    the output.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (params.spec.d_in,):
        raise ShapeError(
            f"input has shape {x.shape}, expected ({params.spec.d_in},)"
        )
    h = x
    last = len(params.weights) - 1
    for ell, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = w @ h + b
        if ell != last:
            h = np.maximum(h, 0.0)
    return h


def clip_scalar(a: float, v):
    """Truncate v to [-a, a] via min/max.  Works elementwise on arrays."""
    if a <= 0:
        raise DomainError(f"clip bound must be positive, got {a}")
    return np.minimum(np.maximum(v, -a), a)


def clip_scalar_relu(a: float, v):
    """The same truncation written as -ReLU(-ReLU(v + a) + 2a) + a."""
    if a <= 0:
        raise DomainError(f"clip bound must be positive, got {a}")
    inner = np.maximum(np.asarray(v, dtype=np.float64) + a, 0.0)
    return -np.maximum(-inner + 2.0 * a, 0.0) + a


def backprop(params: MlpParams, x, upstream) -> GradBundle:
    """Gradient of upstream . q(x) with respect to every parameter.

    The ReLU derivative at 0 is 0, so dead units propagate no signal.
    """
    x = np.asarray(x, dtype=np.float64)
    upstream = np.asarray(upstream, dtype=np.float64)
    if x.shape != (params.spec.d_in,):
        raise ShapeError(f"input has shape {x.shape}")
    if upstream.shape != (params.spec.d_out,):
        raise ShapeError(
            f"upstream has shape {upstream.shape}, expected ({params.spec.d_out},)"
        )
    # forward pass keeping post-activation values
    acts = [x]
    h = x
    last = len(params.weights) - 1
    for ell, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = w @ h + b
        if ell != last:
            h = np.maximum(h, 0.0)
            acts.append(h)
    d_weights = [np.zeros_like(w) for w in params.weights]
    d_biases = [np.zeros_like(b) for b in params.biases]
    delta = upstream
    for ell in range(last, -1, -1):
        d_weights[ell] = np.outer(delta, acts[ell])
        d_biases[ell] = delta.copy()
        if ell > 0:
            delta = (params.weights[ell].T @ delta) * (acts[ell] > 0.0)
    return GradBundle(d_weights, d_biases)


def project_to_class(params: MlpParams) -> MlpParams:
    """Clamp to [-kappa, kappa] and zero smallest-magnitude entries down to K.

    Ties are broken deterministically: earliest layer first, weights before
    biases within a layer, then row-major position.
    """
    kappa = params.spec.magnitude_kappa
    out = params.copy()
    for arr in out.weights + out.biases:
        np.clip(arr, -kappa, kappa, out=arr)
    nnz = out.nonzero_count()
    excess = nnz - params.spec.sparsity_K
    if excess <= 0:
        return out
    mags, layers, kinds, flats = [], [], [], []
    for ell in range(len(out.weights)):
        for kind, arr in ((0, out.weights[ell]), (1, out.biases[ell])):
            flat = arr.ravel()
            nz = np.flatnonzero(flat)
            mags.append(np.abs(flat[nz]))
            layers.append(np.full(nz.shape, ell))
            kinds.append(np.full(nz.shape, kind))
            flats.append(nz)
    mags = np.concatenate(mags)
    layers = np.concatenate(layers)
    kinds = np.concatenate(kinds)
    flats = np.concatenate(flats)
    order = np.lexsort((flats, kinds, layers, mags))
    for idx in order[:excess]:
        arr = out.weights[layers[idx]] if kinds[idx] == 0 else out.biases[layers[idx]]
        arr.ravel()[flats[idx]] = 0.0
    return out


def class_bounds(spec: NetClassSpec, x_inf_norm: float):
    """Closed-form class-level bounds used by the covering calculator.

    Returns (output_bound, param_lipschitz) where

        output_bound    = kappa^L (p+1)^(L-1) (p |x| + 1)
        param_lipschitz = L kappa^(L-1) (p+1)^(L-1) (p |x| + 1)

    so that any network output is bounded by the first value and the output
    gap between two networks is at most the second value times their maximum
    parameter discrepancy.
    """
    if spec.magnitude_kappa < 1.0:
        raise DomainError("class bounds require kappa >= 1")
    if x_inf_norm < 0:
        raise DomainError("x_inf_norm must be nonnegative")
    L, p, kappa = spec.depth_L, spec.width_p, spec.magnitude_kappa
    tail = (p + 1.0) ** (L - 1) * (p * x_inf_norm + 1.0)
    return kappa**L * tail, L * kappa ** (L - 1) * tail


def param_distance(a: MlpParams, b: MlpParams) -> float:
    """Maximum parameter discrepancy between two shape-congruent networks."""
    d = 0.0
    for wa, wb in zip(a.weights, b.weights):
        d = max(d, float(np.max(np.abs(wa - wb), initial=0.0)))
    for ba, bb in zip(a.biases, b.biases):
        d = max(d, float(np.max(np.abs(ba - bb), initial=0.0)))
    return d


def init_mlp(spec: NetClassSpec, rng: np.random.Generator) -> MlpParams:
    """Random feasible parameters: all hidden layers at full width,
    entries uniform in +-min(kappa,1)/sqrt(p)."""
    scale = min(spec.magnitude_kappa, 1.0) / np.sqrt(spec.width_p)
    dims = [spec.d_in] + [spec.width_p] * (spec.depth_L - 1) + [spec.d_out]
    weights, biases = [], []
    for ell in range(spec.depth_L):
        weights.append(rng.uniform(-scale, scale, size=(dims[ell + 1], dims[ell])))
        biases.append(rng.uniform(-scale, scale, size=dims[ell + 1]))
    return project_to_class(MlpParams(weights, biases, spec))
