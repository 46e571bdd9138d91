"""Log-domain evaluation of covering-number, metric-entropy, and
generalization-bound formulas.

Theory-mode quantities overflow 64-bit floats, so every covering count is
returned as a natural log (``LogReal``).  Binomials go through lgamma.
Floor terms of the form floor(v) + 1 are evaluated exactly in direct float
arithmetic whenever v fits the exact-integer range of a double; otherwise
the floor is dropped (which preserves the upper-bound direction) and the
result is flagged as relaxed.  Nested-exponential quantities are computed
with mpmath and reported as floats (inf when past the float range).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import mpmath as mp

from .errors import DomainError
from .mno import MnoSpec
from .relu_net import NetClassSpec

_MAX_EXACT = 2.0**53


@dataclass(frozen=True)
class BoundConstants:
    """Every scalar entering the sizing and bound formulas.

    The constants C, C', C'', C_delta, C_zeta and the exponent constants
    gamma_1, gamma_2 are unspecified by the theory and default to 1, as does
    the single hidden-O(1) multiplier ``hidden_O`` used by the architecture
    prescriber.
    """

    C: float = 1.0
    C_prime: float = 1.0
    C_dprime: float = 1.0
    C_delta: float = 1.0
    C_zeta: float = 1.0
    sigma: float = 0.0
    beta_V: float = 1.0
    beta_U: float = 1.0
    beta_W: float = 1.0
    gamma_V: float = 1.0
    I: float = 1.0
    d_W: int = 1
    d_U: int = 1
    d_V: int = 1
    n_cW: int = 1
    n_cU: int = 1
    gamma_1: float = 1.0
    gamma_2: float = 1.0
    hidden_O: float = 1.0

    def __post_init__(self):
        for name in ("C", "C_prime", "C_dprime", "C_delta", "C_zeta",
                     "beta_V", "beta_U", "beta_W", "gamma_V", "I",
                     "gamma_1", "gamma_2", "hidden_O"):
            if getattr(self, name) <= 0:
                raise DomainError(f"{name} must be strictly positive")
        if self.sigma < 0:
            raise DomainError("sigma must be nonnegative")
        for name in ("d_W", "d_U", "d_V", "n_cW", "n_cU"):
            if getattr(self, name) < 1:
                raise DomainError(f"{name} must be a positive integer")


@dataclass(frozen=True)
class LogReal:
    """A nonnegative real stored as (sign, natural log).

    sign 0 encodes the value 0 (log_value ignored).  ``floor_relaxed``
    records whether any floor in the formula was dropped because its
    argument exceeded the exact-integer range.
    """

    log_value: float
    sign: int = 1
    floor_relaxed: bool = False

    def value(self) -> float:
        if self.sign == 0:
            return 0.0
        try:
            return math.exp(self.log_value)
        except OverflowError:
            return math.inf


def _log_binom(n: int, k: int) -> float:
    """log binom(n, k) with k clamped into [0, n]."""
    k = min(max(k, 0), n)
    return (
        math.lgamma(n + 1) - math.lgamma(k + 1) - math.lgamma(n - k + 1)
    )


def _floor_term(direct: float, log_val: float):
    """(log(floor(v) + 1), relaxed) given v both directly and in log form.

    ``direct`` may be inf when the product overflowed; the log form is then
    used with the floor dropped.
    """
    if math.isfinite(direct):
        if direct < 0:
            raise DomainError("floor argument must be nonnegative")
        if direct <= _MAX_EXACT:
            return math.log(math.floor(direct) + 1.0), False
        return math.log(direct) + math.log1p(1.0 / direct), True
    return log_val, True


def log_net_covering(spec: NetClassSpec, x_inf_norm: float, eta: float) -> LogReal:
    """Log covering number of one constrained ReLU network class:

        binom(L(p^2+p), K) * (floor(L kappa^L (p+1)^(L-1) (p|x|+1) / eta) + 1)^K
    """
    if eta <= 0:
        raise DomainError("eta must be positive")
    if spec.magnitude_kappa < 1.0:
        raise DomainError("covering formula requires kappa >= 1")
    L, p, K, kappa = (
        spec.depth_L,
        spec.width_p,
        spec.sparsity_K,
        spec.magnitude_kappa,
    )
    direct = L * kappa**L * (p + 1.0) ** (L - 1) * (p * x_inf_norm + 1.0) / eta
    log_val = (
        math.log(L)
        + L * math.log(kappa)
        + (L - 1) * math.log(p + 1.0)
        + math.log(p * x_inf_norm + 1.0)
        - math.log(eta)
    )
    term, relaxed = _floor_term(direct, log_val)
    return LogReal(
        _log_binom(spec.max_param_count, K) + K * term,
        floor_relaxed=relaxed,
    )


def log_F(L: int, p: int, K: int, kappa: float, h: float) -> LogReal:
    """Log of F(L, p, K, kappa, h) = binom(L(p^2+p), K) (floor(2 kappa/h)+1)^K."""
    if h <= 0:
        raise DomainError("h must be positive")
    direct = 2.0 * kappa / h
    log_val = math.log(2.0) + math.log(kappa) - math.log(h)
    term, relaxed = _floor_term(direct, log_val)
    return LogReal(
        _log_binom(L * (p**2 + p), K) + K * term,
        floor_relaxed=relaxed,
    )


def _class_term(spec: NetClassSpec, norm: float, coeff_bound: float,
                other_R: float):
    """One bracket term I * R_j R_k * L kappa^(L-1) (p+1)^(L-1) (p*norm+1)."""
    L, p, kappa = spec.depth_L, spec.width_p, spec.magnitude_kappa
    log_val = (
        math.log(coeff_bound)
        + math.log(other_R)
        + math.log(L)
        + (L - 1) * (math.log(kappa) + math.log(p + 1.0))
        + math.log(p * norm + 1.0)
    )
    direct = (
        coeff_bound
        * other_R
        * L
        * kappa ** (L - 1)
        * (p + 1.0) ** (L - 1)
        * (p * norm + 1.0)
    )
    return log_val, direct


def _covering_T_values(mno_spec: MnoSpec, norms):
    """(log T, direct T) of the quantization sensitivity constant T."""
    gamma_v, beta_u, beta_w = norms
    for s in (mno_spec.spec_l, mno_spec.spec_b, mno_spec.spec_tau):
        if s.magnitude_kappa < 1.0:
            raise DomainError("covering formula requires kappa >= 1")
    bound_i = mno_spec.coeff_bound_I
    r1 = mno_spec.spec_tau.output_R
    r2 = mno_spec.spec_b.output_R
    r3 = mno_spec.spec_l.output_R
    terms = [
        _class_term(mno_spec.spec_tau, gamma_v, bound_i, r2 * r3),
        _class_term(mno_spec.spec_b, beta_u, bound_i, r1 * r3),
        _class_term(mno_spec.spec_l, beta_w, bound_i, r1 * r2),
        (math.log(r1) + math.log(r2) + math.log(r3), r1 * r2 * r3),
    ]
    logs = [t[0] for t in terms]
    m = max(logs)
    log_bracket = m + math.log(sum(math.exp(v - m) for v in logs))
    phn = mno_spec.P * mno_spec.H * mno_spec.N
    log_t = math.log(phn) + log_bracket
    try:
        direct_bracket = sum(t[1] for t in terms)
        direct_t = float(phn) * direct_bracket
    except OverflowError:
        direct_t = math.inf
    return log_t, direct_t


def covering_T(mno_spec: MnoSpec, norms) -> LogReal:
    """Log of T = P H N [sum of the three class sensitivities + R1 R2 R3]."""
    log_t, _ = _covering_T_values(mno_spec, norms)
    return LogReal(log_t)


def log_mno_covering(mno_spec: MnoSpec, norms, eta: float) -> LogReal:
    """Log covering number of the clipped separable model class at scale eta.

    With h = 2 eta / T the count is
        [ (floor(2I/h)+1) F(l-class) F(b-class) F(tau-class) ]^(P H N),
    where each F is evaluated at step h.  Note 2c/h = c T / eta for any c.
    """
    if eta <= 0:
        raise DomainError("eta must be positive")
    log_t, direct_t = _covering_T_values(mno_spec, norms)
    relaxed = False

    def floor_part(c: float):
        nonlocal relaxed
        direct = c * direct_t / eta if math.isfinite(direct_t) else math.inf
        log_val = math.log(c) + log_t - math.log(eta)
        term, rel = _floor_term(direct, log_val)
        relaxed = relaxed or rel
        return term

    inner = floor_part(mno_spec.coeff_bound_I)
    for s in (mno_spec.spec_l, mno_spec.spec_b, mno_spec.spec_tau):
        inner += _log_binom(s.max_param_count, s.sparsity_K)
        inner += s.sparsity_K * floor_part(s.magnitude_kappa)
    phn = mno_spec.P * mno_spec.H * mno_spec.N
    try:
        total = float(phn) * inner
    except OverflowError:
        total = math.inf
    return LogReal(total, floor_relaxed=relaxed)


@dataclass(frozen=True)
class EntropyEpsResult:
    delta1: float
    delta2: float
    log_of_logN_bound: float
    additive_clamped: bool = False


def entropy_deltas(d_W: int, d_U: int, d_V: int):
    """The two exponents of the accuracy-driven metric-entropy bound."""
    delta2 = d_U * (1 + d_V) * (1 + d_W / 2.0)
    delta1 = delta2 + d_W * (d_V + 1) / 2.0 + (d_V + 1)
    return delta1, delta2


def entropy_eps(eps: float, eta: float, d_W: int, d_U: int,
                d_V: int) -> EntropyEpsResult:
    """ln of the metric-entropy bound under accuracy-driven sizing:

        ln(bound on log N) = -delta1 * eps^(-delta2 eps^(-d_W)) * ln(eps)
                             + ln(1 + ln(1/eta)).

    Computed in extended precision; inf is returned past the float range.
    For eta >= e the additive term is clamped at ln(tiny) and flagged.
    """
    if eps <= 0:
        raise DomainError("eps must be positive")
    if eta <= 0:
        raise DomainError("eta must be positive")
    delta1, delta2 = entropy_deltas(d_W, d_U, d_V)
    with mp.workdps(60):
        e = mp.mpf(eps)
        nested = mp.exp(-delta2 * mp.power(e, -d_W) * mp.log(e))
        main = -delta1 * nested * mp.log(e)
        additive_arg = 1.0 + math.log(1.0 / eta)
        clamped = additive_arg <= 0.0
        additive = math.log(max(additive_arg, 1e-300))
        total = main + additive
        value = float(total) if total < mp.mpf(1e308) else math.inf
    return EntropyEpsResult(delta1, delta2, value, clamped)


def generalization_bound_rhs(eps: float, eta: float, n_alpha: int, n_u: int,
                             n_x: int, sigma: float, beta_V: float,
                             logN_eta: float, logN_eta_scaled: float) -> float:
    """The explicit risk bound

        4 eps^2 + eta (8 sigma + 6)
        + (8 sigma eta / sqrt(n_a n_u n_x)) sqrt(logN(eta) + ln 2)
        + (16 sigma^2 / (n_a n_u n_x)) (logN(eta) + ln 2)
        + (112 beta_V^2 / (3 n_a)) logN(eta / (4 beta_V)).

    logN inputs are natural logs of the covering numbers at scales eta and
    eta/(4 beta_V).
    """
    for name, v in (("n_alpha", n_alpha), ("n_u", n_u), ("n_x", n_x)):
        if v < 1:
            raise DomainError(f"{name} must be >= 1")
    if logN_eta < 0 or logN_eta_scaled < 0:
        raise DomainError("logN inputs must be nonnegative")
    n_all = n_alpha * n_u * n_x
    return (
        4.0 * eps**2
        + eta * (8.0 * sigma + 6.0)
        + 8.0 * sigma * eta / math.sqrt(n_all) * math.sqrt(logN_eta + math.log(2.0))
        + 16.0 * sigma**2 / n_all * (logN_eta + math.log(2.0))
        + 112.0 * beta_V**2 / (3.0 * n_alpha) * logN_eta_scaled
    )


class RateSchedule(NamedTuple):
    eps: float
    eta: float
    rate: float


def rate_schedule(n_alpha: int, d_W: int, d_U: int, d_V: int,
                  beta_V: float) -> RateSchedule:
    """The balancing schedule in the operator-sampling budget:

        eps  = ((d_W / 2 delta2) * loglog(n) / logloglog(n))^(-1/d_W)
        eta  = 4 beta_V / n
        rate = 4 eps^2   (leading term; constants fixed by this convention).

    Requires logloglog(n_alpha) > 0, i.e. n_alpha >= 16.
    """
    if n_alpha < 16 or math.log(math.log(math.log(n_alpha))) <= 0:
        raise DomainError(
            "rate schedule needs n_alpha >= 16 (logloglog must be positive)"
        )
    _, delta2 = entropy_deltas(d_W, d_U, d_V)
    ll = math.log(math.log(n_alpha))
    lll = math.log(ll)
    eps = (d_W / (2.0 * delta2) * ll / lll) ** (-1.0 / d_W)
    eta = 4.0 * beta_V / n_alpha
    return RateSchedule(eps=eps, eta=eta, rate=4.0 * eps**2)


def param_count_scaling(eps: float, gamma1: float, gamma2: float,
                        d_W: int) -> float:
    """ln of the effective nonzero-parameter bound
    N_# <= eps^(-gamma1 eps^(-gamma2 eps^(-d_W)))."""
    if not (0.0 < eps < 1.0):
        raise DomainError("eps must lie in (0, 1)")
    if gamma1 <= 0 or gamma2 <= 0:
        raise DomainError("gamma1 and gamma2 must be positive")
    with mp.workdps(60):
        e = mp.mpf(eps)
        nested = mp.exp(-gamma2 * mp.power(e, -d_W) * mp.log(e))
        total = -gamma1 * nested * mp.log(e)
        return float(total) if total < mp.mpf(1e308) else math.inf


def bounds_report(mno_spec: MnoSpec, constants: BoundConstants, eps: float,
                  eta: float, n_alpha: int, n_u: int, n_x: int,
                  mode: str = "halved") -> dict:
    """Full JSON-serializable report with every intermediate quantity."""
    norms = (constants.gamma_V, constants.beta_U, constants.beta_W)
    log_t, direct_t = _covering_T_values(mno_spec, norms)
    h = 2.0 * eta / direct_t if math.isfinite(direct_t) else 0.0
    log_n_eta = log_mno_covering(mno_spec, norms, eta)
    eta_scaled = eta / (4.0 * constants.beta_V)
    log_n_scaled = log_mno_covering(mno_spec, norms, eta_scaled)
    ent = entropy_eps(eps, eta, constants.d_W, constants.d_U, constants.d_V)
    rhs = generalization_bound_rhs(
        eps, eta, n_alpha, n_u, n_x, constants.sigma, constants.beta_V,
        log_n_eta.log_value, log_n_scaled.log_value,
    )
    n_all = n_alpha * n_u * n_x
    terms = {
        "approx_4eps2": 4.0 * eps**2,
        "net_scale_eta": eta * (8.0 * constants.sigma + 6.0),
        "noise_cross": 8.0 * constants.sigma * eta / math.sqrt(n_all)
        * math.sqrt(log_n_eta.log_value + math.log(2.0)),
        "noise_quad": 16.0 * constants.sigma**2 / n_all
        * (log_n_eta.log_value + math.log(2.0)),
        "estimation": 112.0 * constants.beta_V**2 / (3.0 * n_alpha)
        * log_n_scaled.log_value,
    }
    per_class = {}
    if math.isfinite(direct_t) and h > 0:
        for role, s in (
            ("l", mno_spec.spec_l),
            ("b", mno_spec.spec_b),
            ("tau", mno_spec.spec_tau),
        ):
            f = log_F(s.depth_L, s.width_p, s.sparsity_K, s.magnitude_kappa, h)
            per_class[role] = {
                "log_F": f.log_value,
                "floor_relaxed": f.floor_relaxed,
            }
    rate = None
    if n_alpha >= 16:
        rs = rate_schedule(n_alpha, constants.d_W, constants.d_U,
                           constants.d_V, constants.beta_V)
        rate = {"eps": rs.eps, "eta": rs.eta, "rate": rs.rate}
    return {
        "mode": mode,
        "inputs": {
            "eps": eps,
            "eta": eta,
            "n_alpha": n_alpha,
            "n_u": n_u,
            "n_x": n_x,
            "sigma": constants.sigma,
            "beta_V": constants.beta_V,
        },
        "delta1": ent.delta1,
        "delta2": ent.delta2,
        "log_of_logN_bound_eps": ent.log_of_logN_bound,
        "additive_clamped": ent.additive_clamped,
        "log_T": log_t,
        "T_direct": direct_t if math.isfinite(direct_t) else None,
        "h": h if h > 0 else None,
        "per_class_log_F": per_class,
        "logN_eta": log_n_eta.log_value,
        "logN_eta_floor_relaxed": log_n_eta.floor_relaxed,
        "logN_eta_scaled": log_n_scaled.log_value,
        "logN_eta_scaled_floor_relaxed": log_n_scaled.floor_relaxed,
        "bound_terms": terms,
        "bound_total": rhs,
        "rate_schedule": rate,
    }
