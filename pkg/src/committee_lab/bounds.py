"""Closed-form bounds, floors, oracle curves and sizing rules."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

from scipy import integrate, stats

from committee_lab.roles import LatentModel
from committee_lab.state_system import ConfigError

QUAD_TOL = 1e-10


class IntegrationError(RuntimeError):
    pass


class UndefinedRecovery(ValueError):
    pass


def clamp01(x: float) -> float:
    return min(1.0, max(0.0, x))


@dataclass(frozen=True)
class PropSplit:
    """``eps = blind + residual`` for the local oracle miss."""

    eps: float
    blind: float
    residual: float


def _beta_residual(a: float, b: float, k: float) -> float:
    if math.isinf(k):
        return 0.0
    dist = stats.beta(a, b)
    val, err = integrate.quad(lambda q: (1.0 - q) ** k * dist.pdf(q), 0.0, 1.0,
                              epsabs=QUAD_TOL, epsrel=0.0, limit=200)
    if err > QUAD_TOL:
        raise IntegrationError(f"quadrature error {err:.3g} exceeds {QUAD_TOL}")
    return val


def eps_prop_exchangeable(model: LatentModel, k: float) -> PropSplit:
    """``E[(1 - q(Z))^k]`` split into blind-spot mass and finite-k residual.

    ``k`` may be ``math.inf`` for the limiting floor.
    """
    if model.kind == "beta-mixture":
        blind = model.blind_mass_beta
        residual = math.fsum(w * _beta_residual(a, b, k) for w, a, b in model.beta_components)
        return PropSplit(blind + residual, blind, residual)
    if model.n_families != 1:
        raise ConfigError("exchangeable formula needs a single q per atom; use heterogeneous_miss", "latent_kind")
    blind_terms, rest_terms = [], []
    for w, (q,) in model.atoms:
        if q == 0.0:
            blind_terms.append(w)
        else:
            rest_terms.append(0.0 if math.isinf(k) else w * _miss_power(q, k))
    blind = math.fsum(blind_terms)
    residual = math.fsum(rest_terms)
    return PropSplit(math.fsum(blind_terms + rest_terms), blind, residual)


def _miss_power(q: float, k: float) -> float:
    # (1 - q)^k without losing tiny q to rounding in 1 - q
    return 0.0 if q == 1.0 else math.exp(k * math.log1p(-q))


def common_shock_eps(rho: float, alpha: float, k: int) -> float:
    if not (0 <= rho <= 1 and 0 <= alpha <= 1) or k < 1:
        raise ConfigError("need rho, alpha in [0, 1] and k >= 1")
    return math.fsum([rho * (1 - alpha), (1 - rho) * (1 - alpha) ** k])


def round_robin_counts(k: int, portfolio_size: int) -> list[int]:
    """Calls per prompt family when ``k`` calls cycle over the portfolio."""
    return [k // portfolio_size + (1 if g < k % portfolio_size else 0) for g in range(portfolio_size)]


def heterogeneous_miss(model: LatentModel, counts: Sequence[int]) -> tuple[float, float]:
    """Exact ``E[prod_g (1 - q_g)^{n_g}]`` and the bound ``E[exp(-sum_g n_g q_g)]``."""
    if model.kind == "beta-mixture":
        raise ConfigError("heterogeneous miss needs a discrete latent model", "latent_kind")
    exact_terms, bound_terms = [], []
    for w, qs in model.atoms:
        qs = qs * len(counts) if len(qs) == 1 else qs
        if len(qs) < len(counts):
            raise ConfigError("latent table narrower than the call counts", "portfolio_size")
        prod = 1.0
        for q, n in zip(qs, counts):
            prod *= (1.0 - q) ** n
        exact_terms.append(w * prod)
        bound_terms.append(w * math.exp(-math.fsum(n * q for q, n in zip(qs, counts))))
    exact, bound = math.fsum(exact_terms), math.fsum(bound_terms)
    assert exact <= bound + 1e-15, (exact, bound)
    return exact, bound


def eps_prop_for(model: LatentModel, k: int, portfolio_size: int = 1) -> float:
    """Exact local oracle miss for ``k`` round-robin calls."""
    if model.kind == "beta-mixture" or model.n_families == 1:
        return eps_prop_exchangeable(model, k).eps
    return heterogeneous_miss(model, round_robin_counts(k, portfolio_size))[0]


def lower_tail_residual_bound(C: float, a: float, k: int, tau_floor: float | None = None) -> float:
    """Bound on the finite-k residual from a lower-tail condition on q.

    With ``tau_floor`` (q >= tau_floor whenever q > 0) the bound is
    ``exp(-tau_floor k)``.
    """
    if tau_floor is not None:
        return math.exp(-tau_floor * k)
    if C <= 0 or a <= 0:
        raise ConfigError("C and a must be positive")
    t_k = a * math.log(k) / k
    if t_k >= 1:
        raise ConfigError(f"t_k = {t_k:.4g} >= 1 at k={k}; k too small")
    return C * t_k**a + k ** (-a)


def committee_miss_bound(alpha0: float, k: int, portfolio_size: int) -> float:
    """``(1 - alpha0)^floor(k/|P|)``: the good prompt's guaranteed calls all miss."""
    return (1.0 - alpha0) ** (k // portfolio_size)


@dataclass(frozen=True)
class BoundReport:
    eps_prop: float
    id_term: float
    id_term_exp: float
    local_raw: float
    local_exp_raw: float
    global_raw: float | None = None

    @property
    def local(self) -> float:
        return clamp01(self.local_raw)

    @property
    def local_clamped(self) -> bool:
        return self.local_raw > 1.0

    @property
    def global_bound(self) -> float | None:
        return None if self.global_raw is None else clamp01(self.global_raw)

    @property
    def global_clamped(self) -> bool:
        return self.global_raw is not None and self.global_raw > 1.0


def local_error_bound(
    eps_prop: float, k: int, m: int, r: int, beta: float, sigma: float, L: int | None = None
) -> BoundReport:
    """Proposal miss plus the union bound over sound/unsound ordered pairs.

    The tight identification term is ``k^2 (1-beta)^m exp(-2 r sigma^2)``;
    the looser form replaces ``(1-beta)^m`` by ``exp(-beta m)``.
    """
    if not (0 <= beta <= 1 and 0 <= sigma <= 0.5 and 0 <= eps_prop <= 1):
        raise ConfigError("beta, eps_prop must lie in [0, 1] and sigma in [0, 1/2]")
    id_term = k * k * (1.0 - beta) ** m * math.exp(-2.0 * r * sigma * sigma)
    id_exp = k * k * math.exp(-beta * m - 2.0 * r * sigma * sigma)
    local_raw = eps_prop + id_term
    global_raw = None if L is None else L * local_raw
    return BoundReport(eps_prop, id_term, id_exp, local_raw, eps_prop + id_exp, global_raw)


def cumulative_bound(L: int, eps_loc: float) -> float:
    if L < 1:
        raise ConfigError("L must be at least 1")
    return min(1.0, L * eps_loc)


@dataclass(frozen=True)
class SizingResult:
    k: int
    m: int
    r: int
    log_prop: float
    log_id: float
    delta_prop: float
    inputs: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "k": self.k, "m": self.m, "r": self.r,
            "log_2L_over_delta": self.log_prop,
            "log_2k2L_over_delta": self.log_id,
            "delta_prop": self.delta_prop,
            **self.inputs,
        }


def sizing_rule(delta: float, L: int, alpha0: float, beta0: float, sigma0: float, portfolio_size: int) -> SizingResult:
    """Separated choice of ``(k, m, r)`` giving failure probability at most delta.

    Each of the proposal and identification terms is held below
    ``delta / (2L)``; logarithms are natural.
    """
    if min(alpha0, beta0, sigma0) <= 0:
        raise ConfigError("edges alpha0, beta0, sigma0 must be positive")
    if not 0 < delta < 1:
        raise ConfigError("delta must lie in (0, 1)")
    if L < 1 or portfolio_size < 1:
        raise ConfigError("L and portfolio size must be positive")
    log_prop = math.log(2 * L / delta)
    k = portfolio_size * math.ceil(log_prop / alpha0)
    log_id = math.log(2 * k * k * L / delta)
    m = math.ceil(log_id / (2 * beta0))
    r = math.ceil(log_id / (4 * sigma0 * sigma0))
    inputs = {"delta": delta, "L": L, "alpha0": alpha0, "beta0": beta0, "sigma0": sigma0,
              "portfolio_size": portfolio_size}
    return SizingResult(k, m, r, log_prop, log_id, delta / (2 * L), inputs)


def oracle_curve(model: LatentModel, k: float) -> tuple[float, float]:
    """``(p_oracle(k), lim_k p_oracle)`` for the task-level oracle best-of-k."""
    split = eps_prop_exchangeable(model, k)
    return 1.0 - split.eps, 1.0 - split.blind


def recovery(p1: float, p_oracle: float, p_system: float) -> float:
    """Fraction of the oracle gap recovered by an implemented selector."""
    if p_oracle <= p1:
        raise UndefinedRecovery(f"oracle rate {p_oracle} does not exceed pass@1 {p1}")
    return (p_system - p1) / (p_oracle - p1)
