"""Model parameters, risk-aversion aggregates and the frictionless benchmark.

Prices follow arithmetic (Bachelier) dynamics: every price is in dollars per
share, ``alpha`` is in dollars per square-root year and positions are in
shares.  Agent ``N`` (the last one, who must be the most risk averse) is
never stored explicitly: their endowment loading is minus the sum of the
others' and their position is whatever clears the market.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from . import matrix_kit as mk
from .errors import DimensionMismatch, ValidationError


@dataclass(frozen=True)
class ModelParams:
    """Full market specification.

    ``xi`` is the stacked ((N-1)*D, D) matrix of endowment loadings for
    agents 1..N-1; agent n's endowment increment is (xi^n W_t)' dW_t.
    ``initial_positions`` stacks the K-vectors of agents 1..N-1; ``None``
    means the frictionless allocation.
    """

    gammas: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    xi: np.ndarray
    lambda_bar: np.ndarray
    supply: np.ndarray
    horizon: float = 1.0
    lambda_scale: float = 1.0
    initial_positions: np.ndarray | None = None

    def __post_init__(self):
        for name in ("gammas", "beta", "supply"):
            object.__setattr__(self, name, np.atleast_1d(np.asarray(getattr(self, name), dtype=float)))
        for name in ("alpha", "lambda_bar"):
            object.__setattr__(self, name, np.atleast_2d(np.asarray(getattr(self, name), dtype=float)))
        xi = np.asarray(self.xi, dtype=float)
        if xi.ndim == 3:  # list of per-agent D x D blocks
            xi = xi.reshape(-1, xi.shape[-1])
        object.__setattr__(self, "xi", np.atleast_2d(xi))
        if self.initial_positions is not None:
            object.__setattr__(
                self, "initial_positions", np.asarray(self.initial_positions, dtype=float).ravel()
            )
        object.__setattr__(self, "horizon", float(self.horizon))
        object.__setattr__(self, "lambda_scale", float(self.lambda_scale))
        self._check_shapes()

    def _check_shapes(self):
        n, (k, d) = self.n_agents, self.alpha.shape
        expect = {
            "beta": (self.beta.shape, (k,)),
            "supply": (self.supply.shape, (k,)),
            "lambda_bar": (self.lambda_bar.shape, (k, k)),
            "xi": (self.xi.shape, ((n - 1) * d, d)),
        }
        if self.initial_positions is not None:
            expect["initial_positions"] = (self.initial_positions.shape, ((n - 1) * k,))
        for name, (got, want) in expect.items():
            if got != want:
                raise DimensionMismatch(f"{name} has shape {got}, expected {want}")
        if n < 2:
            raise DimensionMismatch("need at least two agents")

    @property
    def n_agents(self) -> int:
        return self.gammas.size

    @property
    def n_assets(self) -> int:
        return self.alpha.shape[0]

    @property
    def n_brownians(self) -> int:
        return self.alpha.shape[1]

    @property
    def Lambda(self) -> np.ndarray:
        return self.lambda_scale * self.lambda_bar

    def xi_block(self, n: int) -> np.ndarray:
        """Endowment loading of agent n (0-based); the last agent's is implied."""
        d = self.n_brownians
        blocks = self.xi.reshape(self.n_agents - 1, d, d)
        if n == self.n_agents - 1:
            return -blocks.sum(axis=0)
        return blocks[n]

    def replace(self, **changes) -> "ModelParams":
        data = {f: getattr(self, f) for f in self.__dataclass_fields__}
        data.update(changes)
        return ModelParams(**data)

    # --- JSON -----------------------------------------------------------
    def to_dict(self) -> dict:
        d = self.n_brownians
        out = {
            "gammas": self.gammas.tolist(),
            "alpha": self.alpha.tolist(),
            "beta": self.beta.tolist(),
            "xi_blocks": self.xi.reshape(-1, d, d).tolist(),
            "lambda_bar": self.lambda_bar.tolist(),
            "lambda_scale": self.lambda_scale,
            "supply": self.supply.tolist(),
            "horizon": self.horizon,
        }
        if self.initial_positions is not None:
            out["initial_positions"] = self.initial_positions.tolist()
        return out

    @classmethod
    def from_dict(cls, doc: dict) -> "ModelParams":
        required = ("gammas", "alpha", "lambda_bar", "supply")
        missing = [k for k in required if k not in doc]
        if missing:
            raise ValidationError(f"model document lacks {', '.join(missing)}")
        try:
            alpha = np.atleast_2d(np.asarray(doc["alpha"], dtype=float))
            k, d = alpha.shape
            n = len(doc["gammas"])
            xi = doc.get("xi_blocks")
            xi = np.zeros(((n - 1) * d, d)) if xi is None else np.asarray(xi, dtype=float)
            return cls(
                gammas=doc["gammas"],
                alpha=alpha,
                beta=doc.get("beta", np.zeros(k)),
                xi=xi,
                lambda_bar=doc["lambda_bar"],
                supply=doc["supply"],
                horizon=doc.get("horizon", 1.0),
                lambda_scale=doc.get("lambda_scale", 1.0),
                initial_positions=doc.get("initial_positions"),
            )
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ValidationError):
                raise
            raise ValidationError(f"malformed model document: {exc}") from exc

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ModelParams":
        return cls.from_dict(json.loads(text))

    def digest(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()[:16]


@dataclass
class ValidationReport:
    violations: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.ok


def validate(params: ModelParams) -> ValidationReport:
    """List every violated admissibility condition (empty list means admissible)."""
    bad = []
    g = params.gammas
    arrays = [g, params.alpha, params.beta, params.xi, params.lambda_bar, params.supply]
    if params.initial_positions is not None:
        arrays.append(params.initial_positions)
    if not all(np.all(np.isfinite(a)) for a in arrays) or not np.isfinite(params.horizon):
        bad.append("non-finite entries")
    if np.any(g <= 0):
        bad.append("gamma positivity")
    if g[-1] < g.max():
        bad.append("gamma ordering: the last agent must have the largest risk aversion")
    k, d = params.alpha.shape
    if d < k:
        bad.append("dimension: need at least as many Brownian motions as assets")
    if np.linalg.matrix_rank(params.alpha) < k:
        bad.append("alpha rank: alpha must have full row rank")
    if params.horizon <= 0:
        bad.append("horizon must be positive")
    if params.lambda_scale <= 0:
        bad.append("lambda scale must be positive")
    lb = params.lambda_bar
    if mk.frobenius(lb - lb.T) > 1e-12 * max(mk.frobenius(lb), 1e-300):
        bad.append("lambda_bar symmetry")
    elif np.linalg.eigvalsh(0.5 * (lb + lb.T))[0] <= 0:
        bad.append("lambda_bar positive definiteness")
    return ValidationReport(bad)


def require_valid(params: ModelParams) -> None:
    rep = validate(params)
    if not rep.ok:
        raise ValidationError("; ".join(rep.violations))


@dataclass(frozen=True)
class RiskAggregates:
    gamma_bar: float
    Gamma: np.ndarray
    c: np.ndarray
    gamma_sqrt: np.ndarray


def gamma_bar(gammas) -> float:
    return float(1.0 / np.sum(1.0 / np.asarray(gammas, dtype=float)))


def gamma_matrix(gammas) -> np.ndarray:
    g = np.asarray(gammas, dtype=float)
    n = g.size
    head = g[:-1]
    return np.diag(head) - np.outer(np.ones(n - 1), head - g[-1]) / n


def risk_aversion_vector(gammas) -> np.ndarray:
    g = np.asarray(gammas, dtype=float)
    return gamma_bar(g) * (1.0 / g[:-1] - 1.0 / g[-1])


def risk_aggregates(params: ModelParams, tol: float = mk.DEFAULT_TOL) -> RiskAggregates:
    G = gamma_matrix(params.gammas)
    return RiskAggregates(
        gamma_bar=gamma_bar(params.gammas),
        Gamma=G,
        c=risk_aversion_vector(params.gammas),
        gamma_sqrt=mk.principal_sqrt(G, tol),
    )


@dataclass(frozen=True)
class FrictionlessEquilibrium:
    mu_bar: np.ndarray
    sigma_bar: np.ndarray
    s0_bar: np.ndarray
    positions_bar: np.ndarray  # agents 1..N-1 stacked

    def all_positions(self, supply) -> np.ndarray:
        """(N, K) array including the implied last agent."""
        k = np.size(supply)
        head = self.positions_bar.reshape(-1, k)
        return np.vstack([head, np.asarray(supply) - head.sum(axis=0)])


def frictionless_positions(params: ModelParams) -> np.ndarray:
    """Frictionless holdings at time zero, agents 1..N-1 stacked.

    Agent n holds (gamma_bar / gamma^n) s since every endowment loading
    vanishes at W_0 = 0.
    """
    g = params.gammas
    gb = gamma_bar(g)
    return np.kron(gb / g[:-1], params.supply)


def frictionless_equilibrium(params: ModelParams) -> FrictionlessEquilibrium:
    a, s, T = params.alpha, params.supply, params.horizon
    gb = gamma_bar(params.gammas)
    mu = gb * a @ a.T @ s
    return FrictionlessEquilibrium(
        mu_bar=mu,
        sigma_bar=a.copy(),
        s0_bar=(params.beta - mu) * T,
        positions_bar=frictionless_positions(params),
    )


def initial_positions(params: ModelParams) -> np.ndarray:
    if params.initial_positions is None:
        return frictionless_positions(params)
    return params.initial_positions
