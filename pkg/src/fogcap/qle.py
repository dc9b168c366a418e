"""Queue-length estimation: a piecewise-linear average queue length and the overflow it implies."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError
from .fluid_sim import Scenario
from .stoploss import stop_loss


@dataclass(frozen=True)
class QleConfig:
    """``kappa_i = kappa_coeff * sigma_i`` unless ``kappa`` gives explicit per-cloudlet shifts.

    The one-sigma default is a heuristic; ``kappa_coeff=0`` gives the plain
    unshifted estimate.
    """

    kappa_coeff: float = 1.0
    kappa: tuple | None = field(default=None)

    def __post_init__(self):
        if self.kappa_coeff < 0:
            raise ParameterError("kappa_coeff must be >= 0")
        if self.kappa is not None:
            object.__setattr__(self, "kappa", tuple(float(k) for k in self.kappa))

    def kappa_for(self, scenario: Scenario, i: int) -> float:
        if self.kappa is not None:
            if len(self.kappa) != scenario.num_cloudlets:
                raise ParameterError("one kappa per cloudlet required")
            return self.kappa[i]
        if self.kappa_coeff == 0:
            return 0.0
        return self.kappa_coeff * scenario.stats()[i].std


PLAIN = QleConfig(kappa_coeff=0.0)


def _piecewise(rho_i, total, deadline, alpha, kappa):
    a = np.asarray(alpha, dtype=float)
    shifted = a - kappa
    out = np.where(
        a >= total + kappa,
        0.0,
        np.where(
            a >= total / (1.0 + deadline) + kappa,
            -rho_i * shifted + rho_i * total,
            rho_i * shifted * deadline,
        ),
    )
    return float(out) if out.ndim == 0 else out


def e_aql(scenario: Scenario, i: int, alpha):
    """Linear estimate of the average queue length at cloudlet ``i``."""
    return _piecewise(scenario.rho[i], scenario.total_mean, scenario.deadline, alpha, 0.0)


def e_aql_adjusted(scenario: Scenario, i: int, alpha, cfg: QleConfig = QleConfig()):
    """``e_aql`` with its knots moved right by ``kappa_i`` and alpha replaced by ``alpha - kappa_i``."""
    kappa = cfg.kappa_for(scenario, i)
    return _piecewise(scenario.rho[i], scenario.total_mean, scenario.deadline, alpha, kappa)


def retention(scenario: Scenario, i: int, alpha, cfg: QleConfig = QleConfig()):
    a = np.asarray(alpha, dtype=float)
    t = scenario.rho[i] * a * (1.0 + scenario.deadline) - e_aql_adjusted(scenario, i, a, cfg)
    return float(t) if np.ndim(t) == 0 else t


def g(scenario: Scenario, i: int, alpha, cfg: QleConfig = QleConfig()):
    """Expected overflow ``E(lambda + e_AQL - rho_i*alpha*(1+D))+`` of cloudlet ``i``.

    Vectorized over ``alpha``.
    """
    return stop_loss(scenario.marginals[i], retention(scenario, i, alpha, cfg))
