"""
Fidelity estimation for pure target states.

The protocol draws ``ell`` Pauli settings from the importance distribution of
the target, measures each one ``m_i`` times on the lab state and averages the
rescaled outcomes.  Alongside the finite-shot estimate ``y_tilde`` the result
also carries ``y_ideal``, the infinite-precision estimate built from the exact
lab-state expectations of the same settings.  The simulator has that
information for free and it separates sampling error from shot noise.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from dfe.measurement import ceil_tol, copies_for_state_setting, outcome_sums
from dfe.pauli import DENSE_CAP, ZERO_TOL, char_fn, char_fn_full, xz_to_indices
from dfe.sampling import ImportanceDistribution, truncate
from dfe.states import DensityMatrix, PureState, StabilizerTableau

REGIMES = ("generic", "well_conditioned", "shrinking_noise", "truncated")
ELL_VARIANTS = ("hoeffding", "short")


@dataclass(frozen=True)
class DfeConfig:
    """Protocol parameters.

    ``ell`` overrides the regime's setting count when given.  For the
    shrinking-noise regime ``ell_variant="hoeffding"`` uses
    ceil(2 ln(2/delta)/eps^2) and ``"short"`` drops the factor 2 and uses ceil(ln(1/delta)/eps^2).
    """

    epsilon: float
    delta: float
    regime: str = "generic"
    alpha: float | None = None
    beta: float | None = None
    ell_variant: str = "hoeffding"
    seed: int | None = None
    ell: int | None = None
    dense_cap: int = DENSE_CAP

    def __post_init__(self):
        if not 0 < self.epsilon < 1:
            raise ValueError(f"epsilon must lie in (0, 1), got {self.epsilon}")
        if not 0 < self.delta < 1:
            raise ValueError(f"delta must lie in (0, 1), got {self.delta}")
        if self.regime not in REGIMES:
            raise ValueError(f"unknown regime {self.regime!r}; choose from {REGIMES}")
        if self.alpha is not None and not 0 < self.alpha <= 1:
            raise ValueError(f"alpha must lie in (0, 1], got {self.alpha}")
        if self.regime == "truncated" and self.beta is None:
            raise ValueError("truncated regime needs beta")
        if self.beta is not None and not 0 < self.beta < 1:
            raise ValueError(f"beta must lie in (0, 1), got {self.beta}")
        if self.ell_variant not in ELL_VARIANTS:
            raise ValueError(f"ell_variant must be one of {ELL_VARIANTS}")
        if self.ell is not None and self.ell < 1:
            raise ValueError("ell must be >= 1")

    @classmethod
    def from_regime(cls, epsilon: float, delta: float, regime: str = "generic", **kwargs) -> "DfeConfig":
        """Parse regime strings such as ``well_conditioned:0.25``, ``truncated:0.3``
        or ``shrinking_noise_short``."""
        name, _, arg = regime.partition(":")
        if name == "shrinking_noise_short":
            return cls(epsilon, delta, "shrinking_noise", ell_variant="short", **kwargs)
        if name == "well_conditioned" and arg:
            kwargs["alpha"] = float(arg)
        elif name == "truncated" and arg:
            kwargs["beta"] = float(arg)
        elif arg:
            raise ValueError(f"regime {name!r} takes no parameter")
        return cls(epsilon, delta, name, **kwargs)

    def regime_label(self) -> str:
        if self.regime == "well_conditioned":
            return f"well_conditioned:{self.alpha}"
        if self.regime == "truncated":
            return f"truncated:{self.beta}"
        if self.regime == "shrinking_noise" and self.ell_variant == "short":
            return "shrinking_noise_short"
        return self.regime


def ell_formula(config: DfeConfig) -> str:
    if config.ell is not None:
        return "explicit"
    if config.regime == "well_conditioned":
        return "ceil(2 ln(2/delta) / (alpha^2 eps^2))"
    if config.regime == "shrinking_noise":
        return "ceil(ln(1/delta) / eps^2)" if config.ell_variant == "short" else "ceil(2 ln(2/delta) / eps^2)"
    return "ceil(1 / (eps^2 delta))"


def settings_count(config: DfeConfig) -> int:
    eps, delta = config.epsilon, config.delta
    if config.ell is not None:
        return config.ell
    if config.regime == "well_conditioned":
        if config.alpha is None:
            raise ValueError("well_conditioned regime needs alpha (see alpha_of)")
        return ceil_tol(2 * math.log(2 / delta) / (config.alpha**2 * eps**2))
    if config.regime == "shrinking_noise":
        if config.ell_variant == "short":
            return ceil_tol(math.log(1 / delta) / eps**2)
        return ceil_tol(2 * math.log(2 / delta) / eps**2)
    return ceil_tol(1 / (eps**2 * delta))


def expected_copies_bound(epsilon: float, delta: float, d: int) -> float:
    """Upper bound on E[m] for the generic protocol."""
    return 1 + 1 / (epsilon**2 * delta) + (2 * d / epsilon**2) * math.log(2 / delta)


def well_conditioned_copy_cap(alpha: float, ell: int, epsilon: float, delta: float) -> float:
    """Certain per-setting bound m_i <= 1 + 2 ln(2/delta) / (alpha^2 ell eps^2)."""
    return 1 + 2 * math.log(2 / delta) / (alpha**2 * ell * epsilon**2)


def truncated_copy_cap(beta: float, d: int, ell: int, epsilon: float, delta: float) -> float:
    """Certain per-setting bound m_i <= 1 + 2 d ln(2/delta) / (beta^2 ell eps^2)."""
    return 1 + 2 * d * math.log(2 / delta) / (beta**2 * ell * epsilon**2)


def hoeffding_constant(chi, m, ell: int, d: int) -> float:
    """C = sum_i 4 / (ell^2 m_i d chi_i^2); the shot stage fails w.p. <= 2 exp(-2 eps^2 / C)."""
    chi = np.asarray(chi, dtype=float)
    return float(np.sum(4.0 / (ell**2 * np.asarray(m) * d * chi**2)))


# -- target properties --------------------------------------------------------


def alpha_of(target, cap: int | None = None) -> float:
    """Smallest non-zero |Tr(rho W_k)| of a pure target."""
    if isinstance(target, StabilizerTableau):
        return 1.0
    if isinstance(target, ImportanceDistribution):
        return sampler_alpha(target)
    if abs(target.purity() - 1) > 1e-9:
        raise ValueError("alpha is only defined for pure targets")
    chi = char_fn_full(target, cap=cap)
    nz = np.abs(chi[np.abs(chi) >= ZERO_TOL])
    return float(nz.min() * math.sqrt(target.dim))


def sampler_alpha(dist: ImportanceDistribution) -> float:
    if dist.mode == "stabilizer":
        return 1.0
    if dist.mode == "w_state":
        n = dist.n
        z_branch = [abs(n - 2 * w) / n for w in range(n + 1) if n != 2 * w]
        return min([2 / n] + z_branch)
    return float(np.abs(dist.support_chi).min() * math.sqrt(dist.dim))


def ideal_estimator_X(k: int, target, true_state) -> float:
    """X = chi_sigma(k) / chi_rho(k) with exact access to the lab state."""
    denom = char_fn(target, k)
    if abs(denom) < ZERO_TOL:
        raise ZeroDivisionError(f"chi_rho({k}) = 0; k is outside the sampling support")
    return char_fn(true_state, k) / denom


def estimator_moments(target, true_state, cap: int | None = None) -> tuple[float, float]:
    """Exact mean and variance of X over k ~ chi_rho^2, by enumeration."""
    chi_r = char_fn_full(target, cap=cap)
    chi_s = char_fn_full(true_state, cap=cap)
    supp = np.abs(chi_r) >= ZERO_TOL
    p = chi_r[supp] ** 2
    x = chi_s[supp] / chi_r[supp]
    mean = float(np.sum(p * x))
    return mean, float(np.sum(p * x**2) - mean**2)


def build_sampler(target, config: DfeConfig | None = None) -> ImportanceDistribution:
    if isinstance(target, ImportanceDistribution):
        return target
    cap = config.dense_cap if config else None
    if isinstance(target, StabilizerTableau):
        return ImportanceDistribution.stabilizer(target)
    if config is not None and config.regime == "truncated":
        if not isinstance(target, PureState):
            raise ValueError("truncation needs a PureState target")
        return ImportanceDistribution.truncated(truncate(target, config.beta, cap=cap))
    if isinstance(target, (PureState, DensityMatrix)):
        return ImportanceDistribution.exhaustive(target, cap=cap)
    raise TypeError(f"cannot build a sampler for {type(target).__name__}")


# -- protocol -----------------------------------------------------------------


@dataclass
class DfeResult:
    y_tilde: float
    y_ideal: float
    ell: int
    k: np.ndarray
    chi: np.ndarray
    m: np.ndarray
    outcome_sum: np.ndarray
    x_tilde: np.ndarray
    x_ideal: np.ndarray
    expected_copies_bound: float
    hoeffding_C: float
    metadata: dict = field(default_factory=dict)

    @property
    def m_total(self) -> int:
        return int(np.sum(self.m))

    @property
    def interval(self) -> tuple[float, float]:
        eps = self.metadata["epsilon"]
        return self.y_tilde - 2 * eps, self.y_tilde + 2 * eps

    def to_dict(self, records: bool = True) -> dict:
        out = {
            "y_tilde": self.y_tilde,
            "y_ideal": self.y_ideal,
            "interval": list(self.interval),
            "confidence": 1 - 2 * self.metadata["delta"],
            "ell": self.ell,
            "m_total": self.m_total,
            "expected_copies_bound": self.expected_copies_bound,
            "hoeffding_C": self.hoeffding_C,
            "metadata": self.metadata,
        }
        if records:
            out["settings"] = [
                {"k": int(k), "chi": float(c), "m": int(m), "outcome_sum": int(s), "x_tilde": float(x)}
                for k, c, m, s, x in zip(self.k, self.chi, self.m, self.outcome_sum, self.x_tilde)
            ]
        return out

    def to_json(self, records: bool = True) -> str:
        return json.dumps(self.to_dict(records), indent=2)


def _streams(config: DfeConfig, rng: np.random.Generator | None):
    if rng is not None:
        return rng.spawn(2)
    return [np.random.default_rng(s) for s in np.random.SeedSequence(config.seed).spawn(2)]


def estimate_fidelity(
    target,
    true_state,
    config: DfeConfig,
    rng: np.random.Generator | None = None,
    metadata: dict | None = None,
) -> DfeResult:
    """Run the full state-certification protocol against a simulated lab state.

    ``target`` is a pure state or a prebuilt ``ImportanceDistribution``.  In
    the truncated regime the estimate refers to the renormalised surrogate,
    whose bias against the real target is reported in the metadata.
    """
    sampler = build_sampler(target, config)
    if true_state.n != sampler.n:
        raise ValueError(f"target has {sampler.n} qubits but lab state has {true_state.n}")
    if config.regime == "well_conditioned" and config.alpha is None:
        config = replace(config, alpha=sampler_alpha(sampler))

    n, d = sampler.n, sampler.dim
    root_d = math.sqrt(d)
    ell = settings_count(config)
    sample_rng, shot_rng = _streams(config, rng)

    x, z, chi = sampler.sample(sample_rng, ell)
    exact = true_state.expectations(x, z)
    m = copies_for_state_setting(chi, ell, config.epsilon, config.delta, d)
    sums = outcome_sums(exact, m, shot_rng)

    x_tilde = sums / (m * root_d * chi)
    x_ideal = exact / (root_d * chi)

    meta = {
        "epsilon": config.epsilon,
        "delta": config.delta,
        "regime": config.regime_label(),
        "ell_formula": ell_formula(config),
        "copies_formula": "ceil(2 ln(2/delta) / (d chi^2 ell eps^2))",
        "sampler": sampler.mode,
        "n": n,
        "seed": config.seed,
        "log": "natural",
    }
    if config.alpha is not None:
        meta["alpha"] = config.alpha
    if sampler.truncation is not None:
        meta["beta"] = sampler.truncation.beta
        meta["truncation_bias"] = sampler.truncation.bias_bound
    meta.update(metadata or {})

    return DfeResult(
        y_tilde=float(np.mean(x_tilde)),
        y_ideal=float(np.mean(x_ideal)),
        ell=ell,
        k=xz_to_indices(n, x, z),
        chi=chi,
        m=m,
        outcome_sum=sums,
        x_tilde=x_tilde,
        x_ideal=x_ideal,
        expected_copies_bound=expected_copies_bound(config.epsilon, config.delta, d),
        hoeffding_C=hoeffding_constant(chi, m, ell, d),
        metadata=meta,
    )
