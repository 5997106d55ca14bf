"""Simulated single-shot Pauli measurements and repetition counts."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from dfe.pauli import PauliOp, pauli_expectation


def ceil_tol(value, rel: float = 1e-12):
    """Ceiling that ignores floating-point fuzz just above an integer."""
    v = np.asarray(value, dtype=float)
    out = np.ceil(v * (1 - rel))
    return out.astype(np.int64) if out.ndim else int(out)


@dataclass(frozen=True)
class ShotRecord:
    setting: int
    pauli: PauliOp
    outcomes: tuple[int, ...]

    def __post_init__(self):
        if len(self.outcomes) < 1:
            raise ValueError("a setting needs at least one shot")
        if any(a not in (1, -1) for a in self.outcomes):
            raise ValueError("outcomes must be +1 or -1")

    @property
    def m(self) -> int:
        return len(self.outcomes)

    @property
    def total(self) -> int:
        return sum(self.outcomes)


def _plus_probability(expectation):
    return np.clip((1.0 + np.asarray(expectation, dtype=float)) / 2.0, 0.0, 1.0)


def simulate_shot(state, p: PauliOp, rng: np.random.Generator) -> int:
    """One projective measurement of W_p: +1 with probability (1 + Tr(state W_p))/2."""
    e = pauli_expectation(state, p)
    return 1 if rng.random() < _plus_probability(e) else -1


def simulate_shots(state, p: PauliOp, m: int, rng: np.random.Generator) -> np.ndarray:
    e = pauli_expectation(state, p)
    return np.where(rng.random(m) < _plus_probability(e), 1, -1)


def measure_setting(state, p: PauliOp, m: int, rng: np.random.Generator, setting: int = 0) -> ShotRecord:
    return ShotRecord(setting, p, tuple(int(a) for a in simulate_shots(state, p, m, rng)))


def outcome_sums(expectations, m, rng: np.random.Generator) -> np.ndarray:
    """Sum of m i.i.d. +/-1 outcomes per setting, drawn as 2*Binomial(m, p_plus) - m."""
    m = np.asarray(m, dtype=np.int64)
    plus = rng.binomial(m, _plus_probability(expectations))
    return 2 * plus - m


def copies_for_state_setting(chi, ell: int, epsilon: float, delta: float, d: int):
    """m_i = ceil(2 ln(2/delta) / (d chi^2 ell eps^2)); vectorised over chi."""
    _check(ell, epsilon, delta)
    chi = np.asarray(chi, dtype=float)
    if np.any(chi == 0):
        raise ValueError("chi = 0 reached the copy schedule; the sampler must never emit such k")
    return ceil_tol(2.0 * math.log(2.0 / delta) / (d * chi**2 * ell * epsilon**2))


def copies_for_channel_setting(chi_u, ell: int, epsilon: float, delta: float):
    """m_i = ceil(4 ln(4/delta) / (chi_U^2 ell eps^2)); vectorised over chi_U."""
    _check(ell, epsilon, delta)
    chi_u = np.asarray(chi_u, dtype=float)
    if np.any(chi_u == 0):
        raise ValueError("chi_U = 0 reached the copy schedule")
    return ceil_tol(4.0 * math.log(4.0 / delta) / (chi_u**2 * ell * epsilon**2))


def _check(ell, epsilon, delta):
    if ell < 1:
        raise ValueError("ell must be >= 1")
    if not (0 < epsilon < 1 and 0 < delta < 1):
        raise ValueError("epsilon and delta must lie in (0, 1)")
