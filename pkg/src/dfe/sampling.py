"""
Importance sampling of Pauli operators with Pr(k) = chi(k)^2.

Four samplers share one interface (``ImportanceDistribution.sample``):

* exhaustive -- alias table over all 4^n characteristic values (small n)
* stabilizer -- uniform random product of tableau generators, any n
* w_state    -- closed-form two-branch sampler for the W state, O(n) per draw
* truncated  -- exhaustive sampler over a truncated, renormalised target
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from dfe.pauli import (
    DENSE_CAP,
    ZERO_TOL,
    PauliOp,
    bits_to_int,
    bits_to_int_array,
    char_fn_full,
    indices_to_xz,
    multiply_ints,
    xz_to_indices,
)
from dfe.states import PureState, StabilizerTableau


class AliasTable:
    """Vose's alias method: O(n) setup, O(1) per draw."""

    def __init__(self, weights):
        w = np.asarray(weights, dtype=float)
        if w.ndim != 1 or w.size == 0:
            raise ValueError("need a non-empty 1-d weight vector")
        if np.any(w < 0):
            raise ValueError("weights must be non-negative")
        total = w.sum()
        if total <= 0:
            raise ValueError("weights sum to zero")
        size = w.size
        scaled = (w * size / total).tolist()
        prob = [0.0] * size
        alias = list(range(size))
        small = [i for i, v in enumerate(scaled) if v < 1.0]
        large = [i for i, v in enumerate(scaled) if v >= 1.0]
        while small and large:
            s = small.pop()
            g = large.pop()
            prob[s] = scaled[s]
            alias[s] = g
            scaled[g] -= 1.0 - scaled[s]
            (small if scaled[g] < 1.0 else large).append(g)
        for i in large + small:
            prob[i] = 1.0
        self.prob = np.array(prob)
        self.alias = np.array(alias, dtype=np.int64)

    def __len__(self):
        return self.prob.size

    def draw(self, rng: np.random.Generator, size: int) -> np.ndarray:
        cols = rng.integers(0, self.prob.size, size=size)
        coin = rng.random(size)
        return np.where(coin < self.prob[cols], cols, self.alias[cols])

    def probabilities(self) -> np.ndarray:
        """Exact output distribution implied by the table."""
        out = self.prob.copy()
        np.add.at(out, self.alias, 1.0 - self.prob)
        return out / self.prob.size


# -- W state ------------------------------------------------------------------


def w_state_prob(n: int, j_bits: int, k_bits: int) -> Fraction:
    """Exact Pr(sigma_x^j sigma_z^k) for the n-qubit W state."""
    if n < 2:
        raise ValueError("W-state formula needs n >= 2")
    d = 1 << n
    wj = j_bits.bit_count()
    if wj == 0:
        return Fraction((n - 2 * k_bits.bit_count()) ** 2, n * n * d)
    if wj == 2 and (j_bits & k_bits).bit_count() % 2 == 0:
        return Fraction(4, n * n * d)
    return Fraction(0)


def w_state_chi(n: int, j_bits, k_bits):
    """Signed characteristic value of the W state (vectorised).

    For j = 0 this is (n - 2|k|)/(n sqrt d); for the surviving weight-two
    x-patterns it is always +2/(n sqrt d) in the Hermitian convention.
    """
    j = np.asarray(j_bits, dtype=np.int64)
    k = np.asarray(k_bits, dtype=np.int64)
    root_d = math.sqrt(2.0**n)
    wj = np.bitwise_count(j)
    even = (np.bitwise_count(j & k) % 2) == 0
    zero_branch = (n - 2.0 * np.bitwise_count(k)) / (n * root_d)
    return np.where(wj == 0, zero_branch, np.where((wj == 2) & even, 2.0 / (n * root_d), 0.0))


def w_weight_distribution(n: int) -> list[Fraction]:
    """q(w) = C(n, w)(n - 2w)^2 / (n d), w = 0..n."""
    d = 1 << n
    return [Fraction(math.comb(n, w) * (n - 2 * w) ** 2, n * d) for w in range(n + 1)]


def sample_w_state_batch(n: int, size: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Draw ``size`` pairs (j, k) from the W-state distribution."""
    if n < 2:
        raise ValueError("W-state sampler needs n >= 2")
    bits_j = np.zeros((size, n), dtype=np.uint8)
    bits_k = np.zeros((size, n), dtype=np.uint8)
    first = rng.random(size) < 1.0 / n

    # branch 1: j = 0, |k| = w with w ~ q(w), k uniform among weight-w strings
    r1 = np.nonzero(first)[0]
    if r1.size:
        q = np.array([float(f) for f in w_weight_distribution(n)])
        w = rng.choice(n + 1, size=r1.size, p=q / q.sum())
        ranks = np.argsort(np.argsort(rng.random((r1.size, n)), axis=1), axis=1)
        bits_k[r1] = ranks < w[:, None]

    # branch 2: uniform weight-2 j, k with equal bits under j and free bits elsewhere
    r2 = np.nonzero(~first)[0]
    if r2.size:
        pairs = np.array([(a, b) for a in range(n) for b in range(a + 1, n)])
        chosen = pairs[rng.integers(0, len(pairs), size=r2.size)]
        rows = np.arange(r2.size)
        jb = np.zeros((r2.size, n), dtype=np.uint8)
        jb[rows, chosen[:, 0]] = 1
        jb[rows, chosen[:, 1]] = 1
        free = rng.integers(0, 2, size=(r2.size, n - 1), dtype=np.uint8)
        kb = np.zeros((r2.size, n), dtype=np.uint8)
        kb[rows, chosen[:, 0]] = free[:, 0]
        kb[rows, chosen[:, 1]] = free[:, 0]
        # remaining bits fill the other sites lowest index first
        kb[jb == 0] = free[:, 1:].ravel()
        bits_j[r2] = jb
        bits_k[r2] = kb

    return bits_to_int_array(bits_j), bits_to_int_array(bits_k)


def sample_w_state(n: int, rng: np.random.Generator) -> tuple[int, int]:
    j, k = sample_w_state_batch(n, 1, rng)
    return int(j[0]), int(k[0])


# -- stabilizer ---------------------------------------------------------------


def sample_stabilizer_batch(tableau: StabilizerTableau, size: int, rng: np.random.Generator):
    """Uniform stabilizer-group elements as bit arrays plus signs."""
    subsets = rng.integers(0, 2, size=(size, tableau.n), dtype=np.uint8)
    return tableau.group_elements_bits(subsets)


def sample_stabilizer(tableau: StabilizerTableau, rng: np.random.Generator) -> PauliOp:
    n = tableau.n
    subset = int.from_bytes(rng.bytes((n + 7) // 8), "little") & ((1 << n) - 1)
    x = z = 0
    s = 1
    for g, (gx, gz, gs) in enumerate(tableau.packed_generators()):
        if (subset >> g) & 1:
            x, z, s = multiply_ints(x, z, s, gx, gz, gs)
    return PauliOp(n, x, z, s)


# -- truncation ---------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class TruncatedTarget:
    """Target with small characteristic values removed and renormalised."""

    source: PureState
    beta: float
    chi_truncated: np.ndarray
    norm: float
    chi: np.ndarray
    bias_bound: float

    @property
    def n(self) -> int:
        return self.source.n

    @property
    def analytic_bias_cap(self) -> float:
        return 2.0 * self.beta


def truncate(state: PureState, beta: float, cap: int | None = None) -> TruncatedTarget:
    if not 0 < beta < 1:
        raise ValueError(f"beta must lie in (0, 1), got {beta}")
    chi = char_fn_full(state, cap=cap)
    d = state.dim
    keep = np.abs(chi) >= beta / d
    chi1 = np.where(keep, chi, 0.0)
    norm = float(np.sqrt(np.sum(chi1**2)))
    if norm == 0.0:
        raise ValueError(f"beta={beta} truncates every characteristic value")
    chi2 = chi1 / norm
    bias = float(np.sqrt(np.sum((chi2 - chi) ** 2)))
    for a in (chi1, chi2):
        a.setflags(write=False)
    return TruncatedTarget(state, beta, chi1, norm, chi2, bias)


# -- distributions ------------------------------------------------------------


class ImportanceDistribution:
    """Sampler over Pauli indices with Pr(k) = chi(k)^2.

    Use the constructors ``exhaustive``, ``stabilizer``, ``w_state`` and
    ``truncated`` rather than calling ``__init__`` directly.
    """

    def __init__(self, n: int, mode: str, *, support=None, chi=None, tableau=None, truncation=None):
        self.n = n
        self.mode = mode
        self.support = support
        self.support_chi = chi
        self.tableau = tableau
        self.truncation = truncation
        self._alias = AliasTable(chi**2) if chi is not None else None

    def __repr__(self):
        return f"ImportanceDistribution(n={self.n}, mode={self.mode!r})"

    @property
    def dim(self) -> int:
        return 1 << self.n

    @classmethod
    def from_char_vector(cls, n: int, chi: np.ndarray, mode: str = "exhaustive", truncation=None):
        chi = np.asarray(chi, dtype=float)
        if chi.shape != (4**n,):
            raise ValueError("characteristic vector must have 4^n entries")
        support = np.nonzero(np.abs(chi) >= ZERO_TOL)[0]
        total = float(np.sum(chi[support] ** 2))
        if abs(total - 1) > 1e-9:
            raise ValueError(f"sum of chi^2 is {total}, target is not pure")
        return cls(n, mode, support=support, chi=chi[support].copy(), truncation=truncation)

    @classmethod
    def exhaustive(cls, state, cap: int | None = None):
        return cls.from_char_vector(state.n, char_fn_full(state, cap=cap))

    @classmethod
    def stabilizer(cls, tableau: StabilizerTableau):
        return cls(tableau.n, "stabilizer", tableau=tableau)

    @classmethod
    def w_state(cls, n: int):
        if n < 2:
            raise ValueError("W-state sampler needs n >= 2")
        return cls(n, "w_state")

    @classmethod
    def truncated(cls, target: TruncatedTarget):
        return cls.from_char_vector(target.n, np.asarray(target.chi), mode="truncated", truncation=target)

    def sample(self, rng: np.random.Generator, size: int):
        """Draw ``size`` Paulis; returns int arrays x, z and the signed chi values."""
        if self.n > 31:
            raise ValueError("batched sampling packs Pauli indices into int64; use sample_stabilizer for n > 31")
        if self.mode in ("exhaustive", "truncated"):
            picks = self.support[self._alias.draw(rng, size)]
            x, z = indices_to_xz(self.n, picks)
            return x, z, self.chi_of_index(picks)
        if self.mode == "stabilizer":
            xb, zb, s = sample_stabilizer_batch(self.tableau, size, rng)
            return bits_to_int_array(xb), bits_to_int_array(zb), s / math.sqrt(self.dim)
        if self.mode == "w_state":
            j, k = sample_w_state_batch(self.n, size, rng)
            return j, k, w_state_chi(self.n, j, k)
        raise ValueError(f"unknown mode {self.mode!r}")

    def chi_of_index(self, k) -> np.ndarray:
        """Signed chi of the (possibly surrogate) target at Pauli indices k."""
        k = np.atleast_1d(np.asarray(k, dtype=np.int64))
        if self.mode in ("exhaustive", "truncated"):
            pos = np.searchsorted(self.support, k)
            pos = np.minimum(pos, self.support.size - 1)
            hit = self.support[pos] == k
            return np.where(hit, self.support_chi[pos], 0.0)
        x, z = indices_to_xz(self.n, k)
        if self.mode == "w_state":
            return w_state_chi(self.n, x, z)
        vals = self.tableau.expectations(x, z)
        return vals / math.sqrt(self.dim)

    def prob(self, k) -> np.ndarray:
        return self.chi_of_index(k) ** 2

    def table(self, cap: int | None = None) -> tuple[np.ndarray, np.ndarray]:
        """(k, chi) over the full support, sorted by k."""
        cap = DENSE_CAP if cap is None else cap
        if self.mode in ("exhaustive", "truncated"):
            return self.support.copy(), self.support_chi.copy()
        if self.n > cap:
            raise ValueError(f"enumerating the support at n={self.n} exceeds the cap {cap}")
        if self.mode == "stabilizer":
            d = self.dim
            subsets = ((np.arange(d)[:, None] >> np.arange(self.n - 1, -1, -1)) & 1).astype(np.uint8)
            xb, zb, s = self.tableau.group_elements_bits(subsets)
            k = xz_to_indices(self.n, bits_to_int_array(xb), bits_to_int_array(zb))
            order = np.argsort(k)
            return k[order], (s / math.sqrt(d))[order]
        k = np.arange(4**self.n, dtype=np.int64)
        chi = self.chi_of_index(k)
        keep = np.abs(chi) >= ZERO_TOL
        return k[keep], chi[keep]


def build_exhaustive(state, cap: int | None = None) -> ImportanceDistribution:
    return ImportanceDistribution.exhaustive(state, cap=cap)
