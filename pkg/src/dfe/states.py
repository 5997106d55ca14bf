"""Target and lab states: statevectors, density matrices, stabilizer tableaus, noise."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from dfe.pauli import (
    DENSE_CAP,
    SX,
    SY,
    SZ,
    PauliOp,
    bits_to_int,
    expectation_density,
    expectation_pure,
    expectations_density,
    expectations_pure,
    int_array_to_bits,
    int_to_bits,
    multiply_bits,
    pauli_from_index,
)


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


def _num_qubits(d: int) -> int:
    n = d.bit_length() - 1
    if n < 1 or 1 << n != d:
        raise ValueError(f"dimension {d} is not a power of two >= 2")
    return n


@dataclass(frozen=True, eq=False)
class PureState:
    n: int
    amplitudes: np.ndarray

    def __post_init__(self):
        amps = np.asarray(self.amplitudes, dtype=complex).ravel()
        if amps.shape[0] != 1 << self.n:
            raise ValueError(f"expected {1 << self.n} amplitudes, got {amps.shape[0]}")
        if abs(np.linalg.norm(amps) - 1) > 1e-9:
            raise ValueError("amplitudes are not normalised")
        object.__setattr__(self, "amplitudes", _frozen(amps))

    @classmethod
    def from_amplitudes(cls, amps) -> "PureState":
        amps = np.asarray(amps, dtype=complex).ravel()
        return cls(_num_qubits(amps.shape[0]), amps)

    @property
    def dim(self) -> int:
        return 1 << self.n

    def density(self) -> np.ndarray:
        return np.outer(self.amplitudes, self.amplitudes.conj())

    def statevector(self) -> np.ndarray:
        return self.amplitudes

    def purity(self) -> float:
        return 1.0

    def expectation(self, x: int, z: int) -> float:
        return expectation_pure(self.amplitudes, x, z)

    def expectations(self, x: np.ndarray, z: np.ndarray) -> np.ndarray:
        return expectations_pure(self.amplitudes, x, z)


@dataclass(frozen=True, eq=False)
class DensityMatrix:
    n: int
    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=complex)
        d = 1 << self.n
        if m.shape != (d, d):
            raise ValueError(f"expected a {d}x{d} matrix, got {m.shape}")
        if np.max(np.abs(m - m.conj().T)) > 1e-9:
            raise ValueError("density matrix is not Hermitian")
        if abs(np.trace(m).real - 1) > 1e-9:
            raise ValueError("density matrix does not have unit trace")
        if np.linalg.eigvalsh(m)[0] < -1e-9:
            raise ValueError("density matrix is not positive semidefinite")
        object.__setattr__(self, "matrix", _frozen(m))

    @classmethod
    def from_matrix(cls, m) -> "DensityMatrix":
        m = np.asarray(m, dtype=complex)
        return cls(_num_qubits(m.shape[0]), m)

    @property
    def dim(self) -> int:
        return 1 << self.n

    def density(self) -> np.ndarray:
        return self.matrix

    def purity(self) -> float:
        return float(np.vdot(self.matrix, self.matrix).real)

    def expectation(self, x: int, z: int) -> float:
        return expectation_density(self.matrix, x, z)

    def expectations(self, x: np.ndarray, z: np.ndarray) -> np.ndarray:
        return expectations_density(self.matrix, x, z)


def maximally_mixed(n: int) -> DensityMatrix:
    d = 1 << n
    return DensityMatrix(n, np.eye(d) / d)


# -- GF(2) linear algebra -----------------------------------------------------


def gf2_rref(m: np.ndarray) -> tuple[np.ndarray, list[int]]:
    """Reduced row echelon form over GF(2) and the pivot columns."""
    r = np.array(m, dtype=np.uint8) % 2
    rows, cols = r.shape
    pivots = []
    row = 0
    for col in range(cols):
        if row == rows:
            break
        hits = np.nonzero(r[row:, col])[0]
        if hits.size == 0:
            continue
        pivot = row + hits[0]
        if pivot != row:
            r[[row, pivot]] = r[[pivot, row]]
        others = np.nonzero(r[:, col])[0]
        others = others[others != row]
        r[others] ^= r[row]
        pivots.append(col)
        row += 1
    return r, pivots


def gf2_inv(a: np.ndarray) -> np.ndarray:
    n = a.shape[0]
    aug = np.concatenate([np.array(a, dtype=np.uint8) % 2, np.eye(n, dtype=np.uint8)], axis=1)
    r, pivots = gf2_rref(aug)
    if pivots[:n] != list(range(n)):
        raise ValueError("matrix is singular over GF(2)")
    return r[:, n:]


# -- stabilizer states ----------------------------------------------------------


@dataclass(frozen=True, eq=False)
class StabilizerTableau:
    """Stabilizer state given by n commuting, independent signed generators.

    ``xs[g, q]`` / ``zs[g, q]`` are the bits of generator g on qubit q.
    """

    n: int
    xs: np.ndarray
    zs: np.ndarray
    signs: np.ndarray
    _pivots: np.ndarray = field(init=False, repr=False, compare=False)
    _pivot_inv: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        xs = np.asarray(self.xs, dtype=np.uint8) % 2
        zs = np.asarray(self.zs, dtype=np.uint8) % 2
        signs = np.asarray(self.signs, dtype=np.int64)
        n = self.n
        if xs.shape != (n, n) or zs.shape != (n, n) or signs.shape != (n,):
            raise ValueError("tableau needs n generators on n qubits")
        if not np.all(np.isin(signs, (1, -1))):
            raise ValueError("generator signs must be +1 or -1")
        sympl = (xs.astype(np.int64) @ zs.T.astype(np.int64) + zs.astype(np.int64) @ xs.T.astype(np.int64)) % 2
        if np.any(sympl):
            raise ValueError("stabilizer generators do not commute")
        gen = np.concatenate([xs, zs], axis=1)
        _, pivots = gf2_rref(gen)
        if len(pivots) != n:
            raise ValueError("stabilizer generators are not independent")
        for name, val in (("xs", xs), ("zs", zs), ("signs", signs)):
            object.__setattr__(self, name, _frozen(val))
        object.__setattr__(self, "_pivots", np.array(pivots))
        object.__setattr__(self, "_pivot_inv", gf2_inv(gen[:, pivots]))

    @classmethod
    def from_labels(cls, labels: list[str]) -> "StabilizerTableau":
        ops = [PauliOp.from_label(s) for s in labels]
        n = ops[0].n
        xs = np.array([int_to_bits(p.x, n) for p in ops])
        zs = np.array([int_to_bits(p.z, n) for p in ops])
        return cls(n, xs, zs, np.array([p.sign for p in ops]))

    @property
    def dim(self) -> int:
        return 1 << self.n

    def generators(self) -> list[PauliOp]:
        return [
            PauliOp(self.n, bits_to_int(self.xs[g]), bits_to_int(self.zs[g]), int(self.signs[g]))
            for g in range(self.n)
        ]

    def purity(self) -> float:
        return 1.0

    def packed_generators(self) -> list[tuple[int, int, int]]:
        """Generators as (x, z, sign) with qubit q in bit n-1-q."""
        cached = self.__dict__.get("_packed")
        if cached is None:
            cached = [(p.x, p.z, p.sign) for p in self.generators()]
            object.__setattr__(self, "_packed", cached)
        return cached

    def group_elements_bits(self, subsets: np.ndarray):
        """Products of selected generators for a batch of subsets.

        ``subsets`` has shape (m, n); row r selects generators with bit 1.
        Returns (x bits, z bits, signs) with shapes (m, n), (m, n), (m,).
        """
        subsets = np.asarray(subsets, dtype=np.uint8)
        m = subsets.shape[0]
        x = np.zeros((m, self.n), dtype=np.uint8)
        z = np.zeros((m, self.n), dtype=np.uint8)
        s = np.ones(m, dtype=np.int64)
        for g in range(self.n):
            rows = np.nonzero(subsets[:, g])[0]
            if rows.size == 0:
                continue
            x[rows], z[rows], s[rows] = multiply_bits(
                x[rows], z[rows], s[rows], self.xs[g][None, :], self.zs[g][None, :], self.signs[g]
            )
        return x, z, s

    def expectation_bits(self, xb: np.ndarray, zb: np.ndarray) -> int:
        """Tr(rho W(x, z)) in {0, +1, -1}, O(n^2) after construction."""
        xb = np.asarray(xb, dtype=np.int64)
        zb = np.asarray(zb, dtype=np.int64)
        anti = (self.xs.astype(np.int64) @ zb + self.zs.astype(np.int64) @ xb) % 2
        if np.any(anti):
            return 0
        v = np.concatenate([xb, zb])
        subset = (v[self._pivots] @ self._pivot_inv.astype(np.int64)) % 2
        gx, gz, gs = self.group_elements_bits(subset[None, :].astype(np.uint8))
        if not (np.array_equal(gx[0], xb) and np.array_equal(gz[0], zb)):
            return 0
        return int(gs[0])

    def expectation(self, x: int, z: int) -> float:
        return float(self.expectation_bits(int_to_bits(x, self.n), int_to_bits(z, self.n)))

    def expectations(self, x: np.ndarray, z: np.ndarray) -> np.ndarray:
        """Batched ``expectation`` for packed integer arrays."""
        xb = int_array_to_bits(np.atleast_1d(x), self.n).astype(np.int64)
        zb = int_array_to_bits(np.atleast_1d(z), self.n).astype(np.int64)
        anti = (zb @ self.xs.T.astype(np.int64) + xb @ self.zs.T.astype(np.int64)) % 2
        ok = ~np.any(anti, axis=1)
        v = np.concatenate([xb, zb], axis=1)
        subsets = (v[:, self._pivots] @ self._pivot_inv.astype(np.int64)) % 2
        gx, gz, gs = self.group_elements_bits(subsets.astype(np.uint8))
        ok &= np.all(gx == xb, axis=1) & np.all(gz == zb, axis=1)
        return np.where(ok, gs, 0).astype(float)

    def statevector(self, cap: int | None = None) -> np.ndarray:
        """Dense statevector via the projector prod_g (I + g)/2."""
        cap = DENSE_CAP if cap is None else cap
        if self.n > max(cap, 12):
            raise ValueError(f"dense statevector for n={self.n} exceeds the cap")
        d = self.dim
        gens = self.generators()
        for b in range(d):
            v = np.zeros(d, dtype=complex)
            v[b] = 1.0
            for g in gens:
                v = 0.5 * (v + apply_pauli(v, g))
            norm = np.linalg.norm(v)
            if norm > 1e-6:
                v = v / norm
                # fix the global phase: first non-negligible amplitude real positive
                lead = v[np.argmax(np.abs(v) > 1e-9)]
                return v * (abs(lead) / lead)
        raise RuntimeError("projector annihilated every basis state")

    def density(self) -> np.ndarray:
        v = self.statevector()
        return np.outer(v, v.conj())


def apply_pauli(vec: np.ndarray, p: PauliOp) -> np.ndarray:
    """W_p |vec> in O(d)."""
    d = vec.shape[0]
    b = np.arange(d, dtype=np.int64)
    coeff = (1j) ** ((p.x & p.z).bit_count() % 4) * p.sign
    signs = 1 - 2 * (np.bitwise_count(p.z & b) & 1).astype(np.int64)
    out = np.empty_like(vec, dtype=complex)
    out[b ^ p.x] = coeff * signs * vec
    return out


def stabilizer_group_element(tableau: StabilizerTableau, subset) -> PauliOp:
    """Product of the generators selected by ``subset``.

    ``subset`` is an int whose bit n-1-g selects generator g, or a 0/1 array.
    """
    n = tableau.n
    bits = int_to_bits(subset, n) if isinstance(subset, (int, np.integer)) else np.asarray(subset, dtype=np.uint8)
    x, z, s = tableau.group_elements_bits(bits[None, :])
    return PauliOp(n, bits_to_int(x[0]), bits_to_int(z[0]), int(s[0]))


# -- named states -------------------------------------------------------------


def make_ghz(n: int) -> StabilizerTableau:
    """Tableau of (|0...0> + |1...1>)/sqrt(2): X^n and Z_q Z_{q+1}."""
    if n < 1:
        raise ValueError("GHZ state needs n >= 1")
    labels = ["X" * n] + ["I" * q + "ZZ" + "I" * (n - q - 2) for q in range(n - 1)]
    return StabilizerTableau.from_labels(labels)


def make_dicke(n: int, excitations: int) -> PureState:
    if n < 1:
        raise ValueError("Dicke state needs n >= 1")
    if not 0 <= excitations <= n:
        raise ValueError(f"excitations must lie in [0, {n}]")
    d = 1 << n
    mask = np.bitwise_count(np.arange(d, dtype=np.int64)) == excitations
    amps = mask / math.sqrt(math.comb(n, excitations))
    return PureState(n, amps.astype(complex))


def make_w(n: int) -> PureState:
    return make_dicke(n, 1)


def make_haar_random(n: int, seed=None, cap: int | None = None) -> PureState:
    cap = DENSE_CAP if cap is None else cap
    if n > cap:
        raise ValueError(f"Haar-random state on n={n} qubits exceeds the dense cap {cap}")
    rng = np.random.default_rng(seed)
    d = 1 << n
    v = rng.standard_normal(d) + 1j * rng.standard_normal(d)
    return PureState(n, v / np.linalg.norm(v))


def computational_basis_state(n: int, b: int = 0) -> PureState:
    amps = np.zeros(1 << n, dtype=complex)
    amps[b] = 1
    return PureState(n, amps)


# -- noise --------------------------------------------------------------------


def _conj_qubit(m: np.ndarray, n: int, q: int, op: np.ndarray) -> np.ndarray:
    """op_q M op_q^dagger for a single-qubit op acting on qubit q."""
    lo, hi = 1 << q, 1 << (n - q - 1)
    t = m.reshape(lo, 2, hi, lo, 2, hi)
    t = np.einsum("ab,ibjkcl,dc->iajkdl", op, t, op.conj(), optimize=True)
    return t.reshape(m.shape)


def depolarize_matrix(m: np.ndarray, n: int, p: float, local: bool = False) -> np.ndarray:
    """Depolarising map applied to an arbitrary operator (linear extension).

    Global: M -> (1-p) M + p Tr(M) I/d.
    Local: each qubit M -> (1-p) M + (p/3)(X M X + Y M Y + Z M Z).
    """
    if local:
        for q in range(n):
            m = (1 - p) * m + (p / 3) * sum(_conj_qubit(m, n, q, s) for s in (SX, SY, SZ))
        return m
    d = 1 << n
    return (1 - p) * m + p * np.trace(m) * np.eye(d) / d


def dephase_matrix(m: np.ndarray, n: int, p: float) -> np.ndarray:
    """Per-qubit phase flip M -> (1 - p/2) M + (p/2) Z M Z."""
    for q in range(n):
        m = (1 - p / 2) * m + (p / 2) * _conj_qubit(m, n, q, SZ)
    return m


def _check_p(p: float):
    if not 0 <= p <= 1:
        raise ValueError(f"noise strength p={p} outside [0, 1]")


def depolarize(state, p: float, local: bool = False) -> DensityMatrix:
    _check_p(p)
    return DensityMatrix(state.n, depolarize_matrix(np.asarray(state.density()), state.n, p, local))


def dephase(state, p: float) -> DensityMatrix:
    _check_p(p)
    return DensityMatrix(state.n, dephase_matrix(np.asarray(state.density()), state.n, p))


NOISE_KINDS = ("none", "depolarize", "depolarize_local", "dephase")


@dataclass(frozen=True)
class NoiseModel:
    """Pauli-diagonal noise used for lab states and after channels.

    Every kind here maps W_k to f(k) W_k, which lets the Clifford channel
    simulator work in the Heisenberg picture.
    """

    kind: str = "none"
    p: float = 0.0

    def __post_init__(self):
        if self.kind not in NOISE_KINDS:
            raise ValueError(f"unknown noise kind {self.kind!r}; choose from {NOISE_KINDS}")
        _check_p(self.p)

    @classmethod
    def parse(cls, text: str | None) -> "NoiseModel":
        """``"depolarize:0.1"``, ``"dephase:0.2"``, ``"none"``."""
        if not text or text == "none":
            return cls()
        kind, _, p = text.partition(":")
        if not p:
            raise ValueError(f"noise spec {text!r} needs a strength, e.g. {kind}:0.1")
        return cls(kind, float(p))

    def describe(self) -> dict:
        conv = {
            "none": "identity",
            "depolarize": "rho -> (1-p) rho + p I/d (global)",
            "depolarize_local": "per qubit rho -> (1-p) rho + (p/3)(X rho X + Y rho Y + Z rho Z)",
            "dephase": "per qubit rho -> (1-p/2) rho + (p/2) Z rho Z",
        }[self.kind]
        return {"kind": self.kind, "p": self.p, "convention": conv}

    def apply_matrix(self, m: np.ndarray, n: int) -> np.ndarray:
        if self.kind == "none" or self.p == 0:
            return m
        if self.kind == "dephase":
            return dephase_matrix(m, n, self.p)
        return depolarize_matrix(m, n, self.p, local=self.kind == "depolarize_local")

    def apply(self, state) -> DensityMatrix:
        return DensityMatrix(state.n, self.apply_matrix(np.asarray(state.density()), state.n))

    def kraus(self, n: int) -> list[np.ndarray]:
        """Kraus operators on n qubits (4^n of them for the local kinds)."""
        d = 1 << n
        p = self.p
        if self.kind == "none" or p == 0:
            return [np.eye(d, dtype=complex)]
        if self.kind == "depolarize":
            # (1-p) rho + p I/d == (1 - p + p/d^2) rho + (p/d^2) sum_{P != I} P rho P
            ops = [math.sqrt(1 - p + p / d**2) * np.eye(d, dtype=complex)]
            for k in range(1, d * d):
                ops.append(math.sqrt(p / d**2) * pauli_from_index(n, k).matrix())
            return ops
        if self.kind == "depolarize_local":
            local = [math.sqrt(1 - p) * np.eye(2)] + [math.sqrt(p / 3) * s for s in (SX, SY, SZ)]
        else:
            local = [math.sqrt(1 - p / 2) * np.eye(2), math.sqrt(p / 2) * SZ]
        ops = [np.eye(1, dtype=complex)]
        for _ in range(n):
            ops = [np.kron(a, b) for a in ops for b in local]
        return ops

    def pauli_factor(self, x: np.ndarray, z: np.ndarray) -> np.ndarray:
        """f(k) such that the noise maps W(x, z) to f(k) W(x, z)."""
        x = np.asarray(x, dtype=np.int64)
        z = np.asarray(z, dtype=np.int64)
        if self.kind == "none":
            return np.ones(np.broadcast(x, z).shape)
        if self.kind == "depolarize":
            return np.where((x | z) == 0, 1.0, 1.0 - self.p)
        if self.kind == "depolarize_local":
            return (1.0 - 4.0 * self.p / 3.0) ** np.bitwise_count(x | z)
        return (1.0 - self.p) ** np.bitwise_count(x)


# -- JSON ---------------------------------------------------------------------


def state_to_json(state: PureState) -> str:
    amps = [[float(a.real), float(a.imag)] for a in state.amplitudes]
    return json.dumps({"n": state.n, "amplitudes": amps})


def state_from_json(text: str) -> PureState:
    data = json.loads(text)
    amps = np.array([complex(re, im) for re, im in data["amplitudes"]])
    n = data.get("n", _num_qubits(amps.shape[0]))
    return PureState(n, amps)
