"""
n-qubit Pauli operators and characteristic functions.

A Pauli operator on n qubits is stored as two n-bit integers ``x`` and ``z``.
Qubit ``q`` lives in bit ``n - 1 - q`` so that the binary string read left to
right lists qubits 0..n-1, the same order used by ``np.kron`` and by
computational basis indices.  The operator for bits (x, z) is

    W(x, z) = i^{|x & z|} X^x Z^z

which makes every stored operator Hermitian: W(1, 1) = Y exactly.

Single-qubit factors are indexed I=0, X=1, Y=2, Z=3, and the integer index of
an n-qubit operator is the base-4 number whose most significant digit is
qubit 0.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

DENSE_CAP = 8
ZERO_TOL = 1e-12

# digit -> (x, z)
_DIGIT_BITS = ((0, 0), (1, 0), (1, 1), (0, 1))
_BITS_DIGIT = {bits: digit for digit, bits in enumerate(_DIGIT_BITS)}
_LABELS = "IXYZ"

I2 = np.eye(2, dtype=complex)
SX = np.array([[0, 1], [1, 0]], dtype=complex)
SY = np.array([[0, -1j], [1j, 0]], dtype=complex)
SZ = np.array([[1, 0], [0, -1]], dtype=complex)
SINGLE_QUBIT = (I2, SX, SY, SZ)


@dataclass(frozen=True)
class PauliOp:
    """Signed n-qubit Pauli operator ``sign * W(x, z)``."""

    n: int
    x: int
    z: int
    sign: int = 1

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"need at least one qubit, got n={self.n}")
        if not (0 <= self.x < 1 << self.n and 0 <= self.z < 1 << self.n):
            raise ValueError("x/z bit strings do not fit in n qubits")
        if self.sign not in (1, -1):
            raise ValueError(f"sign must be +1 or -1, got {self.sign}")

    @property
    def index(self) -> int:
        return index_of(self)

    @property
    def weight(self) -> int:
        return (self.x | self.z).bit_count()

    @property
    def is_identity(self) -> bool:
        return self.x == 0 and self.z == 0

    def digits(self) -> list[int]:
        """Per-qubit factor codes (0..3 for I, X, Y, Z), qubit 0 first."""
        out = []
        for q in range(self.n):
            shift = self.n - 1 - q
            out.append(_BITS_DIGIT[((self.x >> shift) & 1, (self.z >> shift) & 1)])
        return out

    def label(self) -> str:
        body = "".join(_LABELS[d] for d in self.digits())
        return body if self.sign == 1 else "-" + body

    def unsigned(self) -> "PauliOp":
        return PauliOp(self.n, self.x, self.z)

    def to_bits(self) -> tuple[np.ndarray, np.ndarray]:
        return int_to_bits(self.x, self.n), int_to_bits(self.z, self.n)

    def matrix(self) -> np.ndarray:
        """Dense 2^n x 2^n matrix, built from the Kronecker product of factors."""
        out = np.array([[complex(self.sign)]])
        for d in self.digits():
            out = np.kron(out, SINGLE_QUBIT[d])
        return out

    def commutes_with(self, other: "PauliOp") -> bool:
        return ((self.x & other.z).bit_count() + (self.z & other.x).bit_count()) % 2 == 0

    def __mul__(self, other: "PauliOp") -> "PauliOp":
        """Product of two commuting Paulis (the result is again Hermitian)."""
        if self.n != other.n:
            raise ValueError("qubit count mismatch")
        x1, z1 = self.to_bits()
        x2, z2 = other.to_bits()
        x, z, sign = multiply_bits(x1, z1, self.sign, x2, z2, other.sign)
        return PauliOp(self.n, bits_to_int(x), bits_to_int(z), int(sign))

    def __neg__(self) -> "PauliOp":
        return PauliOp(self.n, self.x, self.z, -self.sign)

    def __repr__(self) -> str:
        return f"PauliOp({self.label()!r})"

    @classmethod
    def from_label(cls, label: str) -> "PauliOp":
        """Parse strings such as ``"XIZ"`` or ``"-YY"``."""
        sign = 1
        if label.startswith(("+", "-")):
            sign = -1 if label[0] == "-" else 1
            label = label[1:]
        n = len(label)
        x = z = 0
        for q, ch in enumerate(label.upper()):
            if ch not in _LABELS:
                raise ValueError(f"bad Pauli letter {ch!r}")
            xb, zb = _DIGIT_BITS[_LABELS.index(ch)]
            x |= xb << (n - 1 - q)
            z |= zb << (n - 1 - q)
        return cls(n, x, z, sign)


def identity(n: int) -> PauliOp:
    return PauliOp(n, 0, 0)


def pauli_from_index(n: int, k: int) -> PauliOp:
    if n < 1:
        raise ValueError(f"need at least one qubit, got n={n}")
    if not 0 <= k < 4**n:
        raise ValueError(f"Pauli index {k} out of range for n={n}")
    x = z = 0
    for q in range(n):
        shift = n - 1 - q
        xb, zb = _DIGIT_BITS[(k >> (2 * shift)) & 3]
        x |= xb << shift
        z |= zb << shift
    return PauliOp(n, x, z)


def index_of(p: PauliOp) -> int:
    k = 0
    for d in p.digits():
        k = 4 * k + d
    return k


def int_to_bits(value: int, n: int) -> np.ndarray:
    """Bit array with entry q holding qubit q."""
    return np.array([(value >> (n - 1 - q)) & 1 for q in range(n)], dtype=np.uint8)


def bits_to_int(bits) -> int:
    out = 0
    for b in np.asarray(bits).ravel():
        out = (out << 1) | int(b)
    return out


def bits_to_int_array(bits: np.ndarray) -> np.ndarray:
    """Rows of an (m, n) bit array to int64 values (requires n <= 62)."""
    bits = np.asarray(bits, dtype=np.int64)
    n = bits.shape[-1]
    if n > 62:
        raise ValueError("bit strings longer than 62 bits do not fit in int64")
    weights = np.int64(1) << np.arange(n - 1, -1, -1, dtype=np.int64)
    return bits @ weights


def int_array_to_bits(values: np.ndarray, n: int) -> np.ndarray:
    values = np.asarray(values, dtype=np.int64)
    shifts = np.arange(n - 1, -1, -1, dtype=np.int64)
    return ((values[..., None] >> shifts) & 1).astype(np.uint8)


def indices_to_xz(n: int, k: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised ``pauli_from_index``: arrays of x and z integers."""
    k = np.asarray(k, dtype=np.int64)
    x = np.zeros_like(k)
    z = np.zeros_like(k)
    xs = np.array([b[0] for b in _DIGIT_BITS], dtype=np.int64)
    zs = np.array([b[1] for b in _DIGIT_BITS], dtype=np.int64)
    for q in range(n):
        shift = n - 1 - q
        digit = (k >> (2 * shift)) & 3
        x |= xs[digit] << shift
        z |= zs[digit] << shift
    return x, z


def xz_to_indices(n: int, x: np.ndarray, z: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.int64)
    z = np.asarray(z, dtype=np.int64)
    table = np.array([[0, 3], [1, 2]], dtype=np.int64)  # [x][z] -> digit
    k = np.zeros(np.broadcast(x, z).shape, dtype=np.int64)
    for q in range(n):
        shift = n - 1 - q
        k = 4 * k + table[(x >> shift) & 1, (z >> shift) & 1]
    return k


def _g(x1, z1, x2, z2):
    # exponent of i picked up by single-qubit products W(x1,z1) W(x2,z2)
    x1 = x1.astype(np.int64)
    z1 = z1.astype(np.int64)
    x2 = x2.astype(np.int64)
    z2 = z2.astype(np.int64)
    return np.where(
        (x1 == 0) & (z1 == 0),
        0,
        np.where(
            (x1 == 1) & (z1 == 1),
            z2 - x2,
            np.where(x1 == 1, z2 * (2 * x2 - 1), x2 * (1 - 2 * z2)),
        ),
    )


def multiply_bits(x1, z1, s1, x2, z2, s2):
    """Multiply signed Paulis given as bit arrays (last axis = qubits).

    Works on batches.  The factors must commute, so the product is again a
    signed Hermitian Pauli.
    """
    phase = np.sum(_g(x1, z1, x2, z2), axis=-1) % 4
    if np.any(phase % 2):
        raise ValueError("product of anticommuting Paulis is not Hermitian")
    sign = np.asarray(s1) * np.asarray(s2) * np.where(phase == 2, -1, 1)
    return x1 ^ x2, z1 ^ z2, sign


def multiply_ints(x1: int, z1: int, s1: int, x2: int, z2: int, s2: int) -> tuple[int, int, int]:
    """Scalar ``multiply_bits`` on packed integers; any n."""
    x3, z3 = x1 ^ x2, z1 ^ z2
    phase = ((x1 & z1).bit_count() + (x2 & z2).bit_count() - (x3 & z3).bit_count() + 2 * (z1 & x2).bit_count()) % 4
    if phase % 2:
        raise ValueError("product of anticommuting Paulis is not Hermitian")
    return x3, z3, s1 * s2 * (-1 if phase == 2 else 1)


def _parity(values: np.ndarray) -> np.ndarray:
    return (np.bitwise_count(values) & 1).astype(np.int64)


def _check_cap(n: int, cap: int | None):
    cap = DENSE_CAP if cap is None else cap
    if n > cap:
        raise ValueError(f"dense enumeration over 4^{n} Paulis exceeds the cap n <= {cap}")


def expectation_pure(psi: np.ndarray, x: int, z: int) -> float:
    """<psi| W(x, z) |psi> in O(d)."""
    d = psi.shape[0]
    b = np.arange(d, dtype=np.int64)
    signs = 1 - 2 * _parity(z & b)
    val = np.vdot(psi[b ^ x], signs * psi) * (1j) ** ((x & z).bit_count() % 4)
    return float(val.real)


def expectation_density(rho: np.ndarray, x: int, z: int) -> float:
    """Tr(rho W(x, z)) in O(d)."""
    d = rho.shape[0]
    b = np.arange(d, dtype=np.int64)
    signs = 1 - 2 * _parity(z & b)
    val = np.sum(signs * rho[b, b ^ x]) * (1j) ** ((x & z).bit_count() % 4)
    return float(val.real)


def expectations_pure(psi: np.ndarray, x: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Batched ``expectation_pure`` for integer arrays x, z."""
    x = np.asarray(x, dtype=np.int64)[:, None]
    z = np.asarray(z, dtype=np.int64)[:, None]
    b = np.arange(psi.shape[0], dtype=np.int64)[None, :]
    signs = 1 - 2 * _parity(z & b)
    vals = np.sum(np.conj(psi[b ^ x]) * signs * psi[b], axis=1)
    vals = vals * (1j) ** (np.bitwise_count(x & z)[:, 0] % 4)
    return vals.real


def expectations_density(rho: np.ndarray, x: np.ndarray, z: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.int64)[:, None]
    z = np.asarray(z, dtype=np.int64)[:, None]
    b = np.arange(rho.shape[0], dtype=np.int64)[None, :]
    signs = 1 - 2 * _parity(z & b)
    vals = np.sum(signs * rho[b, b ^ x], axis=1)
    vals = vals * (1j) ** (np.bitwise_count(x & z)[:, 0] % 4)
    return vals.real


def pauli_trace_vector(matrix: np.ndarray, cap: int | None = None) -> np.ndarray:
    """Tr(M W_k) for every k, ordered by Pauli index.  Complex in general.

    Uses one Walsh-Hadamard transform per X-pattern, O(d^3) total.
    """
    d = matrix.shape[0]
    n = d.bit_length() - 1
    if 1 << n != d or matrix.shape != (d, d):
        raise ValueError("matrix must be square with power-of-two dimension")
    _check_cap(n, cap)
    b = np.arange(d, dtype=np.int64)
    xs = b[:, None]
    # V[x, b] = M[b, b ^ x]
    v = matrix[b[None, :], b[None, :] ^ xs]
    h = v @ scipy.linalg.hadamard(d)  # H[x, z] = sum_b (-1)^{z.b} V[x, b]
    h = h * (1j) ** (np.bitwise_count(xs & b[None, :]) % 4)
    out = np.empty(d * d, dtype=complex)
    out[_index_grid(n).ravel()] = h.ravel()
    return out


_INDEX_GRIDS: dict[int, np.ndarray] = {}


def _index_grid(n: int) -> np.ndarray:
    # grid[x, z] = Pauli index
    if n not in _INDEX_GRIDS:
        d = 1 << n
        b = np.arange(d, dtype=np.int64)
        _INDEX_GRIDS[n] = xz_to_indices(n, b[:, None], b[None, :])
    return _INDEX_GRIDS[n]


def pauli_expectation(state, p: PauliOp) -> float:
    """Tr(state W_p) for a PureState, DensityMatrix or StabilizerTableau."""
    if state.n != p.n:
        raise ValueError(f"state has {state.n} qubits but Pauli has {p.n}")
    return p.sign * state.expectation(p.x, p.z)


def char_fn(state, k: int) -> float:
    """chi(k) = Tr(state W_k) / sqrt(d)."""
    p = pauli_from_index(state.n, k)
    return pauli_expectation(state, p) / np.sqrt(2.0**state.n)


def char_fn_full(state, cap: int | None = None) -> np.ndarray:
    """All 4^n characteristic-function values, ordered by Pauli index."""
    _check_cap(state.n, cap)
    vals = pauli_trace_vector(state.density(), cap=cap)
    if np.max(np.abs(vals.imag), initial=0.0) > 1e-9:
        raise ValueError("state is not Hermitian: Pauli traces have imaginary parts")
    return vals.real / np.sqrt(2.0**state.n)
