"""
Entanglement-fidelity estimation for unitary channels.

Pairs (k, k') are drawn with Pr = chi_U(k, k')^2 / d^2.  Each use of the lab
channel prepares a uniformly random product eigenstate of W_{k'}, sends it
through the channel and measures W_k; the eigenvalue-weighted outcomes
average to chi_E(k, k').

Two simulation paths exist.  Dense channels (n <= CHANNEL_CAP) are applied to
density matrices directly.  Clifford circuits followed by Pauli-diagonal noise
are simulated in the Heisenberg picture: W_k is pulled back through the
actual circuit and evaluated on the product input state, so any n works.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from dfe.engine import DfeConfig, ell_formula, settings_count
from dfe.measurement import copies_for_channel_setting
from dfe.pauli import (
    SX,
    SY,
    SZ,
    ZERO_TOL,
    PauliOp,
    bits_to_int,
    bits_to_int_array,
    indices_to_xz,
    int_array_to_bits,
    int_to_bits,
    pauli_from_index,
    pauli_trace_vector,
    xz_to_indices,
)
from dfe.sampling import AliasTable
from dfe.states import NoiseModel

CHANNEL_CAP = 4
GATES = {"H": 1, "S": 1, "CNOT": 2}

_H = np.array([[1, 1], [1, -1]], dtype=complex) / math.sqrt(2)
_S = np.diag([1, 1j])


# -- Clifford circuits --------------------------------------------------------


@dataclass(frozen=True)
class CliffordCircuit:
    n: int
    gates: tuple[tuple[str, tuple[int, ...]], ...] = ()

    def __post_init__(self):
        gates = tuple((name, tuple(int(q) for q in qs)) for name, qs in self.gates)
        for name, qs in gates:
            if name not in GATES:
                raise ValueError(f"unsupported gate {name!r}")
            if len(qs) != GATES[name]:
                raise ValueError(f"{name} takes {GATES[name]} qubit(s), got {qs}")
            if any(not 0 <= q < self.n for q in qs):
                raise ValueError(f"gate {name} {qs} touches a qubit outside 0..{self.n - 1}")
            if name == "CNOT" and qs[0] == qs[1]:
                raise ValueError("CNOT control and target coincide")
        object.__setattr__(self, "gates", gates)

    def __len__(self):
        return len(self.gates)

    @classmethod
    def parse(cls, text: str, n: int | None = None) -> "CliffordCircuit":
        """Read one gate per line: ``H q``, ``S q`` or ``CNOT c t``.

        Blank lines and ``#`` comments are skipped.  Without ``n`` the qubit
        count is one more than the largest index used.
        """
        gates = []
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            name, *args = line.split()
            name = name.upper()
            if name == "CX":
                name = "CNOT"
            try:
                qs = tuple(int(a) for a in args)
            except ValueError:
                raise ValueError(f"line {lineno}: bad qubit index in {raw!r}") from None
            if name not in GATES or len(qs) != GATES[name]:
                raise ValueError(f"line {lineno}: cannot parse {raw!r}")
            gates.append((name, qs))
        if n is None:
            n = 1 + max((q for _, qs in gates for q in qs), default=0)
        return cls(n, tuple(gates))

    def to_text(self) -> str:
        return "".join(f"{name} {' '.join(map(str, qs))}\n" for name, qs in self.gates)

    @classmethod
    def random(cls, n: int, num_gates: int, rng: np.random.Generator) -> "CliffordCircuit":
        names = ["H", "S"] + (["CNOT"] if n > 1 else [])
        gates = []
        for _ in range(num_gates):
            name = names[rng.integers(len(names))]
            if name == "CNOT":
                c, t = rng.choice(n, size=2, replace=False)
                gates.append((name, (int(c), int(t))))
            else:
                gates.append((name, (int(rng.integers(n)),)))
        return cls(n, tuple(gates))

    def unitary(self, cap: int = 10) -> np.ndarray:
        if self.n > cap:
            raise ValueError(f"dense unitary for n={self.n} exceeds the cap {cap}")
        d = 1 << self.n
        u = np.eye(d, dtype=complex)
        for name, qs in self.gates:
            u = _gate_matrix(name, qs, self.n) @ u
        return u

    def propagate_bits(self, x: np.ndarray, z: np.ndarray, s: np.ndarray, inverse: bool = False):
        """Conjugate a batch of signed Paulis: U P U^dagger (or U^dagger P U).

        ``x``, ``z`` are (m, n) bit arrays and ``s`` the (m,) signs.
        """
        x = np.array(x, dtype=np.uint8, copy=True)
        z = np.array(z, dtype=np.uint8, copy=True)
        s = np.array(s, dtype=np.int64, copy=True)
        gates = reversed(self.gates) if inverse else self.gates
        for name, qs in gates:
            if name == "H":
                q = qs[0]
                s *= 1 - 2 * (x[:, q] & z[:, q]).astype(np.int64)
                x[:, q], z[:, q] = z[:, q].copy(), x[:, q].copy()
            elif name == "S" and not inverse:
                q = qs[0]
                s *= 1 - 2 * (x[:, q] & z[:, q]).astype(np.int64)
                z[:, q] ^= x[:, q]
            elif name == "S":
                # S^dagger: X -> -Y, Y -> X
                q = qs[0]
                z[:, q] ^= x[:, q]
                s *= 1 - 2 * (x[:, q] & z[:, q]).astype(np.int64)
            else:
                c, t = qs
                flip = x[:, c] & z[:, t] & (x[:, t] ^ z[:, c] ^ 1)
                s *= 1 - 2 * flip.astype(np.int64)
                x[:, t] ^= x[:, c]
                z[:, c] ^= z[:, t]
        return x, z, s


def propagate_int(circuit: CliffordCircuit, x: int, z: int, sign: int = 1, inverse: bool = False):
    """Scalar version of ``propagate_bits`` on packed integers (qubit q is bit n-1-q)."""
    n = circuit.n
    gates = reversed(circuit.gates) if inverse else circuit.gates
    for name, qs in gates:
        if name == "H":
            b = n - 1 - qs[0]
            xq, zq = (x >> b) & 1, (z >> b) & 1
            if xq & zq:
                sign = -sign
            if xq != zq:
                x ^= 1 << b
                z ^= 1 << b
        elif name == "S":
            b = n - 1 - qs[0]
            xq, zq = (x >> b) & 1, (z >> b) & 1
            if not inverse and xq & zq:
                sign = -sign
            if xq:
                z ^= 1 << b
                if inverse and not zq:
                    sign = -sign
        else:
            bc, bt = n - 1 - qs[0], n - 1 - qs[1]
            xc, zc = (x >> bc) & 1, (z >> bc) & 1
            xt, zt = (x >> bt) & 1, (z >> bt) & 1
            if xc & zt & (xt ^ zc ^ 1):
                sign = -sign
            x ^= xc << bt
            z ^= zt << bc
    return x, z, sign


def _gate_matrix(name: str, qs: tuple[int, ...], n: int) -> np.ndarray:
    if name == "CNOT":
        c, t = qs
        d = 1 << n
        b = np.arange(d)
        cbit = (b >> (n - 1 - c)) & 1
        out = b ^ (cbit << (n - 1 - t))
        m = np.zeros((d, d), dtype=complex)
        m[out, b] = 1
        return m
    op = _H if name == "H" else _S
    q = qs[0]
    return np.kron(np.kron(np.eye(1 << q), op), np.eye(1 << (n - q - 1)))


def clifford_propagate(circuit: CliffordCircuit, p: PauliOp) -> PauliOp:
    """U W_p U^dagger with the sign tracked exactly."""
    if p.n != circuit.n:
        raise ValueError("qubit count mismatch")
    xb, zb = p.to_bits()
    x, z, s = circuit.propagate_bits(xb[None, :], zb[None, :], np.array([p.sign]))
    return PauliOp(p.n, bits_to_int(x[0]), bits_to_int(z[0]), int(s[0]))


# -- channels -----------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ChannelModel:
    """A unitary, Clifford circuit or Kraus map, followed by optional noise."""

    n: int
    unitary: np.ndarray | None = None
    circuit: CliffordCircuit | None = None
    kraus_ops: tuple | None = None
    noise: NoiseModel = field(default_factory=NoiseModel)

    def __post_init__(self):
        given = sum(v is not None for v in (self.unitary, self.circuit, self.kraus_ops))
        if given != 1:
            raise ValueError("give exactly one of unitary, circuit or kraus_ops")
        d = 1 << self.n
        if self.unitary is not None:
            u = np.asarray(self.unitary, dtype=complex)
            if u.shape != (d, d) or not np.allclose(u.conj().T @ u, np.eye(d), atol=1e-9):
                raise ValueError("unitary must be a d x d unitary matrix")
            object.__setattr__(self, "unitary", u)
        if self.circuit is not None and self.circuit.n != self.n:
            raise ValueError("circuit acts on a different number of qubits")
        if self.kraus_ops is not None:
            ops = tuple(np.asarray(k, dtype=complex) for k in self.kraus_ops)
            total = sum(k.conj().T @ k for k in ops)
            if not np.allclose(total, np.eye(d), atol=1e-9):
                raise ValueError("Kraus operators are not trace preserving")
            object.__setattr__(self, "kraus_ops", ops)

    @classmethod
    def from_unitary(cls, u) -> "ChannelModel":
        u = np.asarray(u, dtype=complex)
        return cls(u.shape[0].bit_length() - 1, unitary=u)

    @classmethod
    def from_circuit(cls, circuit: CliffordCircuit) -> "ChannelModel":
        return cls(circuit.n, circuit=circuit)

    @classmethod
    def identity(cls, n: int) -> "ChannelModel":
        return cls(n, circuit=CliffordCircuit(n))

    @classmethod
    def from_kraus(cls, ops) -> "ChannelModel":
        ops = [np.asarray(k, dtype=complex) for k in ops]
        return cls(ops[0].shape[0].bit_length() - 1, kraus_ops=tuple(ops))

    def with_noise(self, noise: NoiseModel) -> "ChannelModel":
        return replace(self, noise=noise)

    @property
    def dim(self) -> int:
        return 1 << self.n

    @property
    def kind(self) -> str:
        base = "clifford" if self.circuit is not None else "unitary" if self.unitary is not None else "kraus"
        return base if self.noise.kind == "none" else f"composed({base}+{self.noise.kind})"

    @property
    def is_unitary(self) -> bool:
        return self.kraus_ops is None and (self.noise.kind == "none" or self.noise.p == 0)

    @property
    def is_clifford(self) -> bool:
        return self.circuit is not None

    def dense_unitary(self) -> np.ndarray:
        if self.unitary is not None:
            return self.unitary
        if self.circuit is not None:
            return self.circuit.unitary()
        raise ValueError("Kraus channel has no unitary part")

    def kraus(self) -> list[np.ndarray]:
        """Kraus operators of the whole map (noise after the base channel)."""
        base = list(self.kraus_ops) if self.kraus_ops is not None else [self.dense_unitary()]
        return [k_noise @ k for k_noise in self.noise.kraus(self.n) for k in base]

    def apply_operator(self, m: np.ndarray) -> np.ndarray:
        """The map applied to any d x d matrix (linear extension)."""
        if self.n > CHANNEL_CAP and self.circuit is None:
            raise ValueError(f"dense channel path is capped at n <= {CHANNEL_CAP}")
        if self.kraus_ops is not None:
            out = sum(k @ m @ k.conj().T for k in self.kraus_ops)
        else:
            u = self.dense_unitary()
            out = u @ m @ u.conj().T
        return self.noise.apply_matrix(out, self.n)


def char_fn_channel(channel: ChannelModel, k: int, kp: int) -> float:
    """chi_E(k, k') = Tr(W_k E(W_{k'})) / d."""
    n = channel.n
    if channel.is_clifford:
        xb, zb = pauli_from_index(n, kp).to_bits()
        x, z, s = channel.circuit.propagate_bits(xb[None, :], zb[None, :], np.array([1]))
        if xz_to_indices(n, bits_to_int(x[0]), bits_to_int(z[0])) != k:
            return 0.0
        f = channel.noise.pauli_factor(bits_to_int(x[0]), bits_to_int(z[0]))
        return float(s[0] * f)
    if n > CHANNEL_CAP:
        raise ValueError(f"dense channel path is capped at n <= {CHANNEL_CAP}")
    out = channel.apply_operator(pauli_from_index(n, kp).matrix())
    return float(np.trace(pauli_from_index(n, k).matrix() @ out).real / channel.dim)


def channel_char_table(channel: ChannelModel) -> np.ndarray:
    """Full table T[k, k'] = chi_E(k, k'), built one input Pauli at a time."""
    n = channel.n
    if n > CHANNEL_CAP:
        raise ValueError(f"dense channel path is capped at n <= {CHANNEL_CAP}")
    d2 = 4**n
    table = np.empty((d2, d2))
    for kp in range(d2):
        out = channel.apply_operator(pauli_from_index(n, kp).matrix())
        col = pauli_trace_vector(out, cap=CHANNEL_CAP)
        if np.max(np.abs(col.imag)) > 1e-9:
            raise ValueError("channel output is not Hermitian")
        table[:, kp] = col.real / channel.dim
    return table


def entanglement_fidelity_exact(target: ChannelModel, actual: ChannelModel) -> float:
    """Tr(U^dagger E)/d^2 = sum_i |Tr(U^dagger K_i)|^2 / d^2 from Kraus operators."""
    u = target.dense_unitary()
    d = target.dim
    return float(sum(abs(np.trace(u.conj().T @ k)) ** 2 for k in actual.kraus()) / d**2)


def pauli_noise_entanglement_fidelity(noise: NoiseModel, n: int) -> float:
    """F_e of (noise o U) against U, i.e. the mean Pauli factor of the noise."""
    d = 1 << n
    p = noise.p
    if noise.kind == "none":
        return 1.0
    if noise.kind == "depolarize":
        return (1 - p) + p / d**2
    if noise.kind == "depolarize_local":
        return (1 - p) ** n
    return (1 - p / 2) ** n


def avg_fidelity_from_entanglement(f_e: float, d: int, strict: bool = True, tol: float = 1e-9) -> float:
    """F_avg = (d F_e + 1) / (d + 1)."""
    if strict and not -tol <= f_e <= 1 + tol:
        raise ValueError(f"entanglement fidelity {f_e} outside [0, 1]")
    return (d * f_e + 1) / (d + 1)


# -- pair sampling ------------------------------------------------------------


class ChannelPairSampler:
    """Draws (k, k') with Pr = chi_U(k, k')^2 / d^2 for a unitary target."""

    def __init__(self, target: ChannelModel):
        if not target.is_unitary:
            raise ValueError("the target channel must be unitary")
        self.target = target
        self.n = target.n
        self.clifford = target.is_clifford
        if not self.clifford:
            table = channel_char_table(target)
            d = target.dim
            k, kp = np.nonzero(np.abs(table) >= ZERO_TOL)
            chi = table[k, kp]
            total = float(np.sum(chi**2) / d**2)
            if abs(total - 1) > 1e-9:
                raise ValueError(f"pair probabilities sum to {total}; target is not unitary")
            self._k, self._kp, self._chi = k.astype(np.int64), kp.astype(np.int64), chi
            self._alias = AliasTable(chi**2)

    def sample_bits(self, rng: np.random.Generator, size: int):
        """(k x-bits, k z-bits, k' x-bits, k' z-bits, chi_U) as (size, n) arrays."""
        n = self.n
        if self.clifford:
            xp = rng.integers(0, 2, size=(size, n), dtype=np.uint8)
            zp = rng.integers(0, 2, size=(size, n), dtype=np.uint8)
            x, z, s = self.target.circuit.propagate_bits(xp, zp, np.ones(size, dtype=np.int64))
            return x, z, xp, zp, s.astype(float)
        pick = self._alias.draw(rng, size)
        x, z = indices_to_xz(n, self._k[pick])
        xp, zp = indices_to_xz(n, self._kp[pick])
        return (
            int_array_to_bits(x, n),
            int_array_to_bits(z, n),
            int_array_to_bits(xp, n),
            int_array_to_bits(zp, n),
            self._chi[pick],
        )

    def table(self):
        """(k, k', chi_U) over the support (dense targets only)."""
        if self.clifford:
            raise ValueError("Clifford targets have d^2 pairs; enumerate via clifford_propagate")
        return self._k.copy(), self._kp.copy(), self._chi.copy()


def sample_channel_pair(target: ChannelModel, rng: np.random.Generator) -> tuple[int, int, float]:
    """One pair (k, k', chi_U).  Indices are Python ints, so any n works for Clifford targets."""
    sampler = target if isinstance(target, ChannelPairSampler) else ChannelPairSampler(target)
    n = sampler.n
    if sampler.clifford:
        xp, zp = int(rng.integers(0, 1 << n)), int(rng.integers(0, 1 << n))
        x, z, s = propagate_int(sampler.target.circuit, xp, zp)
        return PauliOp(n, x, z).index, PauliOp(n, xp, zp).index, float(s)
    x, z, xp, zp, chi = sampler.sample_bits(rng, 1)
    k = PauliOp(n, bits_to_int(x[0]), bits_to_int(z[0])).index
    kp = PauliOp(n, bits_to_int(xp[0]), bits_to_int(zp[0])).index
    return k, kp, float(chi[0])


# -- input eigenstates --------------------------------------------------------

_EIGVECS = {
    ("X", 1): np.array([1, 1]) / math.sqrt(2),
    ("X", -1): np.array([1, -1]) / math.sqrt(2),
    ("Y", 1): np.array([1, 1j]) / math.sqrt(2),
    ("Y", -1): np.array([1, -1j]) / math.sqrt(2),
    ("Z", 1): np.array([1, 0]),
    ("Z", -1): np.array([0, 1]),
}


@dataclass(frozen=True)
class ProductEigenstate:
    """Tensor product of single-qubit Pauli eigenstates, e.g. bases 'XZ', eigenvalues (+1, -1).

    ``lam`` is the eigenvalue of the Pauli the state was built for; identity
    factors (prepared in the Z basis) do not contribute to it.
    """

    bases: str
    eigenvalues: tuple[int, ...]
    lam: int

    def statevector(self) -> np.ndarray:
        v = np.ones(1, dtype=complex)
        for b, e in zip(self.bases, self.eigenvalues):
            v = np.kron(v, _EIGVECS[(b, e)])
        return v


def eigenbasis_product_state(p: PauliOp, a: int) -> ProductEigenstate:
    """The a-th product eigenstate of W_p (bit n-1-q of a picks the -1 eigenvector on qubit q)."""
    n = p.n
    if not 0 <= a < 1 << n:
        raise ValueError(f"eigenstate index {a} out of range for n={n}")
    bases, eigs, lam = [], [], 1
    for q, digit in enumerate(p.digits()):
        e = -1 if (a >> (n - 1 - q)) & 1 else 1
        bases.append("IXYZ"[digit] if digit else "Z")
        eigs.append(e)
        if digit:
            lam *= e
    return ProductEigenstate("".join(bases), tuple(eigs), lam)


def _local_basis_bits(xp: np.ndarray, zp: np.ndarray):
    # input basis per qubit: the factor of W_k', or Z where W_k' is the identity
    ident = (xp == 0) & (zp == 0)
    return xp, np.where(ident, 1, zp).astype(np.uint8), (~ident).astype(np.uint8)


# -- protocol -----------------------------------------------------------------


@dataclass
class ChannelDfeResult:
    f_e: float
    f_avg: float
    y_ideal: float | None
    ell: int
    k: np.ndarray
    kp: np.ndarray
    chi_u: np.ndarray
    m: np.ndarray
    b_sum: np.ndarray
    x_tilde: np.ndarray
    expected_uses_bound: float
    metadata: dict = field(default_factory=dict)
    preparations: list | None = None

    @property
    def m_total(self) -> int:
        return int(np.sum(self.m))

    @property
    def interval(self) -> tuple[float, float]:
        eps = self.metadata["epsilon"]
        return self.f_e - 2 * eps, self.f_e + 2 * eps

    def to_dict(self, records: bool = True) -> dict:
        out = {
            "f_e": self.f_e,
            "f_avg": self.f_avg,
            "y_ideal": self.y_ideal,
            "interval": list(self.interval),
            "confidence": 1 - 2 * self.metadata["delta"],
            "ell": self.ell,
            "m_total": self.m_total,
            "expected_uses_bound": self.expected_uses_bound,
            "metadata": self.metadata,
        }
        if records:
            out["settings"] = [
                {"k": int(k), "k_prime": int(kp), "chi_u": float(c), "m": int(m), "b_sum": int(b), "x_tilde": float(x)}
                for k, kp, c, m, b, x in zip(self.k, self.kp, self.chi_u, self.m, self.b_sum, self.x_tilde)
            ]
            if self.preparations is not None:
                for rec, prep in zip(out["settings"], self.preparations):
                    rec["prepared"] = [int(a) for a in prep]
        return out

    def to_json(self, records: bool = True) -> str:
        return json.dumps(self.to_dict(records), indent=2)


def expected_uses_bound(epsilon: float, delta: float, d: int) -> float:
    return 1 + 1 / (epsilon**2 * delta) + (4 * d**2 / epsilon**2) * math.log(4 / delta)


def _simulate_heisenberg(actual, x, z, xp, zp, m, a_bits, setting_of_use, rng):
    """+/-1 outcomes for every use when ``actual`` is a Clifford circuit plus Pauli noise."""
    ell = x.shape[0]
    # pull W_k back through the actual circuit
    bx, bz, t = actual.circuit.propagate_bits(x, z, np.ones(ell, dtype=np.int64), inverse=True)
    f = actual.noise.pauli_factor(bits_to_int_array(x), bits_to_int_array(z))
    lx, lz, _ = _local_basis_bits(xp, zp)
    support = (bx | bz).astype(bool)
    mismatch = support & ((bx != lx) | (bz != lz))
    deterministic = ~np.any(mismatch, axis=1)
    # e_use = t f (-1)^{a . support} when every factor matches the prepared basis
    par = np.sum(a_bits & support[setting_of_use], axis=1, dtype=np.int64) % 2
    e = np.where(deterministic[setting_of_use], (t * f)[setting_of_use] * (1 - 2 * par), 0.0)
    return np.where(rng.random(e.shape[0]) < (1 + e) / 2, 1, -1)


def _simulate_dense(actual, x, z, xp, zp, m, a_bits, setting_of_use, rng):
    n = actual.n
    d = 1 << n
    k = xz_to_indices(n, bits_to_int_array(x), bits_to_int_array(z))
    kp = xz_to_indices(n, bits_to_int_array(xp), bits_to_int_array(zp))
    # the outcome bias depends only on (output Pauli, input Pauli, prepared state)
    keys = (k[setting_of_use] * 4**n + kp[setting_of_use]) * d + bits_to_int_array(a_bits)
    uniq, inverse = np.unique(keys, return_inverse=True)
    outputs = {}
    vals = np.empty(uniq.shape[0])
    for j, key in enumerate(uniq.tolist()):
        rest, a = divmod(key, d)
        ko, ki = divmod(rest, 4**n)
        if (ki, a) not in outputs:
            psi = eigenbasis_product_state(pauli_from_index(n, ki), a).statevector()
            outputs[ki, a] = actual.apply_operator(np.outer(psi, psi.conj()))
        vals[j] = float(np.trace(pauli_from_index(n, ko).matrix() @ outputs[ki, a]).real)
    e = vals[inverse]
    return np.where(rng.random(e.shape[0]) < (1 + e) / 2, 1, -1)


def _ideal_chi_e(actual, x, z, xp, zp):
    n = actual.n
    if actual.is_clifford:
        fx, fz, s = actual.circuit.propagate_bits(xp, zp, np.ones(xp.shape[0], dtype=np.int64))
        hit = np.all((fx == x) & (fz == z), axis=1)
        f = actual.noise.pauli_factor(bits_to_int_array(fx), bits_to_int_array(fz))
        return np.where(hit, s * f, 0.0)
    if n > CHANNEL_CAP:
        return None
    k = xz_to_indices(n, bits_to_int_array(x), bits_to_int_array(z))
    kp = xz_to_indices(n, bits_to_int_array(xp), bits_to_int_array(zp))
    uniq, inverse = np.unique(k * 4**n + kp, return_inverse=True)
    vals = np.array([char_fn_channel(actual, *divmod(int(u), 4**n)) for u in uniq])
    return vals[inverse]


def estimate_entanglement_fidelity(
    target: ChannelModel,
    actual: ChannelModel,
    config: DfeConfig,
    rng: np.random.Generator | None = None,
    sign_convention: str = "signed",
    log_preparations: bool = False,
    metadata: dict | None = None,
) -> ChannelDfeResult:
    """Estimate F_e = Tr(U^dagger E)/d^2 from simulated uses of ``actual``.

    ``sign_convention="absorbed"`` folds the sign of chi_U into the measured
    observable, so chi_U >= 0 and outcomes are flipped instead; both choices
    produce identical estimates.
    """
    if sign_convention not in ("signed", "absorbed"):
        raise ValueError("sign_convention must be 'signed' or 'absorbed'")
    if target.n != actual.n:
        raise ValueError("target and actual channels act on different qubit counts")
    if not actual.is_clifford and actual.n > CHANNEL_CAP:
        raise ValueError(f"non-Clifford channels are simulated densely only for n <= {CHANNEL_CAP}")
    if actual.is_clifford and actual.kraus_ops is not None:
        raise ValueError("unsupported channel combination")
    sampler = target if isinstance(target, ChannelPairSampler) else ChannelPairSampler(target)
    target = sampler.target
    n, d = target.n, target.dim
    if n > 31:
        raise ValueError("estimation packs Pauli indices into int64 (n <= 31)")

    if config.regime == "well_conditioned" and config.alpha is None:
        alpha = 1.0 if sampler.clifford else float(np.abs(sampler.table()[2]).min())
        config = replace(config, alpha=alpha)
    ell = settings_count(config)

    if rng is None:
        streams = [np.random.default_rng(s) for s in np.random.SeedSequence(config.seed).spawn(3)]
    else:
        streams = rng.spawn(3)
    pair_rng, prep_rng, shot_rng = streams

    x, z, xp, zp, chi = sampler.sample_bits(pair_rng, ell)
    m = np.atleast_1d(copies_for_channel_setting(chi, ell, config.epsilon, config.delta))
    setting_of_use = np.repeat(np.arange(ell), m)
    a_bits = prep_rng.integers(0, 2, size=(setting_of_use.size, n), dtype=np.uint8)

    simulate = _simulate_heisenberg if actual.is_clifford else _simulate_dense
    outcomes = simulate(actual, x, z, xp, zp, m, a_bits, setting_of_use, shot_rng)

    # lambda of each prepared state: product of eigenvalues on the support of W_k'
    _, _, in_support = _local_basis_bits(xp, zp)
    lam = 1 - 2 * (np.sum(a_bits & in_support[setting_of_use], axis=1, dtype=np.int64) % 2)
    b = lam * outcomes
    chi_used = chi
    if sign_convention == "absorbed":
        b = b * np.sign(chi)[setting_of_use].astype(np.int64)
        chi_used = np.abs(chi)
    b_sum = np.bincount(setting_of_use, weights=b, minlength=ell).astype(np.int64)
    x_tilde = b_sum / (chi_used * m)
    f_e = float(np.mean(x_tilde))

    chi_e = _ideal_chi_e(actual, x, z, xp, zp)
    y_ideal = float(np.mean(chi_e / chi)) if chi_e is not None else None

    meta = {
        "epsilon": config.epsilon,
        "delta": config.delta,
        "regime": config.regime_label(),
        "ell_formula": ell_formula(config),
        "copies_formula": "ceil(4 ln(4/delta) / (chi_U^2 ell eps^2))",
        "n": n,
        "seed": config.seed,
        "log": "natural",
        "target_kind": target.kind,
        "actual_kind": actual.kind,
        "noise": actual.noise.describe(),
        "simulation": "heisenberg-clifford" if actual.is_clifford else "dense",
        "sign_convention": sign_convention,
        "diamond_norm_bound": "4 d sqrt(1 - F_e) (annotation only)",
    }
    if config.alpha is not None:
        meta["alpha"] = config.alpha
    meta.update(metadata or {})

    preparations = None
    if log_preparations:
        a_int = bits_to_int_array(a_bits) if n <= 62 else None
        preparations = [a_int[setting_of_use == i] for i in range(ell)]

    return ChannelDfeResult(
        f_e=f_e,
        f_avg=avg_fidelity_from_entanglement(f_e, d, strict=False),
        y_ideal=y_ideal,
        ell=ell,
        k=xz_to_indices(n, bits_to_int_array(x), bits_to_int_array(z)),
        kp=xz_to_indices(n, bits_to_int_array(xp), bits_to_int_array(zp)),
        chi_u=chi,
        m=m,
        b_sum=b_sum,
        x_tilde=x_tilde,
        expected_uses_bound=expected_uses_bound(config.epsilon, config.delta, d),
        metadata=meta,
        preparations=preparations,
    )
