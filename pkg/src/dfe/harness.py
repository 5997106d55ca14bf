"""Experiment runners behind the command line: specs, target parsing and outputs."""
from __future__ import annotations

import csv
import io
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from dfe.channels import (
    CliffordCircuit,
    ChannelModel,
    entanglement_fidelity_exact,
    estimate_entanglement_fidelity,
    pauli_noise_entanglement_fidelity,
)
from dfe.engine import DfeConfig, build_sampler, estimate_fidelity, expected_copies_bound, settings_count
from dfe.pauli import DENSE_CAP, pauli_from_index, xz_to_indices
from dfe.sampling import ImportanceDistribution
from dfe.states import (
    NoiseModel,
    PureState,
    StabilizerTableau,
    computational_basis_state,
    make_dicke,
    make_ghz,
    make_haar_random,
    make_w,
    state_from_json,
)

KINDS = ("fig1", "state_dfe", "channel_dfe", "sample_dist", "calibration")
RESIDUAL_EDGES = np.round(np.linspace(-0.1, 0.1, 41), 6)


@dataclass
class ExperimentSpec:
    kind: str
    target: str | None = None
    noise: str = "none"
    epsilon: float = 0.05
    delta: float = 0.05
    regime: str = "generic"
    trials: int = 1
    seed: int | None = None
    out: str | None = None
    n: int | None = None
    options: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown experiment kind {self.kind!r}; choose from {KINDS}")
        if int(self.trials) < 1:
            raise ValueError("trials must be >= 1")
        self.trials = int(self.trials)
        NoiseModel.parse(self.noise)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentSpec":
        known = {f for f in cls.__dataclass_fields__}
        extra = {k: v for k, v in data.items() if k not in known}
        args = {k: v for k, v in data.items() if k in known}
        args.setdefault("options", {}).update(extra)
        return cls(**args)

    @classmethod
    def from_json(cls, path) -> "ExperimentSpec":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def config(self, **overrides) -> DfeConfig:
        kw = {"seed": self.seed}
        kw.update(overrides)
        return DfeConfig.from_regime(self.epsilon, self.delta, self.regime, **kw)

    def noise_model(self) -> NoiseModel:
        return NoiseModel.parse(self.noise)

    def resolved(self) -> dict:
        out = asdict(self)
        out["noise"] = self.noise_model().describe()
        return out


# -- targets ------------------------------------------------------------------


def parse_state_target(text: str):
    """``ghz:n``, ``w:n``, ``dicke:n:k``, ``haar:n[:seed]``, ``basis:n[:b]``,
    ``stabilizer:XX,ZZ`` or ``json:path``.

    Returns (target for sampling, pure state for the lab).  The lab state is
    the tableau itself for stabilizer targets so noiseless runs work at any n.
    """
    name, _, rest = text.partition(":")
    args = rest.split(":") if rest else []
    try:
        if name == "ghz":
            t = make_ghz(int(args[0]))
            return t, t
        if name == "stabilizer":
            t = StabilizerTableau.from_labels(args[0].split(","))
            return t, t
        if name == "w":
            n = int(args[0])
            return ImportanceDistribution.w_state(n), make_w(n)
        if name == "dicke":
            s = make_dicke(int(args[0]), int(args[1]))
            return s, s
        if name == "haar":
            s = make_haar_random(int(args[0]), seed=int(args[1]) if len(args) > 1 else None)
            return s, s
        if name == "basis":
            s = computational_basis_state(int(args[0]), int(args[1]) if len(args) > 1 else 0)
            return s, s
        if name == "json":
            s = state_from_json(Path(rest).read_text())
            return s, s
    except IndexError:
        raise ValueError(f"target {text!r} is missing a parameter") from None
    raise ValueError(f"unknown state target {text!r}")


def lab_state(pure, noise: NoiseModel):
    if noise.kind == "none" or noise.p == 0:
        return pure
    if pure.n > DENSE_CAP:
        raise ValueError(f"noisy lab states are dense; n={pure.n} exceeds the cap {DENSE_CAP}")
    return noise.apply(pure)


def parse_channel_target(text: str) -> ChannelModel:
    """``clifford:path``, ``random_clifford:n:gates[:seed]``, ``cnot``, ``h``,
    ``identity:n`` or ``haar_unitary:n[:seed]``."""
    name, _, rest = text.partition(":")
    args = rest.split(":") if rest else []
    try:
        if name == "clifford":
            return ChannelModel.from_circuit(CliffordCircuit.parse(Path(rest).read_text()))
        if name == "random_clifford":
            rng = np.random.default_rng(int(args[2]) if len(args) > 2 else None)
            return ChannelModel.from_circuit(CliffordCircuit.random(int(args[0]), int(args[1]), rng))
        if name == "cnot":
            return ChannelModel.from_circuit(CliffordCircuit(2, (("CNOT", (0, 1)),)))
        if name == "h":
            return ChannelModel.from_circuit(CliffordCircuit(1, (("H", (0,)),)))
        if name == "identity":
            return ChannelModel.identity(int(args[0]))
        if name == "haar_unitary":
            n = int(args[0])
            u = stats.unitary_group.rvs(1 << n, random_state=int(args[1]) if len(args) > 1 else None)
            return ChannelModel.from_unitary(u)
    except IndexError:
        raise ValueError(f"target {text!r} is missing a parameter") from None
    raise ValueError(f"unknown channel target {text!r}")


# -- helpers ------------------------------------------------------------------


def worker_count() -> int:
    return max(1, int(os.environ.get("DFE_THREADS", "1")))


def _map(fn, items):
    workers = worker_count()
    if workers == 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items, chunksize=max(1, len(items) // (4 * workers))))


def trial_seeds(seed, trials: int) -> list[np.random.SeedSequence]:
    return np.random.SeedSequence(seed).spawn(trials)


def histogram_csv(values, edges) -> str:
    """``bin_lo,bin_hi,count`` rows; values outside the edges land in +-inf rows."""
    values = np.asarray(values, dtype=float)
    counts, _ = np.histogram(values, bins=edges)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["bin_lo", "bin_hi", "count"])
    w.writerow(["-inf", repr(float(edges[0])), int(np.sum(values < edges[0]))])
    for lo, hi, c in zip(edges[:-1], edges[1:], counts):
        w.writerow([repr(float(lo)), repr(float(hi)), int(c)])
    w.writerow([repr(float(edges[-1])), "inf", int(np.sum(values > edges[-1]))])
    return buf.getvalue()


def _write(out: Path, name: str, text: str):
    out.mkdir(parents=True, exist_ok=True)
    (out / name).write_text(text)


def _dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


# -- state and channel runs ---------------------------------------------------


def run_state(spec: ExperimentSpec):
    if not spec.target:
        raise ValueError("state run needs a target")
    target, pure = parse_state_target(spec.target)
    noise = spec.noise_model()
    result = estimate_fidelity(
        target,
        lab_state(pure, noise),
        spec.config(),
        metadata={"target": spec.target, "noise": noise.describe()},
    )
    if spec.out:
        _write(Path(spec.out), "state_result.json", result.to_json() + "\n")
    return result


def run_channel(spec: ExperimentSpec):
    if not spec.target:
        raise ValueError("channel run needs a target")
    target = parse_channel_target(spec.target)
    actual = target.with_noise(spec.noise_model())
    result = estimate_entanglement_fidelity(
        target,
        actual,
        spec.config(),
        sign_convention=spec.options.get("sign_convention", "signed"),
        log_preparations=bool(spec.options.get("log_preparations", False)),
        metadata={"target": spec.target},
    )
    if actual.is_clifford or actual.n <= 2:
        truth = (
            pauli_noise_entanglement_fidelity(actual.noise, actual.n)
            if actual.is_clifford
            else entanglement_fidelity_exact(target, actual)
        )
        result.metadata["f_e_exact"] = truth
    if spec.out:
        _write(Path(spec.out), "channel_result.json", result.to_json() + "\n")
    return result


# -- Haar-random study --------------------------------------------------------


def _fig1_trial(args):
    n, noise_text, eps, delta, seq = args
    state_seq, run_seq = seq.spawn(2)
    pure = make_haar_random(n, seed=state_seq)
    noise = NoiseModel.parse(noise_text)
    lab = noise.apply(pure)
    psi = pure.statevector()
    fidelity = float(np.real(np.conj(psi) @ lab.matrix @ psi))
    res = estimate_fidelity(pure, lab, DfeConfig(eps, delta), rng=np.random.default_rng(run_seq))
    return fidelity, res.y_tilde, res.y_ideal, res.m_total


def run_fig1(spec: ExperimentSpec) -> dict:
    """Haar-random targets under noise; writes residual and copy histograms plus a summary."""
    n = spec.n or 8
    if n > DENSE_CAP:
        raise ValueError(f"n={n} exceeds the dense cap {DENSE_CAP}")
    noise_text = spec.noise if spec.noise != "none" else "depolarize_local:0.1"
    config = DfeConfig(spec.epsilon, spec.delta)
    ell = settings_count(config)
    d = 1 << n
    bound = expected_copies_bound(spec.epsilon, spec.delta, d)

    jobs = [(n, noise_text, spec.epsilon, spec.delta, s) for s in trial_seeds(spec.seed, spec.trials)]
    rows = _map(_fig1_trial, jobs)
    fid, y_t, y_i, m = (np.array(c) for c in zip(*rows))
    resid = y_t - fid
    m_mean = float(np.mean(m))
    copy_edges = np.linspace(0.0, 4 * bound, 41)

    summary = {
        "trials": spec.trials,
        "residual_mean": float(np.mean(resid)),
        "residual_std": float(np.std(resid, ddof=1)) if spec.trials > 1 else 0.0,
        "ideal_residual_std": float(np.std(y_i - fid, ddof=1)) if spec.trials > 1 else 0.0,
        "residual_std_error_of_mean": float(np.std(resid, ddof=1) / math.sqrt(spec.trials)) if spec.trials > 1 else 0.0,
        "fidelity_mean": float(np.mean(fid)),
        "m_total_mean": m_mean,
        "m_total_max": int(np.max(m)),
        "expected_copies_bound": bound,
        "fraction_m_over_4x_bound": float(np.mean(m > 4 * bound)),
        "fraction_m_over_4x_mean": float(np.mean(m > 4 * m_mean)),
        "config": {
            "kind": "fig1",
            "n": n,
            "epsilon": spec.epsilon,
            "delta": spec.delta,
            "regime": "generic",
            "ell": ell,
            "ell_formula": "ceil(1 / (eps^2 delta))",
            "copies_formula": "ceil(2 ln(2/delta) / (d chi^2 ell eps^2))",
            "log": "natural",
            "noise": NoiseModel.parse(noise_text).describe(),
            "seed": spec.seed,
            "trial_seeds": "SeedSequence(seed).spawn(trials)[i]",
            "residual": "y_tilde - Tr(rho sigma)",
            "residual_bins": [float(RESIDUAL_EDGES[0]), float(RESIDUAL_EDGES[-1]), len(RESIDUAL_EDGES) - 1],
            "copies_bins": [0.0, float(4 * bound), 40],
        },
    }
    if spec.out:
        out = Path(spec.out)
        _write(out, "residual_hist.csv", histogram_csv(resid, RESIDUAL_EDGES))
        _write(out, "copies_hist.csv", histogram_csv(m, copy_edges))
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["trial", "fidelity", "y_tilde", "y_ideal", "residual", "m_total"])
        for i, (f, a, b, r, mm) in enumerate(zip(fid, y_t, y_i, resid, m)):
            w.writerow([i, repr(float(f)), repr(float(a)), repr(float(b)), repr(float(r)), int(mm)])
        _write(out, "trials.csv", buf.getvalue())
        _write(out, "summary.json", _dumps(summary))
    return summary


# -- importance distribution check -------------------------------------------


def run_sample_dist(spec: ExperimentSpec) -> dict:
    """Draw ``trials`` Paulis from a target's importance distribution and compare with the exact table."""
    if not spec.target:
        raise ValueError("sample-dist needs a target")
    target, _ = parse_state_target(spec.target)
    config = spec.config()
    sampler = build_sampler(target, config)
    k_exact, chi = sampler.table()
    prob = chi**2
    rng = np.random.default_rng(np.random.SeedSequence(spec.seed))
    x, z, _ = sampler.sample(rng, spec.trials)
    drawn = xz_to_indices(sampler.n, x, z)
    pos = np.searchsorted(k_exact, drawn)
    if np.any(pos >= k_exact.size) or np.any(k_exact[np.minimum(pos, k_exact.size - 1)] != drawn):
        raise RuntimeError("sampler produced a Pauli outside the support")
    counts = np.bincount(pos, minlength=k_exact.size)
    chisq = stats.chisquare(counts, prob / prob.sum() * spec.trials)
    summary = {
        "target": spec.target,
        "sampler": sampler.mode,
        "draws": spec.trials,
        "support_size": int(k_exact.size),
        "chi_square": float(chisq.statistic),
        "p_value": float(chisq.pvalue),
        "seed": spec.seed,
    }
    if spec.out:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["k", "label", "chi", "probability", "count"])
        for k, c, p, cnt in zip(k_exact, chi, prob, counts):
            w.writerow([int(k), pauli_from_index(sampler.n, int(k)).label(), repr(float(c)), repr(float(p)), int(cnt)])
        _write(Path(spec.out), "sample_dist.csv", buf.getvalue())
        _write(Path(spec.out), "sample_dist_summary.json", _dumps(summary))
    return summary


# -- calibration --------------------------------------------------------------

CALIBRATION_TARGETS = ("ghz", "w", "haar")


def _calibration_trial(args):
    n, name, noise_text, eps, delta, seq = args
    state_seq, run_seq = seq.spawn(2)
    if name == "ghz":
        tableau = make_ghz(n)
        target, pure = tableau, PureState(n, tableau.statevector())
    elif name == "w":
        target, pure = ImportanceDistribution.w_state(n), make_w(n)
    else:
        pure = make_haar_random(n, seed=state_seq)
        target = pure
    lab = lab_state(pure, NoiseModel.parse(noise_text))
    psi = pure.statevector()
    fidelity = float(np.real(np.conj(psi) @ lab.density() @ psi))
    res = estimate_fidelity(target, lab, DfeConfig(eps, delta), rng=np.random.default_rng(run_seq))
    return name, fidelity, res.y_ideal, res.y_tilde


def run_calibration(spec: ExperimentSpec) -> dict:
    """Empirical failure rates of both estimation stages against delta (+3 sigma)."""
    n = spec.n or 3
    targets = spec.options.get("targets", list(CALIBRATION_TARGETS))
    noise_text = spec.noise if spec.noise != "none" else "dephase:0.2"
    eps, delta = spec.epsilon, spec.delta
    seqs = trial_seeds(spec.seed, spec.trials)
    jobs = [(n, targets[i % len(targets)], noise_text, eps, delta, s) for i, s in enumerate(seqs)]
    rows = _map(_calibration_trial, jobs)

    slack = 3 * math.sqrt(delta * (1 - delta) / spec.trials)
    threshold = delta + slack

    def rates(subset):
        f = np.array([r[1] for r in subset])
        y = np.array([r[2] for r in subset])
        yt = np.array([r[3] for r in subset])
        return int(np.sum(np.abs(y - f) >= eps)), int(np.sum(np.abs(yt - y) >= eps)), len(subset)

    s1, s2, total = rates(rows)
    per_target = {}
    for name in targets:
        a, b, c = rates([r for r in rows if r[0] == name])
        per_target[name] = {"trials": c, "stage1_failures": a, "stage2_failures": b}
    report = {
        "trials": total,
        "stage1_failures": s1,
        "stage2_failures": s2,
        "stage1_rate": s1 / total,
        "stage2_rate": s2 / total,
        "threshold": threshold,
        "stage1_ok": s1 / total <= threshold,
        "stage2_ok": s2 / total <= threshold,
        "per_target": per_target,
        "config": {
            "kind": "calibration",
            "n": n,
            "targets": targets,
            "epsilon": eps,
            "delta": delta,
            "regime": "generic",
            "ell": settings_count(DfeConfig(eps, delta)),
            "noise": NoiseModel.parse(noise_text).describe(),
            "seed": spec.seed,
            "stage1": "|y_ideal - Tr(rho sigma)| >= eps",
            "stage2": "|y_tilde - y_ideal| >= eps",
            "slack": "3 sqrt(delta (1 - delta) / trials)",
        },
    }
    if spec.out:
        _write(Path(spec.out), "calibration.json", _dumps(report))
    return report


RUNNERS = {
    "state_dfe": run_state,
    "channel_dfe": run_channel,
    "fig1": run_fig1,
    "sample_dist": run_sample_dist,
    "calibration": run_calibration,
}


def run(spec: ExperimentSpec):
    return RUNNERS[spec.kind](spec)
