"""Command-line entry point: ``dfe state|channel|fig1|sample-dist|calibrate``."""
from __future__ import annotations

import argparse
import json
import sys

from dfe.harness import ExperimentSpec, run

COMMANDS = {
    "state": "state_dfe",
    "channel": "channel_dfe",
    "fig1": "fig1",
    "sample-dist": "sample_dist",
    "calibrate": "calibration",
}
DEFAULTS = {
    "fig1": {"trials": 200},
    "calibration": {"trials": 1000, "epsilon": 0.1, "delta": 0.1},
    "sample_dist": {"trials": 100000},
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_help(sys.stderr)
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dfe", description="Pauli-sampling fidelity estimation on simulated states and channels.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    for name, help_text in (
        ("state", "estimate the fidelity of a noisy lab state with a pure target"),
        ("channel", "estimate the entanglement fidelity of a noisy channel with a unitary target"),
        ("fig1", "Haar-random study: residual and copy-count histograms"),
        ("sample-dist", "compare sampled Pauli frequencies with the exact importance distribution"),
        ("calibrate", "empirical failure rates of both estimation stages"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--spec", help="JSON experiment spec; command-line flags override its fields")
        p.add_argument("--target", help="e.g. ghz:4, w:3, haar:3:7, clifford:circuit.txt, cnot")
        p.add_argument("--noise", help="none, depolarize:p, depolarize_local:p or dephase:p")
        p.add_argument("--epsilon", type=float)
        p.add_argument("--delta", type=float)
        p.add_argument("--regime", help="generic, well_conditioned[:alpha], shrinking_noise[_short], truncated:beta")
        p.add_argument("--seed", type=int)
        p.add_argument("--trials", type=int)
        p.add_argument("--n", type=int, help="qubit count (fig1, calibrate)")
        p.add_argument("--out", help="output directory")
        if name == "channel":
            p.add_argument("--sign-convention", choices=("signed", "absorbed"))
            p.add_argument("--log-preparations", action="store_true")
        if name in ("state", "channel"):
            p.add_argument("--no-records", action="store_true", help="omit per-setting records from stdout")
    return parser


def spec_from_args(args) -> ExperimentSpec:
    kind = COMMANDS[args.command]
    data = json.loads(open(args.spec).read()) if args.spec else {}
    if data.get("kind", kind) != kind:
        raise UsageError(f"spec file is for {data['kind']!r}, not {kind!r}")
    data["kind"] = kind
    for key, val in DEFAULTS.get(kind, {}).items():
        data.setdefault(key, val)
    for key in ("target", "noise", "epsilon", "delta", "regime", "seed", "trials", "n", "out"):
        val = getattr(args, key)
        if val is not None:
            data[key] = val
    if getattr(args, "sign_convention", None):
        data["sign_convention"] = args.sign_convention
    if getattr(args, "log_preparations", False):
        data["log_preparations"] = True
    return ExperimentSpec.from_dict(data)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("a command is required")
        spec = spec_from_args(args)
    except UsageError as exc:
        if str(exc) == "a command is required":
            parser.print_help(sys.stderr)
        print(f"dfe: error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, TypeError, OSError) as exc:
        print(f"dfe: error: {exc}", file=sys.stderr)
        return 1

    try:
        result = run(spec)
    except Exception as exc:  # noqa: BLE001 - report any runtime failure as exit 2
        print(f"dfe: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2

    if hasattr(result, "to_json"):
        print(result.to_json(records=not getattr(args, "no_records", False)))
    else:
        print(json.dumps(result, indent=2, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
