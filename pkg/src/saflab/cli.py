"""Command-line front end: ``saflab {simulate,theory,aec,sweep}``.

Flags mirror the JSON config keys; values given on the command line override
those read from ``--config``.  Exit status is 0 on success, 2 for invalid
flags or configuration and 1 for runtime failures.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from .exceptions import InvalidArgumentError, NoLocalMinimumError, UnstableStepError
from .experiments import (
    ExperimentConfig,
    plot_traces,
    run_aec,
    run_sysid,
    theory_vs_sim,
    write_csv,
    write_json,
)
from .signals import SAMPLE_RATE, random_plant, write_wav
from .theory import build_plant_model, theory_report

# flag dest -> config key
_OVERRIDES = {
    "algo": "algorithms",
    "n_subbands": "n_subbands",
    "filter_len": "filter_len",
    "mu": "mu",
    "mu2": "mu2",
    "mu_max": "mu_max",
    "theta": "theta",
    "sigma_in": "sigma_in",
    "sigma_out": "sigma_out",
    "impulse_prob": "impulse_prob",
    "impulse_ratio": "impulse_ratio",
    "input_kind": "input_kind",
    "trials": "trials",
    "iters": "iters",
    "seed": "seed",
    "out": "out",
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise InvalidArgumentError(message)


def _algo_list(text):
    return [a.strip() for a in text.split(",") if a.strip()]


def _float_list(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _add_common(p, filter_len_alias=False):
    names = ["--filter-len", "--l"] if filter_len_alias else ["--filter-len"]
    p.add_argument(*names, dest="filter_len", type=int, help="adaptive filter length L")
    p.add_argument("--n-subbands", type=int, help="number of subbands N")
    p.add_argument("--theta", type=float, help="output/input noise variance ratio")
    p.add_argument("--sigma-in", type=float, help="input-noise variance")
    p.add_argument("--sigma-out", type=float, help="output-noise variance")
    p.add_argument("--input-kind", choices=("white", "ar1"), help="clean input model")
    p.add_argument("--seed", type=int)
    p.add_argument("--config", type=Path, help="JSON config file")
    p.add_argument("--out", help="output directory")


def _add_run(p):
    p.add_argument("--algo", type=_algo_list, help="comma-separated algorithm names")
    p.add_argument("--mu", type=float, help="step size")
    p.add_argument("--mu2", type=float, help="small fixed step of the combination filters")
    p.add_argument("--mu-max", type=float, help="upper bound of the variable step")
    p.add_argument("--impulse-prob", type=float, help="Bernoulli impulse probability")
    p.add_argument("--impulse-ratio", type=float, help="impulse/background variance ratio")
    p.add_argument("--trials", type=int)
    p.add_argument("--iters", type=int, help="decimated iterations per trial")
    p.add_argument("--plot", action="store_true", help="also write an SVG chart")


def build_parser():
    parser = _Parser(prog="saflab", description=__doc__.splitlines()[0], allow_abbrev=False)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="system-identification Monte Carlo", allow_abbrev=False)
    _add_common(p)
    _add_run(p)

    p = sub.add_parser("theory", help="stability bounds and steady-state prediction", allow_abbrev=False)
    _add_common(p, filter_len_alias=True)
    p.add_argument("--h-norm-sq", type=float, default=1.0, help="squared plant norm")
    p.add_argument("--mu", type=float, help="step for the steady-state prediction")
    p.add_argument("--matrices", action="store_true", help="include L x L matrices in the JSON")

    p = sub.add_parser("aec", help="acoustic echo cancellation on speech", allow_abbrev=False)
    _add_common(p)
    _add_run(p)
    p.add_argument("--wav", type=Path, help="far-end mono 16-bit WAV (synthetic speech if omitted)")

    p = sub.add_parser("sweep", help="theory versus simulation over a step/variance grid", allow_abbrev=False)
    _add_common(p)
    _add_run(p)
    p.add_argument("--mus", type=_float_list, default=[0.1, 0.2], help="comma-separated steps")
    p.add_argument("--variances", type=_float_list, default=[0.02, 0.05],
                   help="comma-separated noise variances (input = output / theta)")
    return parser


def _resolve_config(args):
    data = {}
    if args.config is not None:
        data = ExperimentConfig.from_json(args.config).to_dict()
    for dest, key in _OVERRIDES.items():
        value = getattr(args, dest, None)
        if value is not None:
            data[key] = value
    return ExperimentConfig.from_dict(data)


def _out_dir(config_out):
    out = Path(config_out or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _summary(config, traces):
    return {
        "config": config.to_dict(),
        "final_nmsd_db": {k: float(t.final_db) for k, t in traces.items()},
        "diverged_trials": {k: t.diverged for k, t in traces.items()},
        "trials": config.trials,
    }


def _all_diverged(config, traces):
    return all(t.diverged == config.trials for t in traces.values())


def _cmd_simulate(args):
    config = _resolve_config(args)
    digest = config.config_hash()
    traces = run_sysid(config)
    out = _out_dir(config.out)
    write_csv(out / "nmsd.csv", traces, digest)
    write_json(out / "summary.json", _summary(config, traces), digest)
    if args.plot:
        plot_traces(out / "nmsd.svg", traces, digest, title="System identification")
    for label, t in traces.items():
        print(f"{label}: final NMSD {t.final_db:.2f} dB ({t.diverged}/{t.trials} diverged)")
    return 1 if _all_diverged(config, traces) else 0


def _cmd_aec(args):
    config = _resolve_config(args)
    digest = config.config_hash()
    traces, residuals = run_aec(config, far_end_wav=args.wav)
    out = _out_dir(config.out)
    write_csv(out / "nmsd.csv", traces, digest)
    write_json(out / "summary.json", _summary(config, traces), digest)
    for label, res in residuals.items():
        peak = float(np.max(np.abs(res))) if res.size else 0.0
        scaled = res / peak * 0.9 if peak > 0 else res
        safe = "".join(c if c.isalnum() or c in "-_." else "_" for c in label)
        write_wav(out / f"residual_{safe}.wav", scaled, SAMPLE_RATE, comment=f"config_sha256={digest}")
    if args.plot:
        plot_traces(out / "nmsd.svg", traces, digest, title="Echo cancellation")
    for label, t in traces.items():
        print(f"{label}: final NMSD {t.final_db:.2f} dB")
    return 1 if _all_diverged(config, traces) else 0


def _cmd_theory(args):
    base = ExperimentConfig.from_json(args.config).to_dict() if args.config is not None else {}
    L = args.filter_len if args.filter_len is not None else base.get("filter_len", 128)
    N = args.n_subbands if args.n_subbands is not None else base.get("n_subbands", 4)
    sigma_in = args.sigma_in if args.sigma_in is not None else base.get("sigma_in", 0.05)
    theta = args.theta if args.theta is not None else base.get("theta") or 1.0
    kind = args.input_kind or base.get("input_kind", "white")
    seed = args.seed if args.seed is not None else base.get("seed", 0)
    params = {"filter_len": L, "n_subbands": N, "sigma_in": sigma_in, "theta": theta,
              "h_norm_sq": args.h_norm_sq, "input_kind": kind, "seed": seed, "mu": args.mu}
    if L is None or L <= 4:
        raise InvalidArgumentError(f"filter length must exceed 4, got {L}")
    if args.h_norm_sq <= 0:
        raise InvalidArgumentError("--h-norm-sq must be positive")
    digest = hashlib.sha256(json.dumps(params, sort_keys=True).encode()).hexdigest()
    h = random_plant(L, seed, norm_sq=args.h_norm_sq)
    model = build_plant_model(h, theta, sigma_in, num_subbands=N, kind=kind, h_norm_sq=args.h_norm_sq)
    report = theory_report(model, args.mu)
    payload = {"parameters": params, "report": report.to_dict(include_matrices=args.matrices)}
    if args.out:
        write_json(_out_dir(args.out) / "theory.json", payload, digest)
    payload["config_hash"] = digest
    print(json.dumps(payload, indent=2, sort_keys=True))
    return 0


def _cmd_sweep(args):
    config = _resolve_config(args)
    digest = config.config_hash()
    rows = theory_vs_sim(config, args.mus, args.variances)
    out = _out_dir(config.out)
    lines = [f"# config_sha256={digest}", "mu,sigma2,predicted_db,simulated_db,gap_db,status"]
    fmt = lambda v: "" if v is None else f"{v:.6g}"
    for r in rows:
        lines.append(",".join([fmt(r["mu"]), fmt(r["sigma2"]), fmt(r["predicted_db"]),
                               fmt(r["simulated_db"]), fmt(r["gap_db"]), r["status"]]))
    (out / "sweep.csv").write_text("\n".join(lines) + "\n")
    write_json(out / "sweep.json", {"config": config.to_dict(), "rows": rows}, digest)
    for r in rows:
        if r["status"] == "ok":
            print(f"mu={r['mu']:g} sigma2={r['sigma2']:g}: predicted {r['predicted_db']:.2f} dB, "
                  f"simulated {r['simulated_db']:.2f} dB, gap {r['gap_db']:+.2f} dB")
        else:
            print(f"mu={r['mu']:g} sigma2={r['sigma2']:g}: unstable")
    return 0


_COMMANDS = {"simulate": _cmd_simulate, "theory": _cmd_theory, "aec": _cmd_aec, "sweep": _cmd_sweep}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    except InvalidArgumentError as exc:
        print(f"saflab: error: {exc}", file=sys.stderr)
        return 2
    try:
        return _COMMANDS[args.command](args)
    except (InvalidArgumentError, TypeError) as exc:
        print(f"saflab: error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ArithmeticError, NoLocalMinimumError, UnstableStepError) as exc:
        print(f"saflab: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
