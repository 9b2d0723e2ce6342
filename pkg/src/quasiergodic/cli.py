"""Command-line front end.

Usage::

    quasiergodic COMMAND --config PATH [--out DIR] [options]

Every run prints its JSON report.  With ``--out`` it also writes
``<command>.json``, an optional ``<command>.csv`` (``--format csv``) and a
``manifest.json`` that ``quasiergodic replay --config manifest.json``
re-executes and checks byte for byte.

Exit codes: 0 success, 2 precondition failure, 3 numerical failure,
64 unknown command.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
import tempfile

import numpy as np

from . import __version__
from .chain_model import (BirthDeathSpec, DEFAULT_MAX_TERMS, DEFAULT_TOL_SERIES,
                          boundary_series, classify_boundary)
from .distributions import h_process, ordering_check, qed, qsd
from .duality import dualize, eigentime_identity
from .errors import InvalidSpec, NumericalError, PreconditionError
from .finite_chain import (FiniteAbsorbingChain, conditional_marginal,
                           conditional_time_average, eta_limit_check, h_generator,
                           perron_data, qed_finite)
from .simulator import estimate_qed, estimate_qsd, simulate, simulate_h_process
from .spectral import N_CAP, decay_parameter

EXIT_OK = 0
EXIT_PRECONDITION = 2
EXIT_NUMERICAL = 3
EXIT_USAGE = 64

DEFAULTS = {
    "classify": {"tol": DEFAULT_TOL_SERIES},
    "lambda": {"tol": 1e-6},
    "qsd": {"tol": 1e-6},
    "qed": {"tol": 1e-6},
    "hprocess": {"tol": 1e-6},
    "ordering": {"tol": 1e-6},
    "eigentime": {"tol": 1e-10, "truncation": 200},
    "oracle": {"tol": 1e-10, "truncation": 60},
    "simulate": {"tol": 1e-6},
}
COMMANDS = tuple(DEFAULTS) + ("replay",)

USAGE = f"""usage: quasiergodic COMMAND --config PATH [options]

commands:
  classify   boundary class at infinity and the four boundary series
  lambda     decay parameter with its truncation witness
  qsd        quasi-stationary distribution
  qed        quasi-ergodic distribution
  hprocess   rates and stationary law of the conditioned process
  ordering   likelihood-ratio order of the quasi-ergodic vs quasi-stationary law
  eigentime  passage time to infinity against the reciprocal spectrum sum
  oracle     exact finite-chain checks (spec truncated at --truncation, or a chain file)
  simulate   Monte Carlo estimates of both laws
  replay     re-run a manifest and compare outputs

run 'quasiergodic COMMAND --help' for options; version {__version__}
"""


def build_parser(command):
    d = DEFAULTS.get(command, {})
    p = argparse.ArgumentParser(prog=f"quasiergodic {command}")
    p.add_argument("--config", required=True, help="JSON spec, chain or manifest")
    p.add_argument("--out", help="directory for report files")
    p.add_argument("--tol", type=float, default=d.get("tol"),
                   help=f"main tolerance (default {d.get('tol')})")
    p.add_argument("--max-terms", type=int, default=DEFAULT_MAX_TERMS,
                   help=f"boundary-series terms (default {DEFAULT_MAX_TERMS})")
    p.add_argument("--seed", type=int, default=0, help="simulation seed (default 0)")
    p.add_argument("--paths", type=int, default=10_000, help="simulated paths (default 10000)")
    p.add_argument("--horizon", type=float, default=None,
                   help="time horizon; simulate defaults to 20, oracle to 50/gap")
    p.add_argument("--truncation", type=int, default=d.get("truncation"),
                   help="states kept, spectrum points or truncation cap, per command")
    p.add_argument("--format", choices=("json", "csv"), default="json",
                   help="also write the vector payload as CSV when 'csv'")
    p.add_argument("--init", type=int, default=1, help="initial state (default 1)")
    p.add_argument("--h-process", action="store_true",
                   help="simulate the conditioned process instead of rejection")
    p.add_argument("--jobs", type=int, default=1, help="worker processes for simulate")
    return p


def _load_config(path):
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise InvalidSpec(f"cannot read config: {exc}") from exc
    try:
        return json.loads(raw), hashlib.sha256(raw).hexdigest()
    except json.JSONDecodeError as exc:
        raise InvalidSpec(f"config is not valid JSON: {exc}") from exc


def _is_chain(doc):
    return isinstance(doc, dict) and "rates" in doc and "absorption" in doc


def _spec(doc):
    if _is_chain(doc):
        raise InvalidSpec("command needs a birth-death spec, got a finite chain")
    return BirthDeathSpec.from_dict(doc)


def _lambda(spec, args):
    # --truncation is the eigen-truncation cap only for the lambda command
    cap = args.truncation if args.command == "lambda" and args.truncation else N_CAP
    return decay_parameter(spec, args.tol, n_cap=cap)


def cmd_classify(doc, args):
    spec = _spec(doc)
    series = boundary_series(spec, args.tol, args.max_terms)
    return classify_boundary(series).to_dict(), None


def cmd_lambda(doc, args):
    return _lambda(_spec(doc), args).to_dict(), None


def _distribution_cmd(doc, args, fn):
    spec = _spec(doc)
    summary = _lambda(spec, args)
    n = args.truncation if args.command in ("qsd", "qed") else None
    dist = fn(spec, summary.lambda_, n)
    report = {"lambda": summary.lambda_, "distribution": dist.to_dict()}
    return report, dist.to_csv()


def cmd_qsd(doc, args):
    return _distribution_cmd(doc, args, qsd)


def cmd_qed(doc, args):
    return _distribution_cmd(doc, args, qed)


def cmd_hprocess(doc, args):
    spec = _spec(doc)
    lam = _lambda(spec, args).lambda_
    h = h_process(spec, lam, args.truncation)
    return h.to_dict(), h.stationary().to_csv()


def cmd_ordering(doc, args):
    spec = _spec(doc)
    lam = _lambda(spec, args).lambda_
    nu = qsd(spec, lam, args.truncation)
    m = qed(spec, lam, len(nu))
    result = ordering_check(m, nu)
    report = result.to_dict()
    report["lambda"] = lam
    lines = ["state,ratio"] + [f"{s},{r!r}" for s, r in zip(result.states, result.ratio)]
    return report, "\n".join(lines) + "\n"


def cmd_eigentime(doc, args):
    spec = _spec(doc)
    pair = dualize(spec)
    report = eigentime_identity(pair, k_max=args.truncation, tol=args.tol,
                                max_terms=args.max_terms).to_dict()
    report["primal"] = pair.primal.to_dict()
    report["dual"] = pair.dual.to_dict()
    return report, None


def cmd_oracle(doc, args):
    if _is_chain(doc):
        chain = FiniteAbsorbingChain.from_dict(doc)
    else:
        chain = FiniteAbsorbingChain.from_birth_death(_spec(doc), args.truncation)
    pd = perron_data(chain, args.tol)
    m = qed_finite(pd)
    t = args.horizon if args.horizon else 50.0 / pd.gap
    grid = [k / pd.gap for k in (1, 2, 4, 8)]
    marginal = conditional_marginal(chain, args.init, t)
    averages = []
    for j in range(chain.n_states):
        f = np.zeros(chain.n_states)
        f[j] = 1.0
        averages.append(conditional_time_average(chain, args.init, t, f).value)
    hg = h_generator(chain, pd)
    report = {
        "perron": pd.to_dict(),
        "qed": m.to_dict(),
        "horizon": t,
        "marginal_tv_to_nu": 0.5 * float(np.abs(marginal.distribution - pd.nu).sum()),
        "log_survival": marginal.log_survival,
        "time_average": averages,
        "time_average_max_error": float(np.max(np.abs(np.array(averages) - m.probabilities()))),
        "eta_limit": {"t": grid, "residual": eta_limit_check(chain, pd, grid).tolist()},
        "h_generator": {"constants": hg.constants_residual,
                        "stationary": hg.stationary_residual},
    }
    return report, m.to_csv()


def cmd_simulate(doc, args):
    t = args.horizon if args.horizon else 20.0
    if args.h_process:
        spec = _spec(doc)
        lam = _lambda(spec, args).lambda_
        batch = simulate_h_process(h_process(spec, lam), args.init, t, args.paths,
                                   args.seed, n_jobs=args.jobs)
    else:
        model = FiniteAbsorbingChain.from_dict(doc) if _is_chain(doc) else _spec(doc)
        batch = simulate(model, args.init, t, args.paths, args.seed, n_jobs=args.jobs)
    occupation = estimate_qed(batch)
    terminal = estimate_qsd(batch)
    report = {"batch": batch.manifest(), "qed": occupation.to_dict(),
              "qsd": terminal.to_dict(), "fingerprint": batch.fingerprint()}
    return report, occupation.to_csv()


HANDLERS = {
    "classify": cmd_classify, "lambda": cmd_lambda, "qsd": cmd_qsd, "qed": cmd_qed,
    "hprocess": cmd_hprocess, "ordering": cmd_ordering, "eigentime": cmd_eigentime,
    "oracle": cmd_oracle, "simulate": cmd_simulate,
}


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not serialisable: {type(obj).__name__}")


def _finite(obj):
    """Non-finite floats become the strings ``"inf"``, ``"-inf"``, ``"nan"``."""
    if isinstance(obj, float) and not math.isfinite(obj):
        return repr(obj)
    if isinstance(obj, dict):
        return {k: _finite(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_finite(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _finite(obj.tolist())
    if isinstance(obj, np.generic):
        return _finite(obj.item())
    return obj


def _dumps(obj):
    return json.dumps(_finite(obj), indent=2, sort_keys=True, default=_json_default,
                      allow_nan=False) + "\n"


def _flags(args):
    keys = ("tol", "max_terms", "seed", "paths", "horizon", "truncation", "format",
            "init", "h_process")
    return {k: getattr(args, k) for k in keys}


def _write_outputs(args, doc, digest, report_text, csv_text):
    os.makedirs(args.out, exist_ok=True)
    outputs = {}
    name = f"{args.command}.json"
    with open(os.path.join(args.out, name), "w") as fh:
        fh.write(report_text)
    outputs[name] = hashlib.sha256(report_text.encode()).hexdigest()
    if args.format == "csv" and csv_text is not None:
        name = f"{args.command}.csv"
        with open(os.path.join(args.out, name), "w") as fh:
            fh.write(csv_text)
        outputs[name] = hashlib.sha256(csv_text.encode()).hexdigest()
    manifest = {
        "tool": "quasiergodic",
        "version": __version__,
        "command": args.command,
        "config_sha256": digest,
        "config": doc,
        "flags": _flags(args),
        "seeds": [args.seed],
        "tolerances": {"tol": args.tol, "max_terms": args.max_terms},
        "outputs": outputs,
    }
    with open(os.path.join(args.out, "manifest.json"), "w") as fh:
        fh.write(_dumps(manifest))


def execute(command, argv):
    parser = build_parser(command)
    args = parser.parse_args(argv)
    args.command = command
    doc, digest = _load_config(args.config)
    report, csv_text = HANDLERS[command](doc, args)
    report_text = _dumps(report)
    if args.out:
        _write_outputs(args, doc, digest, report_text, csv_text)
    return report_text


def replay(argv):
    p = argparse.ArgumentParser(prog="quasiergodic replay")
    p.add_argument("--config", required=True, help="manifest.json from an earlier run")
    p.add_argument("--out", help="directory for the re-run (default: temporary)")
    args = p.parse_args(argv)
    manifest, _ = _load_config(args.config)
    try:
        command, flags, doc = manifest["command"], manifest["flags"], manifest["config"]
    except (KeyError, TypeError) as exc:
        raise InvalidSpec(f"not a manifest: missing {exc}") from None
    with tempfile.TemporaryDirectory() as tmp:
        cfg = os.path.join(tmp, "config.json")
        with open(cfg, "w") as fh:
            json.dump(doc, fh)
        out = args.out or os.path.join(tmp, "out")
        rerun = ["--config", cfg, "--out", out]
        for k, v in flags.items():
            if v is None or v is False:
                continue
            flag = "--" + k.replace("_", "-")
            rerun += [flag] if v is True else [flag, repr(v) if isinstance(v, float) else str(v)]
        execute(command, rerun)
        mismatched = []
        for name, digest in manifest.get("outputs", {}).items():
            with open(os.path.join(out, name), "rb") as fh:
                if hashlib.sha256(fh.read()).hexdigest() != digest:
                    mismatched.append(name)
    report = {"command": command, "reproduced": not mismatched, "mismatched": mismatched}
    return _dumps(report), not mismatched


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    if not argv or argv[0] in ("-h", "--help"):
        sys.stdout.write(USAGE)
        return EXIT_OK if argv else EXIT_USAGE
    command, rest = argv[0], argv[1:]
    if command not in COMMANDS:
        sys.stderr.write(f"unknown command {command!r}\n\n{USAGE}")
        return EXIT_USAGE
    try:
        if command == "replay":
            text, ok = replay(rest)
            sys.stdout.write(text)
            return EXIT_OK if ok else EXIT_NUMERICAL
        sys.stdout.write(execute(command, rest))
        return EXIT_OK
    except PreconditionError as exc:
        sys.stderr.write(f"precondition failed: {exc}\n")
        return EXIT_PRECONDITION
    except NumericalError as exc:
        sys.stderr.write(f"numerical failure: {exc}\n")
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
