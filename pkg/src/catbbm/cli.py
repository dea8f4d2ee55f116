"""Command-line front end: configure, run, verify, study, export.

Three subcommands share one flag vocabulary:

  simulate   run an ensemble and write per-replicate statistics as CSV
  verify     run the oracle-vs-Monte-Carlo battery and write a JSON report
  study      limit-law / fluctuation trend studies (CSV + JSON summary)

Every run writes `manifest.json` echoing the fully resolved configuration
(defaults and seed included) into the output directory; nothing outside
--out is touched.  A plain key=value file passed via --config supplies
defaults that explicit flags override.  Exit codes: 0 success, 2
configuration or precondition error, 3 statistical failure or too many
capped replicates.  Worker-process count comes from CATBBM_THREADS
(default: all cores) and never changes any output.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

from . import __version__, lab
from .engine import SimConfig
from .lab import TooManyFailedReplicates

_DEFAULTS = {
    "beta": 1.0,
    "x0": 0.0,
    "horizons": None,
    "seed": 0,
    "replicates": 10000,
    "mode": "exact",
    "dt": None,
    "epsilon": None,
    "cap": 10_000_000,
    "thresholds": (),
    "two_time": None,
    "out": "catbbm-out",
}

_FLOAT_LIST_KEYS = {"horizons", "thresholds"}
_FLOAT_KEYS = {"beta", "x0", "dt", "epsilon"}
_INT_KEYS = {"seed", "replicates", "cap"}


def _parse_float_list(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(part) for part in text.split(",") if part.strip() != "")
    except ValueError as exc:
        raise ValueError(f"expected a comma-separated list of numbers, got {text!r}") from exc


def _parse_two_time(text: str) -> tuple[tuple[float, float, float, float], ...]:
    quads = []
    for group in text.split(";"):
        if not group.strip():
            continue
        values = _parse_float_list(group)
        if len(values) != 4:
            raise ValueError(f"--two-time entries need four numbers s,t,x,y; got {group!r}")
        quads.append(tuple(values))
    if not quads:
        raise ValueError("--two-time was given but contained no entries")
    return tuple(quads)


def _add_common_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--beta", type=float, help="branching intensity (default 1)")
    p.add_argument("--x0", type=float, help="start position (default 0)")
    p.add_argument("--horizons", type=str, help="comma-separated observation times")
    p.add_argument("--seed", type=int, help="global seed; fully determines all outputs")
    p.add_argument("--replicates", type=int, help="number of independent replicates")
    p.add_argument("--mode", choices=["exact", "discretized"], help="engine (default exact)")
    p.add_argument("--dt", type=float, help="Euler step (discretized mode)")
    p.add_argument("--epsilon", type=float, help="catalyst half-width (discretized mode)")
    p.add_argument("--cap", type=int, help="population cap per replicate")
    p.add_argument("--thresholds", type=str, help="comma-separated count-above levels")
    p.add_argument("--out", type=str, help="output directory (default ./catbbm-out)")
    p.add_argument("--config", type=str, help="key=value file; flags override its values")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="catbbm",
        description="Exact simulator and verification harness for catalytic branching Brownian motion.",
    )
    parser.add_argument("--version", action="version", version=f"catbbm {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run an ensemble and export per-replicate CSV")
    _add_common_flags(sim)

    ver = sub.add_parser("verify", help="statistical verification against the closed forms")
    ver.add_argument(
        "target",
        choices=["moments", "martingale", "bounds", "many-to-one", "all"],
        help="which verification battery to run",
    )
    ver.add_argument("--two-time", dest="two_time", type=str,
                     help="semicolon-separated s,t,x,y quadruples for the two-time bound grid")
    _add_common_flags(ver)

    stu = sub.add_parser("study", help="limit-law / fluctuation trend studies")
    stu.add_argument("target", choices=["limit-law", "fluctuations"], help="study to run")
    _add_common_flags(stu)
    return parser


def _read_config_file(path: str) -> dict:
    values: dict = {}
    try:
        with open(path) as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise ValueError(f"--config: cannot read {path!r}: {exc}") from exc
    for lineno, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"--config: line {lineno} is not key=value: {raw.rstrip()!r}")
        key, _, text = line.partition("=")
        key, text = key.strip(), text.strip()
        if key not in _DEFAULTS:
            raise ValueError(f"--config: unknown key {key!r} on line {lineno}")
        if key in _FLOAT_LIST_KEYS:
            values[key] = _parse_float_list(text)
        elif key in _FLOAT_KEYS:
            values[key] = float(text)
        elif key in _INT_KEYS:
            values[key] = int(text)
        elif key == "two_time":
            values[key] = _parse_two_time(text)
        else:
            values[key] = text
    return values


def _resolve(ns: argparse.Namespace) -> dict:
    """Layer defaults < config file < explicit flags into one settings dict."""
    settings = dict(_DEFAULTS)
    if getattr(ns, "config", None):
        settings.update(_read_config_file(ns.config))
    for key in _DEFAULTS:
        value = getattr(ns, key, None)
        if value is None:
            continue
        if key in _FLOAT_LIST_KEYS and isinstance(value, str):
            value = _parse_float_list(value)
        if key == "two_time" and isinstance(value, str):
            value = _parse_two_time(value)
        settings[key] = value
    if settings["mode"] == "discretized":
        missing = [f"--{k}" for k in ("dt", "epsilon") if settings[k] is None]
        if missing:
            raise ValueError(f"discretized mode requires {' and '.join(missing)}")
    return settings


def _build_config(settings: dict, horizons: tuple[float, ...]) -> SimConfig:
    return SimConfig(
        beta=settings["beta"],
        horizons=horizons,
        x0=settings["x0"],
        seed=settings["seed"],
        max_population=settings["cap"],
        mode=settings["mode"],
        dt=settings["dt"] if settings["mode"] == "discretized" else None,
        epsilon=settings["epsilon"] if settings["mode"] == "discretized" else None,
    )


def _write_json(obj, path: str) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2)
        fh.write("\n")


def _write_manifest(out_dir: str, command: str, settings: dict, outputs: list[str], extra=None) -> None:
    manifest = {
        "package": "catbbm",
        "version": __version__,
        "command": command,
        "settings": {
            key: (list(value) if isinstance(value, tuple) else value)
            for key, value in sorted(settings.items())
        },
        "outputs": outputs,
    }
    if extra:
        manifest.update(extra)
    _write_json(manifest, os.path.join(out_dir, "manifest.json"))


def _config_echo(config: SimConfig, n: int) -> dict:
    return {
        "beta": config.beta,
        "x0": config.x0,
        "horizons": list(config.horizons),
        "seed": config.seed,
        "max_population": config.max_population,
        "mode": config.mode,
        "dt": config.dt,
        "epsilon": config.epsilon,
        "replicates": n,
    }


def cmd_simulate(settings: dict) -> int:
    if settings["horizons"] is None:
        raise ValueError("--horizons is required for simulate")
    config = _build_config(settings, tuple(settings["horizons"]))
    ensemble = lab.run_replicates(config, settings["replicates"], tuple(settings["thresholds"]))
    out_dir = settings["out"]
    os.makedirs(out_dir, exist_ok=True)
    csv_path = os.path.join(out_dir, "replicates.csv")
    lab.write_ensemble_csv(ensemble, csv_path)
    _write_manifest(
        out_dir,
        "simulate",
        settings,
        ["replicates.csv"],
        extra={"n_failed_replicates": len(ensemble.failures), "config": _config_echo(config, settings["replicates"])},
    )
    return 0


def cmd_verify(settings: dict, target: str) -> int:
    config = _build_config(
        {**settings, "mode": "exact", "dt": None, "epsilon": None}, lab.DEFAULT_MOMENT_TIMES
    )
    two_time = None
    if settings["two_time"] is not None:
        from .oracle import TwoTimeQuery

        two_time = [
            TwoTimeQuery(x0=config.x0, s=s, t=t, x=x, y=y, beta=config.beta)
            for s, t, x, y in settings["two_time"]
        ]
    reports = lab.verification_sweep(
        config, settings["replicates"], {target}, two_time=two_time
    )
    all_passed = all(r.passed for r in reports)
    out_dir = settings["out"]
    os.makedirs(out_dir, exist_ok=True)
    document = {
        "target": target,
        "all_passed": all_passed,
        "config": _config_echo(config, settings["replicates"]),
        "reports": [r.to_dict() for r in reports],
    }
    _write_json(document, os.path.join(out_dir, "report.json"))
    _write_manifest(out_dir, f"verify {target}", settings, ["report.json"])
    for r in reports:
        print(f"{r.verdict.upper():4s} {r.name} z={r.z_score:+.3f}")
    return 0 if all_passed else 3


def cmd_study(settings: dict, target: str) -> int:
    horizons = settings["horizons"]
    if horizons is None or len(horizons) < 2:
        raise ValueError("study requires --horizons with at least 2 points")
    config = _build_config(
        {**settings, "mode": "exact", "dt": None, "epsilon": None}, tuple(horizons)
    )
    out_dir = settings["out"]
    os.makedirs(out_dir, exist_ok=True)
    n = settings["replicates"]

    if target == "limit-law":
        report = lab.limit_law_study(config, list(horizons), n)
        rows = [
            ["time", "ks_distance", "ks_diff", "ks_diff_sd", "median"],
        ]
        for i, t in enumerate(report.horizons):
            rows.append(
                [
                    repr(float(t)),
                    repr(report.ks_distance[i]),
                    repr(report.ks_diff[i - 1]) if i > 0 else "",
                    repr(report.ks_diff_sd[i - 1]) if i > 0 else "",
                    repr(report.medians[i]),
                ]
            )
    else:
        report = lab.fluctuation_study(config, list(horizons), n)
        rows = [
            ["time", "q_0.001", "q_0.01", "median", "q_0.99", "q_0.999",
             "env_center", "env_upper", "env_lower"],
        ]
        for i, t in enumerate(report.horizons):
            env = report.envelopes[i]
            rows.append(
                [
                    repr(float(t)),
                    repr(report.quantiles[0.001][i]),
                    repr(report.quantiles[0.01][i]),
                    repr(report.quantiles[0.5][i]),
                    repr(report.quantiles[0.99][i]),
                    repr(report.quantiles[0.999][i]),
                    repr(env[0]) if env else "",
                    repr(env[1]) if env else "",
                    repr(env[2]) if env else "",
                ]
            )

    csv_path = os.path.join(out_dir, "study.csv")
    with open(csv_path, "w", newline="") as fh:
        csv.writer(fh).writerows(rows)
    document = {
        "config": _config_echo(config, n),
        **report.to_dict(),
    }
    _write_json(document, os.path.join(out_dir, "study.json"))
    _write_manifest(out_dir, f"study {target}", settings, ["study.csv", "study.json"])
    for name, ok in report.verdicts.items():
        print(f"{'OK  ' if ok else 'WARN'} {name} (qualitative)")
    return 0


def run(argv=None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    try:
        settings = _resolve(ns)
        if ns.command == "simulate":
            return cmd_simulate(settings)
        if ns.command == "verify":
            return cmd_verify(settings, ns.target)
        return cmd_study(settings, ns.target)
    except (ValueError, OSError) as exc:
        print(f"catbbm: error: {exc}", file=sys.stderr)
        return 2
    except TooManyFailedReplicates as exc:
        print(f"catbbm: {exc}", file=sys.stderr)
        return 3


def main() -> int:
    return run()


if __name__ == "__main__":
    sys.exit(main())
