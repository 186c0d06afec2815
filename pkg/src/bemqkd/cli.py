"""Command-line front end.

Every subcommand reads an optional flat ``key = value`` config file whose
keys are listed in ``SCHEMAS``; unknown keys are rejected.  Lists are
comma-separated, or ``start:stop:count`` for an evenly spaced inclusive grid.
``--seed`` overrides the config's ``seed``.
"""
from __future__ import annotations

import argparse
import configparser
import math
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

import numpy as np

from . import calibration as cal
from . import fsa, security, session
from .core import EfficiencyCurve, RandomSource, TimingGrid
from .report import Report, Table


class ConfigError(ValueError):
    pass


def parse_float_list(text: str) -> list[float]:
    text = text.strip()
    if not text:
        return []
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise ConfigError(f"range must be start:stop:count, got {text!r}")
        start, stop, count = float(parts[0]), float(parts[1]), int(parts[2])
        if count < 1:
            raise ConfigError("range count must be positive")
        return [float(v) for v in np.linspace(start, stop, count)]
    return [float(v) for v in text.split(",")]


def parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


def _optional(conv: Callable[[str], Any]) -> Callable[[str], Any]:
    def parse(text: str):
        return None if text.strip().lower() in ("", "none") else conv(text)

    return parse


@dataclass(frozen=True)
class Key:
    parse: Callable[[str], Any]
    default: Any
    help: str = ""


CURVE_KEYS = {
    "peak_efficiency": Key(float, 0.13, "detector peak efficiency"),
    "fwhm": Key(float, 50.0, "efficiency-curve FWHM in ps"),
    "center": Key(float, 0.0, "offset of the curve maximum in ps"),
    "dark_count_rate": Key(float, 4e-6, "dark count probability per gate"),
    "step": Key(float, 12.5, "timing-grid step in ps"),
    "n_steps": Key(int, 64, "timing-grid steps per cycle"),
}

SCHEMAS: dict[str, dict[str, Key]] = {
    "calibrate": {
        "seed": Key(int, None),
        "trials": Key(int, 320, "attacked calibrations to run"),
        "pulses_per_step": Key(int, 5000),
        "mean_photon_number": Key(float, 0.7),
        "pulse_offsets": Key(parse_float_list, [cal.FAKED_FIRST_OFFSET, cal.FAKED_FIRST_OFFSET + cal.FAKED_INTERVAL]),
        "pulse_weights": Key(_optional(parse_float_list), None),
        "workers": Key(int, 1),
        **CURVE_KEYS,
    },
    "fsa-sweep": {
        "eta_grid": Key(parse_float_list, parse_float_list("0.01:1:100")),
        "partial_etas": Key(parse_float_list, [0.3, 0.5, 0.7, 0.9]),
        "r_grid": Key(parse_float_list, parse_float_list("0:1:101")),
        "qber_cap": Key(float, fsa.QBER_CAP),
    },
    "keyrate": {
        "eta_grid": Key(parse_float_list, [1.0, 0.7, 0.5, 0.2]),
        "e_b_grid": Key(parse_float_list, parse_float_list("0:0.3:301")),
    },
    "session": {
        "seed": Key(int, None),
        "n_pulses": Key(int, 1_000_000),
        "target_sifted": Key(_optional(int), None),
        "attack": Key(str, "none", "none | fsa | partial-fsa | tsa-probe"),
        "attack_fraction": Key(float, 1.0),
        "kappa": Key(float, 0.13),
        "eta": Key(float, 0.282),
        "include_dark_counts": Key(parse_bool, False),
        "dark_count_rate": Key(float, 4e-6),
        "compensation": Key(float, 1.0),
    },
    "self-test": {
        "seed": Key(int, None),
        "timing_H": Key(float, 200.0),
        "timing_V": Key(float, 200.0),
        "timing_P": Key(float, 525.0),
        "timing_M": Key(float, 525.0),
        "probe_timings": Key(parse_float_list, [200.0, 525.0]),
        "n_pulses": Key(int, 10_000),
        "mean_photon_number": Key(float, 1.0),
        "ratio_bound": Key(float, 0.5),
        "min_clicks": Key(int, 20),
        "spread_threshold": Key(float, 50.0),
        **CURVE_KEYS,
    },
}

STOCHASTIC = {"calibrate", "session", "self-test"}


def load_config(command: str, path: Path | None, seed: int | None) -> dict[str, Any]:
    schema = SCHEMAS[command]
    values = {k: key.default for k, key in schema.items()}
    if path is not None:
        parser = configparser.ConfigParser(
            interpolation=None, delimiters=("=",), comment_prefixes=("#",), inline_comment_prefixes=("#",)
        )
        parser.optionxform = str
        try:
            parser.read_string("[config]\n" + path.read_text(), source=str(path))
        except (configparser.Error, OSError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        for k, raw in parser["config"].items():
            if k not in schema:
                raise ConfigError(f"unknown key {k!r} for {command}; allowed: {', '.join(schema)}")
            try:
                values[k] = schema[k].parse(raw)
            except ValueError as exc:
                raise ConfigError(f"bad value for {k!r}: {exc}") from exc
    if seed is not None:
        values["seed"] = seed
    if command in STOCHASTIC:
        if values.get("seed") is None:
            raise ConfigError(f"{command} is stochastic: a seed is required (--seed or 'seed' key)")
        if not 0 <= values["seed"] < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
    return values


def _curve_and_grid(cfg: dict) -> tuple[EfficiencyCurve, TimingGrid]:
    grid = TimingGrid.from_ps(cfg["step"], cfg["n_steps"])
    curve = EfficiencyCurve(
        center=cfg["center"],
        fwhm=cfg["fwhm"],
        peak_efficiency=cfg["peak_efficiency"],
        dark_count_rate=cfg["dark_count_rate"],
        cycle_period=grid.cycle_period,
    )
    return curve, grid


def cmd_calibrate(cfg: dict) -> Report:
    curve, grid = _curve_and_grid(cfg)
    signal = cal.CalibrationSignal(
        pulse_offsets=tuple(cfg["pulse_offsets"]),
        mean_photon_number=cfg["mean_photon_number"],
        pulses_per_step=cfg["pulses_per_step"],
        pulse_weights=tuple(cfg["pulse_weights"]) if cfg["pulse_weights"] else None,
        cycle_period=grid.cycle_period,
    )
    campaign = cal.run_campaign(
        signal, cfg["trials"], cfg["seed"], grid, cal.DetectorBank.uniform(curve=curve), cfg["workers"]
    )
    trials = Table(("trial", "t_H", "t_V", "t_P", "t_M", "outcome"))
    for tr in campaign.trials:
        trials.add(tr.trial, *(tr.timings[k] for k in cal.LABELS), tr.outcome.label)

    n = len(campaign.trials)
    summary = Table(("outcome", "count", "frequency", "expected_frequency"))
    for kind, count in campaign.counts().items():
        summary.add(kind.value, count, count / n if n else None, cal.THEORETICAL_FREQUENCIES[kind])
    for variant, count in campaign.bem_variant_counts().items():
        summary.add(f"Bem({variant})", count, count / n if n else None, cal.BEM_VARIANT_FREQUENCY)
    chi2, pvalue = campaign.chi_square()
    meta = {
        "trials": n,
        "t0": campaign.t0,
        "t1": campaign.t1,
        "chi_square": chi2,
        "chi_square_p_value": pvalue,
        "seed": cfg["seed"],
    }
    return Report({"trials": trials, "summary": summary}, meta)


def cmd_fsa_sweep(cfg: dict) -> Report:
    cap = cfg["qber_cap"]
    boundary = Table(("eta", "e_b", "R_full", "r_max"))
    for eta in cfg["eta_grid"]:
        if not 0.0 < eta <= 1.0:
            raise ConfigError(f"eta grid values must lie in (0, 1], got {eta}")
        e_b = fsa.fsa_qber(eta)
        try:
            r_full = security.bem_secure_key_rate(eta, e_b)
        except ValueError:
            r_full = None
        boundary.add(eta, e_b, r_full, fsa.max_attack_fraction(eta, cap))
    partial = Table(("eta", "r", "e_b", "R"))
    for eta in cfg["partial_etas"]:
        for r in cfg["r_grid"]:
            partial.add(eta, r, fsa.partial_fsa_qber(eta, r), fsa.partial_fsa_key_rate(eta, r))
    return Report({"boundary": boundary, "partial": partial}, {"qber_cap": cap})


def cmd_keyrate(cfg: dict) -> Report:
    rates = Table(("eta", "e_b", "R", "R_gllp", "delta"))
    thresholds = Table(("eta", "e_b_threshold"))
    for eta in cfg["eta_grid"]:
        if not 0.0 < eta <= 1.0:
            raise ConfigError(f"eta grid values must lie in (0, 1], got {eta}")
        delta = security.controlled_fraction(eta)
        for e_b in cfg["e_b_grid"]:
            try:
                rate = security.bem_secure_key_rate(eta, e_b)
                gllp = security.gllp_key_rate(delta, e_b)
            except ValueError:
                rate = gllp = None
            rates.add(eta, e_b, rate, gllp, delta)
        thresholds.add(eta, security.qber_threshold(eta))
    return Report({"keyrate": rates, "threshold": thresholds})


def _z(observed: float, expected: float, n: int) -> float:
    if n == 0 or math.isnan(expected):
        return math.nan
    sigma = math.sqrt(expected * (1.0 - expected) / n)
    if sigma == 0:
        return 0.0 if observed == expected else math.inf
    return (observed - expected) / sigma


def cmd_session(cfg: dict) -> Report:
    try:
        attack = session.Attack(cfg["attack"])
    except ValueError as exc:
        raise ConfigError(f"unknown attack {cfg['attack']!r}") from exc
    config = session.SessionConfig(
        n_pulses=cfg["n_pulses"],
        params=fsa.FsaParameters.symmetric(cfg["kappa"], cfg["eta"]),
        attack=attack,
        attack_fraction=cfg["attack_fraction"],
        include_dark_counts=cfg["include_dark_counts"],
        dark_count_rate=cfg["dark_count_rate"],
        seed=cfg["seed"],
        target_sifted=cfg["target_sifted"],
        compensation=cfg["compensation"],
    )
    stats = session.run_session(config)
    q_expected = session.analytic_qber(config)
    d_expected = session.analytic_detection_rate(config)
    meta = {
        **stats.as_dict(),
        "attack": attack.value,
        "eta": cfg["eta"],
        "kappa": cfg["kappa"],
        "seed": cfg["seed"],
        "qber_expected": q_expected,
        "qber_z": _z(stats.qber, q_expected, stats.sifted),
        "detection_rate_expected": d_expected,
        "detection_rate_z": _z(stats.detection_rate, d_expected, stats.emitted),
        "detection_rate_drop_expected": session.estimate_detection_rate_drop(config.params),
    }
    clicks = Table(("detector", "timing", "clicks"))
    for (label, timing), count in stats.clicks.items():
        clicks.add(label, timing, count)
    return Report({"clicks": clicks}, meta)


def cmd_self_test(cfg: dict) -> Report:
    curve, grid = _curve_and_grid(cfg)
    bank = cal.DetectorBank.from_timings({k: cfg[f"timing_{k}"] for k in cal.LABELS}, curve)
    rng = RandomSource(cfg["seed"]).stream()
    report = cal.self_test(
        bank,
        grid,
        cfg["probe_timings"],
        rng,
        n_pulses=cfg["n_pulses"],
        mean_photon_number=cfg["mean_photon_number"],
        ratio_bound=cfg["ratio_bound"],
        min_clicks=cfg["min_clicks"],
    )
    probes = Table(
        ("timing", "eta_H", "eta_V", "eta_P", "eta_M", "eta_Z", "eta_X", "basis_ratio", "dem_ratio_Z", "dem_ratio_X", "bem", "dem")
    )
    for p in report.probes:
        probes.add(
            p.timing,
            *(p.efficiency[k] for k in cal.LABELS),
            p.eta_z,
            p.eta_x,
            p.basis_ratio,
            p.dem_ratio["Z"],
            p.dem_ratio["X"],
            p.bem,
            p.dem,
        )
    meta = {
        "verdict": report.verdict,
        "bem_detected": report.bem_detected,
        "dem_detected": report.dem_detected,
        "spread_alarm": cal.monitor_timing_spread(bank, cfg["spread_threshold"]),
        "seed": cfg["seed"],
    }
    return Report({"probes": probes}, meta)


COMMANDS = {
    "calibrate": cmd_calibrate,
    "fsa-sweep": cmd_fsa_sweep,
    "keyrate": cmd_keyrate,
    "session": cmd_session,
    "self-test": cmd_self_test,
}

HELP = {
    "calibrate": "repeat the attacked timing calibration and tally mismatch outcomes",
    "fsa-sweep": "attack-feasibility boundary and partial-attack key rates",
    "keyrate": "secure key rate with basis-dependent mismatch over (eta, e_b)",
    "session": "Monte-Carlo BB84 session with optional attack",
    "self-test": "probe a detector bank with a local laser and monitor timing spread",
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bemqkd", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name, help=HELP[name])
        s.add_argument("--config", type=Path, help="flat key = value config file")
        s.add_argument("--seed", type=int, help="RNG seed (unsigned 64-bit)")
        s.add_argument("--out", type=Path, help="output file (stdout when omitted)")
        s.add_argument("--format", choices=("csv", "json"), default="csv")
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.command, args.config, args.seed)
        report = COMMANDS[args.command](cfg)
        report.write(args.out, args.format, sys.stdout)
    except (ValueError, OSError) as exc:
        print(f"bemqkd {args.command}: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
