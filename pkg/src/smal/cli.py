"""Command-line entry point: ``smal layouts|force|simulate|sweep``.

Angles on the command line and in CSV files are degrees. Every command
writes ``manifest.json`` first (``"complete": false``) and marks it complete
once all data files are on disk.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import actuation as act
from .sensor_array import enumerate_layouts, layouts_to_json
from .simulator import ConfigError, StudySetup, config_from_dict, layout_study, run_episode, sweep_alpha

OUTPUT_ENV = "SMAL_OUTPUT_DIR"


class UsageError(Exception):
    """Bad flags or config; exit code 2."""


# --- formatting ------------------------------------------------------------------


def fmt(x) -> str:
    """Locale-free, fixed-precision text for a CSV cell."""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, str):
        return x
    x = float(x)
    if np.isnan(x):
        return "nan"
    if np.isinf(x):
        return "inf" if x > 0 else "-inf"
    s = f"{x:.10g}"
    return "0" if s == "-0" else s


def write_csv(path: Path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def _float_list(text: str) -> list[float]:
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


# --- manifest ------------------------------------------------------------------


class Manifest:
    def __init__(self, out: Path, command: str, seed, config_path, config_bytes: bytes):
        self.path = out / "manifest.json"
        self.data = {
            "command": command,
            "config_path": str(config_path) if config_path else None,
            "config_sha256": hashlib.sha256(config_bytes).hexdigest(),
            "seed": seed,
            "output_dir": str(out),
            "tool_version": __version__,
            "complete": False,
        }
        self._write()

    def _write(self):
        self.path.write_text(json.dumps(self.data, indent=2, sort_keys=True) + "\n", encoding="utf-8")

    def finish(self, files):
        self.data["files"] = sorted(files)
        self.data["complete"] = True
        self._write()


def _out_dir(args) -> Path:
    out = Path(args.out or os.environ.get(OUTPUT_ENV) or "smal_out")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _args_bytes(args, keys) -> bytes:
    """Canonical bytes of the flags that define a config-less run."""
    d = {k: getattr(args, k) for k in keys}
    return json.dumps(d, sort_keys=True).encode()


def load_config(path: str):
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"config file not found: {p}")
    raw = p.read_bytes()
    try:
        doc = json.loads(raw.decode("utf-8"))
    except json.JSONDecodeError as exc:
        raise UsageError(f"{p}: invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    try:
        return config_from_dict(doc), raw
    except ConfigError as exc:
        raise UsageError(f"{p}: {exc}") from None


# --- layouts -------------------------------------------------------------------


def cmd_layouts(args) -> list[str]:
    out = _out_dir(args)
    layouts = enumerate_layouts()
    if args.action == "enumerate":
        man = Manifest(out, "layouts enumerate", None, None, b"")
        (out / "layouts.json").write_text(layouts_to_json(layouts), encoding="utf-8")
        man.finish(["layouts.json"])
        return ["layouts.json"]
    if args.trials < 1:
        raise UsageError("--trials must be at least 1")
    if args.noise_sigma < 0 or args.noise_rel < 0:
        raise UsageError("noise levels must be non-negative")
    if args.layouts:
        wanted = args.layouts.split(",")
        known = {lay.layout_id: lay for lay in layouts}
        missing = [w for w in wanted if w not in known]
        if missing:
            raise UsageError(f"unknown layout id(s): {', '.join(missing)}")
        layouts = [known[w] for w in wanted]
    man = Manifest(out, "layouts evaluate", args.seed, None,
                   _args_bytes(args, ["trials", "noise_sigma", "noise_rel", "seed", "layouts"]))
    setup = StudySetup(noise_rel=args.noise_rel)
    res = layout_study(layouts, args.trials, args.noise_sigma * 1e-6, args.seed, setup, args.workers)
    write_csv(
        out / "layout_study.csv",
        ["layout_id", "sensor_count", "mean_pos_err_mm", "std_pos_err_mm", "mean_ori_err_deg", "std_ori_err_deg", "fail_rate"],
        [(r.layout_id, r.sensor_count, r.mean_pos_err * 1e3, r.std_pos_err * 1e3, r.mean_ori_err, r.std_ori_err, r.fail_rate)
         for r in res],
    )
    man.finish(["layout_study.csv"])
    return ["layout_study.csv"]


# --- force analysis -------------------------------------------------------------


def _force_rows_profile(args, mags):
    rows = []
    for a_deg in args.alpha:
        a = np.radians(a_deg)
        if args.env == "straight":
            for m in np.linspace(0.0, args.d * np.sin(a), args.n):
                rows.append((a_deg, m, act.straight_fp(m, a, args.d, mags), np.degrees(act.straight_gamma(m, a, args.d))))
        else:
            for b in np.linspace(0.0, np.pi / 2, args.n):
                rows.append((a_deg, np.degrees(b), act.bend_fp(b, a, args.d, args.radius, mags),
                             np.degrees(act.bend_gamma(b, a, args.d, args.radius))))
    return rows


def _force_rows_map(args, mags):
    if args.env != "bend":
        raise UsageError("force map is defined for --env bend")
    half = args.tube_diameter / 2.0
    rows = []
    for a_deg in args.alpha:
        a = np.radians(a_deg)
        p_a = act.bend_actuator_position(a, args.d, args.radius)
        for rho in np.linspace(args.radius - half, args.radius + half, args.n_rho):
            for b in np.linspace(0.0, np.pi / 2, args.n):
                p_c = act.bend_position(b, rho)
                h = act.bend_heading(b)
                fp = act.mean_propulsive_force(p_c - p_a, h, a, mags)
                rows.append((a_deg, rho, np.degrees(b), fp, np.degrees(act.gamma(p_a, a, p_c, h))))
    return rows


def _force_rows_points(args, mags):
    rows = []
    for a_deg in args.alpha:
        a = np.radians(a_deg)
        if args.env == "straight":
            z = act.zero_point_straight(a, args.d, mags)
            c = act.critical_point_straight(a, args.d)
            rows.append((a_deg, z.x, z.found, c.x, c.found, "m"))
        else:
            z = act.zero_point_bend(a, args.d, args.radius, mags)
            c = act.critical_point_bend(a, args.d, args.radius)
            rows.append((a_deg, np.degrees(z.x), z.found, np.degrees(c.x), c.found, "deg"))
    return rows


def cmd_force(args) -> list[str]:
    if args.d <= 0 or args.radius <= 0:
        raise UsageError("--d and --radius must be positive")
    if args.n < 2 or args.n_rho < 1:
        raise UsageError("--n must be at least 2 and --n-rho at least 1")
    lo = 5.0 if args.action == "points" else 0.0
    bad = [a for a in args.alpha if not lo <= a <= 35.0]
    if bad:
        raise UsageError(f"--alpha values must lie in [{lo:g}, 35] deg, got {bad}")
    out = _out_dir(args)
    keys = ["action", "env", "alpha", "d", "radius", "n", "n_rho", "tube_diameter"]
    man = Manifest(out, f"force {args.action}", None, None, _args_bytes(args, keys))
    mags = StudySetup().mags
    if args.action == "profile":
        name = "force_profile.csv"
        write_csv(out / name, ["alpha_deg", "m_or_beta", "f_p_N", "gamma_deg"], _force_rows_profile(args, mags))
    elif args.action == "map":
        name = "force_map.csv"
        write_csv(out / name, ["alpha_deg", "rho_m", "beta_deg", "f_p_N", "gamma_deg"], _force_rows_map(args, mags))
    else:
        name = "force_points.csv"
        write_csv(out / name, ["alpha_deg", "zero_point", "zero_found", "critical_point", "critical_found", "unit"],
                  _force_rows_points(args, mags))
    man.finish([name])
    return [name]


# --- simulation -----------------------------------------------------------------

EPISODE_COLUMNS = (
    ["time_s", "s_m"]
    + [f"true_{q}{c}" for q in ("p", "h", "m") for c in "xyz"]
    + ["spin_phase_deg", "synchronous"]
    + [f"est_{q}{c}" for q in ("p", "h", "m") for c in "xyz"]
    + [f"cmd_{q}{c}" for q in ("p", "a") for c in "xyz"]
    + ["f_p_N", "f_lateral_N", "f_levitation_N", "gamma_deg", "v_sma_m_s", "alpha_deg", "residual_T", "converged",
       "velocity_m_s"]
)


def _episode_row(r):
    return (
        [r.time, r.s, *r.true_position, *r.true_heading, *r.true_moment, np.degrees(r.spin_phase), r.synchronous,
         *r.estimate.position, *r.estimate.heading, *r.estimate.moment_dir,
         *r.command.position, *r.command.rotation_axis,
         r.f_p, r.f_lateral, r.f_levitation, np.degrees(r.gamma), r.v_sma, np.degrees(r.alpha), r.residual, r.converged,
         r.velocity]
    )


def _outcome_json(outcome) -> str:
    d = outcome.to_dict()
    return json.dumps(d, indent=2, sort_keys=True, allow_nan=True) + "\n"


def _apply_mode(cfg, args):
    from dataclasses import replace

    if args.mode is None:
        if args.alpha is not None:
            raise UsageError("--alpha needs --mode fixed")
        return cfg
    if args.mode == "fixed":
        if args.alpha is None and cfg.mode != "fixed":
            raise UsageError("--mode fixed needs --alpha")
        alpha = cfg.fixed_alpha if args.alpha is None else np.radians(args.alpha)
        if not 0.0 <= alpha <= act.MAX_ALPHA + 1e-12:
            raise UsageError("--alpha must lie in [0, 35] deg")
        return replace(cfg, mode="fixed", fixed_alpha=float(alpha))
    if args.alpha is not None:
        raise UsageError("--alpha applies to --mode fixed only")
    return replace(cfg, mode="adaptive")


def cmd_simulate(args) -> list[str]:
    cfg, raw = load_config(args.config)
    cfg = _apply_mode(cfg, args)
    if args.seed is not None:
        from dataclasses import replace

        cfg = replace(cfg, seed=args.seed)
    out = _out_dir(args)
    man = Manifest(out, "simulate", cfg.seed, args.config,
                   raw + _args_bytes(args, ["mode", "alpha", "seed"]))
    outcome, records = run_episode(cfg)
    write_csv(out / "episode.csv", EPISODE_COLUMNS, (_episode_row(r) for r in records))
    (out / "outcome.json").write_text(_outcome_json(outcome), encoding="utf-8")
    man.finish(["episode.csv", "outcome.json"])
    return ["episode.csv", "outcome.json"]


def cmd_sweep(args) -> list[str]:
    cfg, raw = load_config(args.config)
    if args.trials < 1:
        raise UsageError("--trials must be at least 1")
    bad = [a for a in args.alphas if not 0.0 <= a <= 35.0]
    if bad:
        raise UsageError(f"--alphas values must lie in [0, 35] deg, got {bad}")
    out = _out_dir(args)
    man = Manifest(out, "sweep", cfg.seed, args.config, raw + _args_bytes(args, ["alphas", "trials"]))
    try:
        rows = sweep_alpha(cfg, [np.radians(a) for a in args.alphas], args.trials, args.workers)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    write_csv(
        out / "sweep.csv",
        ["alpha_deg", "trial", "straight_speed_mm_s", "bend_speed_mm_s", "success"],
        [(a_deg, r.trial, r.straight_speed * 1e3, r.bend_speed * 1e3, r.success)
         for a_deg, r in zip(np.repeat(args.alphas, args.trials), rows)],
    )
    man.finish(["sweep.csv"])
    return ["sweep.csv"]


# --- parser -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="smal", description="Simultaneous magnetic actuation and localization toolkit.")
    p.add_argument("--version", action="version", version=f"smal {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--out", help=f"output directory (default: ${OUTPUT_ENV} or ./smal_out)")

    lay = sub.add_parser("layouts", help="enumerate or evaluate sensor sub-array layouts")
    lay.add_argument("action", choices=["enumerate", "evaluate"])
    lay.add_argument("--trials", type=int, default=500)
    lay.add_argument("--noise-sigma", type=float, default=0.6, help="sensor noise std per axis (uT)")
    lay.add_argument("--noise-rel", type=float, default=0.0, help="extra noise proportional to the local field")
    lay.add_argument("--seed", type=int, default=0)
    lay.add_argument("--workers", type=int, default=None)
    lay.add_argument("--layouts", default="", help="comma-separated subset of layout ids")
    common(lay)
    lay.set_defaults(func=cmd_layouts)

    frc = sub.add_parser("force", help="propulsive-force analysis tables")
    frc.add_argument("action", choices=["profile", "map", "points"])
    frc.add_argument("--env", choices=["straight", "bend"], default="straight")
    frc.add_argument("--alpha", type=_float_list, default=[5.0, 10.0, 15.0, 20.0, 25.0, 30.0, 35.0],
                     help="comma-separated actuating angles (deg)")
    frc.add_argument("--d", type=float, default=0.15, help="actuator standoff (m)")
    frc.add_argument("--radius", type=float, default=0.018, help="bend radius (m)")
    frc.add_argument("--n", type=int, default=91, help="samples along the travel axis")
    frc.add_argument("--n-rho", type=int, default=5, help="radial samples for the map")
    frc.add_argument("--tube-diameter", type=float, default=0.018)
    common(frc)
    frc.set_defaults(func=cmd_force)

    sim = sub.add_parser("simulate", help="run one closed-loop episode")
    sim.add_argument("--config", required=True)
    sim.add_argument("--mode", choices=["adaptive", "fixed"])
    sim.add_argument("--alpha", type=float, help="fixed actuating angle (deg)")
    sim.add_argument("--seed", type=int)
    common(sim)
    sim.set_defaults(func=cmd_simulate)

    swp = sub.add_parser("sweep", help="fixed-alpha sweep over a path")
    swp.add_argument("--config", required=True)
    swp.add_argument("--alphas", type=_float_list, required=True)
    swp.add_argument("--trials", type=int, default=1)
    swp.add_argument("--workers", type=int, default=None)
    common(swp)
    swp.set_defaults(func=cmd_sweep)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits 2 on usage errors, 0 on --help
        return int(exc.code or 0)
    try:
        args.func(args)
    except UsageError as exc:
        print(f"smal: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure; the manifest stays incomplete
        print(f"smal: runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
