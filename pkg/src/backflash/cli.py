"""Command line entry point: ``backflash COMMAND [CONFIG]``.

Commands: calibrate, er, keyrate, counts. Each writes one CSV result file
plus ``effective_config.ini`` into the output directory.

Exit codes: 0 success, 1 numerical failure, 2 configuration error.
"""

from __future__ import annotations

import argparse
import csv
import math
import sys
from pathlib import Path

import numpy as np

from . import attack, keyrate
from .components import PaddleControllerConfig
from .config import ConfigError, StudyConfig, effective_config, load_config, output_directory

EXIT_OK, EXIT_NUMERIC, EXIT_CONFIG = 0, 1, 2


class NumericalFailure(Exception):
    pass


def _prepare(cfg: StudyConfig) -> Path:
    out = output_directory(cfg)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {out}: {exc}") from None
    return out


def _echo(cfg: StudyConfig, out: Path, eve_angles=None) -> None:
    with open(out / "effective_config.ini", "w") as fh:
        effective_config(cfg, eve_angles).write(fh)


def _calibration(cfg: StudyConfig) -> attack.CalibrationResult:
    return attack.calibrate(
        cfg.bob_controller(), cfg.eve_pc.paddles(), cfg.calibration_wavelength_nm, cfg.steps
    )


def cmd_calibrate(cfg: StudyConfig) -> int:
    out = _prepare(cfg)
    res = _calibration(cfg)
    if not res.achieved_ratio > 0:
        raise NumericalFailure(f"calibration produced ratio {res.achieved_ratio}")
    with open(out / "calibration.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("theta_e1", "theta_e2", "theta_e3", "achieved_ratio", "p_h", "p_v", "scan_steps"))
        w.writerow((*map(repr, res.eve_angles), repr(res.achieved_ratio), repr(res.p_h), repr(res.p_v), res.scan_steps))
    _echo(cfg, out, res.eve_angles)
    print(f"scan: {res.scan_steps}^3 = {res.scan_steps ** 3} settings at {cfg.calibration_wavelength_nm:g} nm")
    print("eve angles (rad): " + ", ".join(f"{a:.6f}" for a in res.eve_angles))
    print(f"achieved P_H/P_V: {res.achieved_ratio:.6g}")
    print(f"wrote {out / 'calibration.csv'}")
    return EXIT_OK


def cmd_er(cfg: StudyConfig) -> int:
    out = _prepare(cfg)
    if cfg.eve_pc.angles is not None:
        eve_angles = cfg.eve_pc.angles
    else:
        eve_angles = _calibration(cfg).eve_angles
    eve = PaddleControllerConfig(cfg.eve_pc.paddles(), eve_angles)
    res = attack.simulate_er(
        cfg.bob_controller(), eve, cfg.spectrum(), cfg.pbs(), cfg.detector_curve(), cfg.grid_step_nm
    )
    if math.isnan(res.total_er):
        raise NumericalFailure("extinction ratio is undefined (no detected photons)")
    attack.write_er_csv(res, out / "er.csv")
    _echo(cfg, out, eve_angles)
    er_text = "infinite" if math.isinf(res.total_er) else f"{res.total_er:.6g}"
    print(f"wavelengths: {len(res.wavelengths)} ({res.wavelengths[0]:g}-{res.wavelengths[-1]:g} nm, step {cfg.grid_step_nm:g})")
    print(f"total ER: {er_text}")
    print(f"decode fraction: {res.decode_fraction:.6f}")
    print(f"wrote {out / 'er.csv'}")
    return EXIT_OK


def cmd_keyrate(cfg: StudyConfig) -> int:
    out = _prepare(cfg)
    p = cfg.channel
    p_l = cfg.leak_probability()
    distances = np.arange(0.0, cfg.distance_max_km + 0.5, 1.0)
    clean, attacked = keyrate.rate_sweep(p, distances, p_l)
    if not (np.all(np.isfinite(clean)) and np.all(np.isfinite(attacked))):
        raise NumericalFailure("non-finite key rate in sweep")
    keyrate.write_rate_csv(distances, clean, attacked, out / "keyrate.csv")
    _echo(cfg, out)

    def cutoff(rates, leak):
        pos = np.nonzero(rates > 0)[0]
        if not pos.size:
            return 0.0
        k = int(pos[-1])
        if k == len(distances) - 1:
            return float(distances[k])
        return keyrate.refine_cutoff(p, leak, float(distances[k]), float(distances[k + 1]))

    l0, l1 = cutoff(clean, None), cutoff(attacked, p_l)
    print(f"P_L = {p_l:.6g}")
    print(f"cutoff without attack: {l0:g} km")
    print(f"cutoff under backflash attack: {l1:g} km")
    print(f"difference: {l0 - l1:g} km")
    print(f"wrote {out / 'keyrate.csv'}")
    return EXIT_OK


def cmd_counts(cfg: StudyConfig) -> int:
    out = _prepare(cfg)
    seeds = np.random.SeedSequence(cfg.seed).spawn(len(cfg.states))
    rows = []
    for state, ss in zip(cfg.states, seeds):
        rec = attack.monte_carlo_counts(cfg.n_bob, cfg.p_backflash_detect, cfg.er, ss)
        rows.append((state, rec, attack.estimate_er(rec)))
    with open(out / "counts.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("state", "c_e", "c_e_perp", "n_bob", "er"))
        for state, rec, er in rows:
            w.writerow((state, rec.c_e, rec.c_e_perp, rec.n_bob, repr(er)))
    _echo(cfg, out)
    print(f"{'state':>5} {'C_E':>9} {'C_E_perp':>9} {'ER':>9}")
    for state, rec, er in rows:
        print(f"{state:>5} {rec.c_e:>9d} {rec.c_e_perp:>9d} {er:>9.4g}")
    print(f"mean ER: {float(np.mean([r[2] for r in rows])):.4g}")
    print(f"wrote {out / 'counts.csv'}")
    return EXIT_OK


COMMANDS = {
    "calibrate": (cmd_calibrate, "scan Eve's controller for a ~1000:1 calibration"),
    "er": (cmd_er, "spectrum-weighted extinction ratio on backflash photons"),
    "keyrate": (cmd_keyrate, "key rate vs distance with and without the leak"),
    "counts": (cmd_counts, "synthetic Eve count table"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="backflash", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("config", nargs="?", default=None, help="study configuration (INI); defaults if omitted")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    func = COMMANDS[args.command][0]
    try:
        cfg = load_config(args.config)
        return func(cfg)
    except ConfigError as exc:
        print(f"backflash: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalFailure, ArithmeticError, ValueError) as exc:
        print(f"backflash: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
