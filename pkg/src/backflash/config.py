"""Study configuration: an INI key-value file with ``default``/``auto`` sentinels.

Sections and keys (every key optional)::

    [components]
    backflash_spectrum = default | monochromatic:<nm> | <path.csv>
    pbs_slow           = default | <path.csv>
    pbs_fast           = default | <path.csv>
    detector           = default | <path.csv>

    [bob_pc] / [eve_pc]
    loops               = 1, 2, 1
    cladding_diameter_m = 0.000125
    paddle_diameter_m   = 0.01685
    material_constant   = 0.133
    angles              = auto | <rad>, <rad>, <rad>

    [scan]
    calibration_wavelength_nm = 1550
    steps                     = 50
    grid_step_nm              = 1

    [channel]
    alpha_db_per_km, distance_km, eta_det, p_dark, e_mis, f_ec, q_sift, e0
    y0              = default | <prob>        (default: p_dark)
    distance_max_km = 200

    [leak]
    p_leak      = auto | <prob>
    n_backflash = auto | <count>
    nb_state    = mean | H | V | A | D
    nb_counting = both | matching
    n_clicks, eta_det_eve, eta_ch_eve, er_mean

    [counts]
    n_bob, p_backflash_detect, er
    states = H, V, A, D

    [output]
    directory = out          (overridden by $BACKFLASH_OUTPUT_DIR)
    seed      = 20240101
"""

from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, field, replace
from pathlib import Path

from . import attack, components, keyrate
from .components import PaddleControllerConfig, PaddleSpec, PBSCurves, SpectralCurve

OUTPUT_ENV = "BACKFLASH_OUTPUT_DIR"
SENTINELS = ("default", "auto")


class ConfigError(Exception):
    """Invalid or unreadable study configuration (exit code 2)."""


@dataclass(frozen=True)
class ControllerSection:
    loops: tuple[float, float, float] = (1.0, 2.0, 1.0)
    cladding_diameter_m: float = 125e-6
    paddle_diameter_m: float = 16.85e-3
    material_constant: float = components.QUARTZ_CONSTANT
    angles: tuple[float, float, float] | None = None  # None == auto

    def paddles(self) -> tuple[PaddleSpec, PaddleSpec, PaddleSpec]:
        return tuple(
            PaddleSpec(n, self.cladding_diameter_m, self.paddle_diameter_m, self.material_constant)
            for n in self.loops
        )


@dataclass(frozen=True)
class StudyConfig:
    backflash_spectrum: str = "default"
    pbs_slow: str = "default"
    pbs_fast: str = "default"
    detector: str = "default"
    bob_pc: ControllerSection = field(default_factory=ControllerSection)
    eve_pc: ControllerSection = field(default_factory=ControllerSection)
    calibration_wavelength_nm: float = 1550.0
    steps: int = attack.DEFAULT_STEPS
    grid_step_nm: float = 1.0
    channel: keyrate.ChannelParams = field(default_factory=keyrate.ChannelParams)
    distance_max_km: float = 200.0
    p_leak: float | None = None
    n_backflash: float | None = None
    nb_state: str = "mean"
    nb_counting: str = "both"
    n_clicks: float = attack.REFERENCE_N_BOB
    eta_det_eve: float = keyrate.ETA_DET
    eta_ch_eve: float = 1.0
    er_mean: float = keyrate.ER_MEAN
    n_bob: int = attack.REFERENCE_N_BOB
    p_backflash_detect: float = 0.0046
    er: float = keyrate.ER_MEAN
    states: tuple[str, ...] = ("H", "V", "A", "D")
    output_dir: str = "out"
    seed: int = 20240101
    source: Path | None = None

    # -- resolved objects -------------------------------------------------

    def _curve(self, spec: str, factory, probability: bool) -> SpectralCurve:
        if spec == "default":
            return factory()
        try:
            return components.read_curve(self._path(spec), probability=probability)
        except FileNotFoundError:
            raise ConfigError(f"curve file not found: {self._path(spec)}") from None
        except components.CurveFormatError as exc:
            raise ConfigError(str(exc)) from None

    def _path(self, spec: str) -> Path:
        p = Path(spec)
        if not p.is_absolute() and self.source is not None:
            p = self.source.parent / p
        return p

    def spectrum(self) -> SpectralCurve:
        if self.backflash_spectrum.startswith("monochromatic:"):
            return components.monochromatic_spectrum(float(self.backflash_spectrum.split(":", 1)[1]))
        return self._curve(self.backflash_spectrum, components.default_backflash_spectrum, False)

    def pbs(self) -> PBSCurves:
        default = components.default_pbs_curves()
        return PBSCurves(
            self._curve(self.pbs_slow, lambda: default.t_slow, True),
            self._curve(self.pbs_fast, lambda: default.t_fast, True),
        )

    def detector_curve(self) -> SpectralCurve:
        return self._curve(self.detector, components.default_detector_curve, True)

    def bob_angles(self) -> tuple[float, float, float]:
        if self.bob_pc.angles is not None:
            return self.bob_pc.angles
        return attack.default_bob_angles(self.bob_pc.paddles(), self.calibration_wavelength_nm, self.steps)

    def bob_controller(self) -> PaddleControllerConfig:
        return PaddleControllerConfig(self.bob_pc.paddles(), self.bob_angles())

    def leak_params(self) -> keyrate.LeakParams:
        nb = self.n_backflash
        if nb is None:
            nb = keyrate.backflash_count(attack.reference_records(), self.nb_state, self.nb_counting)
        return keyrate.LeakParams(nb, self.n_clicks, self.eta_det_eve, self.eta_ch_eve, self.er_mean)

    def leak_probability(self) -> float:
        return self.p_leak if self.p_leak is not None else keyrate.p_leak(self.leak_params())

    def validate(self) -> "StudyConfig":
        """Build every derived object once so bad input fails at load time."""
        try:
            self.spectrum()
            self.pbs()
            self.detector_curve()
            self.bob_pc.paddles()
            self.eve_pc.paddles()
            if self.steps < 2:
                raise ValueError("steps must be >= 2")
            if self.grid_step_nm <= 0:
                raise ValueError("grid_step_nm must be > 0")
            if self.calibration_wavelength_nm <= 0:
                raise ValueError("calibration_wavelength_nm must be > 0")
            if self.distance_max_km < 0:
                raise ValueError("distance_max_km must be >= 0")
            if self.p_leak is None:
                self.leak_probability()
            elif not 0 <= self.p_leak < 1:
                raise ValueError("p_leak must lie in [0, 1)")
            if self.n_bob < 0:
                raise ValueError("n_bob must be >= 0")
            if not 0 <= self.p_backflash_detect <= 1:
                raise ValueError("p_backflash_detect must lie in [0, 1]")
            if self.er <= 0:
                raise ValueError("er must be > 0")
            if not self.states:
                raise ValueError("states must name at least one basis state")
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        return self


# -- parsing ---------------------------------------------------------------


def _floats(text: str, n: int, key: str) -> tuple[float, ...]:
    parts = [s.strip() for s in text.split(",") if s.strip()]
    if len(parts) != n:
        raise ConfigError(f"{key}: expected {n} comma-separated numbers, got {text!r}")
    try:
        return tuple(float(s) for s in parts)
    except ValueError:
        raise ConfigError(f"{key}: not a number in {text!r}") from None


def _controller(sec) -> ControllerSection:
    base = ControllerSection()
    if sec is None:
        return base
    kw = {}
    if "loops" in sec:
        kw["loops"] = _floats(sec["loops"], 3, "loops")
    for key in ("cladding_diameter_m", "paddle_diameter_m", "material_constant"):
        if key in sec:
            kw[key] = _num(sec, key)
    if "angles" in sec and sec["angles"].strip().lower() not in SENTINELS:
        kw["angles"] = _floats(sec["angles"], 3, "angles")
    return replace(base, **kw)


def _num(sec, key, cast=float):
    raw = sec[key].strip()
    try:
        return cast(float(raw)) if cast is int else cast(raw)
    except ValueError:
        raise ConfigError(f"[{sec.name}] {key}: not a number: {raw!r}") from None


def _opt_num(sec, key):
    raw = sec[key].strip().lower()
    return None if raw in SENTINELS else _num(sec, key)


_CHANNEL_KEYS = {
    "alpha_db_per_km": "alpha", "distance_km": "distance", "eta_det": "eta_det", "p_dark": "p_dark",
    "e_mis": "e_mis", "f_ec": "f_ec", "q_sift": "q_sift", "e0": "e0",
}


def load_config(path=None) -> StudyConfig:
    """Read and validate a study configuration; ``None`` gives all defaults."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    source = None
    if path is not None:
        source = Path(path)
        if not source.is_file():
            raise ConfigError(f"config file not found: {source}")
        try:
            parser.read(source)
        except configparser.Error as exc:
            raise ConfigError(f"{source}: {exc}") from None
    known = {"components", "bob_pc", "eve_pc", "scan", "channel", "leak", "counts", "output"}
    unknown = set(parser.sections()) - known
    if unknown:
        raise ConfigError(f"unknown section(s): {', '.join(sorted(unknown))}")

    kw: dict = {"source": source}
    if parser.has_section("components"):
        sec = parser["components"]
        for key in ("backflash_spectrum", "pbs_slow", "pbs_fast", "detector"):
            if key in sec:
                kw[key] = sec[key].strip()
    kw["bob_pc"] = _controller(parser["bob_pc"] if parser.has_section("bob_pc") else None)
    kw["eve_pc"] = _controller(parser["eve_pc"] if parser.has_section("eve_pc") else None)

    if parser.has_section("scan"):
        sec = parser["scan"]
        if "calibration_wavelength_nm" in sec:
            kw["calibration_wavelength_nm"] = _num(sec, "calibration_wavelength_nm")
        if "steps" in sec:
            kw["steps"] = _num(sec, "steps", int)
        if "grid_step_nm" in sec:
            kw["grid_step_nm"] = _num(sec, "grid_step_nm")

    if parser.has_section("channel"):
        sec = parser["channel"]
        ch = {attr: _num(sec, key) for key, attr in _CHANNEL_KEYS.items() if key in sec}
        if "y0" in sec:
            ch["y0"] = _opt_num(sec, "y0")
        try:
            kw["channel"] = keyrate.ChannelParams(**ch)
        except ValueError as exc:
            raise ConfigError(f"[channel] {exc}") from None
        if "distance_max_km" in sec:
            kw["distance_max_km"] = _num(sec, "distance_max_km")

    if parser.has_section("leak"):
        sec = parser["leak"]
        if "p_leak" in sec:
            kw["p_leak"] = _opt_num(sec, "p_leak")
        if "n_backflash" in sec:
            kw["n_backflash"] = _opt_num(sec, "n_backflash")
        for key in ("nb_state", "nb_counting"):
            if key in sec:
                kw[key] = sec[key].strip()
        for key in ("n_clicks", "eta_det_eve", "eta_ch_eve", "er_mean"):
            if key in sec:
                kw[key] = _num(sec, key)

    if parser.has_section("counts"):
        sec = parser["counts"]
        if "n_bob" in sec:
            kw["n_bob"] = _num(sec, "n_bob", int)
        for key in ("p_backflash_detect", "er"):
            if key in sec:
                kw[key] = _num(sec, key)
        if "states" in sec:
            kw["states"] = tuple(s.strip() for s in sec["states"].split(",") if s.strip())

    if parser.has_section("output"):
        sec = parser["output"]
        if "directory" in sec:
            kw["output_dir"] = sec["directory"].strip()
        if "seed" in sec:
            kw["seed"] = _num(sec, "seed", int)

    return StudyConfig(**kw).validate()


def output_directory(cfg: StudyConfig) -> Path:
    env = os.environ.get(OUTPUT_ENV)
    if env:
        return Path(env)
    out = Path(cfg.output_dir)
    if not out.is_absolute() and cfg.source is not None:
        out = cfg.source.parent / out
    return out


def _fmt(x) -> str:
    return repr(float(x))


def _join(xs) -> str:
    return ", ".join(_fmt(x) for x in xs)


def effective_config(cfg: StudyConfig, eve_angles=None) -> configparser.ConfigParser:
    """Fully resolved configuration; feeding it back reproduces the run."""
    out = configparser.ConfigParser()

    def curve(spec: str) -> str:
        if spec == "default" or spec.startswith("monochromatic:"):
            return spec
        return str(cfg._path(spec).resolve())

    out["components"] = {
        key: curve(getattr(cfg, key)) for key in ("backflash_spectrum", "pbs_slow", "pbs_fast", "detector")
    }

    def controller(sec: ControllerSection, angles):
        return {
            "loops": _join(sec.loops),
            "cladding_diameter_m": _fmt(sec.cladding_diameter_m),
            "paddle_diameter_m": _fmt(sec.paddle_diameter_m),
            "material_constant": _fmt(sec.material_constant),
            "angles": "auto" if angles is None else _join(angles),
        }

    out["bob_pc"] = controller(cfg.bob_pc, cfg.bob_angles())
    out["eve_pc"] = controller(cfg.eve_pc, eve_angles if eve_angles is not None else cfg.eve_pc.angles)
    out["scan"] = {
        "calibration_wavelength_nm": _fmt(cfg.calibration_wavelength_nm),
        "steps": str(cfg.steps),
        "grid_step_nm": _fmt(cfg.grid_step_nm),
    }
    ch = cfg.channel
    out["channel"] = {key: _fmt(getattr(ch, attr)) for key, attr in _CHANNEL_KEYS.items()}
    out["channel"]["y0"] = _fmt(ch.y0)
    out["channel"]["distance_max_km"] = _fmt(cfg.distance_max_km)
    lp = cfg.leak_params() if cfg.p_leak is None else None
    out["leak"] = {
        "p_leak": _fmt(cfg.leak_probability()),
        "n_backflash": _fmt(lp.n_backflash) if lp is not None else
        ("auto" if cfg.n_backflash is None else _fmt(cfg.n_backflash)),
        "nb_state": cfg.nb_state,
        "nb_counting": cfg.nb_counting,
        "n_clicks": _fmt(cfg.n_clicks),
        "eta_det_eve": _fmt(cfg.eta_det_eve),
        "eta_ch_eve": _fmt(cfg.eta_ch_eve),
        "er_mean": _fmt(cfg.er_mean),
    }
    out["counts"] = {
        "n_bob": str(cfg.n_bob),
        "p_backflash_detect": _fmt(cfg.p_backflash_detect),
        "er": _fmt(cfg.er),
        "states": ", ".join(cfg.states),
    }
    # the directory is intentionally relative to the echo file itself
    out["output"] = {"directory": ".", "seed": str(cfg.seed)}
    return out
