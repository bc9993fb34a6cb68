import csv
import shutil

import numpy as np
import pytest

from backflash import keyrate as kr
from backflash.cli import main
from backflash.config import OUTPUT_ENV, load_config


@pytest.fixture(autouse=True)
def _no_env_override(monkeypatch):
    monkeypatch.delenv(OUTPUT_ENV, raising=False)


def write_config(folder, text):
    folder.mkdir(parents=True, exist_ok=True)
    path = folder / "study.ini"
    path.write_text("[output]\ndirectory = out\n" + text)
    return path


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# -- calibrate -----------------------------------------------------------------------


def test_calibrate_default(tmp_path, capsys):
    cfg = write_config(tmp_path, "")
    assert main(["calibrate", str(cfg)]) == 0
    row = read_rows(tmp_path / "out" / "calibration.csv")[0]
    assert 500 <= float(row["achieved_ratio"]) <= 2000
    assert int(row["scan_steps"]) == 50
    out = capsys.readouterr().out
    assert "125000 settings" in out and "achieved P_H/P_V" in out
    assert (tmp_path / "out" / "effective_config.ini").is_file()


def test_calibrate_two_steps(tmp_path):
    cfg = write_config(tmp_path, "[scan]\nsteps = 2\n")
    assert main(["calibrate", str(cfg)]) == 0
    row = read_rows(tmp_path / "out" / "calibration.csv")[0]
    assert float(row["achieved_ratio"]) > 0


def test_missing_curve_file_exit_2(tmp_path, capsys):
    cfg = write_config(tmp_path, "[components]\ndetector = nowhere/det.csv\n")
    assert main(["calibrate", str(cfg)]) == 2
    assert "det.csv" in capsys.readouterr().err


def test_malformed_curve_exit_2(tmp_path, capsys):
    (tmp_path / "bad.csv").write_text("wavelength_nm,value\n1500,0.1\n1400,0.2\n")
    cfg = write_config(tmp_path, "[components]\npbs_fast = bad.csv\n")
    assert main(["er", str(cfg)]) == 2
    assert "bad.csv:3" in capsys.readouterr().err


@pytest.mark.parametrize(
    "text",
    [
        "[bogus]\nx = 1\n",
        "[channel]\neta_det = 1.5\n",
        "[scan]\nsteps = many\n",
        "[leak]\np_leak = 1.2\n",
        "[bob_pc]\nangles = 0.1, 0.2\n",
        "[leak]\nn_backflash = 1e9\n",
    ],
)
def test_bad_values_exit_2(tmp_path, text):
    assert main(["keyrate", str(write_config(tmp_path, text))]) == 2


def test_missing_config_exit_2(tmp_path):
    assert main(["counts", str(tmp_path / "absent.ini")]) == 2


# -- er --------------------------------------------------------------------------------


def test_er_default(tmp_path, capsys):
    cfg = write_config(tmp_path, "")
    assert main(["er", str(cfg)]) == 0
    rows = read_rows(tmp_path / "out" / "er.csv")
    assert len(rows) == (2000 - 1400) / 1 + 1
    n_h = sum(float(r["n_h"]) for r in rows)
    n_v = sum(float(r["n_v"]) for r in rows)
    er = n_h / n_v
    assert 10 <= er <= 40
    out = capsys.readouterr().out
    printed = {k.strip(): v.strip() for k, v in (ln.split(":", 1) for ln in out.splitlines() if ":" in ln)}
    assert float(printed["total ER"]) == pytest.approx(er, rel=1e-5)
    assert float(printed["decode fraction"]) == pytest.approx(er / (er + 1), abs=1e-6)


def test_er_grid_step_row_count(tmp_path):
    cfg = write_config(tmp_path, "[scan]\ngrid_step_nm = 2.5\n")
    assert main(["er", str(cfg)]) == 0
    assert len(read_rows(tmp_path / "out" / "er.csv")) == int(600 / 2.5) + 1


def test_er_monochromatic(tmp_path):
    cfg = write_config(tmp_path, "[components]\nbackflash_spectrum = monochromatic:1550\n")
    assert main(["er", str(cfg)]) == 0
    rows = read_rows(tmp_path / "out" / "er.csv")
    er = sum(float(r["n_h"]) for r in rows) / sum(float(r["n_v"]) for r in rows)
    assert er >= 1000


def test_er_custom_curve_files(tmp_path):
    from backflash.components import default_detector_curve, write_curve

    write_curve(default_detector_curve(), tmp_path / "det.csv")
    base = write_config(tmp_path / "a", "")
    custom = write_config(tmp_path / "b", f"[components]\ndetector = {tmp_path / 'det.csv'}\n")
    assert main(["er", str(base)]) == 0 and main(["er", str(custom)]) == 0
    assert (tmp_path / "a/out/er.csv").read_bytes() == (tmp_path / "b/out/er.csv").read_bytes()


# -- determinism and config echo -----------------------------------------------------------


@pytest.mark.parametrize("command,name", [("counts", "counts.csv"), ("er", "er.csv"), ("calibrate", "calibration.csv")])
def test_byte_identical_reruns(tmp_path, command, name):
    cfg = write_config(tmp_path, "")
    assert main([command, str(cfg)]) == 0
    first = (tmp_path / "out" / name).read_bytes()
    assert main([command, str(cfg)]) == 0
    assert (tmp_path / "out" / name).read_bytes() == first


@pytest.mark.parametrize(
    "command,name,text",
    [
        ("er", "er.csv", "[components]\nbackflash_spectrum = curves/s.csv\n[scan]\ngrid_step_nm = 2\n"),
        ("counts", "counts.csv", "[counts]\nn_bob = 100000\nstates = H, V\n"),
        ("keyrate", "keyrate.csv", "[channel]\ndistance_max_km = 4\ne_mis = 0.02\n[leak]\nnb_state = V\n"),
    ],
)
def test_effective_config_round_trip(tmp_path, command, name, text):
    from backflash.components import default_backflash_spectrum, write_curve

    (tmp_path / "a" / "curves").mkdir(parents=True)
    write_curve(default_backflash_spectrum().scaled(3.0), tmp_path / "a" / "curves" / "s.csv")
    path = write_config(tmp_path / "a", text)
    assert main([command, str(path)]) == 0
    echo = tmp_path / "b" / "effective.ini"
    echo.parent.mkdir()
    shutil.copy(tmp_path / "a" / "out" / "effective_config.ini", echo)
    assert main([command, str(echo)]) == 0
    assert (tmp_path / "b" / name).read_bytes() == (tmp_path / "a" / "out" / name).read_bytes()
    # the echo of the echo is a fixed point
    assert (tmp_path / "b" / "effective_config.ini").read_text() == echo.read_text()


def test_env_override(tmp_path, monkeypatch):
    cfg = write_config(tmp_path, "[counts]\nn_bob = 1000\n")
    target = tmp_path / "elsewhere"
    monkeypatch.setenv(OUTPUT_ENV, str(target))
    assert main(["counts", str(cfg)]) == 0
    assert (target / "counts.csv").is_file()
    assert not (tmp_path / "out").exists()


# -- counts ---------------------------------------------------------------------------------


def test_counts_default(tmp_path, capsys):
    from scipy import stats

    cfg = write_config(tmp_path, "")
    assert main(["counts", str(cfg)]) == 0
    rows = read_rows(tmp_path / "out" / "counts.csv")
    assert [r["state"] for r in rows] == ["H", "V", "A", "D"]
    c_e = sum(int(r["c_e"]) for r in rows)
    c_p = sum(int(r["c_e_perp"]) for r in rows)
    n_eve = c_e + c_p
    lo, hi = stats.binom.interval(0.99, n_eve, 23.4 / 24.4)
    assert lo / (n_eve - lo) <= c_e / c_p <= hi / (n_eve - hi)
    # mean of the per-state estimates: delta-method variance of c / (n - c), 99% normal band
    f = 23.4 / 24.4
    var = sum(f / ((1 - f) ** 3 * (int(r["c_e"]) + int(r["c_e_perp"]))) for r in rows) / len(rows) ** 2
    mean_er = np.mean([float(r["er"]) for r in rows])
    assert abs(mean_er - 23.4) <= stats.norm.ppf(0.995) * np.sqrt(var)
    assert "mean ER" in capsys.readouterr().out


def test_counts_zero_clicks(tmp_path):
    cfg = write_config(tmp_path, "[counts]\nn_bob = 0\n")
    assert main(["counts", str(cfg)]) == 0
    for r in read_rows(tmp_path / "out" / "counts.csv"):
        assert (r["c_e"], r["c_e_perp"], r["n_bob"]) == ("0", "0", "0")


def test_counts_seed_changes_output(tmp_path):
    a = write_config(tmp_path / "a", "seed = 1\n")
    b = write_config(tmp_path / "b", "")
    assert main(["counts", str(a)]) == 0 and main(["counts", str(b)]) == 0
    assert (tmp_path / "a/out/counts.csv").read_bytes() != (tmp_path / "b/out/counts.csv").read_bytes()


# -- keyrate --------------------------------------------------------------------------------


def test_keyrate_short_sweep(tmp_path, capsys):
    cfg = write_config(tmp_path, "[channel]\ndistance_max_km = 5\n[leak]\np_leak = 0.0358\n")
    assert main(["keyrate", str(cfg)]) == 0
    rows = read_rows(tmp_path / "out" / "keyrate.csv")
    assert [float(r["distance_km"]) for r in rows] == [0, 1, 2, 3, 4, 5]
    clean = np.array([float(r["rate_no_attack"]) for r in rows])
    att = np.array([float(r["rate_attack"]) for r in rows])
    assert np.all(np.diff(clean) <= 0) and np.all(np.diff(att) <= 0)
    assert np.all(att <= clean)
    assert "P_L = 0.0358" in capsys.readouterr().out


def test_keyrate_zero_leak(tmp_path):
    # with P_L = 0 the attack column is the leak-free GLLP form (see notes)
    cfg = write_config(tmp_path, "[channel]\ndistance_max_km = 6\n[leak]\np_leak = 0\n")
    assert main(["keyrate", str(cfg)]) == 0
    rows = read_rows(tmp_path / "out" / "keyrate.csv")
    p = load_config(cfg).channel
    for r in rows:
        d = float(r["distance_km"])
        assert float(r["rate_attack"]) == kr.optimized_rate(p, d, 0.0)
        assert float(r["rate_no_attack"]) == kr.optimized_rate(p, d)
        assert float(r["rate_attack"]) <= float(r["rate_no_attack"])


def test_numerical_failure_exit_1(tmp_path, monkeypatch):
    from backflash import cli

    def boom(*a, **k):
        raise FloatingPointError("overflow")

    monkeypatch.setattr(cli.attack, "simulate_er", boom)
    assert main(["er", str(write_config(tmp_path, ""))]) == 1
