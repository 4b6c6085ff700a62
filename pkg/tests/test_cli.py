import json
import math

import numpy as np
import pytest

from nvfiber import cli
from nvfiber.config import ConfigError, parse_config_text, parse_quantity
from nvfiber.emitter_sim import ThreeLevelModel, analytic_g2
from nvfiber.timetag_io import TimeTagStream, read_ttag, write_csv, write_ttag

SUBCOMMANDS = ["modes", "coupling-sweep", "taper", "simulate", "correlate", "fit-lifetime",
               "fit-saturation", "fit-cosine", "fit-g2", "budget"]


def write_config(tmp_path, text):
    p = tmp_path / "run.cfg"
    p.write_text(text)
    return str(p)


SCENE_CFG = """
[scene]
excitation = cw
power = 100uW
collection_efficiency = 0.05
duration = 20ms
seed = 7

[background]
dark_rate = 500Hz
"""


class TestHelp:
    @pytest.mark.parametrize("cmd", SUBCOMMANDS)
    def test_help_exits_zero(self, cmd, capsys):
        with pytest.raises(SystemExit) as e:
            cli.main([cmd, "--help"])
        assert e.value.code == 0
        out = capsys.readouterr().out
        sub = cli.build_parser()._subparsers._group_actions[0].choices[cmd]
        for action in sub._actions:
            for flag in action.option_strings:
                assert flag in out

    def test_usage_error_exits_one(self, capsys):
        with pytest.raises(SystemExit) as e:
            cli.main(["budget", "--beta-side", "1.5"])
        assert e.value.code == 1
        with pytest.raises(SystemExit) as e:
            cli.main(["nonexistent"])
        assert e.value.code == 1


class TestBudget:
    def test_table(self, capsys):
        assert cli.main(["budget", "--beta-side", "0.15", "--fiber-T", "0.10",
                         "--confocal", "0.005"]) == 0
        out = capsys.readouterr().out
        assert "end-to-end, one side         1.5 %" in out
        assert "end-to-end, both sides       3 %" in out
        assert "fiber / confocal ratio       3" in out

    def test_json(self, tmp_path):
        p = tmp_path / "b.json"
        assert cli.main(["budget", "--json", str(p)]) == 0
        rec = json.loads(p.read_text())
        assert rec["end_to_end_one_side"] == 0.015 and rec["fiber_to_confocal_ratio"] == 3.0


class TestModes:
    def test_table(self, capsys):
        assert cli.main(["modes", "--diameter", "450nm", "--wavelength", "637nm"]) == 0
        out = capsys.readouterr().out.strip().splitlines()
        assert out[0] == "label,n_eff,beta_per_m,u,w"
        assert [r.split(",")[0] for r in out[1:]] == ["HE11"]

    def test_unit_error(self, capsys):
        with pytest.raises(SystemExit) as e:
            cli.main(["modes", "--diameter", "450ns"])
        assert e.value.code == 1


class TestSimulateCorrelate:
    def test_deterministic(self, tmp_path):
        cfg = write_config(tmp_path, SCENE_CFG)
        a, b = tmp_path / "a.ttg", tmp_path / "b.ttg"
        assert cli.main(["--config", cfg, "simulate", "--seed", "7", "--out", str(a)]) == 0
        assert cli.main(["--config", cfg, "simulate", "--seed", "7", "--out", str(b)]) == 0
        assert a.read_bytes() == b.read_bytes()
        assert len(read_ttag(a)) > 100

    def test_correlate_pipeline(self, tmp_path, capsys):
        cfg = write_config(tmp_path, SCENE_CFG)
        s = tmp_path / "s.ttg"
        cli.main(["--config", cfg, "simulate", "--out", str(s)])
        out = tmp_path / "g2.csv"
        assert cli.main(["correlate", str(s), "--bin", "2ns", "--max-delay", "100ns",
                         "--background", "1000,1000,500,500", "--out", str(out)]) == 0
        rows = out.read_text().splitlines()
        assert rows[0] == "bin_center_s,counts,g2_raw,g2_corrected"
        assert len(rows) == 1 + 2 * 49 + 1

    def test_missing_channel_exit_two(self, tmp_path, capsys):
        p = tmp_path / "one.ttg"
        write_ttag(TimeTagStream(4, np.array([1, 1], np.uint8), np.array([1, 5], np.uint64)), p)
        assert cli.main(["correlate", str(p)]) == 2
        assert "channel 2" in capsys.readouterr().err

    def test_bad_stream_exit_one(self, tmp_path):
        p = tmp_path / "bad.ttg"
        p.write_bytes(b"XXXX" + bytes(18))
        assert cli.main(["correlate", str(p)]) == 1

    def test_csv_streams(self, tmp_path):
        p = tmp_path / "s.csv"
        t = np.arange(200) * 1e-8
        ch = np.where(np.arange(200) % 2, 2, 1).astype(np.uint8)
        write_csv(TimeTagStream.from_times(ch, t, 1), p)
        out = tmp_path / "h.csv"
        assert cli.main(["correlate", str(p), "--mode", "start_stop", "--out", str(out)]) == 0
        assert out.read_text().startswith("bin_center_s,counts\n")


class TestFits:
    def test_fit_saturation(self, tmp_path):
        P = np.linspace(0.1, 5, 10) * 1e-4
        R = 1e5 * P / (P + 1e-4)
        p = tmp_path / "sat.csv"
        p.write_text("power_W,rate\n" + "".join(f"{float(a)!r},{float(b)!r}\n" for a, b in zip(P, R)))
        out = tmp_path / "sat.json"
        assert cli.main(["fit-saturation", str(p), "--out", str(out)]) == 0
        assert json.loads(out.read_text())["p_sat"] == pytest.approx(1e-4, rel=1e-6)

    def test_fit_cosine(self, tmp_path, capsys):
        th = np.linspace(0, math.pi, 12)
        p = tmp_path / "pol.csv"
        p.write_text("theta_rad,rate\n" + "".join(
            f"{float(a)!r},{3 + math.cos(2 * a)!r}\n" for a in th))
        assert cli.main(["fit-cosine", str(p)]) == 0
        assert json.loads(capsys.readouterr().out)["suppression"] == pytest.approx(2.0)

    def test_fit_g2(self, tmp_path):
        tau = np.linspace(-2e-6, 2e-6, 801)
        g = analytic_g2(ThreeLevelModel(), 1e-4, tau)
        p = tmp_path / "g2.csv"
        p.write_text("tau_s,g2\n" + "".join(f"{float(a)!r},{float(b)!r}\n" for a, b in zip(tau, g)))
        out = tmp_path / "g2.json"
        assert cli.main(["fit-g2", str(p), "--out", str(out)]) == 0
        assert json.loads(out.read_text())["two_level"] is False

    def test_fit_lifetime_curve(self, tmp_path):
        t = (np.arange(400) + 0.5) * 0.5e-9
        c = np.round(1e4 * np.exp(-t / 21e-9)).astype(int)
        p = tmp_path / "decay.csv"
        p.write_text("bin_center_s,counts\n" + "".join(f"{float(a)!r},{b}\n" for a, b in zip(t, c)))
        out = tmp_path / "f.json"
        assert cli.main(["fit-lifetime", str(p), "--out", str(out)]) == 0
        assert json.loads(out.read_text())["tau_slow"] == pytest.approx(21e-9, rel=0.01)

    def test_fit_failure_exit_two(self, tmp_path):
        p = tmp_path / "sat.csv"
        p.write_text("power_W,rate\n1e-6,1\n2e-6,2\n")
        assert cli.main(["fit-saturation", str(p)]) == 2

    def test_missing_column_exit_one(self, tmp_path):
        p = tmp_path / "x.csv"
        p.write_text("a,b\n1,2\n")
        assert cli.main(["fit-cosine", str(p)]) == 1


class TestTaper:
    def test_steep_cone_fails(self, tmp_path):
        out = tmp_path / "t.csv"
        assert cli.main(["taper", "--cone", "1um", "450nm", "5", "--out", str(out)]) == 2
        assert out.read_text().startswith("z_m,r_m,rho\n")

    def test_gentle_cone_passes(self):
        assert cli.main(["taper", "--cone", "1um", "450nm", "0.05"]) == 0


class TestConfig:
    def test_quantities(self):
        assert parse_quantity("450nm", "length") == pytest.approx(450e-9)
        assert parse_quantity("21 ns", "time") == pytest.approx(21e-9)
        assert parse_quantity("30uW", "power") == pytest.approx(30e-6)
        assert parse_quantity("3 min", "time") == 180.0

    @pytest.mark.parametrize("text,dim", [("450", "length"), ("450nm", "time"),
                                          ("5 furlong", "length"), ("nm", "length")])
    def test_bad_quantities(self, text, dim):
        with pytest.raises(ConfigError):
            parse_quantity(text, dim)

    def test_builders(self):
        cfg = parse_config_text("""
[fiber]
diameter = 0.5um
[emitter]
lifetime = 12ns
saturation_power = 50uW
[background]
bleach_60s_fraction = 0.4
recovery_time_90 = 5min
[scene]
excitation = pulsed
rep_rate = 5MHz
pulse_energy = 2pJ
""")
        assert cfg.fiber().diameter == pytest.approx(0.5e-6)
        em = cfg.emitter()
        assert em.lifetime == pytest.approx(12e-9)
        assert em.saturation_power == pytest.approx(50e-6, rel=1e-12)
        bg = cfg.background()
        assert bg.recovery_time(0.9) == pytest.approx(300.0)
        sc = cfg.scene()
        assert sc.excitation.rep_rate == 5e6 and sc.excitation.pulse_energy == pytest.approx(2e-12)

    @pytest.mark.parametrize("text", ["[fiber]\ncolour = red\n", "[optics]\nx = 1\n",
                                      "[fiber]\ndiameter = 450\n",
                                      "[scene]\nexcitation = laser\n"])
    def test_rejections(self, text):
        with pytest.raises(ConfigError):
            parse_config_text(text)

    def test_cli_config_errors_exit_one(self, tmp_path):
        cfg = write_config(tmp_path, "[fiber]\nbogus = 1\n")
        assert cli.main(["--config", cfg, "budget"]) == 1
        assert cli.main(["--config", str(tmp_path / "missing.cfg"), "budget"]) == 1
