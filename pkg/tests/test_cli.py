import json
import subprocess
import sys
import time

import pytest

from conftest import scenario
from dynbridge.cli import main


def _files(d):
    return sorted(p.relative_to(d) for p in d.rglob("*.csv"))


def test_validate_suite(tmp_path, capsys):
    rc = main(["validate", "--scenario", scenario("family_ii"), "--out", str(tmp_path)])
    assert rc == 0
    assert "[PASS] validate" in capsys.readouterr().out
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["pass"] and summary["suites"]["validate"]["failed"] == []
    assert (tmp_path / "report.txt").exists()


def test_bridge_suite_small_run(tmp_path):
    t0 = time.perf_counter()
    rc = main(["bridge", "--scenario", scenario("back_pedersen"), "--paths", "100",
               "--steps", "256", "--out", str(tmp_path)])
    assert time.perf_counter() - t0 < 10.0
    assert rc in (0, 1)
    lines = (tmp_path / "bridge" / "gap_decay.csv").read_text().splitlines()
    assert lines[0].startswith("# suite=bridge seed=")
    assert lines[1] == "t,median_abs_gap"
    assert len(lines) == 5
    verdicts = json.loads((tmp_path / "bridge" / "verdicts.json").read_text())
    assert verdicts["suite"] == "bridge" and verdicts["tables"]["gap_decay"]["file"]


def test_all_suites_pass_on_gaussian_scenario(tmp_path):
    rc = main(["all", "--scenario", scenario("back_pedersen"), "--paths", "1000",
               "--steps", "1024", "--particles", "2000", "--inner", "1000",
               "--out", str(tmp_path)])
    assert rc == 0
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert set(summary["suites"]) == {"validate", "bridge", "filter", "pde", "equilibrium"}


def test_malformed_scenario_is_a_config_error(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("name: x\nc: 0.5\nsigma: [unclosed\n")
    assert main(["validate", "--scenario", str(bad), "--out", str(tmp_path / "o")]) == 2
    assert "bad.yaml" in capsys.readouterr().err


def test_missing_scenario_file(tmp_path, capsys):
    rc = main(["bridge", "--scenario", str(tmp_path / "nope.yaml"), "--out", str(tmp_path)])
    assert rc == 2
    assert "not found" in capsys.readouterr().err


def test_violating_clock_is_a_config_error(tmp_path):
    f = tmp_path / "clock.yaml"
    f.write_text("name: clock\nc: 0.0\nsigma:\n  kind: constant\n  value: 1.0\n")
    assert main(["validate", "--scenario", str(f), "--out", str(tmp_path / "o")]) == 2


@pytest.mark.parametrize("flag, value", [("--steps", "4"), ("--paths", "0"),
                                         ("--eps-end", "0.5"), ("--particles", "10")])
def test_out_of_range_options(tmp_path, flag, value):
    rc = main(["bridge", "--scenario", scenario("back_pedersen"), flag, value,
               "--out", str(tmp_path)])
    assert rc == 2


def test_unknown_suite_exits_with_usage_error():
    with pytest.raises(SystemExit) as exc:
        main(["nonsense", "--scenario", scenario("static")])
    assert exc.value.code == 2


def test_inapplicable_suite_is_a_config_error(tmp_path):
    # the pricing suite needs a payoff; the OU scenario has none
    rc = main(["equilibrium", "--scenario", scenario("ou"), "--paths", "50",
               "--steps", "64", "--out", str(tmp_path)])
    assert rc == 2


@pytest.mark.parametrize("suite, name", [("bridge", "family_ii"), ("filter", "back_pedersen")])
def test_outputs_identical_across_workers(tmp_path, suite, name):
    outs = []
    for w in (1, 4, 16):
        d = tmp_path / f"w{w}"
        main([suite, "--scenario", scenario(name), "--paths", "300", "--steps", "256",
              "--particles", "500", "--workers", str(w), "--out", str(d)])
        outs.append(d)
    names = _files(outs[0])
    assert names
    for d in outs[1:]:
        assert _files(d) == names
        for n in names:
            assert (d / n).read_bytes() == (outs[0] / n).read_bytes(), n


def test_module_entry_point(tmp_path):
    out = subprocess.run([sys.executable, "-m", "dynbridge", "validate", "--scenario",
                          scenario("static"), "--out", str(tmp_path)],
                         capture_output=True, text=True)
    assert out.returncode == 0, out.stderr
    assert "backend" in out.stdout
