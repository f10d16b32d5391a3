import csv
import math
import shutil
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from dcdp import cli
from dcdp.exceptions import ConfigError
from dcdp.experiment import (RESULT_HEADER, SUMMARY_HEADER, build_grid, cell_seed,
                             load_config, method_config, resolved_config_text, summarize)
from dcdp.io import write_gmm
from dcdp.purify import DDIM, Tweedie
from dcdp.score import GaussianMixture

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def without_wall_time(rows):
    i = RESULT_HEADER.index("wall_time")
    return [r[:i] + r[i + 1:] for r in rows]


def write_config(path, text):
    path.write_text(text)
    return path


MINIMAL_TWO = """
[experiment]
samples = 1
[task.sr]
operator = sr
sigma_y = 0.0
[method.dcdp-v1]
kind = dcdp-v1
[method.tweedie]
kind = dcdp-tweedie
"""


def test_minimal_config(tmp_path, capsys):
    out = tmp_path / "out"
    assert cli.main(["run", str(CONFIGS / "minimal.ini"), "--out", str(out)]) == 0
    rows = read_csv(out / "results.csv")
    assert tuple(rows[0]) == RESULT_HEADER
    assert len(rows) == 2
    row = dict(zip(RESULT_HEADER, rows[1]))
    assert row["status"] == "ok" and row["task"] == "sr" and row["nfe"] == "180"
    assert math.isfinite(float(row["psnr"]))
    assert (out / "resolved_config.ini").exists()
    assert (out / "traces" / "sr__dcdp-v1__s0__000.csv").exists()
    assert (out / "traces" / "sr__dcdp-v1__s0__000__fidelity.csv").exists()
    assert (out / "recon" / "sr__dcdp-v1__s0__000.pgm").read_bytes()[:2] == b"P5"
    assert "1 cells, 0 failed" in capsys.readouterr().out


def test_rerun_is_identical_except_wall_time(tmp_path):
    for name in ("a", "b"):
        assert cli.main(["run", str(CONFIGS / "minimal.ini"), "--out", str(tmp_path / name)]) == 0
    a = read_csv(tmp_path / "a" / "results.csv")
    b = read_csv(tmp_path / "b" / "results.csv")
    assert without_wall_time(a) == without_wall_time(b)
    assert ((tmp_path / "a" / "recon" / "sr__dcdp-v1__s0__000.txt").read_bytes()
            == (tmp_path / "b" / "recon" / "sr__dcdp-v1__s0__000.txt").read_bytes())


def test_seed_override_changes_results(tmp_path):
    cli.main(["run", str(CONFIGS / "minimal.ini"), "--out", str(tmp_path / "a")])
    cli.main(["run", str(CONFIGS / "minimal.ini"), "--out", str(tmp_path / "b"), "--seed", "7"])
    assert read_csv(tmp_path / "a" / "results.csv")[1] != read_csv(tmp_path / "b" / "results.csv")[1]
    assert "master_seed = 7" in (tmp_path / "b" / "resolved_config.ini").read_text()


def test_adding_a_method_leaves_other_cells_unchanged(tmp_path):
    one = write_config(tmp_path / "one.ini", MINIMAL_TWO.split("[method.tweedie]")[0])
    two = write_config(tmp_path / "two.ini", MINIMAL_TWO)
    cli.main(["run", str(one), "--out", str(tmp_path / "one")])
    cli.main(["run", str(two), "--out", str(tmp_path / "two")])
    r1 = without_wall_time(read_csv(tmp_path / "one" / "results.csv"))
    r2 = without_wall_time(read_csv(tmp_path / "two" / "results.csv"))
    assert len(r2) == 3
    assert r1[1] == [r for r in r2 if r[1] == "dcdp-v1"][0]


def test_parallel_matches_serial(tmp_path):
    cfg = write_config(tmp_path / "c.ini", MINIMAL_TWO.replace("samples = 1", "samples = 2"))
    cli.main(["run", str(cfg), "--out", str(tmp_path / "serial")])
    cli.main(["run", str(cfg), "--out", str(tmp_path / "par"), "--jobs", "2"])
    assert (without_wall_time(read_csv(tmp_path / "serial" / "results.csv"))
            == without_wall_time(read_csv(tmp_path / "par" / "results.csv")))


def test_ablation_config_writes_four_traces(tmp_path):
    text = (CONFIGS / "ablation.ini").read_text().replace("samples = 5", "samples = 1")
    cfg = write_config(tmp_path / "abl.ini", text)
    assert cli.main(["run", str(cfg), "--out", str(tmp_path / "abl")]) == 0
    traces = tmp_path / "abl" / "traces"
    times = {}
    for method in ("fidelity-only", "constant-large", "constant-small", "linear"):
        rows = read_csv(traces / f"sr__{method}__s0__000.csv")
        assert len(rows) == 11
        times[method] = [int(r[1]) for r in rows[1:]]
    assert times["fidelity-only"] == [0] * 10
    assert times["constant-large"] == [400] * 10
    assert times["constant-small"] == [40] * 10
    assert times["linear"] == [400, 356, 311, 267, 222, 178, 133, 89, 44, 0]
    assert not (tmp_path / "abl" / "recon").exists()


# -- per-cell failure isolation ----------------------------------------------

def test_failed_cell_is_recorded_not_raised(tmp_path):
    cfg = write_config(tmp_path / "bad.ini", """
[experiment]
samples = 1
[task.sr]
operator = sr
sigma_y = 0.0
[method.diverge]
kind = dcdp-v1
learning_rate = 1000
[method.ok]
kind = dcdp-tweedie
""")
    assert cli.main(["run", str(cfg), "--out", str(tmp_path / "o")]) == 0
    rows = {r[1]: dict(zip(RESULT_HEADER, r)) for r in read_csv(tmp_path / "o" / "results.csv")[1:]}
    assert rows["diverge"]["status"].startswith("error: NonFiniteError")
    assert rows["diverge"]["psnr"] == "nan"
    assert rows["ok"]["status"] == "ok"
    summary = summarize(tmp_path / "o" / "results.csv")
    assert [e["failed"] for e in summary] == [1, 0]


# -- config parsing ----------------------------------------------------------

@pytest.mark.parametrize("body, locator", [
    ("[experiment]\nsamples = zero\n[task.sr]\n[method.v1]\nkind = dcdp-v1\n",
     "[experiment].samples"),
    ("[experiment]\n[task.sr]\nsigma_y = -1\n[method.v1]\nkind = dcdp-v1\n",
     "[task.sr].sigma_y"),
    ("[experiment]\n[task.sr]\n[method.v1]\nkind = dcdp-v9\n", "[method.v1].kind"),
    ("[experiment]\n[task.sr]\n[method.v1]\nkind = dcdp-v1\nwarp = 9\n", "[method.v1].warp"),
    ("[experiment]\n[task.sr]\n[method.v1]\nkind = dcdp-v1\nschedule = constant\n",
     "[method.v1].T"),
    ("[experiment]\n[task.sr]\n[method.v1]\nkind = dcdp-v1\nbackend = euler\n",
     "[method.v1].backend"),
    ("[experiment]\n[task.x]\noperator = swirl\n[method.v1]\nkind = dcdp-v1\n",
     "[task.x].operator"),
    ("[experiment]\n[prior]\nkind = gmm\npath = nope.gmm\n[task.sr]\n[method.v1]\n"
     "kind = dcdp-v1\n", "[prior].path"),
    ("[experiment]\n[task.sr]\n", "at least one [method"),
    ("[task.sr]\n[method.v1]\nkind = dcdp-v1\n", "[experiment]"),
])
def test_config_errors_exit_2_with_locator(tmp_path, capsys, body, locator):
    cfg = write_config(tmp_path / "bad.ini", body)
    assert cli.main(["run", str(cfg), "--out", str(tmp_path / "o")]) == 2
    err = capsys.readouterr().err
    assert "config error" in err and locator in err and "bad.ini" in err
    assert not (tmp_path / "o").exists()


def test_missing_config_file(tmp_path, capsys):
    assert cli.main(["run", str(tmp_path / "absent.ini")]) == 2
    assert "not found" in capsys.readouterr().err


def test_gmm_prior_from_file(tmp_path):
    prior = GaussianMixture([1.0], [np.zeros(144)], [np.full(144, 0.3)])
    write_gmm(tmp_path / "p.gmm", prior)
    cfg = write_config(tmp_path / "g.ini", """
[experiment]
shape = 12x12
[prior]
kind = gmm
path = p.gmm
[task.id]
operator = identity
sigma_y = 0.05
[method.v1]
kind = dcdp-v1
""")
    assert cli.main(["run", str(cfg), "--out", str(tmp_path / "o")]) == 0
    row = dict(zip(RESULT_HEADER, read_csv(tmp_path / "o" / "results.csv")[1]))
    assert row["status"] == "ok" and row["task"] == "id"


def test_resolved_config_round_trips(tmp_path):
    cfg = load_config(CONFIGS / "ablation.ini")
    text = resolved_config_text(cfg)
    again = load_config(write_config(tmp_path / "r.ini", text))
    assert again == cfg


def test_shipped_configs_parse():
    for path in sorted(CONFIGS.glob("*.ini")):
        cfg = load_config(path)
        assert build_grid(cfg)


def test_method_config_defaults(tmp_path):
    cfg = load_config(CONFIGS / "ablation.ini")
    methods = {m.name: m for m in cfg.methods}
    lin = method_config(methods["linear"], "sr", 0)
    assert lin.K == 10 and lin.fidelity.tau == 100 and lin.purify_backend == DDIM(20)
    assert method_config(methods["constant-small"], "sr", 0).purify_schedule.times == (40,) * 10
    tw = load_config(write_config(tmp_path / "two.ini", MINIMAL_TWO)).methods[1]
    assert method_config(tw, "sr", 0).purify_backend == Tweedie()


def test_cell_seed_is_stable():
    assert cell_seed(0, "truth", "sr", 0) == cell_seed(0, "truth", "sr", 0)
    assert cell_seed(0, "truth", "sr", 0) != cell_seed(1, "truth", "sr", 0)
    assert 0 <= cell_seed(3, "x") < 2 ** 32


# -- table -------------------------------------------------------------------

def test_table_empty(tmp_path, capsys):
    (tmp_path / "empty.csv").write_text("")
    assert cli.main(["table", str(tmp_path / "empty.csv"), "--csv", str(tmp_path / "s.csv")]) == 0
    out = capsys.readouterr().out.splitlines()
    assert len(out) == 1 and out[0].split()[:2] == ["task", "method"]
    assert read_csv(tmp_path / "s.csv") == [list(SUMMARY_HEADER)]
    (tmp_path / "header.csv").write_text(",".join(RESULT_HEADER) + "\n")
    assert cli.main(["table", str(tmp_path / "header.csv")]) == 0
    assert len(capsys.readouterr().out.splitlines()) == 1


def fixture_rows():
    rng = np.random.default_rng(0)
    rows = []
    for i in range(10):
        method = "a" if i < 6 else "b"
        rows.append(["sr", method, "0.05", str(i), *(f"{v:.6g}" for v in rng.uniform(0, 30, 3)),
                     str(10 * (i + 1)), f"{rng.uniform(0, 1):.6g}", "ok"])
    return rows


def test_table_single_row(tmp_path, capsys):
    row = fixture_rows()[0]
    path = tmp_path / "one.csv"
    path.write_text(",".join(RESULT_HEADER) + "\n" + ",".join(row) + "\n")
    cli.main(["table", str(path), "--csv", str(tmp_path / "s.csv")])
    s = dict(zip(SUMMARY_HEADER, read_csv(tmp_path / "s.csv")[1]))
    assert s["psnr_mean"] == row[4] and s["psnr_std"] == "0" and s["n"] == "1"
    assert f"{row[4]} ± 0" in capsys.readouterr().out


def test_table_matches_independent_recomputation(tmp_path, capsys):
    rows = fixture_rows()
    path = tmp_path / "ten.csv"
    path.write_text("\n".join(",".join(r) for r in [list(RESULT_HEADER), *rows]) + "\n")
    assert cli.main(["table", str(path), "--csv", str(tmp_path / "s.csv")]) == 0
    table = capsys.readouterr().out.splitlines()
    assert len(table) == 3
    summary = {r[1]: dict(zip(SUMMARY_HEADER, r)) for r in read_csv(tmp_path / "s.csv")[1:]}
    for method, idx in (("a", range(6)), ("b", range(6, 10))):
        for j, col in enumerate(("psnr", "ssim", "mse", "nfe", "wall_time")):
            vals = np.array([float(rows[i][4 + j]) for i in idx])
            assert float(summary[method][f"{col}_mean"]) == pytest.approx(vals.mean(), rel=1e-5)
            assert float(summary[method][f"{col}_std"]) == pytest.approx(vals.std(), rel=1e-5,
                                                                         abs=1e-12)
        assert summary[method]["n"] == str(len(idx))


def test_table_missing_columns(tmp_path, capsys):
    (tmp_path / "x.csv").write_text("task,method\nsr,a\n")
    assert cli.main(["table", str(tmp_path / "x.csv")]) == 2
    assert "missing columns" in capsys.readouterr().err


# -- adjoint-check -----------------------------------------------------------

@pytest.mark.parametrize("spec", ["downsample:factor=4", "motion_blur:angle=30",
                                  "gaussian_blur", "inpaint:box=4", "identity"])
def test_adjoint_check_passes(capsys, spec):
    assert cli.main(["adjoint-check", spec]) == 0
    assert "pass" in capsys.readouterr().out


def test_adjoint_check_failure_exit_1(monkeypatch, capsys):
    monkeypatch.setattr(cli, "adjoint_check", lambda *a, **k: 1e-3)
    assert cli.main(["adjoint-check", "identity"]) == 1
    assert "FAIL" in capsys.readouterr().out


def test_adjoint_check_bad_spec(capsys):
    assert cli.main(["adjoint-check", "swirl"]) == 2


def test_console_entry_point(tmp_path):
    exe = shutil.which("dcdp")
    cmd = [exe] if exe else [sys.executable, "-m", "dcdp.cli"]
    done = subprocess.run([*cmd, "adjoint-check", "downsample:factor=2"], capture_output=True,
                          text=True)
    assert done.returncode == 0 and "pass" in done.stdout


def test_jobs_must_be_positive():
    with pytest.raises(SystemExit):
        cli.main(["run", "x.ini", "--jobs", "0"])
