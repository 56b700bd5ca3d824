import json
import os
import subprocess
import sys

import pytest

from kreinlab import cli


def write_config(tmp_path, body, output="out"):
    path = tmp_path / "lab.ini"
    path.write_text(f"[lab]\noutput = {tmp_path / output}\nseed = 11\n\n" + body)
    return str(path)


KREIN = """[krein]
experiment = krein-check
b = 2
lam = -5
R = 5
N = 2000
"""

SMALL_SUITE = KREIN + """
[lb]
experiment = lowerbound-scan
geometry = half-cylinder
R = 50

[dw]
experiment = dirichlet-weyl
t = 100, 1000, 10000

[birman]
experiment = birman-check
count = 3
R = 10
N = 500

[diag]
experiment = diagram-check
count = 5
N = 2000
"""


def test_list_has_all_experiments(capsys):
    assert cli.main(["list"]) == 0
    out = capsys.readouterr().out.splitlines()
    names = [line.split()[0] for line in out[1:]]
    assert len(names) == 10
    assert set(names) == set(cli.EXPERIMENTS)
    assert any(line.startswith("weyl-robin-pair") and "order -3" in line for line in out)
    assert any(line.startswith("krein-check") and "Krein" in line for line in out)


def test_krein_check_run(tmp_path):
    assert cli.main(["run", write_config(tmp_path, KREIN)]) == 0
    rows = (tmp_path / "out" / "krein.csv").read_text().splitlines()
    assert rows[0] == "xi1,rel_l2_error"
    assert len(rows) == 1 + 11
    assert all(float(r.split(",")[1]) <= 1e-6 for r in rows[1:])
    meta = json.loads((tmp_path / "out" / "krein.meta").read_text())
    assert meta["passed"] is True
    assert meta["config"]["msq"] == 1.0 and meta["config"]["tol"] == 1e-6
    assert meta["seed"] == 11


def test_number_format_round_trips(tmp_path):
    cli.main(["run", write_config(tmp_path, KREIN)])
    value = (tmp_path / "out" / "krein.csv").read_text().splitlines()[1].split(",")[1]
    mantissa = value.split("e")[0].replace("-", "").replace(".", "")
    assert len(mantissa) == 17
    assert float(value) == float("%.16e" % float(value))


def test_weyl_table_columns(tmp_path):
    body = "[w]\nexperiment = weyl-robin-dirichlet\nR = 400\n"
    assert cli.main(["run", write_config(tmp_path, body)]) == 0
    rows = (tmp_path / "out" / "w.csv").read_text().splitlines()
    assert rows[0] == "j,s_j,s_j_scaled"
    summary = json.loads((tmp_path / "out" / "w.meta").read_text())["summary"]
    assert summary["exponent"] == pytest.approx(-2.0, rel=0.05)
    assert summary["plateau"] == pytest.approx(2.0, rel=0.05)


def test_deterministic_and_thread_independent(tmp_path, monkeypatch):
    path = write_config(tmp_path, SMALL_SUITE, output="a")
    monkeypatch.setenv("LAB_THREADS", "1")
    assert cli.main(["run", path]) == 0
    first = {p: (tmp_path / "a" / p).read_bytes() for p in sorted(os.listdir(tmp_path / "a"))}
    monkeypatch.setenv("LAB_THREADS", "4")
    assert cli.main(["run", path]) == 0
    second = {p: (tmp_path / "a" / p).read_bytes() for p in sorted(os.listdir(tmp_path / "a"))}
    assert first == second
    assert sorted(first) == sorted(f"{s}.{e}" for s in ("krein", "lb", "dw", "birman", "diag") for e in ("csv", "meta"))


def test_empty_config_exit_2(tmp_path, capsys):
    assert cli.main(["run", write_config(tmp_path, "")]) == 2
    assert "no experiments" in capsys.readouterr().err


@pytest.mark.parametrize(
    "body,needle",
    [
        ("[x]\nexperiment = nope\n", "unknown experiment"),
        ("[x]\nexperiment = krein-check\nbogus = 1\n", "unknown key 'bogus'"),
        ("[x]\nexperiment = krein-check\nb = two\n", "lab.ini:7: [x] b:"),
        ("[x]\nexperiment = krein-check\ngeometry = sphere\n", "expected one of"),
        ("[x]\nexperiment = krein-check\nR = -1\n", "R must be positive"),
        ("[x]\nb = 1\n", "missing key 'experiment'"),
        ("[x]\nexperiment = krein-check\nn = 1\n", "n must be"),
        ("[x]\nexperiment = garding-check\nsymbols = q:1\n", "symbol kind"),
    ],
)
def test_validation_errors_exit_2(tmp_path, capsys, body, needle):
    assert cli.main(["run", write_config(tmp_path, body)]) == 2
    assert needle in capsys.readouterr().err
    assert not (tmp_path / "out").exists()


def test_unreadable_config_exit_2(tmp_path, capsys):
    assert cli.main(["run", str(tmp_path / "missing.ini")]) == 2
    assert "cannot read" in capsys.readouterr().err


def test_domain_error_exit_3(tmp_path, capsys):
    body = "[x]\nexperiment = krein-check\ngeometry = half-cylinder\nlam = 5\nR = 2\nN = 500\n"
    assert cli.main(["run", write_config(tmp_path, body)]) == 3
    err = capsys.readouterr().err
    assert "domain error" in err and "mode=" in err and "lambda=" in err


def test_failed_check_exit_3(tmp_path):
    body = KREIN + "tol = 1e-30\n"
    assert cli.main(["run", write_config(tmp_path, body)]) == 3
    meta = json.loads((tmp_path / "out" / "krein.meta").read_text())
    assert meta["passed"] is False


def test_no_temporary_files_left(tmp_path):
    cli.main(["run", write_config(tmp_path, KREIN)])
    assert not [p for p in os.listdir(tmp_path / "out") if p.startswith(".tmp")]


def test_console_script_entry_point(tmp_path):
    out = subprocess.run([sys.executable, "-m", "kreinlab.cli", "list"], capture_output=True, text=True, check=True)
    assert "diagram-check" in out.stdout
