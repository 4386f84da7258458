import json
import subprocess
import sys

import pytest

from bpfidelity.cli import main, parse_floats
from bpfidelity.cli import UsageError
from bpfidelity.harness import CSV_HEADER


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_parse_floats():
    assert parse_floats("1,2.5", "--beta") == [1.0, 2.5]
    assert parse_floats("1:100:3", "--beta") == pytest.approx([1, 10, 100])
    with pytest.raises(UsageError):
        parse_floats("1:2", "--beta")
    with pytest.raises(UsageError):
        parse_floats("a,b", "--beta")


def test_spectrum_sr(capsys):
    code, out, err = run(capsys, "spectrum", "--scenario", "srx3")
    assert code == 0
    assert "m=484 n=4096" in out
    cond = float(out.strip().splitlines()[-1].split("=")[1])
    assert cond == pytest.approx(2.93e3, rel=0.01)
    assert json.loads(err.splitlines()[0])["scenario"] == "srx3"


def test_verify_observations_custom_spectrum(capsys):
    code, out, _ = run(capsys, "verify-observations", "--spectrum", "0.9,0.5,0.1", "--beta", "0.3", "--sigma", "1")
    assert code == 0
    assert "Obs2: all λ<1 ⇒ MSE_BP<MSE_LS: PASS" in out
    assert out.count("PASS") == 3


def test_verify_observations_scenario(capsys):
    code, out, _ = run(capsys, "verify-observations", "--scenario", "srx3", "--size", "12", "--beta", "0.1,1")
    assert code == 0
    assert out.count("Obs3") == 2 and "FAIL" not in out


def test_sweep_csv_and_seed_determinism(capsys, tmp_path):
    args = ["sweep", "--scenario", "deblur9", "--size", "16", "--sigma", "1", "--beta", "0.1:1:3", "--draws", "2"]
    code, out, err = run(capsys, *args, "--seed", "5")
    assert code == 0
    lines = out.splitlines()
    assert lines[0] == ",".join(CSV_HEADER)
    assert len(lines) == 1 + 3 * 2
    assert "best beta=" in err
    _, again, _ = run(capsys, *args, "--seed", "5")
    assert again == out
    _, other, _ = run(capsys, *args, "--seed", "6")
    assert other != out
    path = tmp_path / "s.csv"
    assert main(args + ["--seed", "5", "--out", str(path)]) == 0
    assert path.read_text() == out


def test_solve_saves_image(capsys, tmp_path):
    path = tmp_path / "x.pgm"
    code, out, err = run(capsys, "solve", "--scenario", "srx3", "--size", "24", "--beta", "0.5", "--save-image",
                         str(path))
    assert code == 0
    assert path.read_bytes().startswith(b"P5\n24 24\n255\n")
    assert "bicubic baseline PSNR" in err


def test_idbp_equivalence(capsys):
    code, out, _ = run(capsys, "idbp-equiv", "--scenario", "inpaint", "--size", "12", "--sigma", "1", "--iters", "10")
    assert code == 0
    dev = float(out.split("=")[-1])
    assert dev <= 1e-10


@pytest.mark.parametrize(
    "argv",
    [
        ["sweep", "--bogus"],
        ["solve", "--beta", "1,2"],
        ["sweep", "--prior", "tv", "--solver", "closed"],
        ["idbp-equiv", "--prior", "l2"],
        ["verify-observations", "--spectrum", "1,-1"],
        ["sweep", "--sigma", "1", "--snr", "20"],
    ],
)
def test_usage_errors_exit_1(capsys, argv):
    code, _, err = run(capsys, *argv)
    assert code == 1
    assert err.strip().splitlines()[-1].startswith("error:")


def test_runtime_error_exits_2(capsys, tmp_path):
    code, _, err = run(capsys, "solve", "--image", str(tmp_path / "missing.pgm"), "--size", "12")
    assert code == 2
    assert "error:" in err


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "bpfidelity", "spectrum", "--scenario", "deblur9", "--size", "16"],
                          capture_output=True, text=True, check=False)
    assert proc.returncode == 0
    assert "condition number" in proc.stdout
