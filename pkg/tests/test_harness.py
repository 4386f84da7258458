import io
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bpfidelity import harness
from bpfidelity.errors import DimensionError, NumericalError, ShapeError
from bpfidelity.harness import (
    CSV_HEADER,
    ExperimentSpec,
    add_noise,
    build_operator,
    build_scenario,
    draw_seed,
    monte_carlo_mse,
    psnr,
    read_csv,
    resolve_eps_grid,
    run_sweep,
)
from bpfidelity.imaging import bicubic_upsample, load_image, phantom, read_pgm, write_pgm
from bpfidelity.tikhonov import ClosedFormSolver, NoiseSpec


def psnr_loop(a, b):
    total = 0.0
    for u, v in zip(np.ravel(a), np.ravel(b)):
        total += (float(u) - float(v)) ** 2
    return 10 * math.log10(255**2 / (total / np.size(a)))


# -- metrics and noise ----------------------------------------------------------


def test_psnr_unit_error():
    x = np.arange(16.0)
    assert psnr(x + 1, x) == pytest.approx(48.13, abs=0.005)


def test_psnr_identical_is_inf():
    x = np.ones(5)
    assert psnr(x, x) == math.inf


def test_psnr_shape_mismatch():
    with pytest.raises(DimensionError):
        psnr(np.ones(4), np.ones(5))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_psnr_matches_loop(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.uniform(0, 255, (2, 37))
    assert psnr(a, b) == pytest.approx(psnr_loop(a, b), rel=1e-12)


def test_add_noise_sigma_statistics():
    y = np.zeros(8192)
    e = add_noise(y, NoiseSpec(sigma_e=math.sqrt(2)), seed=3)
    assert abs(e.std() - math.sqrt(2)) / math.sqrt(2) < 0.05
    assert abs(e.mean()) < 0.05


def test_add_noise_snr_statistics():
    y = load_image(None, 64).ravel()
    noisy = add_noise(y, NoiseSpec(snr_db=20.0), seed=1)
    snr = 10 * math.log10(np.sum(y**2) / np.sum((noisy - y) ** 2))
    assert snr == pytest.approx(20.0, abs=0.2)


def test_add_noise_zero_and_determinism():
    y = np.arange(6.0)
    np.testing.assert_array_equal(add_noise(y, NoiseSpec(sigma_e=0.0), 0), y)
    a = add_noise(y, NoiseSpec(sigma_e=1.0), 9)
    np.testing.assert_array_equal(a, add_noise(y, NoiseSpec(sigma_e=1.0), 9))
    assert not np.array_equal(a, add_noise(y, NoiseSpec(sigma_e=1.0), 10))


def test_noise_spec_validation():
    with pytest.raises(ValueError):
        NoiseSpec()
    with pytest.raises(ValueError):
        NoiseSpec(sigma_e=1.0, snr_db=20.0)


# -- images -----------------------------------------------------------------------


def test_phantom_range_and_determinism():
    img = phantom(64)
    assert img.shape == (64, 64)
    assert img.min() >= 0 and img.max() <= 255
    assert img.std() > 30
    np.testing.assert_array_equal(img, phantom(64))


def test_pgm_round_trip(tmp_path):
    img = np.random.default_rng(0).integers(0, 256, (5, 7)).astype(float)
    path = tmp_path / "a.pgm"
    write_pgm(path, img)
    np.testing.assert_array_equal(read_pgm(path), img)
    assert load_image(path, 5).shape == (5, 5)


def test_pgm_rejects_other_formats(tmp_path):
    path = tmp_path / "b.pgm"
    path.write_bytes(b"P2\n2 2\n255\n1 2 3 4\n")
    with pytest.raises(ValueError):
        read_pgm(path)
    with pytest.raises(ShapeError):
        write_pgm(tmp_path / "c.pgm", np.zeros(4))


def test_bicubic_keeps_sample_phase():
    lo = np.random.default_rng(1).uniform(0, 255, (6, 5))
    hi = bicubic_upsample(lo, 3)
    assert hi.shape == (18, 15)
    np.testing.assert_allclose(hi[::3, ::3], lo, atol=1e-12)


def test_bicubic_constant_and_ramp():
    np.testing.assert_allclose(bicubic_upsample(np.full((8, 8), 7.0), 3), 7.0, atol=1e-12)
    lo = np.add.outer(np.arange(22.0), 2 * np.arange(22.0))
    hi = bicubic_upsample(lo, 3, (64, 64))
    r, c = np.meshgrid(np.arange(64) / 3, np.arange(64) / 3, indexing="ij")
    np.testing.assert_allclose(hi[3:61, 3:61], (r + 2 * c)[3:61, 3:61], atol=1e-10)


def test_bicubic_validation():
    with pytest.raises(ValueError):
        bicubic_upsample(np.ones((4, 4)), 1)
    with pytest.raises(ShapeError):
        bicubic_upsample(np.ones(4), 2)


# -- specs and scenarios ----------------------------------------------------------


def test_spec_validation():
    with pytest.raises(ValueError):
        ExperimentSpec(scenario="mri")
    with pytest.raises(ValueError):
        ExperimentSpec(prior="tv", solver="closed")
    with pytest.raises(ValueError):
        ExperimentSpec(betas=(1.0, 0.0))
    with pytest.raises(ValueError):
        ExperimentSpec(fidelity="ls", eps=0.1)
    with pytest.raises(ValueError):
        ExperimentSpec(prior="denoiser:median", solver="idbp", fidelity="ls")
    ExperimentSpec(prior="denoiser:median", solver="idbp")


def test_spec_digest_is_stable():
    a = ExperimentSpec(betas=(0.1, 1.0))
    assert a.digest() == ExperimentSpec(betas=[0.1, 1]).digest()
    assert a.digest() != ExperimentSpec(betas=(0.1, 1.0), seed=1).digest()


@pytest.mark.parametrize(
    "scenario,shape",
    [("srx3", (484, 4096)), ("deblur9", (4096, 4096)), ("inpaint", (2048, 4096))],
)
def test_operator_dimensions(scenario, shape):
    assert build_operator(ExperimentSpec(scenario=scenario)).shape == shape


def test_cs_dimensions_without_materializing():
    op = build_operator(ExperimentSpec(scenario="cs", size=128))
    assert op.shape == (8192, 16384)
    assert "matrix" not in vars(op.ops[0])


def test_scenario_initializations():
    sr = build_scenario(ExperimentSpec(scenario="srx3", size=24))
    assert sr.init.shape == (576,) and sr.y.shape == (64,)
    db = build_scenario(ExperimentSpec(scenario="deblur9", size=16))
    np.testing.assert_array_equal(db.init, db.y)
    ip = build_scenario(ExperimentSpec(scenario="inpaint", size=16))
    np.testing.assert_array_equal(ip.init, ip.op.adjoint(ip.y))
    cs = build_scenario(ExperimentSpec(scenario="cs", size=16))
    np.testing.assert_array_equal(cs.init, np.zeros(256))


def test_draw_seeds_distinct_and_shared():
    spec = ExperimentSpec(seed=4)
    seeds = {draw_seed(spec, d) for d in range(20)}
    assert len(seeds) == 20
    assert draw_seed(spec, 3) == draw_seed(ExperimentSpec(seed=4, betas=(9.0,)), 3)


def test_eps_grid_defaults():
    deblur = ExperimentSpec(scenario="deblur9", noise=NoiseSpec(sigma_e=2.0))
    assert resolve_eps_grid(deblur, 2.0) == (pytest.approx(0.04),)
    assert resolve_eps_grid(ExperimentSpec(), 2.0) == (0.0,)
    assert resolve_eps_grid(ExperimentSpec(fidelity="ls"), 2.0) == (0.0,)
    assert resolve_eps_grid(ExperimentSpec(eps_grid=(0.1, 0.2)), 2.0) == (0.1, 0.2)


# -- sweeps ---------------------------------------------------------------------


def small_sweep(**kw):
    base = dict(scenario="srx3", size=24, noise=NoiseSpec(sigma_e=1.0), betas=(0.1, 1.0), draws=3)
    base.update(kw)
    return run_sweep(ExperimentSpec(**base))


def test_sweep_rows_and_header():
    res = small_sweep()
    text = res.to_csv()
    assert text.splitlines()[0] == ",".join(CSV_HEADER)
    assert len(res.rows) == 6
    assert [r.beta for r in res.rows] == [0.1] * 3 + [1.0] * 3
    assert all(r.wall_ms is None for r in res.rows)
    assert res.baseline_psnr is not None and np.isfinite(res.baseline_psnr)


def test_sweep_is_byte_identical():
    assert small_sweep().to_csv() == small_sweep().to_csv()


def test_sweep_workers_do_not_change_output():
    spec = ExperimentSpec(scenario="deblur9", size=16, noise=NoiseSpec(sigma_e=1.0), betas=(0.1, 0.5, 2.0), draws=2)
    assert run_sweep(spec, workers=3).to_csv() == run_sweep(spec).to_csv()


def test_csv_round_trip():
    res = small_sweep()
    rows = read_csv(io.StringIO(res.to_csv()))
    assert len(rows) == len(res.rows)
    for parsed, row in zip(rows, res.rows):
        assert parsed["psnr_db"] == row.psnr_db
        assert parsed["seed"] == row.seed
        assert parsed["wall_ms"] is None


def test_sweep_analytic_matches_empirical_average():
    res = small_sweep(draws=1, noise=NoiseSpec(sigma_e=0.0))
    for r in res.rows:
        assert r.mse == pytest.approx(r.bias_sq + r.variance, rel=1e-8)


def test_failed_cell_is_marked(monkeypatch):
    real = harness._solve_cell

    def flaky(ctx, beta, eps):
        if beta == 1.0:
            raise NumericalError("boom")
        return real(ctx, beta, eps)

    monkeypatch.setattr(harness, "_solve_cell", flaky)
    res = small_sweep()
    assert len(res.errors) == 3
    line = res.to_csv().splitlines()[-1].split(",")
    assert line[CSV_HEADER.index("psnr_db")] == ""
    assert res.best()[0] == (0.1, 0.0)


def test_timing_fills_wall_ms():
    res = run_sweep(ExperimentSpec(scenario="deblur9", size=16), timing=True)
    assert all(r.wall_ms is not None and r.wall_ms >= 0 for r in res.rows)


def test_sr_l2_bp_dominates_ls_each_beta():
    betas = tuple(np.geomspace(0.01, 10, 7))
    ls = small_sweep(fidelity="ls", betas=betas, noise=NoiseSpec(sigma_e=0.0)).mean_psnr()
    bp = small_sweep(fidelity="bp", betas=betas, noise=NoiseSpec(sigma_e=0.0)).mean_psnr()
    for b in betas:
        assert bp[(b, 0.0)] >= ls[(b, 0.0)]


def test_iterative_sweep_runs():
    res = small_sweep(prior="tv", solver="fista", iters=10, draws=2)
    assert not res.errors and len(res.rows) == 4
    assert all(r.bias_sq is None for r in res.rows)


def test_idbp_sweep_runs():
    res = small_sweep(prior="denoiser:median", solver="idbp", iters=5, draws=1, betas=(2.0,))
    assert not res.errors and res.rows[0].iters == 5


def test_monte_carlo_noise_free_is_exact():
    spec = ExperimentSpec(scenario="srx3", size=24)
    sc = build_scenario(spec)
    solver = ClosedFormSolver("bp", sc.op, 0.5)
    est = monte_carlo_mse(solver, sc.ground_truth, 0.0, draws=4)
    ref = np.sum((solver.solve(sc.op.apply(sc.ground_truth)) - sc.ground_truth) ** 2)
    assert est.mean == pytest.approx(ref, rel=1e-12)
    assert est.stderr == pytest.approx(0.0, abs=1e-9 * ref)
