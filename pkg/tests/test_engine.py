import numpy as np
import pytest

from collapse_sde import finite, oracles
from collapse_sde.engine import (evolve, evolve_batch, girsanov_transform, step_linear,
                                 step_nonlinear)
from collapse_sde.errors import (CorruptIncrement, GridEscape, LengthMismatch, NonCommuting,
                                 StepTooLarge)
from collapse_sde.noise import NoisePath, trajectory_rng
from collapse_sde.state import (GaussianState, GridSpec, PhysicalParams, WaveFunction,
                                normalize, observables, render_gaussian)

from conftest import ALPHA_STAR, NATURAL

FREE = PhysicalParams.natural(lam=0.0)


def best_gaussian_residual(psi: WaveFunction) -> float:
    """L2 distance to the best Gaussian of free width, by a weighted fit of log psi."""
    psi = normalize(psi)
    a, x = psi.amplitudes, psi.x
    w = np.abs(a) ** 2
    keep = w > 1e-12 * w.max()
    logs = np.log(np.abs(a[keep])) + 1j * np.unwrap(np.angle(a[keep]))
    design = np.stack([x[keep] ** 2, x[keep], np.ones(keep.sum())], axis=1)
    wt = np.sqrt(w[keep])
    coef, *_ = np.linalg.lstsq(design * wt[:, None], logs * wt, rcond=None)
    fit = np.exp(coef[0] * x**2 + coef[1] * x + coef[2])
    fit /= np.sqrt(np.sum(np.abs(fit) ** 2) * psi.grid.dx)
    phase = np.vdot(fit, a)
    return float(np.sqrt(np.sum(np.abs(a - fit * phase / abs(phase)) ** 2) * psi.grid.dx))


def test_free_limit_matches_analytic_spreading(grid):
    a0 = 1.0 + 0.3j
    psi = render_gaussian(GaussianState(a0), grid)
    dt, n = 1e-2, 100
    rec = evolve(psi, NoisePath.zeros(n, dt), FREE, "linear", stride=n)
    a_t = a0 / (1 + 2j * a0 * n * dt)  # free Gaussian width law
    assert abs(rec["var_q"][-1] - 1 / (4 * a_t.real)) < 1e-6
    assert rec["norm2"][-1] == pytest.approx(psi.norm2, rel=1e-12)


def test_nonlinear_free_limit_keeps_unit_norm(grid):
    psi = normalize(render_gaussian(GaussianState(1.0, 0.5, 1.0), grid))
    path = NoisePath.generate(100, 1e-2, 3, kind="w")
    nl = evolve(psi, path, FREE, "nonlinear", stride=1)
    lin = evolve(psi, NoisePath.zeros(100, 1e-2), FREE, "linear", stride=100)
    assert np.max(np.abs(nl["norm2"] - 1)) < 1e-12
    assert nl.final_state.distance(lin.final_state) < 1e-12


def test_parity_preserved_without_noise(grid):
    psi = render_gaussian(GaussianState(0.8), grid)
    rec = evolve(psi, NoisePath.zeros(200, 1e-3), NATURAL, "linear", stride=20)
    assert np.max(np.abs(rec["q_mean"])) < 1e-12


def test_nonlinear_norm_is_restored_every_step(grid):
    psi = normalize(render_gaussian(GaussianState(0.7, 1.0, 0.5), grid))
    rec = evolve(psi, NoisePath.generate(500, 5e-4, 4, kind="w"), NATURAL, "nonlinear")
    assert np.max(np.abs(rec["norm2"] - 1)) < 1e-10


def test_single_steps_match_evolve(grid):
    psi = normalize(render_gaussian(GaussianState(ALPHA_STAR, 0.3), grid))
    a = step_linear(psi, 0.01, 5e-4, NATURAL)
    b = evolve(psi, NoisePath(5e-4, [0.01]), NATURAL, "linear").final_state
    assert a.distance(b) < 1e-14
    c = step_nonlinear(psi, 0.01, 5e-4, NATURAL)
    assert c.norm2 == pytest.approx(1.0, abs=1e-12)


def test_gaussian_start_stays_gaussian():
    grid = GridSpec.centered(10.0, 256)
    psi = normalize(render_gaussian(GaussianState(1.0, 0.3, 0.2), grid))
    path = NoisePath.generate(25_000, 1e-4, 3, kind="w")  # omega t up to 5
    residuals = [best_gaussian_residual(psi)]
    for j in range(5):
        seg = NoisePath(1e-4, path.increments[j * 5000:(j + 1) * 5000], kind="w")
        psi = evolve(psi, seg, NATURAL, "nonlinear", stride=5000, recenter=True).final_state
        residuals.append(best_gaussian_residual(psi))
    assert max(residuals) < 1e-4


def _two_bump(grid, w_plus):
    def bump(c):
        b = np.exp(-(grid.x - c) ** 2 / 2)
        return b / np.sqrt(np.sum(b**2) * grid.dx)
    return normalize(WaveFunction(grid, np.sqrt(w_plus) * bump(5) + np.sqrt(1 - w_plus) * bump(-5)))


def test_equal_two_bump_collapses_onto_one_bump():
    grid = GridSpec.centered(12.0, 256)
    psi = _two_bump(grid, 0.5)
    dt, n = 2.5e-4, 4000  # omega t = 2, within the omega t = 10 deadline
    paths = [NoisePath.generate(n, dt, 31, i, kind="w") for i in range(16)]
    recs = evolve_batch(psi, paths, NATURAL, "nonlinear", stride=n)
    shares = []
    for r in recs:
        dens = np.abs(r.final_state.amplitudes) ** 2
        right = dens[r.final_state.x > 0].sum() / dens.sum()
        shares.append(max(right, 1 - right))
    assert min(shares) > 0.99
    # two-level analogue with the bump positions as eigenvalues collapses on the same scale
    L = np.diag([-5.0, 5.0])
    vecs = np.tile([np.sqrt(0.5), np.sqrt(0.5)], (200, 1))
    final, _ = finite.evolve_finite_batch(vecs, np.zeros((2, 2)), [L], dt * 4, n // 4, 1.0,
                                          trajectory_rng(31))
    assert np.mean(finite.populations(final, L).max(axis=1) > 0.99) > 0.99


def test_strong_order_at_least_half():
    grid = GridSpec.centered(8.0, 128)
    psi = normalize(render_gaussian(GaussianState(1.0, 0.3, 0.2), grid))
    t_end, seeds, mean = 0.25, (11, 12, 13, 14), []
    for dt in (1e-2, 1e-3, 1e-4):
        n_ref = int(round(t_end / (dt / 16)))
        fine = [NoisePath.generate(n_ref, dt / 16, s, kind="w") for s in seeds]
        ref = evolve_batch(psi, fine, NATURAL, stride=n_ref, max_exponent=None)
        coarse = evolve_batch(psi, [f.coarsen(16) for f in fine], NATURAL, stride=n_ref // 16,
                              max_exponent=None)
        mean.append(np.mean([c.final_state.distance(r.final_state) for c, r in zip(coarse, ref)]))
    mean = np.array(mean)
    # each tenfold refinement must gain at least sqrt(10)
    assert np.all(mean[:-1] / mean[1:] >= np.sqrt(10))


def test_girsanov_trivial_cases():
    xi = NoisePath.generate(100, 0.01, 5)
    w = girsanov_transform(xi, np.zeros(100), NATURAL)
    assert np.array_equal(w.increments, xi.increments) and w.kind == "w"
    assert w.provenance["source_seed"] == 5
    c = 0.7
    w = girsanov_transform(xi, np.full(100, c), NATURAL)
    assert np.allclose(w.cumulative(), xi.cumulative() - 2 * c * xi.times)
    w = girsanov_transform(xi, np.full(101, c), NATURAL, rule="trapezoid")
    assert np.allclose(w.cumulative(), xi.cumulative() - 2 * c * xi.times)
    with pytest.raises(LengthMismatch):
        girsanov_transform(xi, np.zeros(99), NATURAL)
    with pytest.raises(LengthMismatch):
        girsanov_transform(xi, np.zeros(100), NATURAL, rule="trapezoid")


def test_left_point_routes_agree_to_round_off():
    res = oracles.girsanov_route(1e-3, rule="left")
    assert res.value < 1e-10


def test_route_observables_agree():
    res = oracles.girsanov_route(1e-4)
    assert res.ok
    assert res.detail["q_gap"] < 5e-3


def test_zero_length_path_records_initial_snapshot(grid):
    psi = normalize(render_gaussian(GaussianState(ALPHA_STAR, 1.0), grid))
    rec = evolve(psi, NoisePath.zeros(0, 1e-3), NATURAL, "nonlinear")
    assert len(rec) == 1 and rec.times[0] == 0.0
    assert rec["q_mean"][0] == pytest.approx(1.0)
    assert rec.final_state.distance(psi) == 0.0


def test_same_seed_is_bit_identical(grid):
    psi = normalize(render_gaussian(GaussianState(ALPHA_STAR), grid))
    runs = [evolve(psi, NoisePath.generate(300, 5e-4, 9, kind="w"), NATURAL, stride=10,
                   diagnostics=("delta_A2",)) for _ in range(2)]
    for name in runs[0].columns:
        assert np.array_equal(runs[0][name], runs[1][name])
    assert np.array_equal(runs[0].final_state.amplitudes, runs[1].final_state.amplitudes)
    assert runs[0].manifest == runs[1].manifest


def test_record_stride_and_track_means(grid):
    psi = normalize(render_gaussian(GaussianState(ALPHA_STAR), grid))
    rec = evolve(psi, NoisePath.generate(25, 1e-3, 1), NATURAL, "linear", stride=10,
                 track_means=True)
    assert np.allclose(rec.times, [0, 0.01, 0.02, 0.025])
    assert len(rec.step_q_means) == 26


def test_corrupt_increment_rejected(grid):
    psi = normalize(render_gaussian(GaussianState(ALPHA_STAR), grid))
    inc = np.zeros(50)
    inc[17] = 11 * np.sqrt(1e-3)
    with pytest.raises(CorruptIncrement) as exc:
        evolve(psi, NoisePath(1e-3, inc), NATURAL)
    assert exc.value.time_index == 17


def test_step_too_large(grid):
    psi = normalize(render_gaussian(GaussianState(ALPHA_STAR), grid))
    with pytest.raises(StepTooLarge) as exc:
        evolve(psi, NoisePath.zeros(5, 2e-3), NATURAL, "linear")  # 100 * 2e-3 = 0.2
    assert exc.value.time_index == 0
    evolve(psi, NoisePath.zeros(5, 2e-3), NATURAL, "linear", max_exponent=None)


def test_grid_escape_reports_time_index():
    grid = GridSpec.centered(6.0, 128)
    psi = render_gaussian(GaussianState(1.0, 0.0, 8.0), grid)
    with pytest.raises(GridEscape) as exc:
        evolve(psi, NoisePath.zeros(400, 1e-3), FREE, "linear")
    assert 0 < exc.value.time_index < 400


def test_failing_row_does_not_disturb_others(grid):
    psi = normalize(render_gaussian(GaussianState(ALPHA_STAR), grid))
    good = [NoisePath.generate(200, 5e-4, 2, i, kind="w") for i in range(3)]
    bad_inc = good[1].increments.copy()
    bad_inc[50] = 1.0
    paths = [good[0], NoisePath(5e-4, bad_inc, kind="w"), good[2]]
    recs = evolve_batch(psi, paths, NATURAL, stride=20)
    assert recs[1].failure.startswith("CorruptIncrement")
    for j in (0, 2):
        solo = evolve(psi, good[j], NATURAL, stride=20)
        assert np.array_equal(recs[j]["q_mean"], solo["q_mean"])


def test_recentering_is_a_relabeling():
    grid = GridSpec.centered(16.0, 512)
    psi = normalize(render_gaussian(GaussianState(ALPHA_STAR, 0.0, 1.0), grid))
    path = NoisePath.generate(1500, 1e-3, 6, kind="w")
    a = evolve(psi, path, NATURAL, stride=1500, max_exponent=None)
    b = evolve(psi, path, NATURAL, stride=1500, max_exponent=None, recenter=True)
    assert b.final_state.grid.center != 0.0
    for name in ("q_mean", "p_mean", "var_q", "var_p"):
        assert b[name][-1] == pytest.approx(a[name][-1], abs=1e-9)


def test_finite_state_validation():
    with pytest.raises(NonCommuting):
        finite.FiniteState([1, 0], np.zeros((2, 2)), [np.diag([0, 1]), np.array([[0, 1], [1, 0]])])
    with pytest.raises(ValueError):
        finite.FiniteState([1, 0], np.array([[0, 1], [0, 0]]), [np.diag([0, 1])])
    with pytest.raises(ValueError):
        finite.FiniteState(np.ones(65), np.zeros((65, 65)), [])


def test_finite_eigenstate_is_stationary():
    s = finite.FiniteState([1, 0], np.zeros((2, 2)), [np.diag([0.0, 1.0])])
    for dw in (0.3, -0.1, 0.05):
        s = finite.step_finite(s, [dw], 0.01, 1.0)
    assert np.allclose(s.vector, [1, 0], atol=1e-15)
    with pytest.raises(ValueError):
        finite.step_finite(s, [0.1, 0.2], 0.01, 1.0)


def test_finite_convergence_by_lambda_t_twenty():
    L = np.diag([0.0, 1.0, 2.0])
    vecs = np.tile(np.ones(3) / np.sqrt(3), (1000, 1))
    final, snaps = finite.evolve_finite_batch(vecs, np.zeros((3, 3)), [L], 0.01, 2000, 1.0,
                                              trajectory_rng(7), record_every=200)
    pops = finite.populations(final, L)
    assert np.mean(pops.max(axis=1) > 0.999) >= 0.99
    assert np.allclose(np.linalg.norm(final, axis=1), 1, atol=1e-10)
    mean_max = [finite.populations(s, L).max(axis=1).mean() for s in snaps]
    assert np.all(np.diff(mean_max) > -0.01)


def test_finite_with_hamiltonian_and_explicit_increments():
    H = np.diag([0.3, -0.2])
    L = np.diag([0.0, 1.0])
    inc = trajectory_rng(1).normal(0, 0.1, size=(4, 10, 1))
    a, _ = finite.evolve_finite_batch(np.ones((4, 2)), H, [L], 0.01, 10, 1.0, increments=inc)
    b, _ = finite.evolve_finite_batch(np.ones((4, 2)), H, [L], 0.01, 10, 1.0, increments=inc)
    assert np.array_equal(a, b)
    with pytest.raises(ValueError):
        finite.evolve_finite_batch(np.ones((4, 2)), H, [L], 0.01, 9, 1.0, increments=inc)
