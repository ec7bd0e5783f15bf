"""Simulation engine: reproducibility contract, martingale property, moment
agreement with the closed-form maps, and exactness of the jump-model scheme."""

import os
import tempfile

import numpy as np
import pytest

from covhedge import matcalc, models, simulate, transforms

from conftest import S0_REF, SIGMA0_REF

N_PATHS = 6000
N_STEPS = 200


@pytest.fixture(scope="module")
def wasc_sim(wasc_ref, state_ref):
    return simulate.simulate(wasc_ref, state_ref, 1.0, N_STEPS, N_PATHS,
                             seed=101)


@pytest.fixture(scope="module")
def bns_sim(bns_ref, state_ref):
    return simulate.simulate(bns_ref, state_ref, 1.0, N_STEPS, N_PATHS,
                             seed=202)


def _se(x):
    return x.std(axis=0, ddof=1) / np.sqrt(x.shape[0])


class TestBasics:
    def test_grid_and_initial_conditions(self, wasc_sim, state_ref):
        assert wasc_sim.times.shape == (N_STEPS + 1,)
        assert wasc_sim.times[0] == 0.0 and wasc_sim.times[-1] == 1.0
        assert np.allclose(wasc_sim.log_spot[:, 0], state_ref.log_spot)
        assert np.allclose(wasc_sim.cov[:, 0], state_ref.cov)
        assert np.all(wasc_sim.integrated_cov[:, 0] == 0.0)

    def test_covariance_stays_psd(self, wasc_sim):
        sub = wasc_sim.cov[:500]
        lmin = np.linalg.eigvalsh(sub)[..., 0]
        assert lmin.min() > -1e-12

    def test_input_validation(self, wasc_ref, bns_ref, state_ref):
        with pytest.raises(ValueError):
            simulate.simulate(wasc_ref, state_ref, 0.0, 10, 10, seed=1)
        with pytest.raises(ValueError):
            simulate.simulate(wasc_ref, state_ref, 1.0, 0, 10, seed=1)
        with pytest.raises(ValueError):
            simulate.simulate(wasc_ref, state_ref, 1.0, 10, 10, seed=-1)
        with pytest.raises(ValueError):
            simulate.simulate(wasc_ref, state_ref, 1.0, 10, 10, seed=1,
                              scheme="exact")
        with pytest.raises(ValueError):
            simulate.simulate(bns_ref, state_ref, 1.0, 10, 10, seed=1,
                              scheme="splitting")


class TestDeterminism:
    @pytest.mark.parametrize("model", ["wasc", "bns"])
    def test_bitwise_reproducible(self, model, wasc_ref, bns_ref, state_ref):
        params = wasc_ref if model == "wasc" else bns_ref
        a = simulate.simulate(params, state_ref, 1.0, 40, 50, seed=9)
        b = simulate.simulate(params, state_ref, 1.0, 40, 50, seed=9)
        assert np.array_equal(a.log_spot, b.log_spot)
        assert np.array_equal(a.cov, b.cov)
        assert np.array_equal(a.integrated_cov, b.integrated_cov)

    @pytest.mark.parametrize("model", ["wasc", "bns"])
    def test_chunk_size_invariance(self, model, wasc_ref, bns_ref, state_ref):
        params = wasc_ref if model == "wasc" else bns_ref
        a = simulate.simulate(params, state_ref, 1.0, 40, 130, seed=9,
                              chunk_paths=7)
        b = simulate.simulate(params, state_ref, 1.0, 40, 130, seed=9,
                              chunk_paths=64)
        assert np.array_equal(a.log_spot, b.log_spot)
        assert np.array_equal(a.cov, b.cov)

    @pytest.mark.parametrize("model", ["wasc", "bns"])
    def test_partition_invariance(self, model, wasc_ref, bns_ref, state_ref):
        params = wasc_ref if model == "wasc" else bns_ref
        full = simulate.simulate(params, state_ref, 1.0, 40, 40, seed=9)
        lo = simulate.simulate(params, state_ref, 1.0, 40, 17, seed=9,
                               path_start=0)
        hi = simulate.simulate(params, state_ref, 1.0, 40, 23, seed=9,
                               path_start=17)
        assert np.array_equal(full.log_spot,
                              np.concatenate([lo.log_spot, hi.log_spot]))
        assert np.array_equal(full.integrated_cov,
                              np.concatenate([lo.integrated_cov,
                                              hi.integrated_cov]))

    def test_seed_changes_paths(self, wasc_ref, state_ref):
        a = simulate.simulate(wasc_ref, state_ref, 1.0, 40, 50, seed=9)
        b = simulate.simulate(wasc_ref, state_ref, 1.0, 40, 50, seed=10)
        assert not np.array_equal(a.log_spot, b.log_spot)


class TestWascStatistics:
    def test_spot_martingale(self, wasc_sim):
        st = wasc_sim.terminal_spot
        dev = np.abs(st.mean(axis=0) - S0_REF)
        assert np.all(dev <= 3.0 * _se(st))

    def test_terminal_covariance_mean(self, wasc_ref, wasc_sim):
        exact = models.wasc_mean_cov(wasc_ref, SIGMA0_REF, 1.0)
        samp = wasc_sim.cov[:, -1]
        dev = np.abs(samp.mean(axis=0) - exact)
        assert np.all(dev <= 3.0 * _se(samp) + 1e-12)

    def test_integrated_covariance_mean(self, wasc_ref, wasc_sim):
        imap = models.wasc_integrated_mean(wasc_ref, 0.0, 1.0)
        exact = matcalc.mat(imap.map @ matcalc.vec(SIGMA0_REF) + imap.offset)
        samp = wasc_sim.realized_cov
        dev = np.abs(samp.mean(axis=0) - exact)
        assert np.all(dev <= 3.0 * _se(samp) + 1e-12)

    def test_transform_against_paths(self, wasc_ref, wasc_sim, state_ref):
        u = np.array([1.5 + 0.7j, 1.5 - 1.3j])
        closed, ok = transforms.basis_value(wasc_ref, state_ref, 1.0, u)
        assert ok
        vals = np.exp(wasc_sim.log_spot[:, -1] @ u)
        dev_r = abs(vals.real.mean() - closed.real)
        dev_i = abs(vals.imag.mean() - closed.imag)
        assert dev_r <= 3.0 * _se(vals.real)
        assert dev_i <= 3.0 * _se(vals.imag)


class TestBnsStatistics:
    def test_spot_martingale(self, bns_sim):
        st = bns_sim.terminal_spot
        dev = np.abs(st.mean(axis=0) - S0_REF)
        assert np.all(dev <= 3.0 * _se(st))

    def test_terminal_covariance_mean(self, bns_ref, bns_sim):
        exact = models.bns_mean_cov(bns_ref, SIGMA0_REF, 1.0)
        samp = bns_sim.cov[:, -1]
        dev = np.abs(samp.mean(axis=0) - exact)
        assert np.all(dev <= 3.0 * _se(samp) + 1e-12)

    def test_bracket_mean_with_jump_products(self, bns_ref, bns_sim):
        cont = models.bns_integrated_mean(bns_ref, SIGMA0_REF, 1.0)
        n = bns_ref.wishart_shape
        th = bns_ref.wishart_scale
        rho = bns_ref.leverage_diag
        pair_mom = (n * n * np.outer(np.diag(th), np.diag(th))
                    + 2.0 * n * th * th)
        jumps = bns_ref.jump_intensity * 1.0 * np.outer(rho, rho) * pair_mom
        samp = bns_sim.realized_cov
        dev = np.abs(samp.mean(axis=0) - (cont + jumps))
        assert np.all(dev <= 3.0 * _se(samp) + 1e-12)

    def test_transform_against_paths(self, bns_ref, bns_sim, state_ref):
        u = np.array([1.5 + 0.7j, 1.5 - 1.3j])
        closed, ok = transforms.basis_value(bns_ref, state_ref, 1.0, u)
        assert ok
        vals = np.exp(bns_sim.log_spot[:, -1] @ u)
        assert abs(vals.real.mean() - closed.real) <= 3.0 * _se(vals.real)
        assert abs(vals.imag.mean() - closed.imag) <= 3.0 * _se(vals.imag)


class TestSchemes:
    def test_euler_martingale(self, wasc_ref, state_ref):
        sim = simulate.simulate(wasc_ref, state_ref, 1.0, 200, 4000, seed=5,
                                scheme="euler")
        st = sim.terminal_spot
        # first-order scheme: allow discretization bias on top of MC noise
        dev = np.abs(st.mean(axis=0) - S0_REF)
        assert np.all(dev <= 4.0 * _se(st) + 0.5)

    def test_reflect_aborts_when_too_coarse(self, state_ref):
        rough = models.WascParams(d=2, mean_rev=np.diag([-0.5, -0.5]),
                                  vol_of_vol=1.5 * np.eye(2),
                                  leverage=np.zeros(2), alpha=1.2)
        state = models.MarketState.from_spot(0.0, S0_REF, 0.005 * np.eye(2))
        with pytest.raises(RuntimeError, match="reflection rate"):
            simulate.simulate(rough, state, 1.0, 6, 300, seed=3,
                              scheme="euler_reflect")

    def test_splitting_repairs_are_rare(self, wasc_sim):
        assert 0.0 <= wasc_sim.clip_fraction < 0.01


class TestBnsExactness:
    def test_deterministic_flow_without_jumps(self, state_ref):
        # vanishing jump intensity: the path is the pure covariance flow
        quiet = models.BnsParams(d=2,
                                 mean_rev=np.array([[-2.5, -1.5],
                                                    [-1.5, -2.5]]),
                                 jump_intensity=1e-12, wishart_shape=3.0,
                                 wishart_scale=0.02 * np.eye(2),
                                 leverage_diag=np.array([-0.5, -0.5]))
        sim = simulate.simulate(quiet, state_ref, 1.0, 25, 3, seed=1)
        lift = matcalc.kron_lift(quiet.mean_rev)
        for k, t in enumerate(sim.times):
            flow = matcalc.mat_exp(quiet.mean_rev * t)
            exact = flow @ SIGMA0_REF @ flow.T
            assert np.max(np.abs(sim.cov[0, k] - exact)) < 1e-10
            exact_int = matcalc.mat(
                np.linalg.solve(lift, matcalc.vec(exact - SIGMA0_REF)))
            assert np.max(np.abs(sim.integrated_cov[0, k] - exact_int)) < 1e-10

    def test_jump_steps_preserve_partition_invariance(self, bns_ref,
                                                      state_ref):
        # coarse grid forces several jumps per step; the per-path stream
        # must still be independent of how paths are batched
        a = simulate.simulate(bns_ref, state_ref, 1.0, 5, 60, seed=42,
                              chunk_paths=11)
        b = simulate.simulate(bns_ref, state_ref, 1.0, 5, 60, seed=42,
                              chunk_paths=60)
        assert np.array_equal(a.log_spot, b.log_spot)
        assert np.array_equal(a.integrated_cov, b.integrated_cov)


class TestRealizedQuadratics:
    def test_polarization_identity(self, wasc_sim):
        rv = simulate.realized_quadratic_covariation(wasc_sim, kind="log")
        inc = np.diff(wasc_sim.log_spot, axis=1)
        spread = np.sum((inc[:, :, 0] - inc[:, :, 1]) ** 2, axis=1)
        polar = 0.5 * (rv[:, 0, 0] + rv[:, 1, 1] - spread)
        scale = np.abs(rv[:, 0, 1]).max()
        assert np.max(np.abs(polar - rv[:, 0, 1])) < 1e-10 * max(scale, 1.0)

    def test_log_kernel_tracks_bracket(self, wasc_sim):
        rv = simulate.realized_quadratic_covariation(wasc_sim, kind="log")
        diff = rv - wasc_sim.realized_cov
        dev = np.abs(diff.mean(axis=0))
        assert np.all(dev <= 4.0 * _se(diff) + 1e-4)

    def test_log_kernel_tracks_bracket_with_jumps(self, bns_sim):
        rv = simulate.realized_quadratic_covariation(bns_sim, kind="log")
        diff = rv - bns_sim.realized_cov
        dev = np.abs(diff.mean(axis=0))
        assert np.all(dev <= 4.0 * _se(diff) + 1e-4)

    def test_simple_kernel_close_to_log(self, wasc_sim):
        rv_l = simulate.realized_quadratic_covariation(wasc_sim, kind="log")
        rv_s = simulate.realized_quadratic_covariation(wasc_sim,
                                                       kind="simple")
        rel = np.abs(rv_l.mean(axis=0) - rv_s.mean(axis=0))
        assert np.all(rel < 0.02 * np.abs(rv_l.mean(axis=0)).max())

    def test_unknown_kind_rejected(self, wasc_sim):
        with pytest.raises(ValueError):
            simulate.realized_quadratic_covariation(wasc_sim, kind="median")


class TestDumpLoad:
    def test_round_trip(self, wasc_ref, state_ref):
        sim = simulate.simulate(wasc_ref, state_ref, 1.0, 12, 20, seed=3)
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "panel.bin")
            simulate.dump_paths(sim, path)
            back = simulate.load_paths(path)
        assert np.array_equal(back.times, sim.times)
        assert np.array_equal(back.log_spot, sim.log_spot)
        assert np.array_equal(back.cov, sim.cov)
        assert np.array_equal(back.integrated_cov, sim.integrated_cov)
        assert back.seed == sim.seed and back.path_start == sim.path_start

    def test_rejects_foreign_file(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "junk.bin")
            with open(path, "wb") as fh:
                fh.write(b"NOTAPATH" + b"\x00" * 64)
            with pytest.raises(ValueError):
                simulate.load_paths(path)
