"""Integrator tests: scalar step oracles, closed-form decay, blowup brackets,
scheme cross-validation, and the weak/mild residual order checks.

The 1-node "grid" below turns the stepper into a scalar ODE recursion, which
is the cheapest honest oracle for the IMEX update algebra.
"""

import math

import numpy as np
import pytest
from scipy import sparse

from spdelab.blowup import ModelParams, PowerLaw, TabulatedNonlinearity, deterministic_dichotomy, Dichotomy
from spdelab.domain import DiscreteOperator, DomainSpec, GridSpec, apply_heat_semigroup
from spdelab.errors import ConfigurationError, NumericalFailure, PreconditionFailure
from spdelab.integrator import (
    FieldState,
    Outcome,
    Scheme,
    SchemeConfig,
    TrajectoryResult,
    mild_residual,
    reconstruct_u,
    simulate_rpde,
    simulate_spde_em,
    step_rpde,
    weak_form_residual,
)
from spdelab.stochastic import BrownianPath, sample_brownian


def zero_g():
    return TabulatedNonlinearity(z=np.array([0.0, 1.0]), g=np.array([0.0, 0.0]))


def linear_params(kappa):
    return ModelParams(beta=1.0, kappa=kappa, G=zero_g())


def scalar_problem(lam=1.0):
    """1-node discrete operator: the stepper becomes a scalar recursion."""
    dom = DomainSpec(kind="interval", lengths=(2.0,))
    grid = GridSpec(domain=dom, n=1, axes=(np.array([1.0]),), h=(1.0,),
                    weights=np.array([1.0]))
    op = DiscreteOperator(matrix=sparse.csr_matrix(np.array([[-lam]])), grid=grid)
    return op


class TestSchemeConfig:
    def test_guards(self):
        with pytest.raises(ConfigurationError):
            SchemeConfig(dt=0.0)
        with pytest.raises(ConfigurationError):
            SchemeConfig(dt=1e-3, cutoff=0.5)
        with pytest.raises(ConfigurationError):
            SchemeConfig(dt=1e-3, max_halvings=-1)
        with pytest.raises(ConfigurationError):
            SchemeConfig(dt=1e-3, max_snapshots=1)


class TestStep:
    def test_eigenmode_implicit_decay_exact(self, interval_48):
        # G = 0, kappa = 0, f = psi: k steps give (1 + dt lam1)^{-k} psi exactly
        _, grid, op, eig = interval_48
        cfg = SchemeConfig(dt=0.01)
        params = linear_params(0.0)
        state = FieldState(t=0.0, values=eig.psi.copy())
        for _ in range(5):
            state = step_rpde(state, 0.0, params, op, cfg)
        expected = (1.0 + cfg.dt * eig.lam1) ** -5 * eig.psi
        np.testing.assert_allclose(state.values, expected, rtol=1e-11)

    def test_scalar_reaction_recursion(self):
        # v' = -lam v + v^2 under IMEX: v+ = (v + dt v^2)/(1 + dt lam)
        op = scalar_problem(lam=1.0)
        cfg = SchemeConfig(dt=0.05)
        params = ModelParams(beta=1.0, kappa=0.0)
        v = 0.4
        state = FieldState(t=0.0, values=np.array([v]))
        for _ in range(8):
            state = step_rpde(state, 0.0, params, op, cfg)
            v = (v + cfg.dt * v**2) / (1.0 + cfg.dt * 1.0)
        assert state.values[0] == pytest.approx(v, rel=1e-14)

    def test_zero_noise_value_matches_dense_oracle(self, interval_48):
        # W_t = 0 with kappa = 1: the step is the deterministic semilinear one
        # with the kappa^2/2 shift; check against a dense direct solve.
        _, grid, op, eig = interval_48
        cfg = SchemeConfig(dt=0.02)
        params = ModelParams(beta=1.0, kappa=1.0)
        f = 0.3 * eig.psi
        new = step_rpde(FieldState(t=0.0, values=f), 0.0, params, op, cfg)
        n = grid.npoints
        A = np.eye(n) - cfg.dt * (op.matrix.toarray() - 0.5 * np.eye(n))
        expected = np.linalg.solve(A, f + cfg.dt * f**2)
        np.testing.assert_allclose(new.values, expected, rtol=1e-12)

    def test_crank_nicolson_eigenmode(self, interval_48):
        _, grid, op, eig = interval_48
        cfg = SchemeConfig(dt=0.01, scheme=Scheme.CRANK_NICOLSON)
        params = linear_params(0.0)
        new = step_rpde(FieldState(t=0.0, values=eig.psi.copy()), 0.0, params, op, cfg)
        factor = (1.0 - 0.5 * cfg.dt * eig.lam1) / (1.0 + 0.5 * cfg.dt * eig.lam1)
        np.testing.assert_allclose(new.values, factor * eig.psi, rtol=1e-11)

    def test_negative_field_aborts(self, interval_48):
        _, grid, op, eig = interval_48
        cfg = SchemeConfig(dt=0.01)
        with pytest.raises(NumericalFailure):
            step_rpde(FieldState(t=0.0, values=-eig.psi), 0.0, linear_params(0.0), op, cfg)


class TestSimulateRpde:
    def test_linear_mass_decay_closed_form(self, interval_48):
        # G = 0: mass decays at rate lam1 + kappa^2/2 regardless of the path
        _, grid, op, eig = interval_48
        kappa = 0.5
        path = sample_brownian(seed=9, path_index=0, horizon=2.0, dt=1e-3)
        cfg = SchemeConfig(dt=1e-3)
        traj = simulate_rpde(eig.psi, path, linear_params(kappa), op, eig, cfg)
        assert traj.outcome is Outcome.COMPLETED
        rate = eig.lam1 + 0.5 * kappa**2
        exact = traj.mass[0] * math.exp(-rate * 2.0)
        assert traj.mass[-1] == pytest.approx(exact, rel=3e-3)
        recursion = traj.mass[0] * (1.0 + cfg.dt * rate) ** -path.nsteps
        assert traj.mass[-1] == pytest.approx(recursion, rel=1e-10)

    def test_mass_series_is_weighted_pairing(self, interval_48):
        _, grid, op, eig = interval_48
        path = sample_brownian(seed=10, path_index=0, horizon=0.5, dt=1e-3)
        cfg = SchemeConfig(dt=1e-3, max_snapshots=501)
        f = 0.2 * np.ones(grid.npoints)
        traj = simulate_rpde(f, path, ModelParams(beta=1.0, kappa=1.0), op, eig, cfg)
        # snapshots are at full resolution here; compare the pairing directly
        idx = np.rint(traj.snapshot_times / cfg.dt).astype(int)
        expected = traj.snapshots @ (grid.weights * eig.psi)
        np.testing.assert_allclose(traj.mass[idx], expected, rtol=1e-12, atol=1e-15)

    def test_mass_differential_chain(self, interval_48):
        # (m_{k+1} - m_k)/dt + (lam1 + kappa^2/2) m_{k+1}
        #     >= e^{kappa beta W_k} m_k^{1+beta}  up to rounding:
        # eigen-pairing kills the diffusion exactly and Jensen bounds the
        # reaction from below, both exact in the uniform discrete measure.
        _, grid, op, eig = interval_48
        kappa = 1.0
        path = sample_brownian(seed=11, path_index=0, horizon=1.0, dt=1e-3)
        cfg = SchemeConfig(dt=1e-3)
        f = 0.3 * np.ones(grid.npoints)
        traj = simulate_rpde(f, path, ModelParams(beta=1.0, kappa=kappa), op, eig, cfg)
        m = traj.mass
        w = path.values[: len(m) - 1]
        lhs = np.diff(m) / cfg.dt + (eig.lam1 + 0.5 * kappa**2) * m[1:]
        rhs = np.exp(kappa * 1.0 * w) * m[:-1] ** 2
        assert np.all(lhs - rhs >= -1e-9 * np.max(np.abs(lhs)))

    def test_supercritical_blowup_detected(self, interval_48):
        _, grid, op, eig = interval_48
        f = 2.0 * np.ones(grid.npoints)
        assert deterministic_dichotomy(f, eig, 1.0) is Dichotomy.BLOWUP_CERTIFIED
        path = BrownianPath.frozen_zero(horizon=10.0, dt=1e-3)
        cfg = SchemeConfig(dt=1e-3)
        traj = simulate_rpde(f, path, ModelParams(beta=1.0, kappa=0.0), op, eig, cfg)
        assert traj.outcome is Outcome.NUMERICAL_BLOWUP
        assert traj.t_blowup < 10.0
        assert traj.t_last_stable <= traj.t_blowup
        # ten halvings shrink the bracket to dt / 2^10
        assert traj.t_blowup - traj.t_last_stable <= 1e-3 / 2**10 + 1e-12
        assert np.all(np.isfinite(traj.sup))
        assert traj.times[-1] <= traj.t_last_stable + 1e-12

    def test_subcritical_completes_with_decreasing_sup(self, interval_48):
        _, grid, op, eig = interval_48
        f = 0.5 * np.ones(grid.npoints)
        path = BrownianPath.frozen_zero(horizon=5.0, dt=1e-3)
        cfg = SchemeConfig(dt=1e-3)
        traj = simulate_rpde(f, path, ModelParams(beta=1.0, kappa=0.0), op, eig, cfg)
        assert traj.outcome is Outcome.COMPLETED
        assert traj.sup[-1] < traj.sup[0]
        assert traj.mass[-1] < traj.mass[0]

    def test_blowup_time_stable_under_grid_refinement(self):
        # halving h moves the reported t_b by well under 5%
        from spdelab.domain import build_grid, build_laplacian, solve_eigenpairs

        dom = DomainSpec(kind="interval", lengths=(math.pi,))
        t_b = {}
        for n in (24, 48):
            grid = build_grid(dom, n)
            op = build_laplacian(dom, grid)
            eig = solve_eigenpairs(op, 8)
            f = 2.0 * np.ones(grid.npoints)
            path = BrownianPath.frozen_zero(horizon=10.0, dt=1e-3)
            traj = simulate_rpde(f, path, ModelParams(beta=1.0, kappa=0.0), op, eig,
                                 SchemeConfig(dt=1e-3))
            assert traj.outcome is Outcome.NUMERICAL_BLOWUP
            t_b[n] = traj.t_blowup
        assert abs(t_b[48] - t_b[24]) / t_b[48] <= 0.05

    def test_snapshot_decimation(self, interval_48):
        _, grid, op, eig = interval_48
        path = BrownianPath.frozen_zero(horizon=1.0, dt=1e-3)
        cfg = SchemeConfig(dt=1e-3, max_snapshots=50)
        f = 0.5 * np.ones(grid.npoints)
        traj = simulate_rpde(f, path, ModelParams(beta=1.0, kappa=0.0), op, eig, cfg)
        assert len(traj.snapshot_times) <= 51
        assert traj.snapshot_times[0] == 0.0
        assert traj.snapshot_times[-1] == traj.times[-1]
        assert len(traj.times) == 1001  # scalar series stay at full resolution

    def test_input_guards(self, interval_48):
        _, grid, op, eig = interval_48
        path = BrownianPath.frozen_zero(horizon=1.0, dt=1e-3)
        cfg = SchemeConfig(dt=1e-3)
        params = ModelParams(beta=1.0, kappa=0.0)
        with pytest.raises(PreconditionFailure):
            simulate_rpde(-np.ones(grid.npoints), path, params, op, eig, cfg)
        with pytest.raises(PreconditionFailure):
            simulate_rpde(np.zeros(grid.npoints), path, params, op, eig, cfg)
        with pytest.raises(ConfigurationError):
            simulate_rpde(np.ones(grid.npoints), path, params, op, eig,
                          SchemeConfig(dt=2e-3))


class TestSchemeCrossValidation:
    def test_noiseless_schemes_coincide_exactly(self, interval_48):
        _, grid, op, eig = interval_48
        f = 0.4 * eig.psi
        path = BrownianPath.frozen_zero(horizon=1.0, dt=1e-3)
        cfg = SchemeConfig(dt=1e-3)
        params = ModelParams(beta=1.0, kappa=0.0)
        a = simulate_rpde(f, path, params, op, eig, cfg)
        b = simulate_spde_em(f, path, params, op, eig, cfg)
        assert np.array_equal(a.mass, b.mass)
        assert np.array_equal(a.snapshots, b.snapshots)

    def test_em_mass_tracks_geometric_noise(self, interval_48):
        # G = 0, kappa = 0.5: exact mass is m0 e^{-lam1 t + kappa W_t - kappa^2 t/2}
        _, grid, op, eig = interval_48
        kappa = 0.5
        path = sample_brownian(seed=21, path_index=0, horizon=1.0, dt=1e-4)
        cfg = SchemeConfig(dt=1e-4)
        traj = simulate_spde_em(eig.psi, path, linear_params(kappa), op, eig, cfg)
        w_T = float(path.values[-1])
        exact = traj.mass[0] * math.exp(-eig.lam1 * 1.0 + kappa * w_T - 0.5 * kappa**2)
        assert traj.mass[-1] == pytest.approx(exact, rel=0.03)

    def test_transform_identity_between_schemes(self, interval_48):
        # u from the direct scheme vs e^{kappa W} v from the transformed one
        _, grid, op, eig = interval_48
        kappa = 0.5
        f = 0.3 * eig.psi
        params = ModelParams(beta=1.0, kappa=kappa)
        path = sample_brownian(seed=33, path_index=0, horizon=1.0, dt=1e-4)
        cfg = SchemeConfig(dt=1e-4, max_snapshots=200)
        u_direct = simulate_spde_em(f, path, params, op, eig, cfg)
        u_mapped = reconstruct_u(simulate_rpde(f, path, params, op, eig, cfg), path, kappa)
        assert u_direct.outcome is Outcome.COMPLETED
        scale = np.max(np.abs(u_mapped.snapshots))
        diff = np.max(np.abs(u_direct.snapshots - u_mapped.snapshots))
        assert diff / scale <= 0.05

    def test_reconstruct_identity_at_zero_noise(self, interval_48):
        _, grid, op, eig = interval_48
        f = 0.4 * eig.psi
        path = BrownianPath.frozen_zero(horizon=1.0, dt=1e-3)
        cfg = SchemeConfig(dt=1e-3)
        v = simulate_rpde(f, path, ModelParams(beta=1.0, kappa=0.0), op, eig, cfg)
        u = reconstruct_u(v, path, 0.0)
        assert np.array_equal(u.mass, v.mass)
        assert np.array_equal(u.snapshots, v.snapshots)
        assert u.variable == "u"

    def test_reconstruct_mass_relation_exact(self, interval_48):
        _, grid, op, eig = interval_48
        kappa = 0.8
        f = 0.3 * eig.psi
        path = sample_brownian(seed=4, path_index=2, horizon=0.5, dt=1e-3)
        v = simulate_rpde(f, path, ModelParams(beta=1.0, kappa=kappa), op, eig,
                          SchemeConfig(dt=1e-3))
        u = reconstruct_u(v, path, kappa)
        np.testing.assert_allclose(u.mass, v.mass * np.exp(kappa * path.values), rtol=1e-14)
        assert np.all(u.snapshots >= 0)

    def test_reconstruct_guards(self, interval_48):
        _, grid, op, eig = interval_48
        f = 0.3 * eig.psi
        path = BrownianPath.frozen_zero(horizon=1.0, dt=1e-3)
        v = simulate_rpde(f, path, ModelParams(beta=1.0, kappa=0.0), op, eig,
                          SchemeConfig(dt=1e-3))
        with pytest.raises(ConfigurationError):
            reconstruct_u(v, BrownianPath.frozen_zero(horizon=1.0, dt=2e-3), 0.0)
        u = reconstruct_u(v, path, 0.0)
        with pytest.raises(ConfigurationError):
            reconstruct_u(u, path, 0.0)  # already physical


class TestWeakFormResidual:
    def _run(self, interval_48, dt, kappa=0.0, nonlinearity=None, variable="v"):
        _, grid, op, eig = interval_48
        params = (ModelParams(beta=1.0, kappa=kappa, G=nonlinearity)
                  if nonlinearity is not None else ModelParams(beta=1.0, kappa=kappa))
        f = 0.3 * eig.psi
        path = BrownianPath.frozen_zero(horizon=0.5, dt=dt)
        cfg = SchemeConfig(dt=dt, max_snapshots=100000)
        sim = simulate_rpde if variable == "v" else simulate_spde_em
        traj = sim(f, path, params, op, eig, cfg)
        return weak_form_residual(traj, path, params, eig, n_modes=3)

    def test_zero_at_initial_time(self, interval_48):
        _, res = self._run(interval_48, dt=1e-3, nonlinearity=zero_g())
        assert res[0] == 0.0

    def test_linear_residual_small_and_first_order(self, interval_48):
        _, coarse = self._run(interval_48, dt=2e-3, nonlinearity=zero_g())
        _, fine = self._run(interval_48, dt=5e-4, nonlinearity=zero_g())
        assert np.max(coarse) < 1e-3
        ratio = np.max(coarse) / np.max(fine)
        assert 2.8 <= ratio <= 5.5  # dt quartered -> residual ~ quartered

    def test_nonlinear_residual_first_order(self, interval_48):
        _, coarse = self._run(interval_48, dt=2e-3)
        _, fine = self._run(interval_48, dt=1e-3)
        ratio = np.max(coarse) / np.max(fine)
        assert 1.6 <= ratio <= 2.6

    def test_physical_variable_with_noise_runs(self, interval_48):
        t, res = self._run(interval_48, dt=1e-3, kappa=0.4, variable="u")
        assert np.all(np.isfinite(res))
        assert res[0] == 0.0

    def test_mode_count_guard(self, interval_48):
        _, grid, op, eig = interval_48
        path = BrownianPath.frozen_zero(horizon=0.5, dt=1e-3)
        traj = simulate_rpde(0.3 * eig.psi, path, ModelParams(beta=1.0, kappa=0.0),
                             op, eig, SchemeConfig(dt=1e-3))
        with pytest.raises(ConfigurationError):
            weak_form_residual(traj, path, ModelParams(beta=1.0, kappa=0.0), eig,
                               n_modes=eig.m + 1)


class TestMildResidual:
    def test_exact_semigroup_trajectory_has_tiny_residual(self, interval_48):
        # Fabricate snapshots from the exact linear flow: the mild identity
        # then holds to rounding (no reaction, no time-march defect).
        _, grid, op, eig = interval_48
        kappa = 0.7
        params = linear_params(kappa)
        times = np.linspace(0.0, 1.0, 11)
        f = eig.psi
        snaps = np.stack([
            math.exp(-0.5 * kappa**2 * t) * apply_heat_semigroup(f, t, eig) for t in times
        ])
        traj = TrajectoryResult(
            variable="v", outcome=Outcome.COMPLETED, t_blowup=None, t_last_stable=None,
            times=times, mass=snaps @ (grid.weights * eig.psi),
            sup=np.max(np.abs(snaps), axis=1), snapshot_times=times, snapshots=snaps,
            dt=0.1, scheme=Scheme.IMEX,
        )
        path = BrownianPath.frozen_zero(horizon=1.0, dt=0.1)
        _, res = mild_residual(traj, path, params, eig)
        assert np.max(res) < 1e-12

    def test_zero_at_initial_time(self, interval_48):
        _, grid, op, eig = interval_48
        path = BrownianPath.frozen_zero(horizon=0.5, dt=1e-3)
        params = ModelParams(beta=1.0, kappa=0.0)
        traj = simulate_rpde(0.2 * eig.psi, path, params, op, eig,
                             SchemeConfig(dt=1e-3, max_snapshots=100000))
        _, res = mild_residual(traj, path, params, eig)
        assert res[0] == 0.0

    def test_nonlinear_first_order_in_dt(self, interval_48):
        _, grid, op, eig = interval_48
        params = ModelParams(beta=1.0, kappa=0.0)
        maxima = {}
        for dt in (2e-3, 1e-3):
            path = BrownianPath.frozen_zero(horizon=0.5, dt=dt)
            traj = simulate_rpde(0.1 * eig.psi, path, params, op, eig,
                                 SchemeConfig(dt=dt, max_snapshots=100000))
            _, res = mild_residual(traj, path, params, eig)
            maxima[dt] = np.max(res)
        ratio = maxima[2e-3] / maxima[1e-3]
        assert 1.6 <= ratio <= 2.6

    def test_transformed_only(self, interval_48):
        _, grid, op, eig = interval_48
        path = BrownianPath.frozen_zero(horizon=0.5, dt=1e-3)
        params = ModelParams(beta=1.0, kappa=0.0)
        traj = simulate_spde_em(0.2 * eig.psi, path, params, op, eig, SchemeConfig(dt=1e-3))
        with pytest.raises(ConfigurationError):
            mild_residual(traj, path, params, eig)
