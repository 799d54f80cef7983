"""Command-line front end: five commands over one JSON config.

    spdelab <command> --config cfg.json [--seed N] [--out DIR] [--workers W]

Commands: eigen, blowup, simulate, certify, heat-kernel. Exit codes: 0 on
success, 2 for configuration problems, 3 for numerical failures, 4 for
violated mathematical preconditions.

Every float lands in CSV via repr(), so reruns of the same config are
byte-identical (the manifest carries the only timestamps). Output rows are
written single-threaded in path-index order regardless of --workers.
"""

from __future__ import annotations

import argparse
import csv
import datetime
import json
import math
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .blowup import (
    BlowupThreshold,
    Dichotomy,
    OutcomeStatus,
    analytic_blowup_bound,
    deterministic_dichotomy,
    lower_solution_series,
    mc_blowup_probability,
    tau_from_path,
)
from .certificates import (
    certificate_heat_kernel,
    certificate_integral,
    certificate_saturation,
)
from .config import InitialConfig, RunConfig, load_config
from .domain import (
    EigenData,
    build_grid,
    build_laplacian,
    heat_kernel_ratio_report,
    richardson_extrapolate,
    solve_eigenpairs,
    weighted_inner,
)
from .errors import ConfigurationError, NumericalFailure, PreconditionFailure
from .integrator import (
    Outcome,
    SchemeConfig,
    mild_residual,
    reconstruct_u,
    simulate_rpde,
    simulate_spde_em,
    weak_form_residual,
)
from .stochastic import BrownianPath, sample_brownian

OUT_ENV_VAR = "SPDELAB_OUT"


# ---------------------------------------------------------------------------
# output helpers


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return str(value)


def write_csv(path: Path, header: list[str], rows: list[list]) -> Path:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_cell(x) for x in row])
    return path


def write_json(path: Path, payload: dict) -> Path:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


@dataclass
class RunManifest:
    """Provenance record for one command invocation.

    Timestamps aside, a rerun of the same config produces byte-identical
    output files; the manifest is what may differ.
    """

    command: str
    config_path: str
    config_sha256: str
    code_version: str
    seed: int | None
    started_at: str
    finished_at: str = ""
    outputs: list[str] = field(default_factory=list)

    def write(self, out_dir: Path) -> Path:
        self.finished_at = _now()
        name = f"{self.command.replace('-', '_')}_manifest.json"
        return write_json(out_dir / name, self.__dict__)


def _now() -> str:
    return datetime.datetime.now(datetime.timezone.utc).isoformat()


def _resolve_out_dir(cli_out: str | None, cfg: RunConfig) -> Path:
    directory = cli_out or os.environ.get(OUT_ENV_VAR) or cfg.outputs.directory or "."
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# shared setup


def _eigen_setup(cfg: RunConfig, n: int | None = None, m: int = 4):
    dom_cfg = cfg.need("domain")
    dom = dom_cfg.spec()
    grid = build_grid(dom, n if n is not None else dom_cfg.n)
    op = build_laplacian(dom, grid)
    m = min(m, grid.npoints)
    return dom, grid, op, solve_eigenpairs(op, m)


def _initial_field(initial: InitialConfig, eigen: EigenData) -> np.ndarray:
    if initial.mode == "eigen-multiple":
        return initial.a * eigen.psi
    table = Path(initial.file)
    try:
        values = np.loadtxt(table, delimiter=",", skiprows=1, ndmin=1)
    except OSError as exc:
        raise ConfigurationError(f"cannot read initial data file {table}: {exc}") from exc
    except ValueError as exc:
        raise ConfigurationError(f"initial data file {table} is not numeric csv: {exc}") from exc
    values = np.atleast_1d(np.asarray(values, dtype=float).squeeze())
    if values.ndim != 1 or values.size != eigen.grid.npoints:
        raise ConfigurationError(
            f"initial data file has {values.size} values, grid has {eigen.grid.npoints} nodes"
        )
    return values


def _sample_path(sim, kappa: float, seed: int, path_index: int) -> BrownianPath:
    if kappa == 0:
        return BrownianPath.frozen_zero(sim.horizon, sim.dt)
    return sample_brownian(sim.horizon, sim.dt, seed, path_index)


# ---------------------------------------------------------------------------
# commands


def cmd_eigen(cfg: RunConfig, out_dir: Path, seed: int | None, workers: int) -> list[Path]:
    dom_cfg = cfg.need("domain")
    dom = dom_cfg.spec()
    n_coarse = dom_cfg.n
    n_fine = dom_cfg.n_fine if dom_cfg.n_fine is not None else 2 * (n_coarse + 1) - 1
    results = {}
    for label, n in (("", n_coarse), ("_fine", n_fine)):
        grid = build_grid(dom, n)
        op = build_laplacian(dom, grid)
        eig = solve_eigenpairs(op, min(4, grid.npoints))
        results[label] = (grid, eig)
    grid, eig = results[""]
    grid_f, eig_f = results["_fine"]
    # both mesh widths shrink by the same factor, so one Richardson ratio
    # serves every axis
    ratio = (grid.h[0] / grid_f.h[0]) ** 2
    payload = {
        "n": n_coarse,
        "n_fine": n_fine,
        "ratio": ratio,
        "lam1": eig.lam1,
        "lam2": eig.lam2,
        "lam1_fine": eig_f.lam1,
        "lam2_fine": eig_f.lam2,
        "lam1_extrapolated": richardson_extrapolate(eig.lam1, eig_f.lam1, ratio),
        "lam2_extrapolated": richardson_extrapolate(eig.lam2, eig_f.lam2, ratio),
    }
    files = [write_json(out_dir / "eigenvalues.json", payload)]
    coords = grid.nodes()
    axis_names = ["x", "y"][: dom.dimension]
    header = axis_names + ["psi"]
    rows = [[*(c[i] for c in coords), eig.psi[i]] for i in range(grid.npoints)]
    files.append(write_csv(out_dir / "psi.csv", header, rows))
    return files


def cmd_blowup(cfg: RunConfig, out_dir: Path, seed: int | None, workers: int) -> list[Path]:
    params = cfg.need("model")
    sim = cfg.need("sim")
    _, grid, _, eigen = _eigen_setup(cfg)
    if not sim.v0psi_sweep:
        raise ConfigurationError("blowup command needs sim.v0psi_sweep")
    run_seed = seed if seed is not None else sim.seed
    if params.kappa == 0:
        rows = []
        crit = eigen.lam1 ** (1.0 / params.beta)
        for mass in sim.v0psi_sweep:
            # constant fields carry their value as exact psi-mass
            f = mass * np.ones(grid.npoints)
            verdict = deterministic_dichotomy(f, eigen, params.beta)
            rows.append([mass, crit, verdict.value])
        return [write_csv(out_dir / "dichotomy.csv", ["mass", "threshold", "verdict"], rows)]
    rows = []
    for mass in sim.v0psi_sweep:
        threshold = BlowupThreshold.from_initial_mass(mass, params.beta)
        bound = analytic_blowup_bound(eigen.lam1, params.kappa, params.beta, threshold)
        est = mc_blowup_probability(
            params,
            eigen.lam1,
            threshold,
            n_paths=sim.n_paths,
            horizon=sim.horizon,
            dt=sim.dt,
            seed=run_seed,
            workers=workers,
        )
        rows.append(
            [
                mass,
                threshold.x_star,
                bound.z_star,
                bound.alpha,
                bound.p_blowup_lower,
                est.p_hat,
                est.stderr,
                est.n_censored,
            ]
        )
    header = [
        "v0psi",
        "x_star",
        "z_star",
        "alpha",
        "p_analytic_blowup",
        "p_hat",
        "stderr",
        "n_censored",
    ]
    return [write_csv(out_dir / "blowup.csv", header, rows)]


def _consistency_row(traj, traj_em, path, params, eigen, threshold, tau):
    """Cross-checks for one path: transform agreement, lower-bound domination,
    and the two residual diagnostics."""
    em_diff = None
    if traj_em is not None:
        u_ref = reconstruct_u(traj, path, params.kappa)
        k = min(len(u_ref.sup), len(traj_em.sup))
        scale = np.maximum(np.abs(u_ref.sup[:k]), 1e-300)
        em_diff = float(np.max(np.abs(traj_em.sup[:k] - u_ref.sup[:k]) / scale))
    ratio_min = None
    if threshold is not None:
        t_i, lower, blown = lower_solution_series(path, threshold, params.kappa, eigen.lam1)
        t_end = min(
            traj.t_blowup if traj.t_blowup is not None else math.inf,
            tau if tau is not None else math.inf,
            path.horizon,
        )
        k = min(len(traj.times), len(t_i))
        keep = (t_i[:k] <= t_end) & np.isfinite(lower[:k]) & (lower[:k] > 0)
        if np.any(keep):
            ratio_min = float(np.min(traj.mass[:k][keep] / lower[:k][keep]))
    _, weak = weak_form_residual(traj, path, params, eigen)
    weak_max = float(np.max(weak))
    _, mild = mild_residual(traj, path, params, eigen)
    mild_max = float(np.max(mild))
    return em_diff, ratio_min, weak_max, mild_max


def cmd_simulate(cfg: RunConfig, out_dir: Path, seed: int | None, workers: int) -> list[Path]:
    params = cfg.need("model")
    sim = cfg.need("sim")
    initial = cfg.need("initial")
    _, grid, op, eigen = _eigen_setup(cfg, m=12)
    f = _initial_field(initial, eigen)
    run_seed = seed if seed is not None else sim.seed
    scheme_cfg = SchemeConfig(
        dt=sim.dt, cutoff=sim.cutoff, scheme=sim.scheme, max_snapshots=sim.max_snapshots
    )
    mass0 = weighted_inner(grid, f, eigen.psi)
    threshold = BlowupThreshold.from_initial_mass(mass0, params.beta) if mass0 > 0 else None
    n_paths = 1 if params.kappa == 0 else sim.n_paths
    traj_rows, cons_rows, files = [], [], []
    for idx in range(n_paths):
        path = _sample_path(sim, params.kappa, run_seed, idx)
        traj = simulate_rpde(f, path, params, op, eigen, scheme_cfg)
        tau = None
        if threshold is not None:
            outcome = tau_from_path(path, threshold, params.kappa, eigen.lam1)
            tau = outcome.tau if outcome.status is OutcomeStatus.BLEW_UP else None
        try:
            traj_em = simulate_spde_em(f, path, params, op, eigen, scheme_cfg)
        except NumericalFailure:
            traj_em = None
        series = out_dir / f"mass_series_{idx:04d}.csv"
        write_csv(
            series,
            ["t", "mass", "sup"],
            [[traj.times[k], traj.mass[k], traj.sup[k]] for k in range(len(traj.times))],
        )
        files.append(series)
        traj_rows.append(
            [
                idx,
                traj.outcome.value,
                traj.t_blowup,
                traj.t_last_stable,
                tau,
                mass0,
                float(traj.mass[-1]),
                float(traj.sup[-1]),
                series.name,
            ]
        )
        em_diff, ratio_min, weak_max, mild_max = _consistency_row(
            traj, traj_em, path, params, eigen, threshold, tau
        )
        cons_rows.append([idx, traj.outcome.value, em_diff, ratio_min, weak_max, mild_max])
    files.insert(
        0,
        write_csv(
            out_dir / "trajectories.csv",
            [
                "path_index",
                "outcome",
                "t_blowup",
                "t_last_stable",
                "tau_analytic",
                "mass_initial",
                "mass_final",
                "sup_final",
                "mass_series_file",
            ],
            traj_rows,
        ),
    )
    files.insert(
        1,
        write_csv(
            out_dir / "consistency.csv",
            [
                "path_index",
                "outcome",
                "em_transform_rel_diff",
                "mass_over_lower_min",
                "weak_residual_max",
                "mild_residual_max",
            ],
            cons_rows,
        ),
    )
    return files


def _fitted_c(cfg: RunConfig, dom, grid, eigen) -> float:
    cert = cfg.need("certificate")
    if cert.c != "fit":
        return float(cert.c)
    hk = cfg.heat_kernel
    if hk is None:
        from .config import HeatKernelConfig

        hk = HeatKernelConfig()
    basis = eigen
    if eigen.m < hk.n_modes:
        basis = solve_eigenpairs(build_laplacian(dom, grid), min(hk.n_modes, grid.npoints))
    return heat_kernel_ratio_report(dom, grid, basis, hk.times()).c


def cmd_certify(cfg: RunConfig, out_dir: Path, seed: int | None, workers: int) -> list[Path]:
    params = cfg.need("model")
    sim = cfg.need("sim")
    cert = cfg.need("certificate")
    dom, grid, _, eigen = _eigen_setup(cfg, m=48)
    run_seed = seed if seed is not None else sim.seed
    if cert.frozen_zero_path:
        path = BrownianPath.frozen_zero(sim.horizon, sim.dt)
    else:
        path = _sample_path(sim, params.kappa, run_seed, 0)
    f = _initial_field(cfg.initial, eigen) if cfg.initial is not None else None
    rows = []
    for kind in cert.kinds:
        if kind == "integral":
            if f is None:
                raise ConfigurationError("integral certificate needs an initial section")
            report = certificate_integral(path, f, params, eigen.lam1, eigen)
        elif kind == "saturation":
            if f is None:
                raise ConfigurationError("saturation certificate needs an initial section")
            report = certificate_saturation(path, f, params, eigen.lam1, eigen)
        else:
            if cert.K is None:
                raise ConfigurationError("heat_kernel certificate needs certificate.K")
            c = _fitted_c(cfg, dom, grid, eigen)
            report = certificate_heat_kernel(
                cert.K,
                cert.eta,
                params,
                eigen.lam1,
                eigen,
                c,
                path=None if cert.analytic else path,
                f=f,
            )
        rows.append(
            [
                kind,
                None if math.isnan(report.J) else report.J,
                report.threshold,
                None if report.verdict is None else report.verdict.value,
                None if report.envelope is None else float(np.max(report.envelope)),
                report.probability,
            ]
        )
    header = ["kind", "J", "threshold", "verdict", "envelope_max", "probability_certified"]
    return [write_csv(out_dir / "certificates.csv", header, rows)]


def cmd_heat_kernel(cfg: RunConfig, out_dir: Path, seed: int | None, workers: int) -> list[Path]:
    hk = cfg.heat_kernel
    if hk is None:
        from .config import HeatKernelConfig

        hk = HeatKernelConfig()
    dom, grid, op, _ = _eigen_setup(cfg, m=4)
    basis = solve_eigenpairs(op, min(hk.n_modes, grid.npoints))
    report = heat_kernel_ratio_report(dom, grid, basis, hk.times())
    p = (dom.dimension + 2) / 2.0
    gap = float(basis.eigenvalues[1] - basis.eigenvalues[0])
    rows = []
    for i, t in enumerate(report.times):
        lower = max(1.0, t**-p / report.c)
        upper = 1.0 + report.c * min(t, 1.0) ** -p * math.exp(-gap * t)
        rows.append([t, report.ratios[i], lower, upper, bool(report.passed[i])])
    files = [
        write_csv(
            out_dir / "heatkernel.csv",
            ["t", "ratio", "lower_bound", "upper_bound_with_fitted_c", "pass"],
            rows,
        )
    ]
    files.append(
        write_json(
            out_dir / "heatkernel_summary.json",
            {
                "c": report.c,
                "dimension": dom.dimension,
                "spectral_gap": gap,
                "n_modes": basis.m,
                "truncation_estimate": report.truncation_estimate,
                "truncation_warning": bool(report.truncation_warning),
            },
        )
    )
    return files


_COMMANDS = {
    "eigen": cmd_eigen,
    "blowup": cmd_blowup,
    "simulate": cmd_simulate,
    "certify": cmd_certify,
    "heat-kernel": cmd_heat_kernel,
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spdelab",
        description="Numerical laboratory for blowup and global existence in a "
        "stochastically forced semilinear heat equation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "eigen": "Dirichlet eigenvalues, Richardson extrapolation, principal mode",
        "blowup": "analytic blowup bounds and Monte Carlo hitting estimates",
        "simulate": "integrate trajectories and emit consistency diagnostics",
        "certify": "evaluate global-existence certificates on a noise path",
        "heat-kernel": "sample the kernel ratio and fit the sandwich constant",
    }
    for name, fn in _COMMANDS.items():
        p = sub.add_parser(name, help=helps[name])
        p.add_argument("--config", required=True, help="path to the JSON run configuration")
        p.add_argument("--seed", type=int, default=None, help="override sim.seed")
        p.add_argument(
            "--out", default=None, help=f"output directory (overrides ${OUT_ENV_VAR} and config)"
        )
        p.add_argument(
            "--workers",
            type=int,
            default=1,
            help="worker threads for Monte Carlo; results are worker-count invariant",
        )
        p.set_defaults(fn=fn)
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    started = _now()
    try:
        cfg = load_config(args.config)
        out_dir = _resolve_out_dir(args.out, cfg)
        files = args.fn(cfg, out_dir, args.seed, args.workers)
        manifest = RunManifest(
            command=args.command,
            config_path=str(args.config),
            config_sha256=cfg.sha256,
            code_version=__version__,
            seed=args.seed if args.seed is not None else (cfg.sim.seed if cfg.sim else None),
            started_at=started,
            outputs=[f.name for f in files],
        )
        files.append(manifest.write(out_dir))
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except NumericalFailure as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except PreconditionFailure as exc:
        print(f"precondition violated: {exc}", file=sys.stderr)
        return 4
    for f in files:
        print(f)
    return 0


if __name__ == "__main__":
    sys.exit(main())
