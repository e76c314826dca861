"""Command-line interface: experiments in, CSV artifacts and figures out.

A single JSON config describes the field, the diffusion tensor and the
experiment; every artifact starts with '#' header lines carrying the
tool version, the config digest and the resolved configuration, so each
run is self-describing and byte-reproducible.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys

import numpy as np

from . import __version__, figures
from .averaging import average_properties_check, ergodic_average
from .errors import ConfigurationError, ErgodiffError, InvalidParameterError
from .fields import field_from_config
from .flow import FlowIntegratorConfig, default_integrator, flow_advance, flow_group_check
from .lab import TimeSampledVectorField, convergence_study, two_scale_pairing
from .pde import Grid, GridFunction, gaussian_on_grid, solve_filtered, solve_limit, solve_stiff
from .selftest import run_all
from .transport import MatrixFieldFn, box_quadrature, constant_matrix_field, identity_matrix_field


def _config_digest(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:12]


def _fmt(value) -> str:
    # shortest round-trip representation for floats, including numpy scalars
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return str(value)


def _header_lines(cfg: dict, args) -> list:
    return [
        f"ergodiff {__version__}",
        f"config-digest: {_config_digest(cfg)}",
        f"threads: {args.threads}",
        "config: " + json.dumps(cfg, sort_keys=True, separators=(",", ":")),
    ]


def write_csv(path: str, header_lines, columns, rows) -> str:
    """Atomic CSV writer: '#' comment headers, LF endings, shortest round-trip floats."""
    tmp = f"{path}.tmp-{os.getpid()}"
    with open(tmp, "w", newline="\n") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")
    os.replace(tmp, path)
    return path


def write_text(path: str, lines) -> str:
    tmp = f"{path}.tmp-{os.getpid()}"
    with open(tmp, "w", newline="\n") as fh:
        for line in lines:
            fh.write(line + "\n")
    os.replace(tmp, path)
    return path


def load_config(path: str) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise ConfigurationError(f"config file not found: {path}")
    except json.JSONDecodeError as err:
        raise ConfigurationError(
            f"config parse error in {path}: {err.msg} at line {err.lineno}, column {err.colno}"
        )


def diffusion_from_config(cfg: dict, dim: int) -> MatrixFieldFn:
    kind = cfg.get("kind", "identity")
    if kind == "identity":
        return identity_matrix_field(dim)
    if kind == "constant":
        try:
            entries = np.asarray(cfg["entries"], dtype=float)
        except KeyError:
            raise ConfigurationError("diffusion kind 'constant' requires key 'entries'")
        if entries.shape != (dim, dim):
            raise ConfigurationError(
                f"diffusion entries must be {dim}x{dim}, got {entries.shape}")
        return constant_matrix_field(entries)
    if kind == "diagonal":
        try:
            diag = np.asarray(cfg["diag"], dtype=float)
        except KeyError:
            raise ConfigurationError("diffusion kind 'diagonal' requires key 'diag'")
        if diag.shape != (dim,):
            raise ConfigurationError(f"diffusion diag must have length {dim}")
        return constant_matrix_field(np.diag(diag))
    raise ConfigurationError(f"unknown diffusion kind '{kind}'")


def integrator_from_config(cfg: dict, field) -> FlowIntegratorConfig:
    if not cfg:
        return default_integrator(field)
    return FlowIntegratorConfig(method=cfg.get("method", "analytic" if field.has_analytic_flow else "rk4"),
                                step=cfg.get("step", 1e-3),
                                tolerance=cfg.get("tolerance", 1e-8))


def initial_from_config(cfg: dict, grid: Grid) -> GridFunction:
    kind = cfg.get("kind", "gaussian")
    if kind == "gaussian":
        return gaussian_on_grid(grid, center=cfg.get("center"),
                                sigma=cfg.get("sigma", 0.5),
                                normalize=cfg.get("normalize", True))
    if kind == "sine":
        k = int(cfg.get("mode", 1))
        if grid.dim == 1:
            vals = np.sin(k * np.pi * grid.axis / grid.half_width)
        else:
            xs = grid.cell_centers()[:, 0].reshape(grid.shape)
            vals = np.sin(k * np.pi * xs / grid.half_width)
        return GridFunction(grid, vals)
    raise ConfigurationError(f"unknown initial condition kind '{kind}'")


def _outdir(args) -> str:
    os.makedirs(args.output_dir, exist_ok=True)
    return args.output_dir


def cmd_flow(cfg: dict, args) -> int:
    field = field_from_config(cfg.get("field", {"kind": "rotation"}))
    integ = integrator_from_config(cfg.get("integrator", {}), field)
    exp = cfg.get("experiment", {})
    y0 = np.asarray(exp.get("y0", [1.0] + [0.0] * (field.dim - 1)), dtype=float)
    if "s_values" in exp:
        s_values = [float(s) for s in exp["s_values"]]
    else:
        s_max = float(exp.get("s_max", field.period or 2.0 * np.pi))
        count = int(exp.get("count", 64))
        s_values = list(np.linspace(0.0, s_max, count + 1))
    rows, positions, dets = [], [], []
    for s in s_values:
        out = flow_advance(field, integ, s, y0)
        resid = flow_group_check(field, integ, s / 2.0, s / 2.0, y0)
        rows.append([s, *y0.tolist(), *np.asarray(out.position).tolist(),
                     float(out.det_jacobian), resid])
        positions.append(np.asarray(out.position))
        dets.append(float(out.det_jacobian))
    cols = (["s"] + [f"y{i + 1}" for i in range(field.dim)]
            + [f"Y{i + 1}" for i in range(field.dim)] + ["detJ", "group_residual"])
    outdir = _outdir(args)
    path = write_csv(os.path.join(outdir, "flow.csv"), _header_lines(cfg, args), cols, rows)
    print(f"wrote {path}")
    if not args.no_figures:
        fig = figures.render_flow(os.path.join(outdir, "flow.png"), s_values, positions, dets)
        print(f"wrote {fig}")
    return 0


def cmd_average(cfg: dict, args) -> int:
    field = field_from_config(cfg.get("field", {"kind": "rotation"}))
    integ = integrator_from_config(cfg.get("integrator", {}), field)
    D = diffusion_from_config(cfg.get("diffusion", {"kind": "identity"}), field.dim)
    exp = cfg.get("average", {})
    s_nodes = int(exp.get("s_nodes", 256))
    mode = exp.get("mode", "one_period")
    avg = ergodic_average(D, field, integ, s_nodes=s_nodes, mode=mode,
                          cesaro_horizon=exp.get("cesaro_horizon"))
    outdir = _outdir(args)
    m = field.dim
    tensor_cols = [f"D{i + 1}{j + 1}" for i in range(m) for j in range(m)]
    if m == 2:
        box_l = float(exp.get("box_l", 4.0))
        n = int(exp.get("n", 64))
        quad = box_quadrature(dim=2, lo=-box_l, hi=box_l, n_per_axis=n)
        pts = quad.nodes
    else:
        rng = np.random.default_rng(int(cfg.get("seed", 0)))
        pts = rng.normal(size=(int(exp.get("sample_points", 20)), m))
        quad = None
    vals = avg.average.eval(pts)
    rows = [[*pt.tolist(), *val.reshape(-1).tolist()] for pt, val in zip(pts, vals)]
    cols = [f"y{i + 1}" for i in range(m)] + tensor_cols
    path = write_csv(os.path.join(outdir, "average.csv"), _header_lines(cfg, args), cols, rows)
    print(f"wrote {path}")
    report_lines = [f"averaging report (mode={mode}, s_nodes={s_nodes})"]
    if quad is not None:
        alpha = float(np.min(np.linalg.eigvalsh(
            0.5 * (D.eval(pts) + np.swapaxes(D.eval(pts), -1, -2)))))
        rep = average_properties_check(D, avg, quad, alpha=alpha)
        report_lines += [
            f"  symmetric: {rep.symmetric_ok} (max asymmetry {rep.max_asymmetry:.3e})",
            f"  positive: {rep.positive_ok} (min eigenvalue {rep.min_eig_average:.6e})",
            f"  coercive: {rep.coercive_ok} (alpha {rep.coercivity_alpha:.6e}, "
            f"margin {rep.coercivity_margin:.3e})",
            f"  weighted L2 norm: {rep.l2_norm_average:.6e} <= {rep.l2_norm_input:.6e}: "
            f"{rep.l2_contract_ok}",
            f"  weighted sup norm: {rep.sup_norm_average:.6e} <= {rep.sup_norm_input:.6e}: "
            f"{rep.sup_contract_ok}",
        ]
    else:
        asym = float(np.max(np.abs(vals - np.swapaxes(vals, -1, -2))))
        report_lines.append(f"  sampled symmetry defect: {asym:.3e}")
    rpath = write_text(os.path.join(outdir, "average_report.txt"), report_lines)
    print(f"wrote {rpath}")
    if not args.no_figures and m == 2:
        lattice = quad.axes
        tensor = vals.reshape(len(lattice), len(lattice), m, m)
        fig = figures.render_average(os.path.join(outdir, "average.png"), lattice, tensor)
        print(f"wrote {fig}")
    return 0


def cmd_solve(cfg: dict, args) -> int:
    problem = args.problem or cfg.get("solve", {}).get("problem", "stiff")
    if problem not in ("stiff", "filtered", "limit"):
        raise ConfigurationError(f"unknown problem '{problem}'")
    solve_cfg = dict(cfg.get("solve", {}))
    grid = Grid(dim=int(solve_cfg.get("dim", 2)),
                half_width=float(args.box_l or solve_cfg.get("box_l", np.pi)),
                n=int(args.grid_n or solve_cfg.get("grid_n", 128)),
                boundary=args.boundary or solve_cfg.get("boundary", "periodic"))
    u_in = initial_from_config(cfg.get("initial", {}), grid)
    eps = float(args.eps or solve_cfg.get("eps", 0.1))
    t_end = float(args.t_end or solve_cfg.get("t_end", 0.1))
    dt = float(args.dt or solve_cfg.get("dt", min(1e-3, eps / 20.0) if problem == "stiff" else 1e-3))
    n_out = int(solve_cfg.get("n_snapshots", 4))
    out_times = solve_cfg.get("output_times") or [t_end * (k + 1) / n_out for k in range(n_out)]
    field = None
    if "field" in cfg or problem in ("stiff", "filtered"):
        field = field_from_config(cfg.get("field", {"kind": "rotation"}))
    D = diffusion_from_config(cfg.get("diffusion", {"kind": "identity"}),
                              grid.dim)
    if problem == "stiff":
        result = solve_stiff(field if field and field.dim == grid.dim else None, D, eps,
                             u_in, t_end, dt, output_times=out_times)
    elif problem == "filtered":
        integ = integrator_from_config(cfg.get("integrator", {}), field)
        result = solve_filtered(field, D, eps, u_in, t_end, dt, output_times=out_times,
                                cfg=integ)
    else:
        if field is not None and field.dim == grid.dim:
            integ = integrator_from_config(cfg.get("integrator", {}), field)
            tensor = ergodic_average(D, field, integ,
                                     s_nodes=int(solve_cfg.get("s_nodes", 256)))
        else:
            tensor = D
        result = solve_limit(tensor, u_in, t_end, dt, output_times=out_times)
    outdir = _outdir(args)
    centers = grid.cell_centers()
    rows = []
    for t, state in zip(result.times, result.states):
        flat = state.values.ravel()
        for pt, v in zip(centers, flat):
            rows.append([t, *pt.tolist(), v])
    cols = ["t"] + [f"y{i + 1}" for i in range(grid.dim)] + ["u"]
    state_path = args.output or os.path.join(outdir, f"solve_{problem}.csv")
    write_csv(state_path, _header_lines(cfg, args), cols, rows)
    print(f"wrote {state_path}")
    energy_path = args.energy_output or os.path.join(outdir, f"solve_{problem}_energy.csv")
    energy_rows = [[r[0], r[1], r[2]] for r in result.energy_trace]
    write_csv(energy_path, _header_lines(cfg, args), ["t", "half_l2_sq", "dissipation"],
              energy_rows)
    print(f"wrote {energy_path}")
    if not args.no_figures:
        fig = figures.render_solve(os.path.join(outdir, f"solve_{problem}.png"),
                                   grid.axis, result.states[-1].values,
                                   result.energy_trace,
                                   f"{problem} state at t={result.times[-1]:g}")
        print(f"wrote {fig}")
    return 0


def cmd_converge(cfg: dict, args) -> int:
    field = field_from_config(cfg.get("field", {"kind": "rotation"}))
    exp = cfg.get("experiment", {})
    grid = Grid(dim=2, half_width=float(exp.get("box_l", 17.0)),
                n=int(exp.get("grid_n", 128)))
    u_in = initial_from_config(cfg.get("initial", {"kind": "gaussian", "sigma": 2.0}), grid)
    D = diffusion_from_config(cfg.get("diffusion", {"kind": "constant",
                                                    "entries": [[2.5, 0.0], [0.0, 0.5]]}),
                              2)
    report = convergence_study(
        field, D, u_in,
        T=float(exp.get("T", 0.5)),
        eps_ladder=exp.get("eps_ladder", [0.2, 0.1, 0.05, 0.025]),
        use_corrector=bool(exp.get("use_corrector", True)),
        n_snapshots=int(exp.get("n_snapshots", 48)),
        s_nodes=int(exp.get("s_nodes", 256)),
        rate_threshold=float(exp.get("rate_threshold", 0.9)),
    )
    outdir = _outdir(args)
    rows = []
    for k, eps in enumerate(report.eps_ladder):
        corrected = report.corrected_errors[k] if report.corrected_errors else ""
        rows.append([eps, report.errors_linf_l2[k], report.errors_grad_xp[k],
                     report.errors_lab_frame[k], corrected])
    path = write_csv(os.path.join(outdir, "converge.csv"), _header_lines(cfg, args),
                     ["eps", "err_state_linf_l2", "err_grad_weighted", "err_lab_frame",
                      "err_corrected"], rows)
    print(f"wrote {path}")
    summary = [
        "convergence study summary",
        f"  eps ladder: {report.eps_ladder}",
        f"  sup-in-time L2 state errors: {[f'{e:.4e}' for e in report.errors_linf_l2]}",
        f"  weighted gradient errors:    {[f'{e:.4e}' for e in report.errors_grad_xp]}",
        f"  lab-frame state errors:      {[f'{e:.4e}' for e in report.errors_lab_frame]}",
    ]
    if report.corrected_errors:
        summary.append(
            f"  corrected state errors:      {[f'{e:.4e}' for e in report.corrected_errors]}")
    summary += [
        f"  fitted state rate:    {report.fitted_rate:.4f}",
        f"  fitted gradient rate: {report.fitted_rate_grad:.4f}",
        f"  rate threshold:       {report.rate_threshold}",
        f"  pass: {report.passed}",
    ]
    spath = write_text(os.path.join(outdir, "converge_summary.txt"), summary)
    print(f"wrote {spath}")
    if not args.no_figures:
        fig = figures.render_converge(os.path.join(outdir, "converge.png"), report)
        print(f"wrote {fig}")
    print(f"pass: {report.passed}")
    return 0 if report.passed else 1


def cmd_pairing(cfg: dict, args) -> int:
    field = field_from_config(cfg.get("field", {"kind": "rotation"}))
    integ = integrator_from_config(cfg.get("integrator", {}), field)
    exp = cfg.get("experiment", {})
    D = diffusion_from_config(cfg.get("diffusion", {"kind": "constant",
                                                    "entries": [[2.0, 0.0], [0.0, 0.0]]}), 2)
    box_l = float(exp.get("box_l", 5.0))
    quad = box_quadrature(dim=2, lo=-box_l, hi=box_l,
                          n_per_axis=int(exp.get("quad_n", 48)))
    widths = exp.get("test_field_widths", [0.7, 1.2])
    y = quad.nodes
    a, b = float(widths[0]), float(widths[1])
    g = np.exp(-(y[:, 0] ** 2 / (2 * a * a) + y[:, 1] ** 2 / (2 * b * b)))
    grad = np.stack([-y[:, 0] / (a * a) * g, -y[:, 1] / (b * b) * g], axis=-1)
    theta = TimeSampledVectorField(np.array([0.0]), grad[None])
    report = two_scale_pairing(theta, theta, D, field, integ,
                               T=float(exp.get("T", 1.0)),
                               eps_ladder=exp.get("eps_ladder", [0.2, 0.1, 0.05]),
                               quad=quad)
    outdir = _outdir(args)
    rows = [[eps, val, dev, report.limit_value]
            for eps, val, dev in zip(report.eps_ladder, report.pairing_values,
                                     report.deviations)]
    path = write_csv(os.path.join(outdir, "pairing.csv"), _header_lines(cfg, args),
                     ["eps", "pairing_value", "deviation", "limit_value"], rows)
    print(f"wrote {path}")
    if not args.no_figures:
        fig = figures.render_pairing(os.path.join(outdir, "pairing.png"), report)
        print(f"wrote {fig}")
    print(f"pass: {report.passed}")
    return 0 if report.passed else 1


def cmd_selftest(args) -> int:
    numbers = None
    if args.criteria:
        numbers = sorted({int(tok) for tok in args.criteria.split(",") if tok.strip()})
    results = run_all(numbers, report=print)
    return 0 if all(r.passed for r in results) else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ergodiff",
        description="Ergodic averaging of diffusion tensors along flows: "
                    "flows, averages, solvers, convergence experiments.")
    parser.add_argument("--version", action="version", version=f"ergodiff {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required, help="JSON config file")
        p.add_argument("--output-dir", default=".", help="directory for artifacts")
        p.add_argument("--threads", type=int, default=0,
                       help="worker threads (0 = auto; recorded in headers)")
        p.add_argument("--verbose", action="store_true")
        p.add_argument("--no-figures", action="store_true",
                       help="skip rendering PNG figures next to the CSV output")

    common(sub.add_parser("flow", help="integrate a trajectory and its Jacobian"))
    common(sub.add_parser("average", help="average a tensor along the flow"))
    solve = sub.add_parser("solve", help="run one of the parabolic solvers")
    common(solve)
    solve.add_argument("--problem", choices=["stiff", "filtered", "limit"])
    solve.add_argument("--eps", type=float)
    solve.add_argument("--t-end", type=float)
    solve.add_argument("--dt", type=float)
    solve.add_argument("--grid-n", type=int)
    solve.add_argument("--box-l", type=float)
    solve.add_argument("--boundary", choices=["periodic", "homogeneous_dirichlet"])
    solve.add_argument("--output", help="states CSV path")
    solve.add_argument("--energy-output", help="energy trace CSV path")
    common(sub.add_parser("converge", help="stiff-to-averaged convergence study"))
    common(sub.add_parser("pairing", help="slow-fast pairing experiment"))
    st = sub.add_parser("selftest", help="run the acceptance criteria")
    common(st, config_required=False)
    st.add_argument("--criteria", help="comma-separated criterion numbers (default all)")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "selftest":
            return cmd_selftest(args)
        cfg = load_config(args.config)
        if args.command == "flow":
            return cmd_flow(cfg, args)
        if args.command == "average":
            return cmd_average(cfg, args)
        if args.command == "solve":
            return cmd_solve(cfg, args)
        if args.command == "converge":
            return cmd_converge(cfg, args)
        if args.command == "pairing":
            return cmd_pairing(cfg, args)
        parser.error(f"unknown command {args.command}")
    except (ConfigurationError, InvalidParameterError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except ErgodiffError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    return 2


if __name__ == "__main__":
    sys.exit(main())
