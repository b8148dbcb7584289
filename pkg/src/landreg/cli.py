"""Command-line front end.

    landreg {register|linear-posterior|sample-prior|average|warp}
            --input FILE [--config FILE] [--seed N] [--out DIR] ...

Exit codes: 0 success, 1 numeric nonconvergence (artifacts still written),
2 input or configuration error.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .align import procrustes_align
from .errors import LandregError
from .flow import FlowSettings, PhaseState, flow, push_forward, shoot_register
from .io import LandmarkFile, LandmarkFileError, RunConfig, file_sha256, load_landmarks
from .kernel import GaussianKernel, ThermostatParams
from .langevin import pushforward_ensemble
from .lingauss import (
    condition_on_endpoints,
    linearise_about,
    midpoint_init_dist,
    propagate_moments,
    sample_posterior_paths,
)
from .numerics import rng_stream
from .splitting import (
    RegistrationData,
    average_marginal_sds,
    laplace_first,
    laplace_multi,
    laplace_second,
    map_first,
    map_multi,
    map_second,
)
from .svg import SvgCanvas

GRID_SHAPE = (21, 21)


def _grid_points(lim=2.0):
    axis = np.linspace(-lim, lim, GRID_SHAPE[0])
    gx, gy = np.meshgrid(axis, axis, indexing="ij")
    return np.stack([gx.ravel(), gy.ravel()], axis=-1)


def _write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([f"{v:.12g}" if isinstance(v, float) else v for v in row])


def _write_manifest(out: Path, command: str, cfg: RunConfig, input_path: str,
                    extra: dict | None = None) -> None:
    cfg_dict = cfg.to_dict()
    cfg_dict.pop("out_dir", None)  # output location does not affect the results
    manifest = {
        "command": command,
        "config": cfg_dict,
        "seed": cfg.seed,
        "input": str(input_path),
        "input_sha256": file_sha256(input_path),
        "landreg_version": __version__,
        "numpy_version": np.__version__,
    }
    if extra:
        manifest.update(extra)
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _load(args) -> tuple[RunConfig, LandmarkFile, Path]:
    cfg = RunConfig.from_file(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out is not None:
        cfg.out_dir = args.out
    lf = load_landmarks(args.input, csv_set=getattr(args, "set", None))
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return cfg, lf, out


def _settings(cfg: RunConfig) -> FlowSettings:
    return FlowSettings(h=cfg.h, integrator=cfg.integrator)


def cmd_register(args) -> int:
    cfg, lf, out = _load(args)
    q_r, q_t = lf.require("reference", "target")
    aligned = procrustes_align([q_r, q_t]).aligned
    data = RegistrationData(q_r=aligned[0], q_t=aligned[1])
    settings = _settings(cfg)
    k = GaussianKernel(ell=cfg.ell)
    result = map_first(data, cfg.beta, cfg.obs_noise_var, settings, k)
    cov = laplace_first(result, data, cfg.beta, cfg.obs_noise_var, settings, k)
    result.laplace_cov = cov
    dn = data.dn
    sds = average_marginal_sds(cov, dn)  # q0 block
    path = flow(PhaseState(p=result.p0, q=result.q0), 0.0, 1.0, settings, k, data.d)
    q_end = path.Q[-1]

    pts0 = result.q0.reshape(-1, 2)
    pts1 = q_end.reshape(-1, 2)
    sd_per_lm = sds.reshape(-1, 2).mean(axis=1)
    _write_csv(out / "register.csv",
               ["landmark", "q0_x", "q0_y", "q1_x", "q1_y", "sd"],
               [(i, *map(float, pts0[i]), *map(float, pts1[i]), float(sd_per_lm[i]))
                for i in range(len(pts0))])

    canvas = SvgCanvas()
    canvas.polyline(data.q_r.points, stroke="#999999", closed=True)
    canvas.polyline(data.q_t.points, stroke="#999999", closed=True)
    for i in range(len(pts0)):
        canvas.polyline(path.Q[:, 2 * i:2 * i + 2], stroke="#ddaa00", width=0.8)
    canvas.polyline(pts0, stroke="black", closed=True)
    canvas.polyline(pts1, stroke="blue", closed=True)
    canvas.circles(pts1, sd_per_lm, stroke="blue", opacity=0.5)
    canvas.write(out / "register.svg")
    _write_manifest(out, "register", cfg, args.input, {
        "converged": result.converged,
        "objective": result.objective_value,
        "residual_ref": result.residual_ref,
        "residual_tgt": result.residual_tgt,
    })
    return 0 if result.converged else 1


def cmd_linear_posterior(args) -> int:
    cfg, lf, out = _load(args)
    q_r, q_t = lf.require("reference", "target")
    aligned = procrustes_align([q_r, q_t]).aligned
    q_r, q_t = aligned
    settings = _settings(cfg)
    if settings.n_steps(1.0) % 2 != 0:
        print("error: step size must give an even number of steps", file=sys.stderr)
        return 2
    k = GaussianKernel(ell=cfg.ell)
    th = ThermostatParams(beta=cfg.beta, lam=cfg.lam)
    shoot = shoot_register(q_r, q_t, settings, k, tol=1e-6)
    sysm = linearise_about(shoot.path, th, k)
    init = midpoint_init_dist(sysm, k, cfg.prior_pos_var)
    moments = propagate_moments(sysm, init)
    post = condition_on_endpoints(moments, q_r.q, q_t.q, cfg.obs_noise_var)
    rng = rng_stream(cfg.seed, 0)
    samples = sample_posterior_paths(post, sysm, cfg.n_samples, rng)

    dn = q_r.q.size
    n_last = sysm.n_steps
    m = sysm.dim
    diag = np.sqrt(np.clip(np.diag(post.cov), 0.0, None))
    sd0 = diag[0 * m + dn:0 * m + 2 * dn].reshape(-1, 2)
    sd1 = diag[n_last * m + dn:n_last * m + 2 * dn].reshape(-1, 2)
    mean_nodes = post.mean.reshape(n_last + 1, m)
    _write_csv(out / "posterior_landmarks.csv",
               ["landmark", "mean0_x", "mean0_y", "sd0", "mean1_x", "mean1_y", "sd1"],
               [(i,
                 float(mean_nodes[0, dn + 2 * i]), float(mean_nodes[0, dn + 2 * i + 1]),
                 float(sd0[i].mean()),
                 float(mean_nodes[n_last, dn + 2 * i]), float(mean_nodes[n_last, dn + 2 * i + 1]),
                 float(sd1[i].mean()))
                for i in range(q_r.n)])

    # Monte Carlo SD of the warped grid under the posterior.
    grid = _grid_points()
    warped = np.stack([push_forward(p, grid, settings, k) for p in samples])
    grid_sd = warped.std(axis=0).mean(axis=1)
    _write_csv(out / "grid_sd.csv", ["x", "y", "sd"],
               [(float(g[0]), float(g[1]), float(s)) for g, s in zip(grid, grid_sd)])

    canvas = SvgCanvas()
    for p in samples[:20]:
        for i in range(q_r.n):
            canvas.polyline(p.Q[:, 2 * i:2 * i + 2], stroke="#ddaa00", width=0.5, opacity=0.6)
    canvas.polyline(q_r.points, stroke="black", closed=True)
    canvas.polyline(q_t.points, stroke="blue", closed=True)
    canvas.circles(q_t.points, sd1.mean(axis=1), stroke="blue", opacity=0.5)
    canvas.write(out / "posterior.svg")
    _write_manifest(out, "linear-posterior", cfg, args.input,
                    {"shoot_residual": shoot.residual, "converged": shoot.converged})
    return 0 if shoot.converged else 1


def cmd_sample_prior(args) -> int:
    cfg, lf, out = _load(args)
    (q_r,) = lf.require("reference")
    if not cfg.beta_list:
        print("error: empty beta list", file=sys.stderr)
        return 2
    settings = _settings(cfg)
    k = GaussianKernel(ell=cfg.ell)
    grid = _grid_points(lim=1.0)
    rows = []
    for bi, beta in enumerate(cfg.beta_list):
        th = ThermostatParams(beta=beta, lam=cfg.lam)
        ensemble = pushforward_ensemble(q_r, th, k, settings, cfg.n_samples,
                                        rng_seed=cfg.seed + 1000 * bi,
                                        grid_points=grid)
        disps = [float(np.median(np.linalg.norm(e["grid"] - grid, axis=1)))
                 for e in ensemble]
        rows.append((float(beta), float(np.median(disps)),
                     float(np.mean(disps)), float(np.max(disps))))
        canvas = SvgCanvas(xlim=(-2.0, 2.0), ylim=(-2.0, 2.0))
        canvas.grid(ensemble[0]["grid"], GRID_SHAPE)
        canvas.polyline(ensemble[0]["curve"], stroke="blue", closed=True)
        canvas.write(out / f"prior_beta_{beta:g}.svg")
    _write_csv(out / "prior_displacement.csv",
               ["beta", "median_disp", "mean_disp", "max_disp"], rows)
    _write_manifest(out, "sample-prior", cfg, args.input)
    return 0


def cmd_average(args) -> int:
    cfg, lf, out = _load(args)
    names = sorted(lf.sets)
    if len(names) < 2:
        print("error: averaging needs at least two landmark sets", file=sys.stderr)
        return 2
    aligned = procrustes_align([lf.sets[n] for n in names]).aligned
    settings = _settings(cfg)
    k = GaussianKernel(ell=cfg.ell)
    th = ThermostatParams(beta=cfg.beta, lam=cfg.lam)
    dn = aligned[0].q.size
    arith = np.mean([c.q for c in aligned], axis=0)
    if len(aligned) == 2 and args.pairwise:
        data = RegistrationData(q_r=aligned[0], q_t=aligned[1])
        result = map_second(data, th, cfg.obs_noise_var, settings, k)
        cov = laplace_second(result, data, th, cfg.obs_noise_var, settings, k)
    else:
        result = map_multi(aligned, th, cfg.obs_noise_var, settings, k)
        cov = laplace_multi(result, aligned, th, cfg.obs_noise_var, settings, k)
    result.laplace_cov = cov
    sds = average_marginal_sds(cov, dn).reshape(-1, 2).mean(axis=1)
    avg = result.average.reshape(-1, 2)
    ar = arith.reshape(-1, 2)
    _write_csv(out / "average.csv",
               ["landmark", "map_x", "map_y", "sd", "arith_x", "arith_y"],
               [(i, float(avg[i, 0]), float(avg[i, 1]), float(sds[i]),
                 float(ar[i, 0]), float(ar[i, 1])) for i in range(len(avg))])
    canvas = SvgCanvas()
    for c in aligned:
        canvas.polyline(c.points, stroke="#bbbbbb", closed=True)
    canvas.polyline(ar, stroke="green", closed=True)
    canvas.polyline(avg, stroke="black", closed=True)
    canvas.circles(avg, sds, stroke="black", opacity=0.5)
    canvas.write(out / "average.svg")
    _write_manifest(out, "average", cfg, args.input, {
        "converged": result.converged,
        "objective": result.objective_value,
        "distance_to_arithmetic": float(np.linalg.norm(result.average - arith)),
    })
    return 0 if result.converged else 1


def cmd_warp(args) -> int:
    cfg, lf, out = _load(args)
    q_r, q_t = lf.require("reference", "target")
    settings = _settings(cfg)
    k = GaussianKernel(ell=cfg.ell)
    shoot = shoot_register(q_r, q_t, settings, k, tol=1e-6)
    path = shoot.path
    grid = _grid_points()
    warped_grid = push_forward(path, grid, settings, k)
    canvas = SvgCanvas()
    canvas.grid(warped_grid, GRID_SHAPE, stroke="#cccccc")
    rows = []
    for frac in (0.25, 0.5, 0.75):
        idx = path.nearest_index(frac)
        shape = path.Q[idx].reshape(-1, 2)
        canvas.polyline(shape, stroke="#888888", closed=True)
        rows.extend((float(frac), i, float(x), float(y))
                    for i, (x, y) in enumerate(shape))
    for i in range(q_r.n):
        canvas.polyline(path.Q[:, 2 * i:2 * i + 2], stroke="#ddaa00", width=0.8)
    canvas.polyline(q_r.points, stroke="black", closed=True)
    canvas.polyline(q_t.points, stroke="blue", closed=True)
    canvas.write(out / "warp.svg")
    _write_csv(out / "warp_shapes.csv", ["t", "landmark", "x", "y"], rows)
    _write_manifest(out, "warp", cfg, args.input,
                    {"residual": shoot.residual, "converged": shoot.converged})
    return 0 if shoot.converged else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="landreg",
                                     description="Bayesian landmark registration")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in [("register", cmd_register),
                     ("linear-posterior", cmd_linear_posterior),
                     ("sample-prior", cmd_sample_prior),
                     ("average", cmd_average),
                     ("warp", cmd_warp)]:
        p = sub.add_parser(name)
        p.add_argument("--input", required=True, help="landmark JSON/CSV file")
        p.add_argument("--config", help="run configuration JSON")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="output directory")
        p.add_argument("--set", help="set name for CSV import")
        if name == "average":
            p.add_argument("--pairwise", action="store_true",
                           help="use the two-set objective when J = 2")
        p.set_defaults(func=fn)
    return parser


def main(argv=None) -> int:
    threads = os.environ.get("LANDREG_THREADS")
    if threads:
        os.environ.setdefault("OMP_NUM_THREADS", threads)
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (LandmarkFileError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except LandregError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
