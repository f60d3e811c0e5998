"""Command-line experiment orchestration.

Subcommands: forward (simulate datasets), invert (MAP + Laplace per potential),
sample (pCN chain), compare (stability report), validate-config.  Every
artifact directory carries a manifest with the config hash and seeds; reruns
with the same config and seed are byte-identical.

Exit codes: 0 success, 2 configuration error, 3 numeric failure, 4 I/O error.
"""

import argparse
import json
import os
import sys

import numpy as np

from . import io
from .config import (build_geometry, build_normalizer, build_prior_model,
                     build_scene, build_solver_options, dump_config, load_config,
                     validate_config)
from .errors import (BayfwiError, CalibrationError, ConfigurationError,
                     DomainError, GeometryError, IndefinitenessError,
                     InputError, LinearAlgebraError, OptimizationError,
                     PreconditionError, ShapeError, BoundsError)
from .grids import Seismogram, remove_zero_frequency
from .inference import FwiObjective, laplace, map_estimate, run_chain
from .posterior_metrics import make_noise, make_noise_with_snr, stability_report
from .potentials import Potential, PotentialSpec, calibrate
from .wave import solve_forward

_NUMERIC_ERRORS = (OptimizationError, IndefinitenessError, LinearAlgebraError,
                   DomainError, CalibrationError, BoundsError, PreconditionError,
                   InputError, ShapeError, GeometryError)


def _dataset_paths(out_dir: str, cfg: dict):
    paths = {"clean": os.path.join(out_dir, "data", "clean")}
    noise = cfg.get("noise")
    if noise:
        for s in noise.get("seeds", [cfg["seed"]]):
            paths[f"noisy_{s}"] = os.path.join(out_dir, "data", f"noisy_{s}")
    return paths


def cmd_forward(cfg: dict, out_dir: str, threads: int = None) -> dict:
    scene = build_scene(cfg)
    geom = build_geometry(cfg, scene.grid)
    opts = build_solver_options(cfg, threads)
    y_raw, _ = solve_forward(scene.truth, geom, opts, keep_history=False)
    y = remove_zero_frequency(y_raw)
    peak = float(np.max(np.abs(y.data)))
    meta = {
        "n_sources": geom.n_sources,
        "n_receivers": geom.n_receivers,
        "scene": cfg["scene"]["kind"],
        "suggested_normalizer_delta": 0.1 * peak**2,
        "prior_settings": {"sigma": cfg["prior"]["sigma"], "nu": cfg["prior"]["nu"],
                           "ell": cfg["prior"]["ell"],
                           "ell_units": cfg["prior"]["ell_units"]},
    }
    paths = _dataset_paths(out_dir, cfg)
    sidecars = {}
    sidecars["clean"] = io.write_seismogram(paths["clean"], y, geom.sources,
                                            geom.receivers, meta)
    io.export_traces_csv(paths["clean"] + ".csv", y)
    noise = cfg.get("noise")
    if noise:
        for s in noise.get("seeds", [cfg["seed"]]):
            rng = np.random.default_rng(s)
            if "snr_db" in noise:
                noisy, snr_db, amp = make_noise_with_snr(y, rng, noise["snr_db"])
            else:
                noisy, snr_db = make_noise(y, rng, noise.get("amplitude", 0.0))
                amp = noise.get("amplitude", 0.0)
            noisy = remove_zero_frequency(noisy)
            extra = dict(meta, noise_seed=s, snr_db=snr_db, noise_amplitude=amp)
            sidecars[f"noisy_{s}"] = io.write_seismogram(
                paths[f"noisy_{s}"], noisy, geom.sources, geom.receivers, extra)
    io.write_manifest(os.path.join(out_dir, "data"), cfg, cfg["seed"],
                      {"command": "forward"})
    return sidecars


def _load_dataset(path: str) -> Seismogram:
    if not os.path.exists(path + ".json"):
        raise FileNotFoundError(f"dataset {path} missing; run `forward` first")
    y, _ = io.read_seismogram(path)
    return y


def _make_potential(pot_cfg: dict, scene, geom, y, y_calibration, opts):
    normalizer = build_normalizer(pot_cfg, y_calibration)
    spec = PotentialSpec(pot_cfg["kind"], beta=pot_cfg.get("beta", 1.0),
                         normalizer=normalizer,
                         m_denominator=pot_cfg.get("m_denominator", "data"))
    return Potential(spec, scene.template(), geom, y, opts)


def cmd_invert(cfg: dict, out_dir: str, threads: int = None,
               datasets: list = None) -> dict:
    scene = build_scene(cfg)
    geom = build_geometry(cfg, scene.grid)
    opts = build_solver_options(cfg, threads)
    prior_model = build_prior_model(cfg, scene)
    paths = _dataset_paths(out_dir, cfg)
    if datasets is not None:
        paths = {k: v for k, v in paths.items() if k in datasets}
    y_clean = _load_dataset(os.path.join(out_dir, "data", "clean"))
    inf = cfg["inference"]
    results = {}
    for pot_cfg in cfg["potentials"]:
        kind = pot_cfg["kind"]
        # calibrate on the clean dataset so clean/noisy runs share one scale
        pot_ref = _make_potential(pot_cfg, scene, geom, y_clean, y_clean, opts)
        xi0 = np.zeros(prior_model.dim)
        spec_cal = calibrate(pot_ref, prior_model.latent_field(xi0))
        for name, dpath in paths.items():
            y = y_clean if name == "clean" else _load_dataset(dpath)
            pot = _make_potential(pot_cfg, scene, geom, y, y_clean, opts)
            pot.spec = spec_cal
            obj = FwiObjective(pot, prior_model)
            mres = map_estimate(obj, xi0, tol_rel=inf["map"]["tol_rel"],
                                max_iter=inf["map"]["max_iter"])
            approx = laplace(obj, mres.xi, rank=inf["laplace"]["rank"],
                             rel_cutoff=inf["laplace"]["rel_cutoff"])
            rdir = os.path.join(out_dir, "invert", kind, name)
            _write_laplace(rdir, approx, mres, scene, prior_model)
            io.write_manifest(rdir, cfg, cfg["seed"],
                              {"command": "invert", "potential": kind,
                               "dataset": name,
                               "norm_constant": spec_cal.norm_constant,
                               "beta": spec_cal.beta})
            results[(kind, name)] = approx
    return results


def _write_laplace(rdir, approx, mres, scene, prior_model):
    mean_u = approx.mean_field()
    io.write_array(os.path.join(rdir, "mean_u"), mean_u,
                   {"converged": mres.converged, "n_iter": mres.n_iter,
                    "objective": mres.objective})
    model = scene.template().with_u(mean_u)
    io.write_array(os.path.join(rdir, "mean_velocity"), model.velocity())
    io.export_field_csv(os.path.join(rdir, "mean_velocity.csv"), model.velocity())
    if hasattr(prior_model, "prior"):
        std = np.sqrt(approx.variance_field())
        io.write_array(os.path.join(rdir, "std_u"), std)
        io.export_field_csv(os.path.join(rdir, "std_u.csv"), std)
    io.write_array(os.path.join(rdir, "laplace_xi_mean"), approx.xi_mean)
    io.write_array(os.path.join(rdir, "laplace_eigvecs"), approx.eigenvectors.T,
                   {"rank": approx.rank})
    lines = ["index,eigenvalue"]
    for i, v in enumerate(approx.eigenvalues):
        lines.append(f"{i},{v!r}")
    io.atomic_write_text(os.path.join(rdir, "eigenvalues.csv"), "\n".join(lines) + "\n")


def _load_laplace(rdir, prior_model):
    from .inference import GaussianApprox

    xi_mean, _ = io.read_array(os.path.join(rdir, "laplace_xi_mean"))
    vecs_t, side = io.read_array(os.path.join(rdir, "laplace_eigvecs"))
    vals = []
    with open(os.path.join(rdir, "eigenvalues.csv")) as f:
        next(f)
        for line in f:
            vals.append(float(line.strip().split(",")[1]))
    return GaussianApprox(xi_mean.ravel(), np.array(vals), vecs_t.T, prior_model,
                          len(vals))


def cmd_sample(cfg: dict, out_dir: str, threads: int = None) -> dict:
    scene = build_scene(cfg)
    geom = build_geometry(cfg, scene.grid)
    opts = build_solver_options(cfg, threads)
    prior_model = build_prior_model(cfg, scene)
    pcn = cfg["inference"]["pcn"]
    y = _load_dataset(os.path.join(out_dir, "data", "clean"))
    pot_cfg = next(p for p in cfg["potentials"] if p["kind"] == pcn["potential"])
    pot = _make_potential(pot_cfg, scene, geom, y, y, opts)
    xi0 = np.zeros(prior_model.dim)
    calibrate(pot, prior_model.latent_field(xi0))
    obj = FwiObjective(pot, prior_model)
    if pcn["init"] == "truth":
        xi0 = _truth_init(prior_model, scene)
    summary = run_chain(obj, prior_model, n_steps=pcn["n_steps"],
                        burn_in=pcn["burn_in"], step_size=pcn["step_size"],
                        seed=cfg["seed"], thin=pcn["thin"], adapt=pcn["adapt"])
    sdir = os.path.join(out_dir, "sample", pcn["potential"])
    io.write_array(os.path.join(sdir, "mean_u"), summary.mean_field)
    io.write_array(os.path.join(sdir, "var_u"), summary.variance_field)
    io.write_array(os.path.join(sdir, "thinned_xi"), summary.thinned)
    info = {
        "acceptance": summary.acceptance_rate,
        "n_accept": summary.n_accept,
        "n_steps": summary.n_steps,
        "burn_in": summary.burn_in,
        "step_size_final": summary.step_size_final,
        "seed": summary.seed,
        "zero_steps": summary.n_steps == 0,
        "prior": prior_model.describe(),
    }
    if summary.hyper_trace is not None:
        vel = _salt_velocity_trace(summary.hyper_trace, scene)
        lines = ["latent_value,velocity"]
        for a, b in zip(summary.hyper_trace, vel):
            lines.append(f"{a!r},{b!r}")
        io.atomic_write_text(os.path.join(sdir, "salt_value_trace.csv"),
                             "\n".join(lines) + "\n")
        info["salt_velocity_mean"] = float(np.mean(vel))
    io.atomic_write_text(os.path.join(sdir, "summary.json"), io.canonical_json(info))
    io.write_manifest(sdir, cfg, cfg["seed"], {"command": "sample"})
    return info


def _truth_init(prior_model, scene):
    """Whitened coordinates whose interior field reproduces the scene truth.

    Edge-padded whitening is exact on the interior; the level-set variant uses
    a smoothed signed mask so the starting point has a moderate prior norm.
    """
    from scipy.ndimage import gaussian_filter

    if hasattr(prior_model, "interior_value"):
        vp = prior_model.vprior
        mask = scene.salt_mask.astype(np.float64) * 2.0 - 1.0
        cells = max(vp.spec.ell / vp.grid.dx, 1.0)
        v0 = gaussian_filter(mask, sigma=cells, mode="nearest") * vp.spec.sigma
        xi_v = vp.whiten(vp.embed_edge(v0))
        from .grids import latent_from_velocity
        u_salt = float(latent_from_velocity(
            np.array([scene.salt_velocity]), scene.v_min, scene.v_max)[0])
        xi_s = (u_salt - prior_model.hyper.mean) / prior_model.hyper.sd
        return np.concatenate([xi_v, [xi_s]])
    prior = prior_model.prior
    diff = scene.truth.u - prior.mean_field()
    return prior.whiten(prior.embed_edge(diff))


def _salt_velocity_trace(latent_vals, scene):
    from .grids import slowness_bounds

    a_minus, a_plus = slowness_bounds(scene.v_min, scene.v_max)
    m = a_minus * np.tanh(np.asarray(latent_vals)) + a_plus
    return 1.0 / np.sqrt(m)


def cmd_compare(cfg: dict, out_dir: str, threads: int = None) -> dict:
    scene = build_scene(cfg)
    prior_model = build_prior_model(cfg, scene)
    noise = cfg.get("noise")
    if not noise:
        raise ConfigurationError("compare needs a noise block with seeds")
    seeds = noise.get("seeds", [cfg["seed"]])
    y_clean = _load_dataset(os.path.join(out_dir, "data", "clean"))
    kinds = [p["kind"] for p in cfg["potentials"]]
    reports = {}
    missing = []
    for s in seeds:
        y_noisy = _load_dataset(os.path.join(out_dir, "data", f"noisy_{s}"))
        pairs = {}
        for kind in kinds:
            cdir = os.path.join(out_dir, "invert", kind, "clean")
            ndir = os.path.join(out_dir, "invert", kind, f"noisy_{s}")
            if not (os.path.exists(os.path.join(cdir, "laplace_xi_mean.json"))
                    and os.path.exists(os.path.join(ndir, "laplace_xi_mean.json"))):
                missing.append((kind, s))
                pairs[kind] = None
                continue
            pairs[kind] = (_load_laplace(cdir, prior_model),
                           _load_laplace(ndir, prior_model))
        with open(os.path.join(out_dir, "data", f"noisy_{s}.json")) as f:
            snr = json.load(f).get("snr_db")
        rep = stability_report(pairs, y_clean, y_noisy, scene.grid, snr_db=snr, seed=s)
        reports[s] = rep
        rdir = os.path.join(out_dir, "compare")
        io.atomic_write_text(os.path.join(rdir, f"stability_seed{s}.json"),
                             io.canonical_json(rep.to_dict()))
        lines = ["potential,distance_w2,norm_l2,norm_hm1,snr_db,seed"]
        for r in rep.rows:
            lines.append(f"{r.potential},{r.distance_w2!r},{r.norm_l2!r},"
                         f"{r.norm_hm1!r},{r.snr_db!r},{r.seed}")
        io.atomic_write_text(os.path.join(rdir, f"stability_seed{s}.csv"),
                             "\n".join(lines) + "\n")
    if missing:
        raise FileNotFoundError(
            f"missing inversions for (potential, seed): {sorted(set(missing))}")
    io.write_manifest(os.path.join(out_dir, "compare"), cfg, cfg["seed"],
                      {"command": "compare", "seeds": seeds})
    return reports


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="bayfwi", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("forward", "invert", "sample", "compare", "validate-config"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True)
        p.add_argument("--seed", type=int, default=None,
                       help="override the config seed")
        p.add_argument("--out", default=None, help="override the output directory")
        p.add_argument("--threads", type=int, default=None)
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg["seed"] = args.seed
        out_dir = args.out if args.out is not None else cfg["output_dir"]
        if args.command == "validate-config":
            print(dump_config(cfg))
            return 0
        if args.command == "forward":
            cmd_forward(cfg, out_dir, args.threads)
        elif args.command == "invert":
            cmd_invert(cfg, out_dir, args.threads)
        elif args.command == "sample":
            cmd_sample(cfg, out_dir, args.threads)
        elif args.command == "compare":
            cmd_compare(cfg, out_dir, args.threads)
        return 0
    except (ConfigurationError, json.JSONDecodeError) as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return 2
    except _NUMERIC_ERRORS as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return 3
    except (OSError, IOError) as e:
        print(f"i/o error: {e}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
