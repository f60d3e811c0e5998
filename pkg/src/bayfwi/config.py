"""Experiment configuration: JSON schema, strict validation, construction.

Unknown keys are rejected everywhere so that typos fail loudly, and the
normalized form round-trips exactly through JSON.
"""

import copy
import json

import jsonschema

from .errors import ConfigurationError
from .grids import Grid2D
from .priors import (GaussianPriorModel, HyperPrior, MaternPrior, MaternSpec,
                     MixedLevelSetPriorModel)
from .scenes import (Scene, continuous_scene, line_geometry, salt_scene,
                     smoothed_truth_mean)
from .signal import NormalizerSpec
from .wave import SolverOptions

_NORMALIZER_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "kind": {"enum": ["square_plus_delta", "exponential", "softplus"]},
        "delta": {"oneOf": [{"type": "number", "exclusiveMinimum": 0}, {"const": "auto"}]},
        "scale": {"type": "number", "exclusiveMinimum": 0},
    },
}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["seed", "grid", "scene", "geometry", "potentials"],
    "properties": {
        "seed": {"type": "integer"},
        "output_dir": {"type": "string"},
        "grid": {
            "type": "object",
            "additionalProperties": False,
            "required": ["nx", "nz", "dx", "dz"],
            "properties": {
                "nx": {"type": "integer", "minimum": 8},
                "nz": {"type": "integer", "minimum": 8},
                "dx": {"type": "number", "exclusiveMinimum": 0},
                "dz": {"type": "number", "exclusiveMinimum": 0},
                "origin": {"type": "array", "items": {"type": "number"},
                           "minItems": 2, "maxItems": 2},
                "water_depth": {"type": "number", "minimum": 0},
            },
        },
        "scene": {
            "type": "object",
            "additionalProperties": False,
            "required": ["kind"],
            "properties": {
                "kind": {"enum": ["continuous", "salt", "file"]},
                "v_min": {"type": "number", "exclusiveMinimum": 0},
                "v_max": {"type": "number", "exclusiveMinimum": 0},
                "water_velocity": {"type": "number", "exclusiveMinimum": 0},
                "salt_velocity": {"type": "number", "exclusiveMinimum": 0},
                "file": {"type": "string"},
            },
        },
        "geometry": {
            "type": "object",
            "additionalProperties": False,
            "required": ["n_sources", "n_receivers", "t_max", "dt"],
            "properties": {
                "n_sources": {"type": "integer", "minimum": 1},
                "n_receivers": {"type": "integer", "minimum": 1},
                "source_depth": {"type": ["number", "null"]},
                "receiver_depth": {"type": ["number", "null"]},
                "t_max": {"type": "number", "exclusiveMinimum": 0},
                "dt": {"type": "number", "exclusiveMinimum": 0},
                "peak_frequency": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "solver": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "sponge_width": {"type": "integer", "minimum": 0},
                "top_boundary": {"enum": ["absorbing", "free"]},
                "gamma_scale": {"type": "number", "minimum": 0},
                "history_stride": {"type": "integer", "minimum": 1},
                "threads": {"type": "integer", "minimum": 1},
            },
        },
        "prior": {
            "type": "object",
            "additionalProperties": False,
            "required": ["kind"],
            "properties": {
                "kind": {"enum": ["matern", "mixed_level_set"]},
                "sigma": {"type": "number", "minimum": 0},
                "nu": {"type": "number", "exclusiveMinimum": 0},
                "ell": {"type": "number", "exclusiveMinimum": 0},
                "ell_units": {"enum": ["km", "domain"]},
                "mean": {"oneOf": [{"type": "number"},
                                   {"enum": ["smoothed_truth", "zero"]}]},
                "mean_smoothing_km": {"type": "number", "exclusiveMinimum": 0},
                "underlying": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "sigma": {"type": "number", "minimum": 0},
                        "nu": {"type": "number", "exclusiveMinimum": 0},
                        "ell": {"type": "number", "exclusiveMinimum": 0},
                        "ell_units": {"enum": ["km", "domain"]},
                    },
                },
                "interior_value_prior": {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["mean", "sd"],
                    "properties": {
                        "mean": {"type": "number"},
                        "sd": {"type": "number", "exclusiveMinimum": 0},
                    },
                },
                "smoothing_width": {"type": "number", "minimum": 0},
            },
        },
        "potentials": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["kind"],
                "properties": {
                    "kind": {"enum": ["L2", "Hm1", "M", "W2"]},
                    "beta": {"type": "number", "exclusiveMinimum": 0},
                    "normalizer": _NORMALIZER_SCHEMA,
                    "m_denominator": {"enum": ["data", "model"]},
                },
            },
        },
        "noise": {
            "oneOf": [
                {"type": "null"},
                {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "snr_db": {"type": "number"},
                        "amplitude": {"type": "number", "minimum": 0},
                        "seeds": {"type": "array", "items": {"type": "integer"},
                                  "minItems": 1},
                    },
                },
            ]
        },
        "inference": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "map": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "tol_rel": {"type": "number", "exclusiveMinimum": 0},
                        "max_iter": {"type": "integer", "minimum": 1},
                    },
                },
                "laplace": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "rank": {"type": "integer", "minimum": 1},
                        "rel_cutoff": {"type": "number", "minimum": 0},
                    },
                },
                "pcn": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "n_steps": {"type": "integer", "minimum": 0},
                        "burn_in": {"type": "integer", "minimum": 0},
                        "step_size": {"type": "number", "exclusiveMinimum": 0,
                                      "maximum": 1},
                        "thin": {"type": "integer", "minimum": 1},
                        "adapt": {"type": "boolean"},
                        "potential": {"enum": ["L2", "Hm1", "M", "W2"]},
                        "init": {"enum": ["zero", "truth"]},
                    },
                },
            },
        },
        "annotations": {"type": "object"},
    },
}

_DEFAULTS = {
    "grid": {"origin": [0.0, 0.0], "water_depth": 0.0},
    "scene": {"v_min": 1.4, "v_max": 4.2, "water_velocity": 1.5},
    "geometry": {"source_depth": None, "receiver_depth": None, "peak_frequency": 4.5},
    "solver": {"sponge_width": 20, "top_boundary": "absorbing", "gamma_scale": 8.0,
               "history_stride": 1, "threads": 1},
    "prior": {"sigma": 0.7, "nu": 3.0, "ell": 0.05, "ell_units": "domain",
              "mean": "smoothed_truth", "mean_smoothing_km": 0.3,
              "smoothing_width": 1.0},
    "inference": {
        "map": {"tol_rel": 1e-6, "max_iter": 150},
        "laplace": {"rank": 40, "rel_cutoff": 1e-2},
        "pcn": {"n_steps": 2000, "burn_in": 500, "step_size": 0.1, "thin": 10,
                "adapt": True, "potential": "W2", "init": "zero"},
    },
}


def validate_config(raw: dict) -> dict:
    """Schema-check and fill defaults; returns a normalized deep copy."""
    try:
        jsonschema.validate(raw, SCHEMA)
    except jsonschema.ValidationError as e:
        path = "/".join(str(p) for p in e.absolute_path) or "<root>"
        raise ConfigurationError(f"config field {path!r}: {e.message}") from e
    cfg = copy.deepcopy(raw)
    for section, defaults in _DEFAULTS.items():
        block = cfg.setdefault(section, {})
        if isinstance(defaults, dict):
            for key, val in defaults.items():
                if isinstance(val, dict):
                    sub = block.setdefault(key, {})
                    for k2, v2 in val.items():
                        sub.setdefault(k2, v2)
                else:
                    block.setdefault(key, val)
    cfg.setdefault("noise", None)
    cfg.setdefault("output_dir", "runs/experiment")
    for pot in cfg["potentials"]:
        pot.setdefault("beta", 1.0)
        pot.setdefault("m_denominator", "data")
        if pot["kind"] in ("M", "W2"):
            pot.setdefault("normalizer", {"kind": "square_plus_delta", "delta": "auto"})
            pot["normalizer"].setdefault("kind", "square_plus_delta")
            if pot["normalizer"]["kind"] == "square_plus_delta":
                pot["normalizer"].setdefault("delta", "auto")
            else:
                pot["normalizer"].setdefault("scale", 1.0)
    return cfg


def load_config(path: str) -> dict:
    with open(path) as f:
        raw = json.load(f)
    return validate_config(raw)


def dump_config(cfg: dict) -> str:
    return json.dumps(cfg, sort_keys=True, indent=2)


def build_grid(cfg: dict) -> Grid2D:
    g = cfg["grid"]
    return Grid2D(g["nx"], g["nz"], g["dx"], g["dz"], tuple(g["origin"]),
                  g["water_depth"])


def build_scene(cfg: dict) -> Scene:
    grid = build_grid(cfg)
    sc = cfg["scene"]
    if sc["kind"] == "continuous":
        return continuous_scene(grid, sc["v_min"], sc["v_max"], sc["water_velocity"])
    if sc["kind"] == "salt":
        return salt_scene(grid, sc["v_min"], sc["v_max"], sc["water_velocity"],
                          sc.get("salt_velocity", 4.79))
    from .io import read_array
    from .grids import VelocityModel
    from .scenes import Scene as SceneCls

    u, _ = read_array(sc["file"])
    truth = VelocityModel(grid, u, sc["v_min"], sc["v_max"], sc["water_velocity"])
    return SceneCls(grid, truth, sc["v_min"], sc["v_max"], sc["water_velocity"])


def build_geometry(cfg: dict, grid: Grid2D):
    g = cfg["geometry"]
    wd = cfg["grid"]["water_depth"]
    src_z = g["source_depth"]
    rec_z = g["receiver_depth"]
    if src_z is None:
        src_z = wd + 2 * grid.dz if wd > 0 else 2 * grid.dz
    if rec_z is None:
        rec_z = wd + grid.dz if wd > 0 else grid.dz
    return line_geometry(grid, g["n_sources"], g["n_receivers"], src_z, rec_z,
                         g["t_max"], g["dt"], g["peak_frequency"])


def build_solver_options(cfg: dict, threads: int = None) -> SolverOptions:
    s = cfg["solver"]
    return SolverOptions(
        sponge_width=s["sponge_width"], top_boundary=s["top_boundary"],
        gamma_scale=s["gamma_scale"], history_stride=s["history_stride"],
        threads=threads if threads is not None else s["threads"])


def _ell_km(block: dict, grid: Grid2D) -> float:
    ell = block["ell"]
    if block.get("ell_units", "domain") == "domain":
        ell = ell * grid.nx * grid.dx
    return ell


def build_prior_model(cfg: dict, scene: Scene):
    """Construct the latent prior from config (Gaussian or mixed level-set)."""
    grid = scene.grid
    p = cfg["prior"]
    if p["kind"] == "matern":
        mean = p["mean"]
        if mean == "smoothed_truth":
            mean = smoothed_truth_mean(scene, p["mean_smoothing_km"])
        elif mean == "zero":
            mean = 0.0
        spec = MaternSpec(sigma=p["sigma"], nu=p["nu"], ell=_ell_km(p, grid), mean=mean)
        return GaussianPriorModel(MaternPrior(spec, grid))
    under = dict(p.get("underlying") or {})
    under.setdefault("sigma", 10.0)
    under.setdefault("nu", 2.0)
    under.setdefault("ell", 0.25)
    under.setdefault("ell_units", "domain")
    vspec = MaternSpec(sigma=under["sigma"], nu=under["nu"], ell=_ell_km(under, grid))
    hp = p.get("interior_value_prior") or {"mean": 3.0, "sd": 4.0}
    if scene.background_latent is None:
        raise ConfigurationError("mixed level-set prior needs a salt scene background")
    return MixedLevelSetPriorModel(
        MaternPrior(vspec, grid), HyperPrior(hp["mean"], hp["sd"]),
        scene.background_latent, p["smoothing_width"])


def build_normalizer(pot_cfg: dict, y) -> NormalizerSpec:
    from .potentials import resolve_normalizer

    n = pot_cfg.get("normalizer")
    if n is None:
        return None
    kind = n.get("kind", "square_plus_delta")
    if kind == "square_plus_delta":
        delta = n.get("delta", "auto")
        if delta == "auto":
            return resolve_normalizer(NormalizerSpec(kind="square_plus_delta"), y)
        return NormalizerSpec(kind=kind, delta=delta)
    return NormalizerSpec(kind=kind, scale=n.get("scale", 1.0))
