"""Command-line entry point: ``sganinv <command> CONFIG [--set section.key=value ...]``.

Every command reads one sectioned ``key = value`` config file.  Unknown
sections or keys are rejected before any work starts, and all randomness
derives from ``[run] seed``.  Exit status is 0 on success, 2 for
configuration or input errors and 3 for failures during the run.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .convnet import load_checkpoint, output_size
from .flow import (
    FlowModel,
    boundary_fluxes,
    k_field_from_facies,
    observe,
    regular_lattice,
    solve_heads,
)
from .gan_train import TrainConfig, train
from .io import FormatError, read_grid, write_array, write_csv, write_grid, write_pgm
from .mcmc import InversionConfig, LatentFlowModel, conditioning_accuracy, run_inversion
from .metrics import (
    DIRECTIONS,
    connectivity_function,
    default_max_lag,
    ensemble_band,
    facies_fractions,
    two_point_probability,
)
from .simulate import PostprocessSpec, generate, sample_latent
from .training_images import channel_ti

log = logging.getLogger("sganinv")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


class ConfigError(ValueError):
    pass


# --- value parsers ---------------------------------------------------------------

def _none(s):
    return s.strip().lower() in ("", "none")


def _optional(conv):
    return lambda s: None if _none(s) else conv(s)


def _ints(s):
    return tuple(int(v) for v in s.replace(",", " ").split())


def _floats(s):
    return tuple(float(v) for v in s.replace(",", " ").split())


def _words(s):
    return tuple(v for v in s.replace(",", " ").split())


def _bool(s):
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _k_map(s):
    out = {}
    for item in s.replace(",", " ").split():
        code, value = item.split(":")
        out[int(code)] = float(value)
    if not out:
        raise ValueError("empty facies-to-conductivity map")
    return out


def _thresholds(s):
    return None if _none(s) else _floats(s)


REQUIRED = object()

SCHEMA = {
    "run": {
        "seed": (int, 0),
        "out_dir": (Path, Path("out")),
    },
    "train": {
        "ti": (Path, REQUIRED),
        "epochs": (int, 50),
        "minibatches_per_epoch": (int, 100),
        "batch_size": (int, 25),
        "patch_zx": (int, 7),
        "q": (int, 1),
        "learning_rate": (float, 2e-4),
        "adam_beta1": (float, 0.5),
        "adam_beta2": (float, 0.999),
        "adam_eps": (float, 1e-8),
        "reg_alpha": (float, 1e-5),
        "disc_input_noise_std": (float, 0.1),
        "kernel_size": (int, 5),
        "g_ladder": (_ints, (64, 32, 1)),
        "d_ladder": (_optional(_ints), None),
    },
    "generate": {
        "checkpoint": (Path, REQUIRED),
        "z_x": (int, 20),
        "z_y": (_optional(int), None),
        "z_z": (_optional(int), None),
        "q": (_optional(int), None),
        "count": (int, 1),
        "median_kernel": (_optional(int), None),
        "thresholds": (_thresholds, (0.5,)),
        "crop": (_optional(_ints), None),
        "rank_values": (_optional(Path), None),
        "pgm": (_bool, False),
    },
    "metrics": {
        "input_dir": (Path, REQUIRED),
        "ti": (_optional(Path), None),
        "facies": (_optional(_ints), None),
        "directions": (_optional(_words), None),
        "max_lag": (_optional(int), None),
    },
    "flow": {
        "grid": (_optional(Path), None),
        "k_map": (_k_map, {0: 1e-4, 1: 1e-2}),
        "dx": (float, 1.0),
        "dy": (float, 1.0),
        "thickness": (float, 1.0),
        "gradient": (float, 0.01),
        "h_right": (float, 0.0),
        "wells": (str, "center -1e-3"),
        "observations": (str, "lattice 7"),
    },
    "invert": {
        "checkpoint": (Path, REQUIRED),
        "data": (Path, REQUIRED),
        "z_x": (int, 5),
        "z_y": (_optional(int), None),
        "n_chains": (int, 8),
        "n_iterations": (int, 1000),
        "sigma_e": (float, 0.01),
        "sigma_x": (float, 0.5),
        "conditioning": (str, "none"),
        "conditioning_grid": (_optional(Path), None),
        "T0": (float, 10.0),
        "tau": (_optional(float), None),
        "burn_in": (_optional(int), None),
        "archive_thin": (int, 10),
        "snooker_prob": (float, 0.1),
        "jitter": (float, 1e-6),
        "rhat_every": (_optional(int), None),
        "sample_every": (_optional(int), None),
        "workers": (_optional(int), None),
        "median_kernel": (_optional(int), None),
        "thresholds": (_thresholds, (0.5,)),
        "crop": (_optional(_ints), None),
    },
}


def load_config(path, overrides=()) -> dict:
    """Typed values for every section in the schema (defaults filled in)."""
    cp = configparser.ConfigParser(interpolation=None, delimiters=("=",))
    cp.optionxform = str
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        cp.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from None
    for item in overrides:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"override must look like section.key=value: {item!r}")
        key, value = item.split("=", 1)
        section, name = key.strip().split(".", 1)
        if not cp.has_section(section):
            cp.add_section(section)
        cp[section][name] = value.strip()
    unknown = [s for s in cp.sections() if s not in SCHEMA]
    if unknown:
        raise ConfigError(f"unknown section(s): {', '.join(unknown)}")
    base = path.parent
    out = {}
    for section, schema in SCHEMA.items():
        given = dict(cp[section]) if cp.has_section(section) else {}
        bad = sorted(set(given) - set(schema))
        if bad:
            raise ConfigError(f"unknown key(s) in [{section}]: {', '.join(bad)}")
        values = {}
        for key, (conv, default) in schema.items():
            if key in given:
                try:
                    v = conv(given[key])
                except (ValueError, TypeError) as exc:
                    raise ConfigError(f"[{section}] {key} = {given[key]!r}: {exc}") from None
            else:
                v = default
            if isinstance(v, Path) and not v.is_absolute():
                v = base / v
            values[key] = v
        out[section] = values
    out["_base"] = base
    return out


def _need(cfg, section):
    values = cfg[section]
    missing = [k for k, (_, d) in SCHEMA[section].items() if d is REQUIRED and values[k] is REQUIRED]
    if missing:
        raise ConfigError(f"[{section}] missing required key(s): {', '.join(missing)}")
    return values


def _existing(path, what):
    if path is None or not Path(path).is_file():
        raise ConfigError(f"{what} not found: {path}")
    return Path(path)


def _load_checkpoint(path):
    try:
        return load_checkpoint(_existing(path, "checkpoint"))
    except (FormatError, ValueError, OSError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"cannot load checkpoint {path}: {exc}") from None


def _read_grid(path, what):
    try:
        return read_grid(_existing(path, what))
    except ConfigError:
        raise
    except (FormatError, OSError) as exc:
        raise ConfigError(f"cannot read {what} {path}: {exc}") from None


def _write_manifest(path, items) -> None:
    with open(path, "w") as fh:
        fh.write(f"sganinv {__version__}\n")
        for key, value in items:
            fh.write(f"{key} = {value}\n")


def _postprocess(section, ndim, rank_values=None):
    k = section["median_kernel"]
    return PostprocessSpec(
        median_kernel=(k,) * ndim if k else None,
        thresholds=section["thresholds"],
        crop=section["crop"],
        rank_values=rank_values,
    )


# --- commands ----------------------------------------------------------------------

def cmd_make_ti(cfg, args):
    out = cfg["run"]["out_dir"]
    out.mkdir(parents=True, exist_ok=True)
    ti = channel_ti(tuple(args.shape), channel_fraction=args.fraction,
                    levee_width=args.levee_width, seed=cfg["run"]["seed"])
    n_facies = 3 if args.levee_width > 0 else 2
    write_grid(out / "ti.grid", ti, n_facies)
    write_pgm(out / "ti.pgm", ti, 0, n_facies - 1)
    log.info("training image fractions: %s", facies_fractions(ti, n_facies))


def cmd_train(cfg, args):
    sec = _need(cfg, "train")
    ti, n_facies = _read_grid(sec["ti"], "training image")
    if n_facies is None:
        raise ConfigError("training image must be categorical")
    out = cfg["run"]["out_dir"]
    try:
        tc = TrainConfig(
            epochs=sec["epochs"], minibatches_per_epoch=sec["minibatches_per_epoch"],
            batch_size=sec["batch_size"], patch_zx=sec["patch_zx"], q=sec["q"],
            learning_rate=sec["learning_rate"], adam_beta1=sec["adam_beta1"],
            adam_beta2=sec["adam_beta2"], adam_eps=sec["adam_eps"], reg_alpha=sec["reg_alpha"],
            disc_input_noise_std=sec["disc_input_noise_std"], kernel_size=sec["kernel_size"],
            seed=cfg["run"]["seed"], checkpoint_dir=str(out / "checkpoints"),
        )
        extent = output_size(tc.patch_zx, len(sec["g_ladder"]))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if extent > min(ti.shape):
        raise ConfigError(f"training patch extent {extent} exceeds the training image {ti.shape}")
    out.mkdir(parents=True, exist_ok=True)
    res = train(ti, tc, sec["g_ladder"], sec["d_ladder"], n_facies=n_facies,
                loss_csv=out / "loss.csv")
    items = [("command", "train"), ("seed", tc.seed), ("ti", sec["ti"]),
             ("n_facies", n_facies), ("patch_extent", extent), ("loss_csv", "loss.csv")]
    items += [(f"checkpoint_epoch_{e}", Path(p).relative_to(out)) for e, p in res.checkpoints]
    _write_manifest(out / "manifest.txt", items)


def cmd_generate(cfg, args):
    sec = _need(cfg, "generate")
    G, meta = _load_checkpoint(sec["checkpoint"])
    if sec["q"] is not None and sec["q"] != G.in_channels:
        raise ConfigError(f"q={sec['q']} but the checkpoint expects {G.in_channels} latent channels")
    if sec["count"] < 0:
        raise ConfigError("count must be >= 0")
    ndim = G.ndim
    extents = [sec["z_z"], sec["z_y"], sec["z_x"]][3 - ndim:]
    extents = tuple(sec["z_x"] if e is None else e for e in extents)
    rank_values = None
    if sec["rank_values"] is not None:
        vals, _ = _read_grid(sec["rank_values"], "rank-transform reference")
        rank_values = tuple(np.asarray(vals, dtype=float).ravel())
    try:
        post = _postprocess(sec, ndim, rank_values)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    out_shape = tuple(output_size(e, G.dp) for e in extents)
    if post.crop is not None and (len(post.crop) != ndim or any(c > n for c, n in zip(post.crop, out_shape))):
        raise ConfigError(f"crop {post.crop} does not fit the {out_shape} output")
    out = cfg["run"]["out_dir"]
    out.mkdir(parents=True, exist_ok=True)
    seed = cfg["run"]["seed"]
    for i in range(sec["count"]):
        z = sample_latent((G.in_channels,) + extents, seed + i)
        grid = generate(G, z, post)
        name = f"real_{i:04d}"
        write_grid(out / f"{name}.grid", grid, post.n_facies)
        if sec["pgm"] and grid.ndim == 2:
            hi = (post.n_facies - 1) if post.n_facies else None
            write_pgm(out / f"{name}.pgm", grid, 0 if hi else None, hi)
    _write_manifest(out / "manifest.txt", [
        ("command", "generate"), ("checkpoint", sec["checkpoint"]), ("epoch", meta.get("epoch")),
        ("latent_extents", " ".join(map(str, extents))), ("count", sec["count"]),
        ("first_seed", seed), ("output_extents", " ".join(map(str, post.crop or out_shape))),
    ])


def _curve_rows(values):
    return [(h, float(v)) for h, v in enumerate(values)]


def cmd_metrics(cfg, args):
    sec = _need(cfg, "metrics")
    in_dir = sec["input_dir"]
    if not in_dir.is_dir():
        raise ConfigError(f"input directory not found: {in_dir}")
    files = sorted(in_dir.glob("*.grid"))
    if not files:
        raise ConfigError(f"no .grid files in {in_dir}")
    grids = []
    n_facies = 0
    for f in files:
        g, nf = _read_grid(f, "realization")
        if nf is None:
            raise ConfigError(f"{f} is continuous; metrics need facies grids")
        grids.append(g)
        n_facies = max(n_facies, nf)
    shapes = {g.shape for g in grids}
    if len(shapes) != 1:
        raise ConfigError(f"mixed grid shapes: {sorted(shapes)}")
    shape = grids[0].shape
    ti = None
    if sec["ti"] is not None:
        ti, nf = _read_grid(sec["ti"], "training image")
        if ti.ndim != len(shape):
            raise ConfigError("training image and realizations differ in dimensionality")
        n_facies = max(n_facies, nf or 0)
    directions = sec["directions"] or tuple(DIRECTIONS[len(shape)])
    for d in directions:
        if d not in DIRECTIONS[len(shape)]:
            raise ConfigError(f"direction {d!r} not available in {len(shape)}D")
    facies = sec["facies"] or tuple(range(n_facies))
    max_lag = {}
    for d in directions:
        max_lag[d] = sec["max_lag"] if sec["max_lag"] is not None else default_max_lag(shape, d)
        for g_shape, what in [(shape, "realizations")] + ([(ti.shape, "training image")] if ti is not None else []):
            off = DIRECTIONS[len(g_shape)][d]
            if max_lag[d] > min(n for n, o in zip(g_shape, off) if o) - 1:
                raise ConfigError(f"max_lag {max_lag[d]} too large along {d} for the {what} {g_shape}")

    out = cfg["run"]["out_dir"]
    curves_dir = out / "curves"
    curves_dir.mkdir(parents=True, exist_ok=True)
    write_csv(out / "fractions.csv", ["file"] + [f"facies_{f}" for f in range(n_facies)],
              [[f.name] + list(facies_fractions(g, n_facies)) for f, g in zip(files, grids)]
              + ([["training_image"] + list(facies_fractions(ti, n_facies))] if ti is not None else []))
    funcs = {"pf": two_point_probability, "cf": connectivity_function}
    for stat, fn in funcs.items():
        summary = []
        for d in directions:
            for f in facies:
                curves = [fn(g, f, d, max_lag[d]) for g in grids]
                for path, c in zip(files, curves):
                    write_csv(curves_dir / f"{path.stem}_{stat}_f{f}_{d}.csv", ["lag", "value"],
                              _curve_rows(c.values))
                mean, lo, hi = ensemble_band(curves)
                ref = None
                if ti is not None:
                    ref = fn(ti, f, d, max_lag[d]).values
                    write_csv(out / f"ti_{stat}_f{f}_{d}.csv", ["lag", "value"], _curve_rows(ref))
                write_csv(out / f"ensemble_{stat}_f{f}_{d}.csv", ["lag", "mean", "min", "max"],
                          [(h, float(mean[h]), float(lo[h]), float(hi[h])) for h in range(len(mean))])
                for h in range(len(mean)):
                    row = [d, f, h, float(mean[h]), float(lo[h]), float(hi[h])]
                    if ti is not None:
                        row.append(float(ref[h]))
                    summary.append(row)
        header = ["direction", "facies", "lag", "mean", "min", "max"] + (["ti"] if ti is not None else [])
        write_csv(out / f"summary_{stat}.csv", header, summary)
    _write_manifest(out / "manifest.txt", [
        ("command", "metrics"), ("realizations", len(grids)), ("shape", " ".join(map(str, shape))),
        ("directions", " ".join(directions)), ("facies", " ".join(map(str, facies))),
    ])


def _flow_model(sec, k):
    nr, nc = k.shape
    wells = []
    spec = sec["wells"].strip()
    if not _none(spec):
        for item in spec.split(";"):
            parts = item.split()
            try:
                if parts[0] == "center":
                    wells.append((nr // 2, nc // 2, float(parts[1])))
                else:
                    wells.append((int(parts[0]), int(parts[1]), float(parts[2])))
            except (IndexError, ValueError):
                raise ConfigError(f"[flow] wells: cannot parse {item!r}") from None
    obs_spec = sec["observations"].strip()
    try:
        parts = obs_spec.split()
        if parts and parts[0] == "lattice":
            count = int(parts[1]) if len(parts) > 1 else 7
            obs = regular_lattice(min(nr, nc), count)
        else:
            obs = [tuple(int(v) for v in item.split()) for item in obs_spec.split(";") if item.strip()]
            if any(len(p) != 2 for p in obs):
                raise ValueError("each observation needs a row and a column")
        return FlowModel(k, dx=sec["dx"], dy=sec["dy"], thickness=sec["thickness"],
                         gradient=sec["gradient"], h_right=sec["h_right"], wells=wells,
                         observations=obs)
    except (ValueError, IndexError) as exc:
        raise ConfigError(f"[flow] invalid model definition: {exc}") from None


def _k_field(grid, mapping):
    try:
        return k_field_from_facies(grid, mapping)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _obs_rows(model, values):
    return [(r, c, float(v)) for (r, c), v in zip(model.observations, values)]


def cmd_flow(cfg, args):
    sec = cfg["flow"]
    if sec["grid"] is None:
        raise ConfigError("[flow] grid is required for the flow command")
    grid, n_facies = _read_grid(sec["grid"], "facies grid")
    if grid.ndim != 2:
        raise ConfigError("the flow solver is 2D")
    k = grid if n_facies is None else _k_field(grid, sec["k_map"])
    model = _flow_model(sec, k)
    out = cfg["run"]["out_dir"]
    out.mkdir(parents=True, exist_ok=True)
    heads = solve_heads(model)
    nr, nc = heads.shape
    write_csv(out / "heads.csv", ["row", "col", "head"],
              [(r, c, float(heads[r, c])) for r in range(nr) for c in range(nc)])
    write_csv(out / "observations.csv", ["row", "col", "head"], _obs_rows(model, observe(heads, model)))
    q_l, q_r = boundary_fluxes(model, heads)
    _write_manifest(out / "manifest.txt", [
        ("command", "flow"), ("grid", sec["grid"]), ("shape", f"{nr} {nc}"),
        ("inflow_left", repr(q_l)), ("inflow_right", repr(q_r)),
        ("well_rate_total", repr(sum(w[2] for w in model.wells))),
    ])


def _read_observations(path, model):
    try:
        with open(_existing(path, "data file"), newline="") as fh:
            rows = list(csv.DictReader(fh))
        cells = [(int(r["row"]), int(r["col"])) for r in rows]
        values = np.array([float(r["head"]) for r in rows])
    except ConfigError:
        raise
    except (KeyError, ValueError, OSError) as exc:
        raise ConfigError(f"cannot read data file {path}: {exc}") from None
    if cells != [tuple(p) for p in model.observations]:
        raise ConfigError("data file cells do not match the configured observation points")
    return values


def cmd_invert(cfg, args):
    sec = _need(cfg, "invert")
    G, meta = _load_checkpoint(sec["checkpoint"])
    if G.ndim != 2:
        raise ConfigError("inversion needs a 2D generator")
    z_shape = (G.in_channels, sec["z_y"] or sec["z_x"], sec["z_x"])
    try:
        post = _postprocess(sec, 2)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if post.n_facies is None:
        raise ConfigError("inversion needs categorical realizations (set thresholds)")
    full = tuple(output_size(e, G.dp) for e in z_shape[1:])
    shape = post.crop or full
    if len(shape) != 2 or any(c > n for c, n in zip(shape, full)):
        raise ConfigError(f"crop {post.crop} does not fit the {full} realization")
    fsec = cfg["flow"]
    missing = [f for f in range(post.n_facies) if f not in fsec["k_map"]]
    if missing:
        raise ConfigError(f"[flow] k_map lacks facies {missing}")
    model = _flow_model(fsec, np.ones(shape))
    seed = cfg["run"]["seed"]
    out = cfg["run"]["out_dir"]
    forward = LatentFlowModel(G, model, z_shape, post, fsec["k_map"])

    truth_grid = None
    if args.make_truth:
        rng = np.random.default_rng([seed, 1])
        theta = rng.uniform(-1.0, 1.0, forward.dim)
        clean, truth_grid = forward(theta)
        noisy = clean + rng.normal(0.0, sec["sigma_e"], clean.size)
        out.mkdir(parents=True, exist_ok=True)
        Path(sec["data"]).parent.mkdir(parents=True, exist_ok=True)
        write_csv(sec["data"], ["row", "col", "head"], _obs_rows(model, noisy))
        write_grid(out / "truth.grid", truth_grid, post.n_facies)
        write_csv(out / "truth_latent.csv", ["index", "value"], list(enumerate(theta.tolist())))
    observed = _read_observations(sec["data"], model)

    points = []
    mode = sec["conditioning"].strip()
    if mode == "observations":
        if sec["conditioning_grid"] is not None:
            cgrid, _ = _read_grid(sec["conditioning_grid"], "conditioning grid")
        elif truth_grid is not None:
            cgrid = truth_grid
        else:
            raise ConfigError("conditioning = observations needs conditioning_grid or --make-truth")
        if cgrid.shape != shape:
            raise ConfigError(f"conditioning grid {cgrid.shape} does not match realizations {shape}")
        points = [((r, c), int(cgrid[r, c])) for r, c in model.observations]
    elif not _none(mode):
        try:
            rows = np.loadtxt(_existing(cfg["_base"] / mode, "conditioning file"), ndmin=2)
        except ValueError as exc:
            raise ConfigError(f"cannot read conditioning file {mode}: {exc}") from None
        points = [((int(r), int(c)), int(v)) for r, c, v in rows]
        for (r, c), _ in points:
            if not (0 <= r < shape[0] and 0 <= c < shape[1]):
                raise ConfigError(f"conditioning point ({r}, {c}) outside the {shape} grid")

    try:
        icfg = InversionConfig(
            n_chains=sec["n_chains"], n_iterations=sec["n_iterations"], sigma_e=sec["sigma_e"],
            sigma_x=sec["sigma_x"], conditioning=points, T0=sec["T0"], tau=sec["tau"],
            burn_in=sec["burn_in"], archive_thin=sec["archive_thin"],
            snooker_prob=sec["snooker_prob"], jitter=sec["jitter"], rhat_every=sec["rhat_every"],
            sample_every=sec["sample_every"], workers=sec["workers"] or sec["n_chains"], seed=seed,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None

    out.mkdir(parents=True, exist_ok=True)
    ens = run_inversion(icfg, forward, observed)
    _write_inversion(out, ens, icfg, points, forward)
    items = [("command", "invert"), ("seed", seed), ("checkpoint", sec["checkpoint"]),
             ("latent_dim", forward.dim), ("realization_shape", f"{shape[0]} {shape[1]}"),
             ("n_chains", icfg.n_chains), ("n_iterations", icfg.n_iterations),
             ("burn_in", icfg.burn_in_length), ("conditioning_points", len(points)),
             ("best_rmse", repr(ens.best_rmse())),
             ("acceptance_rate", " ".join(repr(float(a)) for a in ens.acceptance_rate)),
             ("forward_failures", len(ens.events))]
    _write_manifest(out / "manifest.txt", items)


def _write_inversion(out, ens, icfg, points, forward):
    T = ens.states_trace.shape[0] - 1
    for i in range(ens.n_chains):
        header = ["iteration", "loglik", "rmse", "accepted"]
        cols = [range(T + 1), ens.loglik_trace[:, i], ens.rmse_trace[:, i], ens.accept_trace[:, i].astype(int)]
        if ens.cond_accuracy_trace is not None:
            header.append("conditioning_accuracy")
            cols.append(ens.cond_accuracy_trace[:, i])
        write_csv(out / f"chain_{i:02d}.csv", header,
                  [[int(row[0]), float(row[1]), float(row[2]), int(row[3])] + [float(v) for v in row[4:]]
                   for row in zip(*cols)])
    dim = ens.states.shape[1]
    write_csv(out / "rhat.csv", ["iteration"] + [f"rhat_{j}" for j in range(dim)],
              [[t] + [float(v) for v in r] for t, r in ens.rhat_history])
    write_array(out / "archive.bin", ens.archive)
    write_array(out / "final_states.bin", ens.states)
    n_facies = forward.post.n_facies
    final_dir = out / "final"
    final_dir.mkdir(exist_ok=True)
    for i, g in enumerate(ens.grids):
        if g is not None:
            write_grid(final_dir / f"chain_{i:02d}.grid", g, n_facies)
    post_dir = out / "posterior"
    post_dir.mkdir(exist_ok=True)
    for t, i, g in ens.samples:
        write_grid(post_dir / f"sample_t{t:06d}_c{i:02d}.grid", g, n_facies)
    if points:
        acc = [conditioning_accuracy(g, points) for _, _, g in ens.samples]
        final = [conditioning_accuracy(g, points) for g in ens.grids if g is not None]
        lines = [
            f"conditioning_points = {len(points)}",
            f"posterior_samples = {len(acc)}",
            f"samples_honouring_all = {repr(float(np.mean([a == 1.0 for a in acc]))) if acc else 'nan'}",
            f"mean_sample_accuracy = {repr(float(np.mean(acc))) if acc else 'nan'}",
            f"final_state_accuracy_min = {repr(float(min(final))) if final else 'nan'}",
            f"final_state_accuracy_mean = {repr(float(np.mean(final))) if final else 'nan'}",
        ]
        (out / "conditioning_report.txt").write_text("\n".join(lines) + "\n")


COMMANDS = {
    "train": cmd_train,
    "generate": cmd_generate,
    "metrics": cmd_metrics,
    "flow": cmd_flow,
    "invert": cmd_invert,
    "make-ti": cmd_make_ti,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sganinv", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"sganinv {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("config", type=Path)
        sp.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override one config value (repeatable)")
        if name == "invert":
            sp.add_argument("--make-truth", action="store_true",
                            help="draw a synthetic truth, write noisy data to [invert] data, then invert")
        if name == "make-ti":
            sp.add_argument("--shape", type=int, nargs=2, default=(200, 200))
            sp.add_argument("--fraction", type=float, default=0.26)
            sp.add_argument("--levee-width", type=float, default=0.0)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, args.set)
        COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"sganinv: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - reported, not swallowed
        log.debug("run failed", exc_info=True)
        print(f"sganinv: run failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
