"""Experiment grid: config parsing, per-cell solves and result tables.

A config is an INI file::

    [experiment]
    name = minimal
    samples = 2            # ground truths per (task, sigma_y)
    master_seed = 0
    shape = 32x32
    out = results/minimal
    dump_images = true

    [prior]
    kind = toy             # toy | gmm | empirical
    # toy: any make_image_prior keyword (n_components, rank, seed, ...)
    # gmm: path = prior.gmm
    # empirical: path = data.txt (tensor, one row per point), bandwidth = 0.1

    [task.sr]
    operator = sr          # a desk task name or an operator spec
    sigma_y = 0.0, 0.05
    preset = sr            # desk preset; defaults to the task kind

    [method.v1]
    kind = dcdp-v1         # dcdp-v1 | dcdp-tweedie | dcdp-latent-i |
                           # dcdp-latent-ii | dps | fidelity-only
    # optional overrides: K, tau, learning_rate, momentum, T_start, T_end,
    # schedule = linear | constant (with T), backend, noisy, loss_floor,
    # eta (dps), n_components and n_train (latent)

Ground truths are drawn from the prior. Each cell owns three random
streams (truth, measurement noise, solver) whose seeds hash the
identifying fields of the cell, so adding or removing tasks, noise levels
or methods never changes the numbers of any other cell.
"""

from __future__ import annotations

import configparser
import csv
import dataclasses
import functools
import io
import math
import os
import statistics
import traceback
import zlib
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .exceptions import ConfigError
from .fidelity import FidelityConfig
from .io import (atomic_write, format_float, read_gmm, read_tensor, write_csv,
                 write_fidelity_trace, write_image, write_solver_trace, write_tensor)
from .latent import PCACodec, encode_prior
from .metrics import mse, psnr, ssim
from .operators import ImageShape, measure, parse_operator_spec
from .presets import DESK_DPS, DESK_DPS_ETA, DESK_LATENT, DESK_NOISY, DESK_PIXEL
from .purify import Tweedie, parse_backend
from .schedule import PurificationSchedule, make_purification_schedule, make_vp_schedule
from .score import GMMScore
from .solver import (DpsConfig, SolverConfig, dcdp_solve, dcdp_solve_latent, dps_solve,
                     fidelity_only_solve)
from .toy import PEAK, TASKS, make_image_prior, make_operator

METHOD_KINDS = ("dcdp-v1", "dcdp-tweedie", "dcdp-latent-i", "dcdp-latent-ii", "dps",
                "fidelity-only")
RESULT_HEADER = ("task", "method", "sigma_y", "seed", "psnr", "ssim", "mse", "nfe",
                 "wall_time", "status")
METRIC_COLUMNS = ("psnr", "ssim", "mse", "nfe", "wall_time")

_OPERATOR_PRESET = {"downsample": "sr", "inpaint": "inpaint", "gaussian_blur": "gaussian_blur",
                    "motion_blur": "motion_blur", "identity": "identity"}
_TOY_KEYS = {"n_components": int, "rank": int, "floor_std": float, "pixel_std": float,
             "mean_std": float, "length_scale": float, "decay": float, "seed": int}
_METHOD_KEYS = {"kind": str, "K": int, "tau": int, "learning_rate": float, "momentum": float,
                "T_start": int, "T_end": int, "T": int, "schedule": str, "backend": str,
                "noisy": bool, "loss_floor": float, "eta": float, "n_components": int,
                "n_train": int}


@dataclasses.dataclass(frozen=True)
class TaskSpec:
    name: str
    operator: str
    sigmas: tuple
    preset: str


@dataclasses.dataclass(frozen=True)
class MethodSpec:
    name: str
    kind: str
    overrides: tuple  # sorted (key, value) pairs

    def get(self, key, default=None):
        return dict(self.overrides).get(key, default)


@dataclasses.dataclass(frozen=True)
class ExperimentConfig:
    name: str
    samples: int
    master_seed: int
    shape: ImageShape
    out: str
    dump_images: bool
    prior: tuple  # sorted (key, value) pairs
    tasks: tuple
    methods: tuple

    def with_overrides(self, seed=None, out=None):
        changes = {}
        if seed is not None:
            changes["master_seed"] = int(seed)
        if out is not None:
            changes["out"] = os.fspath(out)
        return dataclasses.replace(self, **changes)


@dataclasses.dataclass(frozen=True)
class Cell:
    index: int
    task: TaskSpec
    sigma: float
    sample: int
    method: MethodSpec


# -- config parsing ----------------------------------------------------------

def _convert(where, value, kind):
    try:
        if kind is bool:
            lowered = value.strip().lower()
            if lowered in ("1", "true", "yes", "on"):
                return True
            if lowered in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {value!r}")
        return kind(value.strip())
    except ValueError as exc:
        raise ConfigError(where, str(exc)) from None


def _float_list(where, value):
    try:
        vals = tuple(float(v) for v in value.replace(";", ",").split(",") if v.strip())
    except ValueError as exc:
        raise ConfigError(where, str(exc)) from None
    if not vals or any(v < 0 or not math.isfinite(v) for v in vals):
        raise ConfigError(where, "expected a list of non-negative noise levels")
    return vals


def load_config(path):
    """Parse and validate an experiment config; raises :class:`ConfigError`."""
    path = os.fspath(path)
    if not os.path.isfile(path):
        raise ConfigError(path, "config file not found")
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read(path, encoding="utf-8")
    except configparser.Error as exc:
        raise ConfigError(path, str(exc).splitlines()[0]) from None
    base = os.path.dirname(os.path.abspath(path))

    if not parser.has_section("experiment"):
        raise ConfigError(f"{path}:[experiment]", "section is required")
    exp = parser["experiment"]
    w = f"{path}:[experiment]"
    name = exp.get("name", os.path.splitext(os.path.basename(path))[0])
    samples = _convert(f"{w}.samples", exp.get("samples", "1"), int)
    if samples < 1:
        raise ConfigError(f"{w}.samples", "must be >= 1")
    master_seed = _convert(f"{w}.master_seed", exp.get("master_seed", "0"), int)
    try:
        shape = ImageShape.parse(exp.get("shape", "32x32"))
    except ValueError as exc:
        raise ConfigError(f"{w}.shape", str(exc)) from None
    out = exp.get("out", os.path.join("results", name))
    dump_images = _convert(f"{w}.dump_images", exp.get("dump_images", "true"), bool)
    unknown = set(exp) - {"name", "samples", "master_seed", "shape", "out", "dump_images"}
    if unknown:
        raise ConfigError(w, f"unknown keys {sorted(unknown)}")

    prior = _parse_prior(parser, path, base, shape)
    tasks = _parse_tasks(parser, path, shape)
    methods = _parse_methods(parser, path)
    return ExperimentConfig(name, samples, master_seed, shape, out, dump_images, prior,
                            tasks, methods)


def _parse_prior(parser, path, base, shape):
    w = f"{path}:[prior]"
    sec = parser["prior"] if parser.has_section("prior") else {}
    kind = sec.get("kind", "toy").strip().lower()
    out = {"kind": kind}
    if kind == "toy":
        for key, value in sec.items():
            if key == "kind":
                continue
            if key not in _TOY_KEYS:
                raise ConfigError(f"{w}.{key}", f"unknown toy prior key; expected {sorted(_TOY_KEYS)}")
            out[key] = _convert(f"{w}.{key}", value, _TOY_KEYS[key])
    elif kind in ("gmm", "empirical"):
        if "path" not in sec:
            raise ConfigError(f"{w}.path", "required for this prior kind")
        file = os.path.join(base, sec["path"])
        if not os.path.isfile(file):
            raise ConfigError(f"{w}.path", f"file not found: {file}")
        out["path"] = file
        if kind == "empirical":
            out["bandwidth"] = _convert(f"{w}.bandwidth", sec.get("bandwidth", "0.1"), float)
        extra = set(sec) - {"kind", "path", "bandwidth"}
        if extra:
            raise ConfigError(w, f"unknown keys {sorted(extra)}")
    else:
        raise ConfigError(f"{w}.kind", f"unknown prior kind {kind!r}; use toy, gmm or empirical")
    return tuple(sorted(out.items()))


def _parse_tasks(parser, path, shape):
    tasks = []
    for section in parser.sections():
        if not section.startswith("task."):
            continue
        name = section[len("task."):]
        w = f"{path}:[{section}]"
        sec = parser[section]
        operator = sec.get("operator", name).strip()
        try:
            op = build_operator(operator, shape)
        except ValueError as exc:
            raise ConfigError(f"{w}.operator", str(exc)) from None
        if op.in_shape != shape:
            raise ConfigError(f"{w}.operator", f"operator shape {op.in_shape} differs from "
                                               f"experiment shape {shape}")
        sigmas = _float_list(f"{w}.sigma_y", sec.get("sigma_y", "0"))
        kind = operator.partition(":")[0].strip().lower()
        preset = sec.get("preset", name if name in DESK_PIXEL else _OPERATOR_PRESET.get(kind))
        if preset not in DESK_PIXEL:
            raise ConfigError(f"{w}.preset", f"unknown preset {preset!r}; expected one of "
                                             f"{sorted(DESK_PIXEL)}")
        extra = set(sec) - {"operator", "sigma_y", "preset"}
        if extra:
            raise ConfigError(w, f"unknown keys {sorted(extra)}")
        tasks.append(TaskSpec(name, operator, sigmas, preset))
    if not tasks:
        raise ConfigError(path, "at least one [task.NAME] section is required")
    return tuple(tasks)


def _parse_methods(parser, path):
    methods = []
    for section in parser.sections():
        if not section.startswith("method."):
            continue
        name = section[len("method."):]
        w = f"{path}:[{section}]"
        sec = parser[section]
        overrides = {}
        for key, value in sec.items():
            if key not in _METHOD_KEYS:
                raise ConfigError(f"{w}.{key}", f"unknown method key; expected {sorted(_METHOD_KEYS)}")
            overrides[key] = _convert(f"{w}.{key}", value, _METHOD_KEYS[key])
        kind = overrides.pop("kind", name)
        if kind not in METHOD_KINDS:
            raise ConfigError(f"{w}.kind", f"unknown method kind {kind!r}; expected one of "
                                           f"{list(METHOD_KINDS)}")
        if "backend" in overrides:
            try:
                parse_backend(overrides["backend"])
            except ValueError as exc:
                raise ConfigError(f"{w}.backend", str(exc)) from None
        schedule = overrides.get("schedule", "linear")
        if schedule not in ("linear", "constant"):
            raise ConfigError(f"{w}.schedule", "expected linear or constant")
        if schedule == "constant" and "T" not in overrides:
            raise ConfigError(f"{w}.T", "a constant schedule needs T")
        methods.append(MethodSpec(name, kind, tuple(sorted(overrides.items()))))
    if not methods:
        raise ConfigError(path, "at least one [method.NAME] section is required")
    return tuple(methods)


def build_operator(text, shape):
    """A desk task name (``sr``, ``inpaint``, ...) or an operator spec string."""
    if text in TASKS:
        return make_operator(text, shape)
    return parse_operator_spec(text, shape)


def resolved_config_text(cfg):
    """INI text equivalent to ``cfg`` with every default made explicit."""
    parser = configparser.ConfigParser()
    parser.optionxform = str
    parser["experiment"] = {"name": cfg.name, "samples": str(cfg.samples),
                            "master_seed": str(cfg.master_seed), "shape": str(cfg.shape),
                            "out": cfg.out, "dump_images": str(cfg.dump_images).lower()}
    parser["prior"] = {k: str(v) for k, v in cfg.prior}
    for t in cfg.tasks:
        parser[f"task.{t.name}"] = {"operator": t.operator, "preset": t.preset,
                                    "sigma_y": ", ".join(repr(s) for s in t.sigmas)}
    for m in cfg.methods:
        sec = {"kind": m.kind}
        sec.update({k: str(v) for k, v in m.overrides})
        parser[f"method.{m.name}"] = sec
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()


# -- grid construction -------------------------------------------------------

def cell_seed(master_seed, *fields):
    """Stable 32-bit seed from the master seed and a cell's identifying fields."""
    key = "|".join([str(master_seed), *(repr(f) for f in fields)]).encode()
    return zlib.crc32(key)


def build_grid(cfg):
    cells = []
    for task in cfg.tasks:
        for sigma in task.sigmas:
            for sample in range(cfg.samples):
                for method in cfg.methods:
                    cells.append(Cell(len(cells), task, sigma, sample, method))
    return cells


# -- per-cell execution ------------------------------------------------------

@functools.lru_cache(maxsize=4)
def _prior(prior_items, shape):
    spec = dict(prior_items)
    kind = spec.pop("kind")
    if kind == "toy":
        prior = make_image_prior(shape, **spec)
    elif kind == "gmm":
        prior = read_gmm(spec["path"])
    else:
        from .score import GaussianMixture

        data, dshape = read_tensor(spec["path"])
        points = data.reshape(dshape.height, -1)
        m = points.shape[0]
        prior = GaussianMixture(np.full(m, 1.0 / m), points,
                                [spec["bandwidth"] ** 2] * m)
    if prior.dim != shape.size:
        raise ValueError(f"prior dimension {prior.dim} does not match image size {shape.size}")
    return prior


@functools.lru_cache(maxsize=1)
def _schedule():
    return make_vp_schedule()


@functools.lru_cache(maxsize=4)
def _latent_model(prior_items, shape, n_components, n_train, seed):
    prior = _prior(prior_items, shape)
    data = prior.sample(n_train, seed)
    codec = PCACodec(n_components).fit(data).codec_
    score = GMMScore(encode_prior(prior, codec), _schedule())
    return codec, score


def method_config(method, preset_name, seed):
    """:class:`SolverConfig` or :class:`DpsConfig` for a method on a task preset."""
    if method.kind == "dps":
        return DpsConfig(DESK_DPS.n_steps, method.get("eta", DESK_DPS_ETA[preset_name]), seed)
    latent = method.kind.startswith("dcdp-latent")
    if latent:
        base = DESK_LATENT[preset_name]
    elif method.get("noisy", False):
        base = DESK_NOISY[preset_name]
    else:
        base = DESK_PIXEL[preset_name]
    K = method.get("K", base.K)
    tau = method.get("tau", 1000 // K if "K" in dict(method.overrides) else base.tau)
    fidelity = FidelityConfig(tau, method.get("learning_rate", base.learning_rate),
                              method.get("momentum", 0.9), method.get("loss_floor"))
    if method.get("schedule", "linear") == "constant":
        schedule = PurificationSchedule((method.get("T"),) * K)
    else:
        schedule = make_purification_schedule(K, method.get("T_start", base.T_start),
                                              method.get("T_end", base.T_end))
    if "backend" in dict(method.overrides):
        backend = parse_backend(method.get("backend"))
    elif method.kind == "dcdp-tweedie":
        backend = Tweedie()
    else:
        backend = parse_backend("ddim:20")
    approach = {"dcdp-latent-i": "latent_dc", "dcdp-latent-ii": "pixel_dc"}.get(method.kind)
    return SolverConfig(K, fidelity, backend, schedule, seed, latent_approach=approach)


def cell_stem(cell):
    return f"{cell.task.name}__{cell.method.name}__s{cell.sigma:g}__{cell.sample:03d}"


def run_cell(cfg, cell):
    """Solve one cell; returns its results.csv row. Never raises."""
    row = {"task": cell.task.name, "method": cell.method.name, "sigma_y": cell.sigma,
           "seed": cell.sample}
    try:
        shape = cfg.shape
        prior = _prior(cfg.prior, shape)
        schedule = _schedule()
        op = build_operator(cell.task.operator, shape)
        truth_seed = cell_seed(cfg.master_seed, "truth", cell.task.name, cell.sample)
        noise_seed = cell_seed(cfg.master_seed, "noise", cell.task.name, cell.sigma, cell.sample)
        solve_seed = cell_seed(cfg.master_seed, "solve", cell.task.name, cell.sigma,
                               cell.sample, cell.method.name)
        x_star = prior.sample(1, truth_seed)[0]
        y = measure(op, x_star, cell.sigma, noise_seed).y
        mcfg = method_config(cell.method, cell.task.preset, solve_seed)
        kind = cell.method.kind
        if kind == "dps":
            result = dps_solve(op, y, GMMScore(prior, schedule), schedule, mcfg, x_true=x_star)
        elif kind == "fidelity-only":
            result = fidelity_only_solve(op, y, mcfg, x_true=x_star)
        elif kind.startswith("dcdp-latent"):
            codec, lscore = _latent_model(cfg.prior, shape, cell.method.get("n_components", 64),
                                          cell.method.get("n_train", 2000),
                                          cell_seed(cfg.master_seed, "codec"))
            result = dcdp_solve_latent(op, y, lscore, schedule, codec, mcfg, x_true=x_star,
                                       keep_iterates=False)
        else:
            result = dcdp_solve(op, y, GMMScore(prior, schedule), schedule, mcfg,
                                x_true=x_star, keep_iterates=False)
        x = result.reconstruction
        row.update(psnr=psnr(x, x_star, PEAK), ssim=ssim(x, x_star, peak=PEAK, shape=shape),
                   mse=mse(x, x_star), nfe=result.nfe, wall_time=result.wall_time,
                   status="ok")
        _write_cell_outputs(cfg, cell, result, x_star, shape)
    except Exception as exc:  # recorded per cell, the grid keeps going
        last = traceback.extract_tb(exc.__traceback__)[-1]
        detail = f"{type(exc).__name__}: {exc} ({os.path.basename(last.filename)}:{last.lineno})"
        row.update(psnr=math.nan, ssim=math.nan, mse=math.nan, nfe=0, wall_time=math.nan,
                   status="error: " + " ".join(detail.split()))
    return row


def _write_cell_outputs(cfg, cell, result, x_star, shape):
    stem = cell_stem(cell)
    trace_dir = os.path.join(cfg.out, "traces")
    write_solver_trace(os.path.join(trace_dir, stem + ".csv"), result, PEAK)
    if cell.method.kind != "dps":
        write_fidelity_trace(os.path.join(trace_dir, stem + "__fidelity.csv"), result)
    if cfg.dump_images:
        recon_dir = os.path.join(cfg.out, "recon")
        write_tensor(os.path.join(recon_dir, stem + ".txt"), result.reconstruction, shape)
        write_image(os.path.join(recon_dir, stem + ".pgm" if shape.channels == 1
                                 else stem + ".ppm"), result.reconstruction, shape)


def format_row(row):
    out = []
    for col in RESULT_HEADER:
        value = row[col]
        if col in ("task", "method", "status"):
            out.append(value)
        elif col in ("seed", "nfe"):
            out.append(str(int(value)))
        else:
            out.append(format_float(value))
    return out


def run_experiment(cfg, jobs=1):
    """Run every cell and write ``results.csv`` plus the resolved config.

    Returns the list of result rows in grid order (independent of ``jobs``).
    """
    os.makedirs(cfg.out, exist_ok=True)
    with atomic_write(os.path.join(cfg.out, "resolved_config.ini")) as fh:
        fh.write(resolved_config_text(cfg))
    cells = build_grid(cfg)
    if jobs > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(run_cell, [cfg] * len(cells), cells))
    else:
        rows = [run_cell(cfg, c) for c in cells]
    write_csv(os.path.join(cfg.out, "results.csv"), RESULT_HEADER,
              (format_row(r) for r in rows))
    return rows


# -- summary tables ----------------------------------------------------------

SUMMARY_HEADER = ("task", "method", "sigma_y", "n", "failed",
                  *(f"{m}_{s}" for m in METRIC_COLUMNS for s in ("mean", "std")))


def summarize(results_csv):
    """Mean and population std of each metric per (task, method, sigma_y).

    Rows whose status is not ``ok`` count as ``failed`` and are left out of
    the statistics. Groups keep first-appearance order.
    """
    groups = {}
    with open(results_csv, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(RESULT_HEADER[:-1]) - set(reader.fieldnames or ())
        if reader.fieldnames is not None and missing:
            raise ValueError(f"{results_csv}: missing columns {sorted(missing)}")
        for row in reader:
            key = (row["task"], row["method"], row["sigma_y"])
            g = groups.setdefault(key, {"ok": [], "failed": 0})
            if row.get("status", "ok") == "ok":
                g["ok"].append(row)
            else:
                g["failed"] += 1
    summary = []
    for (task, method, sigma), g in groups.items():
        entry = {"task": task, "method": method, "sigma_y": sigma, "n": len(g["ok"]),
                 "failed": g["failed"]}
        for col in METRIC_COLUMNS:
            vals = [float(r[col]) for r in g["ok"]]
            entry[f"{col}_mean"] = statistics.fmean(vals) if vals else math.nan
            entry[f"{col}_std"] = statistics.pstdev(vals) if vals else math.nan
        summary.append(entry)
    return summary


def summary_rows(summary):
    for e in summary:
        yield [e["task"], e["method"], e["sigma_y"], str(e["n"]), str(e["failed"]),
               *(format_float(e[c]) for c in SUMMARY_HEADER[5:])]


def format_table(summary):
    """Aligned text: one line per group, ``mean ± std`` per metric."""
    header = ["task", "method", "sigma_y", "n", *METRIC_COLUMNS]
    body = []
    for e in summary:
        cells = [e["task"], e["method"], e["sigma_y"], str(e["n"])]
        for col in METRIC_COLUMNS:
            cells.append(f"{format_float(e[col + '_mean'])} ± {format_float(e[col + '_std'])}")
        body.append(cells)
    widths = [max(len(r[i]) for r in [header, *body]) for i in range(len(header))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in [header, *body]]
    return "\n".join(lines) + "\n"
