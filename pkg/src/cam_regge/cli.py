"""``cam`` command line: synthetic tables, pole searches, tracking, decomposition."""

from __future__ import annotations

import argparse
import copy
import hashlib
import json
import logging
import os
import platform
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import partial
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .bridge import fit_linear_ce, map_to_json, predict_regge_trajectory
from .errors import CamError, NumericalError, ValidationError
from .mulholland import attach_s_conj, decompose, fano_to_csv, find_integer_crossings
from .pade import (PadePolicy, approximant_at_energy, ce_poles_at_j, poles_from_csv,
                   poles_to_csv, regge_poles_at_energy)
from .scatter import load_smatrix_table, write_smatrix_csv
from .synthetic import generate_table, spec_from_json
from .tracking import (ReggeTrajectory, TrackPolicy, TrajectoryEntry, ce_trajectories_from_csv,
                       ce_trajectories_to_csv, merge_labels, smooth_near_axis, track, track_ce,
                       trajectories_from_csv, trajectories_to_csv)

log = logging.getLogger("cam_regge")

CONFIG_ENV = "CAM_REGGE_CONFIG"

DEFAULT_CONFIG = {
    "pade": {"eps_froissart": 1e-3, "residue_floor": 1e-8, "stability_fraction": 0.8,
             "match_radius": 0.1, "im_max": 3.0, "window_margin": 1.0,
             "window": None, "max_nodes": None},
    "pade_energy": {"eps_froissart": 1e-3, "residue_floor": 1e-8, "stability_fraction": 0.8,
                    "match_radius": 0.1, "im_max": 10.0, "window_margin": 0.0,
                    "max_nodes": 40, "energy_range": None, "j_range": None},
    "tracking": {"match_radius": 0.1, "gap_max": 20, "smooth_im_below": None, "merge": {}},
    "tracking_ce": {"match_radius": 0.5, "gap_max": 2},
    "decomposition": {"fano": True, "lower_shift": 0.5},
    "map": {"label": None, "j_window": None, "a2_tol": 0.1, "energies": None},
    "jobs": 1,
    "out_dir": ".",
}


@dataclass
class RunConfig:
    """Resolved configuration; ``raw`` is the merged JSON document."""

    raw: dict
    inputs: list = field(default_factory=list)

    @property
    def jobs(self) -> int:
        return int(self.raw["jobs"])

    @property
    def out_dir(self) -> Path:
        return Path(self.raw["out_dir"])

    def pade_policy(self) -> PadePolicy:
        return PadePolicy(**self.raw["pade"])

    def pade_energy_policy(self) -> PadePolicy:
        params = {k: v for k, v in self.raw["pade_energy"].items()
                  if k not in ("energy_range", "j_range")}
        return PadePolicy.energy_axis(**params)

    def track_policy(self) -> TrackPolicy:
        t = self.raw["tracking"]
        return TrackPolicy(match_radius=t["match_radius"], gap_max=t["gap_max"])

    def track_ce_policy(self) -> TrackPolicy:
        return TrackPolicy(**self.raw["tracking_ce"])

    def digest(self) -> str:
        canon = json.dumps(self.raw, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()

    def validate(self):
        self.pade_policy()
        self.pade_energy_policy()
        self.track_policy()
        self.track_ce_policy()
        if self.jobs < 1:
            raise ValidationError("jobs must be >= 1")
        shift = self.raw["decomposition"]["lower_shift"]
        if not 0 <= shift <= 1:
            raise ValidationError("decomposition.lower_shift must lie in [0, 1]")
        smooth = self.raw["tracking"]["smooth_im_below"]
        if smooth is not None and not smooth > 0:
            raise ValidationError("tracking.smooth_im_below must be positive")
        if not self.raw["map"]["a2_tol"] > 0:
            raise ValidationError("map.a2_tol must be positive")
        for p in self.inputs:
            if not Path(p).exists():
                raise ValidationError(f"input file not found: {p}")


def _merge(base, override, where="config"):
    out = copy.deepcopy(base)
    for key, value in override.items():
        if key not in base:
            raise ValidationError(f"{where}: unknown key {key!r}")
        if isinstance(base[key], dict) and key != "merge":
            if not isinstance(value, dict):
                raise ValidationError(f"{where}.{key} must be an object")
            out[key] = _merge(base[key], value, f"{where}.{key}")
        else:
            out[key] = value
    return out


def load_config(path=None, *, overrides=None, inputs=()) -> RunConfig:
    """Defaults, then the JSON config file (``--config`` or $CAM_REGGE_CONFIG), then flags."""
    raw = copy.deepcopy(DEFAULT_CONFIG)
    path = path or os.environ.get(CONFIG_ENV)
    if path:
        try:
            with open(path, encoding="utf-8") as fh:
                doc = json.load(fh)
        except OSError as exc:
            raise ValidationError(f"cannot read config {path}: {exc}") from None
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}:{exc.lineno}: invalid JSON: {exc.msg}") from None
        raw = _merge(raw, doc)
    for key, value in (overrides or {}).items():
        if value is not None:
            raw[key] = value
    cfg = RunConfig(raw, list(inputs))
    cfg.validate()
    return cfg


def write_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _sha256(path):
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


def _map_ordered(func, items, jobs):
    if jobs > 1 and len(items) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(func, items, chunksize=max(1, len(items) // (4 * jobs))))
    return [func(it) for it in items]


def _read(path):
    with open(path, encoding="utf-8") as fh:
        return fh.read()


def _load_table(path, warnings):
    try:
        table = load_smatrix_table(path)
    except ValidationError as exc:
        raise ValidationError(f"{path}: {exc}") from None
    warnings.extend(f"{path}: {w}" for w in table.warnings)
    return table


def _out(cfg, given, default):
    return Path(given) if given else cfg.out_dir / default


# -- commands ---------------------------------------------------------------

def cmd_synth(args, cfg, warnings):
    spec = spec_from_json(_read(args.spec))
    table = generate_table(spec)
    out = _out(cfg, args.output, "table.csv")
    write_atomic(out, write_smatrix_csv(table))
    return [out]


def _regge_worker(table, policy, E):
    try:
        _, poles = regge_poles_at_energy(table, E, policy)
        return poles, None
    except CamError as exc:
        return [], f"E={E}: {exc}"


def cmd_poles_j(args, cfg, warnings):
    table = _load_table(args.table, warnings)
    policy = cfg.pade_policy()
    energies = [float(E) for E in table.energies if table.is_open(E)]
    results = _map_ordered(partial(_regge_worker, table, policy), energies, cfg.jobs)
    poles = []
    for E, (ps, err) in zip(energies, results):
        if err:
            warnings.append(err)
        poles.extend(ps)
    out = _out(cfg, args.output, "poles_j.csv")
    write_atomic(out, poles_to_csv(poles))
    log.info("%d Regge poles over %d energies", len(poles), len(energies))
    return [out]


def _ce_worker(table, policy, energy_range, J):
    try:
        _, poles = ce_poles_at_j(table, J, policy, energy_range=energy_range)
        return poles, None
    except CamError as exc:
        return [], f"J={J}: {exc}"


def cmd_poles_e(args, cfg, warnings):
    table = _load_table(args.table, warnings)
    policy = cfg.pade_energy_policy()
    pe = cfg.raw["pade_energy"]
    js = [int(J) for J in table.j_values]
    if pe["j_range"] is not None:
        lo, hi = pe["j_range"]
        js = [J for J in js if lo <= J <= hi]
    erange = tuple(pe["energy_range"]) if pe["energy_range"] is not None else None
    results = _map_ordered(partial(_ce_worker, table, policy, erange), js, cfg.jobs)
    poles = []
    for J, (ps, err) in zip(js, results):
        if err:
            warnings.append(err)
        poles.extend(ps)
    out = _out(cfg, args.output, "poles_e.csv")
    write_atomic(out, poles_to_csv(poles))
    return [out]


def _infer_grid(values):
    vals = np.unique(np.asarray(values, dtype=float))
    if vals.size < 3:
        return vals.tolist()
    step = float(np.min(np.diff(vals)))
    n = int(round((vals[-1] - vals[0]) / step))
    grid = [round(vals[0] + i * step, 10) for i in range(n + 1)]
    return sorted(set(grid) | set(vals.tolist()))


def cmd_track(args, cfg, warnings):
    poles = poles_from_csv(_read(args.poles))
    axes = {p.axis for p in poles}
    if len(axes) > 1:
        raise ValidationError(f"{args.poles}: mixed axes {sorted(axes)}")
    axis = axes.pop() if axes else "angular-momentum"
    if axis == "energy":
        js = sorted({int(p.fixed_value) for p in poles})
        per = {J: [] for J in (range(js[0], js[-1] + 1) if js else [])}
        for p in poles:
            per[int(p.fixed_value)].append(p)
        trajs = track_ce(per, cfg.track_ce_policy())
        out = _out(cfg, args.output, "ce_trajectories.csv")
        write_atomic(out, ce_trajectories_to_csv(trajs))
        return [out]

    if args.table:
        table = _load_table(args.table, warnings)
        grid = [float(E) for E in table.energies if table.is_open(E)]
    else:
        grid = _infer_grid([p.fixed_value for p in poles])
    per = {E: [] for E in grid}
    for p in poles:
        per.setdefault(p.fixed_value, []).append(p)
    trajs = track(per, cfg.track_policy())
    t = cfg.raw["tracking"]
    if t["smooth_im_below"] is not None:
        trajs = [smooth_near_axis(tr) if tr.entries and max(e.lam.imag for e in tr.entries)
                 < t["smooth_im_below"] else tr for tr in trajs]
    if t["merge"]:
        trajs = merge_labels(trajs, t["merge"])
    out = _out(cfg, args.output, "trajectories.csv")
    write_atomic(out, trajectories_to_csv(trajs, grid))
    return [out]


def _approx_worker(table, policy, E):
    try:
        return approximant_at_energy(table, E, policy)
    except CamError:
        return None


def cmd_decompose(args, cfg, warnings):
    table = _load_table(args.table, warnings)
    trajs = trajectories_from_csv(_read(args.trajectories)) if args.trajectories else []
    policy = cfg.pade_policy()
    d = cfg.raw["decomposition"]
    energies = [float(E) for E in table.energies]
    open_e = [E for E in energies if table.is_open(E)]
    ras = _map_ordered(partial(_approx_worker, table, policy), open_e, cfg.jobs)
    approximants = {E: ra for E, ra in zip(open_e, ras) if ra is not None}
    trajs = [attach_s_conj(tr, approximants) for tr in trajs]
    result = decompose(table, trajs, approximants, policy=policy,
                       lower_shift=d["lower_shift"], jobs=cfg.jobs)
    warnings.extend(result.messages)
    out = _out(cfg, args.output, "decomposition.csv")
    write_atomic(out, result.to_csv())
    outputs = [out]
    if d["fano"]:
        features = [f for tr in trajs for f in find_integer_crossings(tr)]
        fano_out = _out(cfg, args.fano_output, "fano.csv")
        write_atomic(fano_out, fano_to_csv(features))
        outputs.append(fano_out)
    return outputs


def cmd_map(args, cfg, warnings):
    trajs = ce_trajectories_from_csv(_read(args.ce_trajectories))
    m = cfg.raw["map"]
    if not trajs:
        raise ValidationError(f"{args.ce_trajectories}: no CE trajectories")
    label = m["label"]
    chosen = trajs[0] if label is None else next((t for t in trajs if t.label == label), None)
    if chosen is None:
        raise ValidationError(f"no CE trajectory labelled {label!r}")
    cmap = fit_linear_ce(chosen, m["j_window"])
    if args.table:
        table = _load_table(args.table, warnings)
        energies = [float(E) for E in table.energies if table.is_open(E)]
    elif m["energies"] is not None:
        from .synthetic import energy_grid
        e = m["energies"]
        energies = list(energy_grid(e["start"], e["stop"], e["step"]))
    else:
        energies = sorted(float(e.E_pole.real) for e in chosen.entries)
    predicted = predict_regge_trajectory(cmap, energies)
    pred = ReggeTrajectory(f"{chosen.label}_pred",
                           [TrajectoryEntry(E=E, lam=complex(J) + 0.5, residue=None)
                            for E, J in zip(energies, predicted)])
    out = _out(cfg, args.output, "map.json")
    write_atomic(out, map_to_json(cmap, m["a2_tol"]))
    reg_out = _out(cfg, args.regge_output, "regge_predicted.csv")
    write_atomic(reg_out, trajectories_to_csv([pred]))
    return [out, reg_out]


COMMANDS = {
    "synth": (cmd_synth, "spec"),
    "poles-j": (cmd_poles_j, "table"),
    "poles-e": (cmd_poles_e, "table"),
    "track": (cmd_track, "poles"),
    "decompose": (cmd_decompose, "table"),
    "map": (cmd_map, "ce_trajectories"),
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file (default: $CAM_REGGE_CONFIG)")
    common.add_argument("--out-dir", help="directory for outputs and the run manifest")
    common.add_argument("--jobs", type=int, help="worker processes")
    common.add_argument("--quiet", action="store_true")

    parser = argparse.ArgumentParser(prog="cam", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="generate a table from a model spec")
    p.add_argument("spec")
    p.add_argument("-o", "--output")

    p = sub.add_parser("poles-j", parents=[common], help="Regge poles at each energy")
    p.add_argument("table")
    p.add_argument("-o", "--output")

    p = sub.add_parser("poles-e", parents=[common], help="complex-energy poles at each J")
    p.add_argument("table")
    p.add_argument("-o", "--output")

    p = sub.add_parser("track", parents=[common], help="link poles into trajectories")
    p.add_argument("poles")
    p.add_argument("--table", help="take the energy grid from this table")
    p.add_argument("-o", "--output")

    p = sub.add_parser("decompose", parents=[common], help="Regge-pole decomposition of the ICS")
    p.add_argument("table")
    p.add_argument("--trajectories")
    p.add_argument("-o", "--output")
    p.add_argument("--fano-output")

    p = sub.add_parser("map", parents=[common], help="linear CE map and predicted Regge trajectory")
    p.add_argument("ce_trajectories")
    p.add_argument("--table", help="predict on this table's energy grid")
    p.add_argument("-o", "--output")
    p.add_argument("--regge-output")
    return parser


def _manifest(args, cfg_raw, digest, inputs, outputs, warnings, status, error=None):
    return json.dumps({
        "command": args.command,
        "status": status,
        "error": error,
        "inputs": {str(p): _sha256(p) for p in inputs if Path(p).exists()},
        "outputs": [str(p) for p in outputs],
        "config": cfg_raw,
        "config_sha256": digest,
        "versions": {"cam_regge": __version__, "numpy": np.__version__,
                     "scipy": scipy.__version__,
                     "python": ".".join(platform.python_version_tuple()[:2])},
        "warnings": warnings,
    }, indent=2, sort_keys=True) + "\n"


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(message)s")
    func, first = COMMANDS[args.command]
    inputs = [getattr(args, first)]
    for extra in ("trajectories", "table"):
        if extra != first and getattr(args, extra, None):
            inputs.append(getattr(args, extra))
    warnings: list = []
    outputs: list = []
    cfg = None
    code, status, error = 0, "ok", None
    try:
        cfg = load_config(args.config, inputs=inputs,
                          overrides={"jobs": args.jobs, "out_dir": args.out_dir})
        outputs = func(args, cfg, warnings)
    except ValidationError as exc:
        code, status, error = 1, "validation-error", str(exc)
    except (NumericalError, FloatingPointError, np.linalg.LinAlgError) as exc:
        code, status, error = 2, "numerical-error", str(exc)
    except CamError as exc:
        code, status, error = 2, "error", str(exc)
    if error:
        print(f"cam {args.command}: {error}", file=sys.stderr)
    for w in warnings:
        log.warning("%s", w)
    out_dir = cfg.out_dir if cfg else Path(args.out_dir or ".")
    raw = cfg.raw if cfg else None
    digest = cfg.digest() if cfg else None
    try:
        write_atomic(out_dir / f"{args.command}.manifest.json",
                     _manifest(args, raw, digest, inputs, outputs, warnings, status, error))
    except OSError as exc:
        print(f"cam: cannot write manifest: {exc}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
