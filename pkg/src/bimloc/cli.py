"""Command-line entry point: ``bimloc {mapgen,simulate,localize,evaluate}``.

Failures print one line ``error[CODE]: message`` to stderr and exit non-zero.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig
from .evaluation import evaluate
from .geometry import Pose
from .io import FormatError, ensure_parent, read_box_manifest, read_obj, read_ply, read_scans, read_tum, write_jsonl, write_ply, write_scan_dir, write_tum
from .localizer import MapContext, Variant, run_sequence
from .mapping import CategoryTable, build_semantic_map
from .simulator import DeviationSpec, build_scene, simulate_sequence

log = logging.getLogger("bimloc")

EXIT_CODES = {"E_USAGE": 2, "E_PARSE": 3, "E_CONFIG": 4, "E_INPUT": 5, "E_IO": 6, "E_INTERNAL": 70}


class CliError(Exception):
    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError("E_USAGE", f"{self.prog}: {message}")


def provenance(cfg: RunConfig, seed) -> dict:
    return {"tool": "bimloc", "version": __version__, "config_hash": cfg.hash, "seed": seed}


def _prov_line(p: dict) -> str:
    return f"{p['tool']} {p['version']} config {p['config_hash']} seed {p['seed']}"


def _load_config(path) -> RunConfig:
    return RunConfig.load(path) if path else RunConfig()


def _write_json(path, data) -> None:
    with open(ensure_parent(path), "w", encoding="utf-8") as fh:
        json.dump(data, fh, indent=1, sort_keys=True)
        fh.write("\n")


# ------------------------------------------------------------------ mapgen


def cmd_mapgen(args) -> None:
    cfg = _load_config(args.config).override("map", density=args.density, seed=args.seed, normal_k=args.normal_k)
    mesh = read_obj(args.mesh)
    boxes, table = read_box_manifest(args.boxes)
    sm = build_semantic_map(mesh, boxes, table, cfg.map.density, cfg.map.seed, cfg.map.normal_k, cfg.map.n_candidates)
    prov = provenance(cfg, cfg.map.seed)
    out = ensure_parent(args.out)
    write_ply(out, sm.cloud, table, comments=[_prov_line(prov)])
    report = {
        "provenance": prov,
        "points": len(sm.cloud),
        "histogram": sm.histogram,
        "labeling": sm.report.as_dict(),
        "dropped_degenerate_triangles": mesh.dropped_degenerate,
    }
    _write_json(out.with_suffix(".histogram.json"), report)
    print(f"wrote {out} ({len(sm.cloud)} points, {len(table)} categories)")


# ---------------------------------------------------------------- simulate


def _box_pair(entry, where):
    if isinstance(entry, dict):
        lo, hi = entry.get("min"), entry.get("max")
    else:
        lo, hi = entry
    lo, hi = np.asarray(lo, dtype=float), np.asarray(hi, dtype=float)
    if lo.shape != (3,) or hi.shape != (3,) or np.any(hi < lo):
        raise ValueError(f"{where}: added box needs min <= max with 3 coordinates each")
    return lo, hi


def read_deviations(path):
    """Deviation JSON: ``{"add": [{"min", "max"}], "remove": [ids], "dynamic_fraction", "boxes": manifest}``.

    ``boxes`` (a manifest path relative to the file) is required when ``remove`` is non-empty.
    """
    p = Path(path)
    try:
        data = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(p, f"line {exc.lineno} col {exc.colno}", exc.msg) from None
    if not isinstance(data, dict):
        raise FormatError(p, "root", "deviations must be a JSON object")
    unknown = set(data) - {"add", "remove", "dynamic_fraction", "boxes"}
    if unknown:
        raise FormatError(p, "root", f"unknown keys {sorted(unknown)}")
    try:
        add = [_box_pair(e, f"add[{i}]") for i, e in enumerate(data.get("add", []))]
    except (TypeError, ValueError) as exc:
        raise FormatError(p, "add", str(exc)) from None
    spec = DeviationSpec(add, list(data.get("remove", [])), float(data.get("dynamic_fraction", 0.0)))
    boxes = []
    if data.get("boxes"):
        boxes, _ = read_box_manifest(p.parent / data["boxes"])
    elif spec.remove:
        raise FormatError(p, "remove", "removing elements needs a 'boxes' manifest path")
    return spec, boxes


def cmd_simulate(args) -> None:
    cfg = _load_config(args.config)
    if args.sensor:
        try:
            sensor_data = json.loads(Path(args.sensor).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise FormatError(args.sensor, f"line {exc.lineno} col {exc.colno}", exc.msg) from None
        if not isinstance(sensor_data, dict):
            raise FormatError(args.sensor, "root", "sensor must be a JSON object")
        try:
            cfg = cfg.override("sensor", **sensor_data)
        except (ConfigError, AttributeError, TypeError):
            raise ConfigError(f"{args.sensor}: invalid sensor keys or values") from None
    cfg = cfg.override("sensor", seed=args.seed)
    cfg = RunConfig.from_dict(cfg.to_dict())  # revalidate after overrides
    mesh = read_obj(args.map_mesh)
    traj = read_tum(args.traj)
    if not traj:
        raise ValueError(f"{args.traj}: empty trajectory")
    dev, boxes = read_deviations(args.deviations) if args.deviations else (DeviationSpec(), [])
    scene = build_scene(mesh, dev, boxes)
    out = Path(args.out)
    scans, _ = simulate_sequence(scene, traj, cfg.sensor_model())
    write_scan_dir(out / "scans", scans)
    prov = provenance(cfg, cfg.sensor.seed)
    write_tum(out / "groundtruth.tum", traj, header=[_prov_line(prov)])
    _write_json(out / "provenance.json", {"provenance": prov, "config": cfg.to_dict(), "scans": len(scans)})
    print(f"wrote {len(scans)} scans to {out / 'scans'}")


# ---------------------------------------------------------------- localize


def parse_init(text: str) -> Pose:
    try:
        vals = [float(v) for v in text.replace(",", " ").split()]
    except ValueError:
        raise CliError("E_USAGE", f"--init expects 'x y z yaw', got {text!r}") from None
    if len(vals) != 4 or not all(math.isfinite(v) for v in vals):
        raise CliError("E_USAGE", f"--init expects 4 finite numbers 'x y z yaw', got {text!r}")
    return Pose.from_xyz_yaw(*vals)


def load_map(path) -> MapContext:
    cloud, table, _ = read_ply(path)
    if cloud.normals is None:
        raise ValueError(f"{path}: map has no normals")
    return MapContext(cloud, table or CategoryTable())


def cmd_localize(args) -> None:
    cfg = _load_config(args.config).override("tracker", variant=args.variant).override("prefilter", seed=args.seed)
    if args.whitelist:
        cfg = cfg.override("tracker", whitelist=[w for w in args.whitelist.split(",") if w])
    tcfg = cfg.tracker_config()
    init = parse_init(args.init)
    ctx = load_map(args.map)
    if tcfg.variant.semantic and ctx.cloud.labels is None:
        raise ValueError(f"variant {tcfg.variant.value} needs a labeled map; {args.map} has no labels")
    scans = read_scans(args.scans)
    res = run_sequence(scans, ctx, tcfg, init)
    prov = provenance(cfg, cfg.prefilter.seed)
    out = ensure_parent(args.out)
    write_tum(out, res.trajectory, header=[_prov_line(prov), f"variant {tcfg.variant.value}"])
    diag_path = Path(args.diagnostics) if args.diagnostics else out.with_suffix(".diag.jsonl")
    write_jsonl(ensure_parent(diag_path), ({**d.as_dict(), **{"provenance": prov}} for d in res.diagnostics))
    print(f"tracked {len(scans)} scans with {tcfg.variant.value}: {res.failures} failed steps; wrote {out}")


# ---------------------------------------------------------------- evaluate


def cmd_evaluate(args) -> None:
    cfg = _load_config(args.config).override("evaluation", mode=args.mode)
    cfg = RunConfig.from_dict(cfg.to_dict())
    gt = read_tum(args.gt)
    est = read_tum(args.est)
    e = cfg.evaluation
    rep = evaluate(est, gt, e.mode, e.max_dt, e.z_window)
    prov = provenance(cfg, None)
    out = ensure_parent(args.out)
    rep.to_json(out, {"provenance": prov})
    csv_path = out.with_suffix(".csv")
    rep.to_csv(csv_path, header=_prov_line(prov))
    print(f"rmse {rep.rmse_translation:.6f} m {rep.rmse_rotation:.6f} deg over {rep.n_pairs} pairs; wrote {out}")


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="bimloc", description="Semantic LiDAR localization on building-model maps.")
    p.add_argument("--version", action="version", version=f"bimloc {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    m = sub.add_parser("mapgen", help="sample, label and attach normals to a building mesh")
    m.add_argument("--mesh", required=True, help="triangulated OBJ")
    m.add_argument("--boxes", required=True, help="JSON box manifest")
    m.add_argument("--density", type=float, help="points per square metre (default 30)")
    m.add_argument("--seed", type=int)
    m.add_argument("--normal-k", type=int, dest="normal_k")
    m.add_argument("--config")
    m.add_argument("--out", required=True, help="output PLY; a .histogram.json is written alongside")
    m.set_defaults(func=cmd_mapgen)

    s = sub.add_parser("simulate", help="ray-cast a scan sequence along a trajectory")
    s.add_argument("--map-mesh", required=True, dest="map_mesh")
    s.add_argument("--traj", required=True, help="TUM trajectory of sensor poses")
    s.add_argument("--sensor", help="JSON sensor model overrides")
    s.add_argument("--deviations", help="JSON deviation spec")
    s.add_argument("--seed", type=int)
    s.add_argument("--config")
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_simulate)

    loc = sub.add_parser("localize", help="track a scan sequence against a map")
    loc.add_argument("--map", required=True, help="PLY map with normals (and labels for SEM variants)")
    loc.add_argument("--scans", required=True, help="directory of <timestamp_ns>.ply or an SLSCAN1 log")
    loc.add_argument("--variant", choices=[v.value for v in Variant])
    loc.add_argument("--config")
    loc.add_argument("--init", required=True, help="initial pose 'x y z yaw' (yaw in radians)")
    loc.add_argument("--whitelist", help="comma-separated categories kept for the fine stage")
    loc.add_argument("--seed", type=int)
    loc.add_argument("--diagnostics", help="JSON-lines output (default: <out>.diag.jsonl)")
    loc.add_argument("--out", required=True, help="output TUM trajectory")
    loc.set_defaults(func=cmd_localize)

    e = sub.add_parser("evaluate", help="compare an estimated trajectory with ground truth")
    e.add_argument("--gt", required=True)
    e.add_argument("--est", required=True)
    e.add_argument("--mode", choices=["se2", "none"])
    e.add_argument("--config")
    e.add_argument("--out", required=True, help="output JSON report; a .csv is written alongside")
    e.set_defaults(func=cmd_evaluate)
    return p


def _classify(exc: BaseException) -> str:
    if isinstance(exc, CliError):
        return exc.code
    if isinstance(exc, FormatError):
        return "E_PARSE"
    if isinstance(exc, ConfigError):
        return "E_CONFIG"
    if isinstance(exc, OSError):
        return "E_IO"
    if isinstance(exc, (ValueError, KeyError, RuntimeError)):
        return "E_INPUT"
    return "E_INTERNAL"


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
        args.func(args)
        return 0
    except KeyboardInterrupt:
        print("error[E_INTERRUPTED]: interrupted", file=sys.stderr)
        return 130
    except Exception as exc:  # noqa: BLE001 - every failure becomes one machine-readable line
        code = _classify(exc)
        msg = " ".join(str(exc).split()) or type(exc).__name__
        print(f"error[{code}]: {msg}", file=sys.stderr)
        return EXIT_CODES.get(code, 1)


if __name__ == "__main__":
    sys.exit(main())
