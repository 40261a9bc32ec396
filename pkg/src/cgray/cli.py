"""Command line entry point: ``cgray <command> --config run.json``.

Each command validates the config, computes, and writes a fresh
``<command>-<timestamp>`` directory.  Outputs are staged in a hidden
directory and renamed into place only on success, so a failing run leaves
nothing behind.  Exit codes: 2 config, 3 numerical failure, 4 invalid
solution.
"""

from __future__ import annotations

import os

# thread caps must be in place before numpy loads BLAS
_threads = os.environ.get("CGRAY_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[_var] = _threads

import argparse
import copy
import csv
import datetime as _dt
import itertools
import json
import logging
import shutil
import sys
from importlib import metadata
from pathlib import Path

import jsonschema
import numpy as np
import scipy.sparse.linalg as spla

from . import flow as flow_mod
from .mesh import MeshError, build_sphere_mesh, write_mesh_csv
from .raster import emit_heatmap
from .spectral import SEED, kernel_dim, morse_index, top_growth_rate
from .strominger import potential, solve_reduced
from .surface import (
    BranchConfiguration,
    branch_sphere_points,
    geometry_at_infinity,
    hemisphere_check,
    kappa_vanishing_order,
    neg_kappa_on_sphere,
)

log = logging.getLogger("cgray")

SCHEMA_VERSION = "1.0"
COMMANDS = ("analyze", "spectrum", "index", "solve", "flow", "periodmap")
EXIT_CONFIG, EXIT_NUMERICAL, EXIT_INVALID = 2, 3, 4

try:
    VERSION = metadata.version("artifact")
except metadata.PackageNotFoundError:  # running from a source tree
    VERSION = "0.1.0"

_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_vec3 = {"type": "array", "items": _num, "minItems": 3, "maxItems": 3}

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["branch"],
    "properties": {
        "branch": {
            "oneOf": [
                {"type": "object", "additionalProperties": False, "required": ["family_a"],
                 "properties": {"family_a": {"type": "number", "exclusiveMinimum": 0,
                                             "exclusiveMaximum": 1}}},
                {"type": "object", "additionalProperties": False, "required": ["points"],
                 "properties": {"points": {
                     "type": "array", "minItems": 8, "maxItems": 8,
                     "items": {"type": "array", "items": _num, "minItems": 2, "maxItems": 2}}}},
            ]
        },
        "alpha_prime": _pos,
        "mesh": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "level": {"type": "integer", "minimum": 3, "maximum": 8},
                "refine_radius": {"type": "number", "minimum": 0},
                "refine_depth": {"type": "integer", "minimum": 0, "maximum": 4},
            },
        },
        "solve": {"type": "object", "additionalProperties": False,
                  "properties": {"t": _vec3}},
        "flow": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "init": {"type": "string",
                         "pattern": r"^(stationary|constant:[+]?([0-9]*[.])?[0-9]+([eE][-+]?[0-9]+)?)$"},
                "horizon": _pos,
                "dt_safety": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                "snapshot_every": {"type": "integer", "minimum": 0},
                "thresholds": {
                    "type": "object", "additionalProperties": False,
                    "properties": {
                        "eps_sing": _pos, "eps_stat": _pos,
                        "stat_steps": {"type": "integer", "minimum": 1},
                        "exp_r2": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                        "exp_window": {"type": "integer", "minimum": 4},
                        "exp_rate_tol": _pos,
                        "sample_every": {"type": "integer", "minimum": 1},
                        "max_steps": {"type": "integer", "minimum": 1},
                    },
                },
            },
        },
        "spectrum": {"type": "object", "additionalProperties": False,
                     "properties": {"k": {"type": "integer", "minimum": 4, "maximum": 64},
                                    "c_tol": _pos}},
        "index": {"type": "object", "additionalProperties": False,
                  "properties": {"full": {"type": "boolean"},
                                 "offset": {"type": "integer", "enum": [0, 1]}}},
        "periodmap": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "t1": {"type": "array", "items": _num, "minItems": 1},
                "t2": {"type": "array", "items": _num, "minItems": 1},
                "t3": {"type": "array", "items": _num, "minItems": 1},
            },
        },
        "heatmap_size": {"type": "integer", "minimum": 8, "maximum": 2048},
        "output_dir": {"type": "string", "minLength": 1},
        "seed": {"type": "integer"},
    },
}

DEFAULTS = {
    "alpha_prime": 0.1,
    "mesh": {"level": 5, "refine_radius": 0.0, "refine_depth": 0},
    "solve": {"t": [1.0, 0.0, 0.0]},
    "flow": {"init": "stationary", "horizon": 1.0, "dt_safety": 0.25, "snapshot_every": 0,
             "thresholds": {}},
    "spectrum": {"k": 8, "c_tol": 1e-2},
    "index": {"full": True, "offset": 0},
    "periodmap": {"t1": [0.5, 1.0, 2.0], "t2": [-0.2, 0.0, 0.2], "t3": [-0.2, 0.0, 0.2]},
    "heatmap_size": 256,
    "output_dir": "runs",
    "seed": SEED,
}


class ConfigError(Exception):
    pass


class InvalidSolution(Exception):
    pass


def _merge(base, over):
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _line_of(text: str, key) -> int | None:
    needle = f'"{key}"'
    for i, line in enumerate(text.splitlines(), 1):
        if needle in line:
            return i
    return None


def load_config(path, overrides: dict | None = None) -> dict:
    """Parse, validate and resolve a run config; raises ``ConfigError``."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: malformed JSON: {exc.msg}") from exc
    return resolve_config(raw, overrides, text=text, source=str(path))


def resolve_config(raw, overrides: dict | None = None, text: str = "", source: str = "<config>"):
    validator = jsonschema.Draft7Validator(CONFIG_SCHEMA)
    errors = sorted(validator.iter_errors(raw), key=lambda e: list(e.absolute_path))
    if errors:
        msgs = []
        for e in errors:
            where = "$" + "".join(f"[{p}]" if isinstance(p, int) else f".{p}"
                                  for p in e.absolute_path)
            keys = [p for p in e.absolute_path if isinstance(p, str)]
            if e.validator == "additionalProperties":
                extra = sorted(set(e.instance) - set(e.schema.get("properties", {})))
                keys = keys + extra
            line = _line_of(text, keys[-1]) if keys and text else None
            loc = f"{source}:{line}" if line else source
            msgs.append(f"{loc}: {where}: {e.message}")
        raise ConfigError("\n".join(msgs))
    cfg = _merge(DEFAULTS, raw)
    for k, v in (overrides or {}).items():
        if v is None:
            continue
        if k == "mesh_level":
            if not 3 <= v <= 8:
                raise ConfigError(f"--mesh-level {v} outside [3, 8]")
            cfg["mesh"]["level"] = v
        else:
            cfg[k] = v
    return cfg


def branch_from_config(cfg) -> BranchConfiguration:
    b = cfg["branch"]
    try:
        if "family_a" in b:
            return BranchConfiguration.family(b["family_a"])
        return BranchConfiguration(tuple(complex(re, im) for re, im in b["points"]))
    except ValueError as exc:
        raise ConfigError(f"$.branch: {exc}") from exc


def _mesh(cfg, bc):
    m = cfg["mesh"]
    return build_sphere_mesh(bc, m["level"], m["refine_radius"], m["refine_depth"])


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if np.isfinite(x) else repr(x)
    if isinstance(x, complex):
        return [x.real, x.imag]
    return x


class Output:
    """Staged output directory, committed atomically by ``finish``."""

    def __init__(self, root, command, cfg, timestamp):
        self.root = Path(root)
        self.command = command
        self.cfg = cfg
        self.timestamp = timestamp
        self.root.mkdir(parents=True, exist_ok=True)
        self.stage = self.root / f".{command}-{os.getpid()}.partial"
        if self.stage.exists():
            shutil.rmtree(self.stage)
        self.stage.mkdir()

    def envelope(self, payload: dict) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "artifact_version": VERSION,
            "command": self.command,
            "timestamp": self.timestamp,
            "config": self.cfg,
            "result": payload,
        }

    def json(self, name, payload):
        with open(self.stage / name, "w", encoding="utf-8") as fh:
            json.dump(_jsonable(self.envelope(payload)), fh, indent=2, sort_keys=True)
            fh.write("\n")

    def csv(self, name, header, rows):
        with open(self.stage / name, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\r\n")
            w.writerow(header)
            for r in rows:
                w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x
                            for x in r])

    def path(self, name):
        return self.stage / name

    def heatmap(self, name, values, mesh):
        meta = {"schema_version": SCHEMA_VERSION, "artifact_version": VERSION,
                "timestamp": self.timestamp, "config": self.cfg, "field": name}
        emit_heatmap(values, mesh, self.stage / name, size=self.cfg["heatmap_size"], meta=meta)

    def finish(self) -> Path:
        stamp = self.timestamp.replace(":", "").replace("-", "").split(".")[0]
        final = self.root / f"{self.command}-{stamp}"
        i = 1
        while final.exists():
            final = self.root / f"{self.command}-{stamp}-{i}"
            i += 1
        os.replace(self.stage, final)
        return final

    def abort(self):
        shutil.rmtree(self.stage, ignore_errors=True)


def _vertex_rows(mesh, bc, cols: dict):
    z = mesh.zeta
    nk = neg_kappa_on_sphere(bc, mesh.vertices)
    names = list(cols)
    header = ["index", "re_zeta", "im_zeta", "kappa"] + names
    rows = []
    for i in range(mesh.n_vertices):
        zr, zi = (z[i].real, z[i].imag) if np.isfinite(abs(z[i])) else ("inf", "inf")
        rows.append([i, zr, zi, -nk[i]] + [cols[c][i] for c in names])
    return header, rows


# ---- commands -------------------------------------------------------------

def cmd_analyze(cfg, out: Output):
    bc = branch_from_config(cfg)
    B = branch_sphere_points(bc)
    hc = hemisphere_check(B)
    mesh = _mesh(cfg, bc)
    nk = neg_kappa_on_sphere(bc, mesh.vertices)
    inf_nk = -geometry_at_infinity(bc).kappa
    iv = int(np.argmax(nk))
    report = {
        "branch_points": [[p.real, p.imag] for p in bc.points],
        "branch_sphere_points": B,
        "hemisphere": {"feasible": hc.feasible, "margin": hc.margin,
                       "witness": None if hc.witness is None else hc.witness,
                       "lp_value": hc.lp_value},
        "neg_kappa_at_infinity": inf_nk,
        "max_neg_kappa": max(inf_nk, float(nk[iv])),
        "max_neg_kappa_vertex": {"index": iv, "point": mesh.vertices[iv], "value": nk[iv]},
        "min_neg_kappa_vertex": float(nk.min()),
        "vanishing_order_w": [kappa_vanishing_order(bc, k, "w") for k in range(8)],
        "vanishing_order_zeta": [kappa_vanishing_order(bc, k, "zeta") for k in range(8)],
        "mesh": {"n_vertices": mesh.n_vertices, "n_triangles": len(mesh.triangles),
                 "h": mesh.h, "fingerprint": mesh.fingerprint()},
    }
    out.json("analyze.json", report)
    write_mesh_csv(mesh, out.path("mesh_vertices.csv"), out.path("mesh_triangles.csv"))
    out.heatmap("neg_kappa", nk, mesh)
    return 0


def cmd_spectrum(cfg, out: Output):
    bc = branch_from_config(cfg)
    mesh = _mesh(cfg, bc)
    sp = cfg["spectrum"]
    kd = kernel_dim(bc, mesh, sp["c_tol"], sp["k"], seed=cfg["seed"])
    top = top_growth_rate(bc, mesh, seed=cfg["seed"])
    res = kd["result"]
    report = res.to_json()
    report.update(kernel_dim=kd["dim"], ambiguous=kd["ambiguous"],
                  angle_to_coordinates=kd["angle_to_coordinates"], lambda1=top["lambda1"])
    out.json("spectrum.json", report)
    V = res.eigenvectors
    header = ["index"] + [f"phi_{j}" for j in range(V.shape[1])]
    out.csv("eigenfunctions.csv", header, ([i] + list(V[i]) for i in range(V.shape[0])))
    out.heatmap("psi1", top["psi1"].values, mesh)
    return 0


def cmd_index(cfg, out: Output):
    bc = branch_from_config(cfg)
    mesh = _mesh(cfg, bc)
    ix = cfg["index"]
    r = morse_index(bc, mesh, full=ix["full"], offset=ix["offset"], seed=cfg["seed"])
    report = {"index_invariant": r["index_invariant"], "degree": r["degree"],
              "index_total": r["index_total"], "bounds": [2, 15],
              "invariant": r["invariant"].to_json()}
    if ix["full"]:
        report.update(index_antisymmetric=r["index_antisymmetric"], full=r["full"].to_json(),
                      sectors=r["sectors"], cut_pairs=r["cover"].cut_arcs)
    out.json("index.json", report)
    return 0


def cmd_solve(cfg, out: Output):
    bc = branch_from_config(cfg)
    mesh = _mesh(cfg, bc)
    rep = solve_reduced(bc, cfg["solve"]["t"], cfg["alpha_prime"], mesh)
    out.json("solve.json", rep.to_json())
    header, rows = _vertex_rows(mesh, bc, {"u": rep.u.values, "ef": rep.ef.values})
    out.csv("solution_vertices.csv", header, rows)
    out.heatmap("ef", rep.ef.values, mesh)
    if not rep.valid:
        raise InvalidSolution(f"t={cfg['solve']['t']} is outside the cone "
                              f"(margin {rep.margin:.6g})")
    return 0


def cmd_flow(cfg, out: Output):
    bc = branch_from_config(cfg)
    mesh = _mesh(cfg, bc)
    fc = cfg["flow"]
    ap = cfg["alpha_prime"]
    if fc["init"] == "stationary":
        rep = solve_reduced(bc, cfg["solve"]["t"], ap, mesh)
        if not rep.valid:
            raise InvalidSolution("stationary init needs a valid solve.t")
        init = rep.ef.values
    else:
        init = np.full(mesh.n_vertices, float(fc["init"].split(":", 1)[1]))
        if not np.all(init > 0):
            raise ConfigError("$.flow.init: constant must be positive")
    th = flow_mod.Thresholds.from_dict(fc["thresholds"])
    tr = flow_mod.run(bc, mesh, init, ap, fc["horizon"], th, fc["dt_safety"],
                      snapshot_every=fc["snapshot_every"])
    report = tr.to_json()
    try:
        report["fit"] = flow_mod.fit_growth(tr)
    except ValueError:
        report["fit"] = None
    out.json("trace.json", report)
    out.csv("trace.csv", ["time", "min_ef", "max_ef", "l1", "residual"], tr.samples)
    snaps = tr.snapshots or [(tr.final.time, tr.final.ef)]
    snaps = list(snaps)
    if snaps[-1][0] != tr.final.time:
        snaps.append((tr.final.time, tr.final.ef))
    header = ["index"] + [f"t={t!r}" for t, _ in snaps]
    out.csv("snapshots.csv", header,
            ([i] + [s[1][i] for s in snaps] for i in range(mesh.n_vertices)))
    out.heatmap("ef_final", tr.final.ef, mesh)
    return 0


def cmd_periodmap(cfg, out: Output):
    bc = branch_from_config(cfg)
    mesh = _mesh(cfg, bc)
    pm = cfg["periodmap"]
    ap = cfg["alpha_prime"]
    B = branch_sphere_points(bc)
    rows, skipped = [], []
    for t in itertools.product(pm["t1"], pm["t2"], pm["t3"]):
        t = np.array(t, dtype=float)
        if np.min(B @ t) <= 0:
            skipped.append(t)
            continue
        rep = solve_reduced(bc, t, ap, mesh)
        rows.append({"t": t, "T": rep.period, "F": potential(bc, t, ap, mesh)})
    out.json("periodmap.json", {"rows": rows, "outside_cone": skipped,
                                "all_T1_positive": bool(all(r["T"][0] > 0 for r in rows))})
    out.csv("periodmap.csv", ["t1", "t2", "t3", "T1", "T2", "T3", "F"],
            ([*r["t"], *r["T"], r["F"]] for r in rows))
    return 0


HANDLERS = {
    "analyze": cmd_analyze,
    "spectrum": cmd_spectrum,
    "index": cmd_index,
    "solve": cmd_solve,
    "flow": cmd_flow,
    "periodmap": cmd_periodmap,
}


def build_parser():
    p = argparse.ArgumentParser(prog="cgray", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", required=True, help="run config (JSON)")
    p.add_argument("--out", help="output root (overrides output_dir)")
    p.add_argument("--seed", type=int, help="eigensolver seed (overrides seed)")
    p.add_argument("--mesh-level", type=int, help="icosphere level (overrides mesh.level)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None, timestamp: str | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, {"output_dir": args.out, "seed": args.seed,
                                        "mesh_level": args.mesh_level})
        branch_from_config(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    ts = timestamp or _dt.datetime.now(_dt.timezone.utc).strftime("%Y-%m-%dT%H:%M:%S.%fZ")
    out = Output(cfg["output_dir"], args.command, cfg, ts)
    code = 0
    try:
        HANDLERS[args.command](cfg, out)
    except ConfigError as exc:
        out.abort()
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InvalidSolution as exc:
        print(f"invalid solution: {exc}", file=sys.stderr)
        code = EXIT_INVALID
    except (MeshError, FloatingPointError, AssertionError, np.linalg.LinAlgError,
            spla.ArpackError, spla.ArpackNoConvergence, ValueError) as exc:
        out.abort()
        print(f"numerical error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except BaseException:
        out.abort()
        raise
    final = out.finish()
    print(final)
    return code


if __name__ == "__main__":
    sys.exit(main())
