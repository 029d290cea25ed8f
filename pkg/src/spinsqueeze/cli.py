"""
Command-line front end.

Every subcommand reads a JSON config (frequencies in Hz, lengths in mm) and
writes a tidy table or a JSON document. Exit codes: 0 success, 2 bad
configuration, 3 numerical failure, 4 fit did not converge (the result is
still written).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import analytic, engine, fitter, optics
from .errors import ConfigurationError, ModelError, NumericalError
from .model import (TWO_PI, EnsembleModel, build_cesium_ensemble, level_spec_from_dict,
                    model_from_dict, model_to_dict, ExtraneousNoiseSpec)
from .traces import format_float, to_db

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_NOT_CONVERGED = 4

SUBCOMMANDS = ("simulate", "sweep", "fit", "synth", "bip", "design-tophat", "ensemble")
MM = 1e-3


class Table:
    """Column names plus rows; rendered identically to CSV and JSON."""

    def __init__(self, columns, rows, meta=None):
        self.columns = list(columns)
        self.rows = [list(r) for r in rows]
        self.meta = meta

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns)
        for r in self.rows:
            w.writerow([_cell(v) for v in r])
        return buf.getvalue()

    def to_json_obj(self) -> dict:
        out = {"columns": self.columns, "rows": [[_json_value(v) for v in r] for r in self.rows]}
        if self.meta is not None:
            out["meta"] = _json_value(self.meta)
        return out


def _cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format_float(v)
    return str(v)


def _json_value(v):
    # nan/inf are not JSON; nan becomes null and infinities the strings used in CSV
    if isinstance(v, dict):
        return {k: _json_value(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_json_value(x) for x in v]
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return None
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    return v


# -- config helpers ----------------------------------------------------------------

def _load_json(path: Path) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise ConfigurationError(f"file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path}: invalid JSON ({exc})") from None


def _resolve(base: Path, p: str) -> Path:
    q = Path(p)
    return q if q.is_absolute() else base / q


def _model(cfg: dict, base: Path, key: str = "model") -> EnsembleModel:
    if key in cfg:
        return model_from_dict(cfg[key])
    if f"{key}_file" in cfg:
        return model_from_dict(_load_json(_resolve(base, cfg[f"{key}_file"])))
    raise ConfigurationError(f"config needs '{key}' or '{key}_file'")


def _grid(cfg: dict) -> np.ndarray:
    """Angular grid from ``freq_hz`` (list) or ``grid`` {start_hz, stop_hz, points}."""
    if "freq_hz" in cfg:
        f = np.asarray(cfg["freq_hz"], dtype=float)
    elif "grid" in cfg:
        g = cfg["grid"]
        try:
            f = np.linspace(float(g["start_hz"]), float(g["stop_hz"]), int(g["points"]))
        except KeyError as exc:
            raise ConfigurationError(f"grid is missing key {exc.args[0]!r}") from None
    else:
        raise ConfigurationError("config needs 'freq_hz' or 'grid'")
    return TWO_PI * f


def _angles(cfg: dict) -> list:
    if "angles_rad" in cfg:
        return [float(a) for a in np.atleast_1d(cfg["angles_rad"])]
    if "n_angles" in cfg:
        n = int(cfg["n_angles"])
        return [float(a) for a in np.arange(n) * (math.pi / n)]
    raise ConfigurationError("config needs 'angles_rad' or 'n_angles'")


def _psd_columns(db: bool):
    return ["freq_hz", "angle_rad", "psd_sn"] + (["psd_db"] if db else [])


def _psd_rows(freq_hz, angle, values, db: bool, prefix=()):
    dbv = to_db(values) if db else None
    rows = []
    for k in range(len(values)):
        a = angle[k] if np.ndim(angle) else angle
        row = list(prefix) + [float(freq_hz[k]), float(a), float(values[k])]
        if db:
            row.append(float(dbv[k]))
        rows.append(row)
    return rows


# -- subcommands -----------------------------------------------------------------

def cmd_simulate(cfg, args, base):
    model = _model(cfg, base)
    grid = _grid(cfg)
    traces = engine.simulate(model, grid, _angles(cfg), method=cfg.get("method", "full"),
                             include_extraneous=bool(cfg.get("include_extraneous", True)),
                             workers=args.workers)
    rows = []
    for t in traces:
        rows += _psd_rows(t.freq_hz, t.angle, t.values_sn, args.db)
    return Table(_psd_columns(args.db), rows), EXIT_OK


def cmd_sweep(cfg, args, base):
    model = _model(cfg, base)
    grid = _grid(cfg)
    inc = bool(cfg.get("include_extraneous", True))
    tab = engine.envelope_table(model, grid, _angles(cfg), include_extraneous=inc,
                                workers=args.workers)
    f = grid / TWO_PI
    rows = []
    for t in tab["traces"]:
        rows += _psd_rows(f, t.angle, t.values_sn, args.db, prefix=("trace",))
    rows += _psd_rows(f, math.nan, tab["swept_min"], args.db, prefix=("swept_min",))
    rows += _psd_rows(f, tab["optimum_angle"], tab["optimum"], args.db, prefix=("optimum",))
    rows += _psd_rows(f, math.nan, tab["closed_form"], args.db, prefix=("closed_form",))
    k = int(np.argmin(tab["optimum"]))
    meta = {
        "optimum_min_sn": float(tab["optimum"][k]),
        "optimum_min_db": float(to_db(tab["optimum"][k])),
        "optimum_min_freq_hz": float(f[k]),
        "swept_min_db": float(to_db(np.min(tab["swept_min"]))),
        "closed_form_min_db": float(to_db(np.min(tab["closed_form"]))),
    }
    return Table(["series"] + _psd_columns(args.db), rows, meta), EXIT_OK


def cmd_synth(cfg, args, base):
    model = _model(cfg, base)
    seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
    n_avg = int(cfg.get("n_avg", 1000))
    data = fitter.synthesize_dataset(model, _angles(cfg), _grid(cfg), n_avg, seed,
                                     workers=args.workers)
    cols = ["freq_hz", "psd_sn", "angle_rad", "n_avg"] + (["psd_db"] if args.db else [])
    rows = []
    for t, n in data:
        dbv = t.values_db
        for k, (f, v) in enumerate(zip(t.freq_hz, t.values_sn)):
            rows.append([float(f), float(v), t.angle, n] + ([float(dbv[k])] if args.db else []))
    return Table(cols, rows), EXIT_OK


def _response_correction(spec, n_traces):
    if spec is None:
        return None
    if "single_pole_hz" in spec:
        return fitter.single_pole_gain(float(spec["single_pole_hz"]))
    if "gain" in spec:
        g = spec["gain"]
        if g and isinstance(g[0], list):
            if len(g) != n_traces:
                raise ConfigurationError("need one gain curve per trace")
            return [np.asarray(x, dtype=float) for x in g]
        return np.asarray(g, dtype=float)
    raise ConfigurationError("response_correction needs 'single_pole_hz' or 'gain'")


def cmd_fit(cfg, args, base):
    model = _model(cfg, base)
    if "data" in cfg:
        dataset = fitter.read_traces_csv(_resolve(base, cfg["data"]))
    elif "records" in cfg:
        dataset = fitter.traces_from_records(cfg["records"])
    else:
        raise ConfigurationError("fit config needs 'data' (CSV path) or 'records'")
    problem = fitter.FitProblem(
        dataset=dataset,
        initial_model=model,
        free=cfg.get("free", {}),
        initial_angles=cfg.get("initial_angles_rad"),
        response_correction=_response_correction(cfg.get("response_correction"), len(dataset)),
    )
    result = fitter.global_fit(problem, max_iterations=int(cfg.get("max_iterations", fitter.MAX_ITERATIONS)),
                               workers=args.workers)
    doc = result.to_dict()
    status = EXIT_OK if result.converged else EXIT_NOT_CONVERGED
    if args.format == "json":
        return doc, status
    rows = [[p["name"], p["unit"], p["value"], p["stderr"], p["free"]] for p in doc["parameters"]]
    return Table(["name", "unit", "value", "stderr", "free"], rows), status


def _number(v) -> float:
    if isinstance(v, str) and v.lower() in ("inf", "infinity"):
        return math.inf
    return float(v)


def cmd_bip(cfg, args, base):
    cases = cfg.get("cases", [cfg])
    rows = []
    for c in cases:
        try:
            eta, ext, zeta, cq = (_number(c["eta"]), _number(c.get("s_pp_ext_sn", 0.0)),
                                  _number(c.get("zeta", 0.0)), _number(c.get("c_q", "inf")))
        except KeyError as exc:
            raise ConfigurationError(f"bip case is missing key {exc.args[0]!r}") from None
        try:
            value = analytic.backaction_imprecision_product(eta, ext, zeta, cq)
        except ModelError as exc:
            raise ConfigurationError(str(exc)) from None
        rows.append([eta, ext, zeta, cq, value])
    return Table(["eta", "s_pp_ext_sn", "zeta", "c_q", "bip_hbar_half"], rows), EXIT_OK


def cmd_design_tophat(cfg, args, base):
    try:
        w_in = float(cfg["w_in_mm"]) * MM
        fan = float(cfg["fan_angle_rad"])
        f1 = float(cfg["f1_mm"]) * MM
        F1 = float(cfg["F1_mm"]) * MM
        F2 = float(cfg["F2_mm"]) * MM
    except KeyError as exc:
        raise ConfigurationError(f"design config is missing key {exc.args[0]!r}") from None
    f2 = cfg.get("f2_mm")
    design = optics.design_tophat(w_in, fan, f1, F1, F2,
                                  f2=None if f2 is None else float(f2) * MM,
                                  invert=bool(cfg.get("invert", False)),
                                  method=cfg.get("method", "analytic"))
    rows = [[s, e, z / MM, y / MM, t] for s, e, z, y, t in optics.marginal_ray_table(design)]
    ray = Table(["setup", "element", "z_mm", "height_mm", "slope_rad"], rows)
    if args.format == "json":
        return {"design": _json_value(design.to_dict(MM)), "units": "mm",
                "marginal_ray": ray.to_json_obj()}, EXIT_OK
    return ray, EXIT_OK


def cmd_ensemble(cfg, args, base):
    spec = level_spec_from_dict(cfg)
    ext = cfg.get("extraneous")
    extraneous = None
    if ext is not None:
        extraneous = ExtraneousNoiseSpec(float(ext["amplitude_sn"]), TWO_PI * float(ext["width_hz"]),
                                         TWO_PI * float(ext.get("center_hz", cfg["larmor_hz"])))
    model = build_cesium_ensemble(spec, eta=float(cfg.get("eta", 1.0)), extraneous=extraneous,
                                  damping=cfg.get("damping", "symmetric"))
    doc = model_to_dict(model)
    if args.format == "json":
        return doc, EXIT_OK
    rows = [[i, m["omega_hz"], m["gamma0_hz"], m["gamma_meas_hz"], m["zeta"], m["n_th"]]
            for i, m in enumerate(doc["modes"])]
    return Table(["mode", "omega_hz", "gamma0_hz", "gamma_meas_hz", "zeta", "n_th"], rows), EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "sweep": cmd_sweep,
    "fit": cmd_fit,
    "synth": cmd_synth,
    "bip": cmd_bip,
    "design-tophat": cmd_design_tophat,
    "ensemble": cmd_ensemble,
}


# -- entry point -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spinsqueeze",
        description="Homodyne spectra of measured spin oscillators, spectral fits and probe-beam design.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, type=Path, help="JSON configuration file")
    common.add_argument("--out", type=Path, help="output file (default: stdout)")
    common.add_argument("--format", choices=("csv", "json"), default="csv")
    common.add_argument("--seed", type=int, help="RNG seed (synth)")
    common.add_argument("--db", action="store_true", help="add a psd_db column")
    common.add_argument("--workers", type=int, default=1,
                        help="threads for frequency-grid evaluation; output does not depend on it")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        sub.add_parser(name, parents=[common])
    return parser


def _render(obj, fmt: str) -> str:
    if isinstance(obj, Table):
        if fmt == "csv":
            return obj.to_csv()
        obj = obj.to_json_obj()
    return json.dumps(_json_value(obj), indent=2, allow_nan=False) + "\n"


def run(args) -> int:
    if args.workers < 1:
        raise ConfigurationError("--workers must be >= 1")
    cfg = _load_json(args.config)
    if not isinstance(cfg, dict):
        raise ConfigurationError("config must be a JSON object")
    obj, status = COMMANDS[args.command](cfg, args, args.config.parent)
    text = _render(obj, args.format)
    if args.out is None:
        sys.stdout.write(text)
    else:
        try:
            with open(args.out, "w", newline="") as fh:
                fh.write(text)
        except OSError as exc:
            raise ConfigurationError(f"cannot write {args.out}: {exc}") from None
    if status == EXIT_NOT_CONVERGED:
        print("spinsqueeze: fit did not converge; best estimates written", file=sys.stderr)
    return status


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return run(args)
    except NumericalError as exc:
        print(f"spinsqueeze: numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ConfigurationError, ModelError, ValueError, KeyError, TypeError) as exc:
        print(f"spinsqueeze: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
