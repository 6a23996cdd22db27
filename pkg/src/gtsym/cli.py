"""Command-line front end.

Every run writes its data files plus ``manifest.json`` into ``--out``. Data
files carry no timestamps, so identical configurations give identical bytes.

Exit codes: 0 success, 1 invalid input (including usage errors), 2
numerical failure or ambiguous classification. Failures print a JSON error
record on stderr and also write it to ``error.json`` when possible.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ClassificationAmbiguous, InvalidArgument, NumericalFailure
from .model import ModelParams

SCHEMA = 1
COMMANDS = ("spectrum", "bands", "gbz", "evolve", "decompose", "phase-diagram", "lyapunov-scan", "green")


class UsageError(InvalidArgument):
    pass


# ---------------------------------------------------------------------------
# value parsing


def _float(key, text):
    try:
        return float(text)
    except (TypeError, ValueError):
        raise UsageError(f"{key}: expected a number, got {text!r}") from None


def _int(key, text):
    try:
        return int(text)
    except (TypeError, ValueError):
        raise UsageError(f"{key}: expected an integer, got {text!r}") from None


def _complex(key, text):
    try:
        return complex(str(text).replace(" ", "").replace("i", "j"))
    except ValueError:
        raise UsageError(f"{key}: expected a complex number like 1.5+0.2j, got {text!r}") from None


def _range(key, text):
    parts = str(text).split(":")
    if len(parts) != 2:
        raise UsageError(f"{key}: expected a range lo:hi, got {text!r}")
    lo, hi = (_float(key, p) for p in parts)
    if not lo < hi:
        raise UsageError(f"{key}: range must satisfy lo < hi, got {text!r}")
    return (lo, hi)


def _times(key, text):
    parts = str(text).split(":")
    if len(parts) != 2 or parts[0] not in ("lin", "log"):
        raise UsageError(f"{key}: expected lin:N or log:N, got {text!r}")
    n = _int(key, parts[1])
    if n < 2:
        raise UsageError(f"{key}: need at least 2 time points, got {n}")
    return (parts[0], n)


def _choice(*options):
    def conv(key, text):
        if text not in options:
            raise UsageError(f"{key}: expected one of {', '.join(options)}, got {text!r}")
        return text

    return conv


def _ident(key, text):
    return str(text)


_COMMON = {
    "t1": (_float, 1.0),
    "t2": (_float, 2.0),
    "cells": (_int, 40),
    "out": (_ident, "."),
    "format": (_choice("csv", "json"), "csv"),
}
_POINT = {"t3": (_float, None), "t4": (_float, None)}
_TIMES = {"tmax": (_float, "auto"), "times": (_times, ("lin", 201))}

OPTIONS = {
    "spectrum": {**_POINT},
    "bands": {**_POINT, "k-count": (_int, 201)},
    "gbz": {**_POINT},
    "evolve": {**_POINT, **_TIMES, "site": (_int, "middle"), "method": (_choice("spectral", "stepped"), "spectral")},
    "decompose": {**_POINT, **_TIMES, "site": (_int, "middle"), "k-count": (_int, 161)},
    "phase-diagram": {
        "kind": (_choice("eigenmode", "dynamic"), "dynamic"),
        "t3": (_range, (0.2, 8.0)),
        "t4": (_range, (0.2, 8.0)),
        "res": (_int, 32),
        "workers": (_int, "env"),
    },
    "lyapunov-scan": {
        "path": (_choice("path1", "path2"), "path2"),
        "samples": (_int, 32),
        "m": (_range, (0.0, 8.0)),
        "workers": (_int, "env"),
    },
    "green": {
        **_POINT,
        "omega": (_complex, None),
        "i": (_int, None),
        "j": (_int, None),
        "method": (_choice("contour", "resolvent"), "contour"),
    },
}


@dataclass
class RunConfig:
    """Resolved options of one run with their provenance."""

    command: str
    values: dict
    from_file: dict = field(default_factory=dict)
    from_flags: dict = field(default_factory=dict)

    @property
    def params(self) -> ModelParams:
        v = self.values
        return ModelParams(v["t1"], v["t2"], v.get("t3", 1.0), v.get("t4", 1.0), v["cells"])

    def out_dir(self) -> Path:
        return Path(self.values["out"])


def _norm_key(key: str) -> str:
    return key.strip().replace("_", "-")


def read_config_file(path) -> dict:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise UsageError(f"config: cannot read {path}: {exc.strerror}") from None
    for n, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"config line {n}: expected key=value, got {line!r}")
        k, v = line.split("=", 1)
        out[_norm_key(k)] = v.strip()
    return out


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="gtsym", description="Glide-time symmetric double SSH chain toolkit.")
    parser.add_argument("--version", action="version", version=f"gtsym {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for cmd in COMMANDS:
        p = sub.add_parser(cmd)
        p.add_argument("--config", default=None, help="flat key=value file; flags override it")
        for key in {**_COMMON, **OPTIONS[cmd]}:
            p.add_argument(f"--{key}", dest=key.replace("-", "_"), default=None)
    return parser


def parse_config(argv) -> RunConfig:
    """Merge defaults, config file and flags (in that order of precedence)."""
    ns = _build_parser().parse_args(argv)
    cmd = ns.command
    options = {**_COMMON, **OPTIONS[cmd]}
    flags = {k: getattr(ns, k.replace("-", "_")) for k in options if getattr(ns, k.replace("-", "_")) is not None}
    file_vals = read_config_file(ns.config) if ns.config else {}
    unknown = sorted(set(file_vals) - set(options))
    if unknown:
        raise UsageError(f"config: unknown key(s) {', '.join(unknown)} for command {cmd}")
    values = {}
    for key, (conv, default) in options.items():
        raw = flags.get(key, file_vals.get(key))
        if raw is None:
            if default is None:
                raise UsageError(f"{key}: required for command {cmd}")
            values[key] = default
        else:
            values[key] = conv(key, raw)
    return RunConfig(cmd, values, file_vals, flags)


# ---------------------------------------------------------------------------
# output


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    return str(x)


def _jsonable(x):
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if np.isfinite(x) else str(x)
    if isinstance(x, (np.bool_,)):
        return bool(x)
    if isinstance(x, complex):
        return {"re": _jsonable(x.real), "im": _jsonable(x.imag)}
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple, np.ndarray)):
        return [_jsonable(v) for v in x]
    return x


def write_table(config: RunConfig, name: str, columns: list[str], rows) -> Path:
    """Write ``name.csv`` (or ``name.json``) with a schema header."""
    out = config.out_dir()
    out.mkdir(parents=True, exist_ok=True)
    rows = list(rows)
    if config.values["format"] == "json":
        path = out / f"{name}.json"
        records = [{c: _jsonable(v) for c, v in zip(columns, r)} for r in rows]
        path.write_text(json.dumps({"schema": SCHEMA, "columns": columns, "records": records}, indent=1) + "\n")
        return path
    path = out / f"{name}.csv"
    with path.open("w", newline="") as fh:
        fh.write(f"# schema={SCHEMA}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(v) for v in r])
    return path


def _write_manifest(config: RunConfig, outputs: list[Path], results: dict) -> Path:
    out = config.out_dir()
    out.mkdir(parents=True, exist_ok=True)
    manifest = {
        "schema": SCHEMA,
        "version": __version__,
        "command": config.command,
        "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
        "config": _jsonable(config.values),
        "config_file": config.from_file,
        "flags": config.from_flags,
        "outputs": [p.name for p in outputs],
        "results": _jsonable(results),
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=1) + "\n")
    return path


# ---------------------------------------------------------------------------
# commands


def _time_grid(config: RunConfig, params: ModelParams) -> np.ndarray:
    from .dynamics import default_horizon, log_time_grid

    tmax = config.values["tmax"]
    tmax = default_horizon(params) if tmax == "auto" else tmax
    if tmax <= 0:
        raise InvalidArgument(f"tmax must be positive, got {tmax}")
    kind, n = config.values["times"]
    if kind == "log":
        return log_time_grid(tmax, n)
    return np.linspace(0.0, tmax, n)


def _site(config: RunConfig, params: ModelParams):
    s = config.values["site"]
    return None if s == "middle" else s


def _cmd_spectrum(config):
    from .spectral import obc_analysis

    p = config.params
    res = obc_analysis(p)
    es, cl = res.eigensystem, res.classification
    rows = [
        (n, e.real, e.imag, lab, com, ipr)
        for n, (e, lab, com, ipr) in enumerate(zip(es.eigenvalues, cl.labels, cl.center_of_mass, cl.ipr))
    ]
    path = write_table(config, "spectrum", ["mode", "energy_re", "energy_im", "label", "center_of_mass", "ipr"], rows)
    summary = {
        "condition_flag": es.condition_flag,
        "near_defective": es.near_defective,
        "counts": {k: cl.count(k) for k in ("edge", "skin", "bulk")},
    }
    return [path], summary


def _cmd_bands(config):
    from .decompose import group_velocity
    from .spectral import complex_zak_phase, kramers_gap, pbc_bands

    p = config.params
    bands = pbc_bands(p, config.values["k-count"])
    v = group_velocity(bands)
    rows = [
        (k, n, bands.energies[n, i].real, bands.energies[n, i].imag, v[n, i])
        for n in range(4)
        for i, k in enumerate(bands.k_grid)
    ]
    path = write_table(config, "bands", ["k", "band", "energy_re", "energy_im", "group_velocity"], rows)
    zak = complex_zak_phase(p)
    summary = {
        "zak_per_band": zak.per_band,
        "zak_total": zak.total_occupied,
        "gapless": zak.gapless,
        "kramers_gap": kramers_gap(p),
    }
    return [path], summary


def _cmd_gbz(config):
    from .gbz import compute_gbz, nhse_direction
    from .errors import UnsupportedBipolar

    curve = compute_gbz(config.params)
    rows = [(b.real, b.imag, e.real, e.imag, m) for b, e, m in zip(curve.beta, curve.energy, curve.source_mode)]
    path = write_table(config, "gbz", ["beta_re", "beta_im", "energy_re", "energy_im", "source_mode"], rows)
    try:
        direction = nhse_direction(curve)
    except UnsupportedBipolar:
        direction = "bipolar"
    summary = {
        "direction": direction,
        "self_intersections": [complex(z) for z in curve.self_intersections],
        "max_abs_beta": float(np.abs(curve.beta).max()),
        "min_abs_beta": float(np.abs(curve.beta).min()),
        "excluded_modes": curve.excluded_modes.tolist(),
    }
    return [path], summary


def _cmd_evolve(config):
    from .decompose import obc_mode_weights
    from .dynamics import delta_state, evolve, log_norm_trace
    from .spectral import obc_eigensystem

    p = config.params
    times = _time_grid(config, p)
    es = obc_eigensystem(p)
    psi0 = delta_state(p.n_cells, _site(config, p))
    raw = evolve(p, psi0, times, method=config.values["method"], eigensystem=es)
    prob = raw.probabilities()
    site_cols = [f"site_{s}" for s in range(p.n_sites)]
    profile = write_table(config, "profile", ["time", *site_cols], ([t, *row] for t, row in zip(times, prob)))
    norm = write_table(config, "norm", ["time", "log_norm_sq"], zip(times, log_norm_trace(raw)))
    W = obc_mode_weights(raw, es)
    E = es.eigenvalues
    rows = (
        (t, j, E[j].real, E[j].imag, W.weights[n, j].real, W.weights[n, j].imag)
        for n, t in enumerate(times)
        for j in range(E.size)
    )
    weights = write_table(config, "weights_obc", ["time", "mode", "energy_re", "energy_im", "weight_re", "weight_im"], rows)
    return [profile, norm, weights], {"method": raw.metadata["method"], "x0": raw.x0}


def _cmd_decompose(config):
    from .decompose import bz_fourier_weights, nonbloch_weights
    from .dynamics import delta_state, evolve
    from .gbz import compute_gbz
    from .spectral import obc_eigensystem, pbc_bands

    p = config.params
    times = _time_grid(config, p)
    es = obc_eigensystem(p)
    grid = evolve(p, delta_state(p.n_cells, _site(config, p)), times, eigensystem=es, normalization="per_instant")
    curve = compute_gbz(p, energies=es.eigenvalues)
    G = nonbloch_weights(grid, curve)
    rows = (
        (t, q, b.real, b.imag, br, G.weights[n, q, br].real, G.weights[n, q, br].imag)
        for n, t in enumerate(times)
        for q, b in enumerate(curve.beta)
        for br in (0, 1)
    )
    gbz_path = write_table(
        config, "weights_gbz", ["time", "point", "beta_re", "beta_im", "branch", "weight_re", "weight_im"], rows
    )
    bands = pbc_bands(p, config.values["k-count"])
    K = bz_fourier_weights(grid, bands)
    rows = ((t, k, b, K.weights[n, i, b]) for n, t in enumerate(times) for i, k in enumerate(bands.k_grid) for b in range(4))
    bz_path = write_table(config, "weights_bz", ["time", "k", "band", "weight"], rows)
    return [gbz_path, bz_path], {"excluded_points": int(G.excluded.sum())}


def _cmd_phase_diagram(config):
    from .phases import phase_diagram

    v = config.values
    base = ModelParams(v["t1"], v["t2"], 1.0, 1.0, v["cells"])
    workers = None if v["workers"] == "env" else v["workers"]
    grid = phase_diagram(v["kind"], v["t3"], v["t4"], v["res"], base=base, workers=workers)
    rows = []
    for idx, rec in enumerate(grid.records):
        i, j = divmod(idx, grid.t4.size)
        err = rec.get("error", "")
        if v["kind"] == "dynamic":
            rows.append((grid.t3[i], grid.t4[j], rec.get("phase_class", "error"), rec.get("direction", ""), rec.get("frequency", ""), err))
        else:
            rows.append(
                (grid.t3[i], grid.t4[j], rec.get("region", "error"), rec.get("topology", ""), rec.get("nhse", ""), rec.get("winding", ""), err)
            )
    cols = (
        ["t3", "t4", "class", "direction", "freq", "error"]
        if v["kind"] == "dynamic"
        else ["t3", "t4", "region", "topology", "nhse", "winding", "error"]
    )
    path = write_table(config, "phase_grid", cols, rows)
    mids = grid.boundary_midpoints()
    bpath = write_table(
        config,
        "phase_boundaries",
        ["i0", "j0", "i1", "j1", "t3_mid", "t4_mid"],
        (tuple(e) + tuple(m) for e, m in zip(grid.boundaries, mids)),
    )
    return [path, bpath], {"errors": sum("error" in r for r in grid.records)}


def _cmd_lyapunov_scan(config):
    from .phases import lyapunov_path_scan, second_difference_spike

    v = config.values
    base = ModelParams(v["t1"], v["t2"], 1.0, 1.0, v["cells"])
    workers = None if v["workers"] == "env" else v["workers"]
    samples = lyapunov_path_scan(v["path"], v["samples"], m_range=v["m"], base=base, workers=workers)
    rows = [(s.m, s.t3, s.t4, s.lam, s.growth_fit, s.phase_class, s.error or "") for s in samples]
    path = write_table(config, "lyapunov", ["m", "t3", "t4", "lambda", "growth_fit", "class", "error"], rows)
    idx, size = second_difference_spike([s.lam for s in samples])
    return [path], {"spike_index": idx, "spike_m": samples[idx].m, "spike_size": size}


def _cmd_green(config):
    from .gbz import boundary_correction_estimate, green_element

    p = config.params
    v = config.values
    g = green_element(p, v["omega"], v["i"], v["j"], method=v["method"])
    path = write_table(
        config, "green", ["omega_re", "omega_im", "i", "j", "method", "g_re", "g_im"],
        [(v["omega"].real, v["omega"].imag, v["i"], v["j"], v["method"], g.real, g.imag)],
    )
    est = boundary_correction_estimate(p, v["omega"], v["i"], v["j"])
    return [path], {"boundary_correction_estimate": est}


_DISPATCH = {
    "spectrum": _cmd_spectrum,
    "bands": _cmd_bands,
    "gbz": _cmd_gbz,
    "evolve": _cmd_evolve,
    "decompose": _cmd_decompose,
    "phase-diagram": _cmd_phase_diagram,
    "lyapunov-scan": _cmd_lyapunov_scan,
    "green": _cmd_green,
}


def run(config: RunConfig) -> int:
    outputs, results = _DISPATCH[config.command](config)
    _write_manifest(config, outputs, results)
    return 0


def _report(exc: Exception, code: int, out: str | None) -> int:
    record = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    text = json.dumps(record)
    print(text, file=sys.stderr)
    if out is not None:
        try:
            Path(out).mkdir(parents=True, exist_ok=True)
            (Path(out) / "error.json").write_text(text + "\n")
        except OSError:
            pass
    return code


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    config = None
    try:
        config = parse_config(argv)
        return run(config)
    except InvalidArgument as exc:
        return _report(exc, 1, config.values["out"] if config else None)
    except (NumericalFailure, ClassificationAmbiguous) as exc:
        return _report(exc, 2, config.values["out"] if config else None)


if __name__ == "__main__":
    sys.exit(main())
