"""Artifact writers.  All floats are written with ``repr`` so files round-trip
exactly and reruns are byte-identical."""

from __future__ import annotations

import csv
import hashlib
import json
from pathlib import Path

import numpy as np

from .analysis import ManipulationMap, PrecisionReport, SweepReport
from .cfl import SCHEMA_VERSION, ConditionalTable, MacroAssignment

FORMAT_VERSIONS = {"assignment": SCHEMA_VERSION, "table": SCHEMA_VERSION, "report": 1, "manifest": 1}


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return int(v)
    return v


def write_csv(path, header, rows) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_cell(v) for v in row])
    return path


def write_json(path, obj) -> Path:
    path = Path(path)
    path.write_text(json.dumps(obj, indent=1, sort_keys=True, default=_json_default) + "\n")
    return path


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    raise TypeError(f"not serializable: {type(o)}")


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def write_assignment(out: Path, a: MacroAssignment, time, truth=None) -> list[Path]:
    header = ["sample", "time", "w", "w_effective", "t", "t_effective"]
    cols = [np.arange(a.w_labels.size), time, a.w_labels, a.w_effective, a.t_labels, a.t_effective]
    if truth is not None:
        header.append("truth")
        cols.append(truth)
    p1 = write_csv(out / "assignment.csv", header, zip(*cols))
    p2 = write_json(out / "assignment.json", a.to_dict())
    return [p1, p2]


def write_table(path, table: ConditionalTable, row_name="w", col_name="t") -> Path:
    n_t = table.probs.shape[1]
    header = [row_name, "count", *(f"{col_name}{j}" for j in range(n_t))]
    rows = ([i, int(table.counts[i]), *table.probs[i]] for i in range(table.probs.shape[0]))
    return write_csv(path, header, rows)


def write_precision(out: Path, rep: PrecisionReport, prefix="precision") -> list[Path]:
    p1 = write_csv(out / f"{prefix}.csv", ["metric", "value", "cell"],
                   ((k, v, rep.argmax[k]) for k, v in rep.as_dict().items()))
    thetas = list(rep.fractions)
    p2 = write_csv(out / f"{prefix}_cells.csv", ["cell", "size", *(f"c_{t!r}" for t in thetas)],
                   ([int(c), int(s), *(rep.fractions[t][i] for t in thetas)]
                    for i, (c, s) in enumerate(zip(rep.cells, rep.cell_sizes))))
    return [p1, p2]


def _grid_rows(field_2d, lats, lons):
    for i, lat in enumerate(lats):
        for j, lon in enumerate(lons):
            yield float(lat), float(lon), field_2d[i, j]


def write_state_means(path, fields: dict[str, np.ndarray], lats, lons) -> Path:
    """Tidy per-state mean-difference fields: ``variable, state, lat, lon, value``."""
    def rows():
        for variable, stack in fields.items():
            for s in range(stack.shape[0]):
                for lat, lon, v in _grid_rows(stack[s], lats, lons):
                    yield variable, s, lat, lon, v
    return write_csv(path, ["variable", "state", "lat", "lon", "value"], rows())


def write_manipulation_maps(path, maps: list[ManipulationMap], lats, lons) -> Path:
    def rows():
        for m in maps:
            for lat, lon, v in _grid_rows(m.field, lats, lons):
                yield m.from_cell, m.to_cell, m.count, lat, lon, v
    return write_csv(path, ["from", "to", "count", "lat", "lon", "value"], rows())


def write_sweep(path, sweep: SweepReport) -> Path:
    return write_csv(path, ["K", "method", "metric", "value"], sweep.rows())


def write_manifest(out: Path, config_text: str, config_sha: str, seed: int, inputs: dict[str, str],
                   artifacts: list[Path], extra: dict | None = None) -> Path:
    manifest = {
        "config": config_text,
        "config_sha256": config_sha,
        "seed": seed,
        "format_versions": FORMAT_VERSIONS,
        "inputs": inputs,
        "artifacts": {p.name: sha256_file(p) for p in sorted(artifacts, key=lambda p: p.name)},
    }
    if extra:
        manifest.update(extra)
    return write_json(out / "manifest.json", manifest)
