"""Batch front end.

Exit codes: 0 success, 1 configuration error, 2 data error, 3 computation error.
The number of BLAS threads can be pinned with ``CFLENSO_NUM_THREADS``.
"""

from __future__ import annotations

import argparse
import contextlib
import dataclasses
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import (
    SweepSettings,
    baseline_precision,
    k_sweep,
    minimal_manipulation,
    precision,
    reshuffle_test,
    run_cfl,
    state_mean_differences,
    subset_chain,
)
from .cfl import conditional_table
from .clustering import adjusted_rand_index
from .config import (
    RunConfig,
    config_hash,
    config_to_text,
    default_config_text,
    load_config,
    override,
)
from .errors import CflError, ConfigError
from .grid import (
    anomaly_series,
    climatology,
    extract_region,
    flatten_pairs,
    load_grid_series,
    running_weekly_average,
    write_grid_series,
)
from .reports import (
    sha256_file,
    write_assignment,
    write_csv,
    write_json,
    write_manifest,
    write_manipulation_maps,
    write_precision,
    write_state_means,
    write_sweep,
    write_table,
)
from .synthetic import enso_like_generate, toy_generate

log = logging.getLogger("cflenso")

THREADS_ENV = "CFLENSO_NUM_THREADS"


@dataclass
class Inputs:
    data: object
    anomalies: np.ndarray | None
    lats: np.ndarray | None
    lons: np.ndarray | None
    checksums: dict[str, str] = field(default_factory=dict)
    zw: object = None
    sst: object = None


def preprocess_files(cfg: RunConfig):
    d, p = cfg.data, cfg.preprocess
    zw = load_grid_series(d.zw_path, d.format)
    sst = load_grid_series(d.sst_path, d.format)
    if not d.preprocessed:
        zw = extract_region(running_weekly_average(zw, p.window_days), p.band)
        sst = extract_region(running_weekly_average(sst, p.window_days), p.band)
    return zw, sst


def load_inputs(cfg: RunConfig) -> Inputs:
    src = cfg.data.source
    if src == "toy":
        data = toy_generate(cfg.toy.generator_config(cfg.run.seed))
        return Inputs(data, None, None, None, {"generator": "toy"})
    if src == "synthetic":
        syn = enso_like_generate(cfg.synthetic.generator_config(cfg.run.seed))
        anomalies = anomaly_series(syn.sst, climatology(syn.sst), cfg.preprocess.nino)
        return Inputs(syn.data, anomalies, syn.sst.lats, syn.sst.lons, {"generator": "enso_like"},
                      syn.zw, syn.sst)
    zw, sst = preprocess_files(cfg)
    lag = cfg.preprocess.lag_steps
    anomalies = anomaly_series(sst, climatology(sst), cfg.preprocess.nino)[lag:]
    data = flatten_pairs(zw, sst, lag)
    sums = {Path(cfg.data.zw_path).name: sha256_file(cfg.data.zw_path),
            Path(cfg.data.sst_path).name: sha256_file(cfg.data.sst_path)}
    return Inputs(data, anomalies, sst.lats, sst.lons, sums, zw, sst)


def settings_from(cfg: RunConfig) -> SweepSettings:
    return SweepSettings(knn_k=cfg.cfl.knn_k, reg_cfg=cfg.regressor.regressor_config(), tol_tv=cfg.cfl.tol_tv,
                         n_restarts=cfg.cfl.n_restarts, seed=cfg.run.seed,
                         tol_expectation=cfg.cfl.tol_expectation)


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.run.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _finish(out: Path, cfg: RunConfig, inputs: Inputs, artifacts: list[Path], extra=None) -> Path:
    text = config_to_text(cfg)
    cfg_path = out / "config.ini"
    cfg_path.write_text(text)
    artifacts = [*artifacts, cfg_path]
    return write_manifest(out, text, config_hash(cfg), cfg.run.seed, inputs.checksums, artifacts,
                          {"package_version": __version__, **(extra or {})})


def cmd_run(cfg: RunConfig) -> int:
    out = _out_dir(cfg)
    inputs = load_inputs(cfg)
    data = inputs.data
    a = run_cfl(data, cfg.cfl.kw, cfg.cfl.kt, settings_from(cfg))
    arts = write_assignment(out, a, data.time, data.truth_w)
    arts.append(write_table(out / "conditional_table.csv", conditional_table(a, effective=False)))
    arts.append(write_table(out / "conditional_table_effective.csv", conditional_table(a, effective=True)))
    summary = {"n_samples": len(data), "n_w": a.n_w, "n_t": a.n_t, "n_effective_w": a.n_effective_w,
               "n_effective_t": a.n_effective_t, "best_epoch": a.regressor.history.best_epoch}
    if data.truth_w is not None:
        summary["ari_w"] = adjusted_rand_index(a.w_labels, data.truth_w)
        summary["ari_t"] = adjusted_rand_index(a.t_labels, data.truth_t)
    if inputs.anomalies is not None:
        rep = precision(a.t_labels, inputs.anomalies, n_cells=a.n_t)
        summary["precision"] = rep.as_dict()
        arts += write_precision(out, rep)
        arts.append(write_csv(out / "anomalies.csv", ["sample", "time", "anomaly"],
                              zip(range(len(data)), data.time, inputs.anomalies)))
        yg = data.y_grid
        arts.append(write_state_means(out / "state_means.csv", {
            "zw": state_mean_differences(data.X, a.w_labels, a.n_w, data.x_grid),
            "sst": state_mean_differences(data.Y, a.t_labels, a.n_t, yg),
        }, inputs.lats, inputs.lons))
        maps = [minimal_manipulation(data.Y, a.t_labels, i, j, yg)
                for i in range(a.n_t) for j in range(a.n_t) if i != j]
        arts.append(write_manipulation_maps(out / "manipulation_maps.csv", maps, inputs.lats, inputs.lons))
    arts.append(write_json(out / "summary.json", summary))
    _finish(out, cfg, inputs, arts, {"n_effective_w": a.n_effective_w, "n_effective_t": a.n_effective_t,
                                     **({"ari_w": summary["ari_w"]} if "ari_w" in summary else {})})
    log.info("run finished: %s", summary)
    return 0


def _require_anomalies(inputs: Inputs, what: str):
    if inputs.anomalies is None:
        raise ConfigError(f"{what} needs SST anomalies; use source = synthetic or files")


def cmd_sweep(cfg: RunConfig, k_values=None) -> int:
    out = _out_dir(cfg)
    inputs = load_inputs(cfg)
    _require_anomalies(inputs, "sweep")
    ks = list(k_values or cfg.run.k_values)
    sweep = k_sweep(inputs.data, ks, inputs.anomalies, settings_from(cfg))
    arts = [write_sweep(out / "sweep.csv", sweep),
            write_csv(out / "sweep_failures.csv", ["K", "method", "error"], sweep.failures)]
    done = [k for k in sweep.k_values if (k, "cfl") in sweep.t_labels]
    if len(done) > 1:
        links = subset_chain([sweep.t_labels[(k, "cfl")] for k in done], inputs.anomalies, done)
        arts.append(write_csv(out / "subset_chain.csv", ["K", "K_next", "elnino", "lanina"],
                              ((l.k_small, l.k_large, l.elnino_containment, l.lanina_containment)
                               for l in links)))
    _finish(out, cfg, inputs, arts, {"k_values": ks, "n_failures": len(sweep.failures)})
    return 3 if sweep.failures and not sweep.reports else 0


def cmd_reshuffle(cfg: RunConfig, n_trials=None) -> int:
    out = _out_dir(cfg)
    inputs = load_inputs(cfg)
    res = reshuffle_test(inputs.data, cfg.cfl.kw, cfg.cfl.kt, cfg.run.seed, n_trials or cfg.run.reshuffle_trials,
                         cfg.cfl.knn_k, cfg.regressor.regressor_config(), cfg.cfl.tol_tv, inputs.anomalies,
                         cfg.cfl.n_restarts, cfg.cfl.tol_expectation)
    arts = [write_table(out / "reshuffle_table.csv", res.trials[0].table)]
    for i, t in enumerate(res.trials):
        arts.append(write_table(out / f"reshuffle_table_trial{i}.csv", t.table))
    rows = []
    for i, t in enumerate(res.trials):
        p = t.precision.as_dict() if t.precision else {}
        rows.append([i, t.max_row_tv, t.n_w, t.n_effective_w, *(p.get(k, "") for k in
                     ("mild_elnino", "strong_elnino", "mild_lanina", "strong_lanina"))])
    arts.append(write_csv(out / "reshuffle_trials.csv",
                          ["trial", "max_row_tv", "n_w", "n_effective_w", "mild_elnino", "strong_elnino",
                           "mild_lanina", "strong_lanina"], rows))
    _finish(out, cfg, inputs, arts, {"max_row_tv": res.max_row_tv})
    return 0


def cmd_baseline(cfg: RunConfig, k=None, modes=("sst_only", "joint")) -> int:
    out = _out_dir(cfg)
    inputs = load_inputs(cfg)
    _require_anomalies(inputs, "baseline")
    k = k or cfg.cfl.kt
    arts = []
    for mode in modes:
        rep, _ = baseline_precision(inputs.data, k, inputs.anomalies, mode, cfg.run.seed, cfg.cfl.n_restarts)
        arts += write_precision(out, rep, prefix=f"baseline_{mode}")
    global_rate = {name: float(np.mean(inputs.anomalies > t) if t > 0 else np.mean(inputs.anomalies < t))
                   for name, t in zip(("mild_elnino", "strong_elnino", "mild_lanina", "strong_lanina"),
                                      (0.5, 1.5, -0.5, -1.5))}
    arts.append(write_json(out / "global_exceedance.json", global_rate))
    _finish(out, cfg, inputs, arts, {"k": k})
    return 0


def toy_report(cfg: RunConfig) -> tuple[dict, object]:
    data = toy_generate(cfg.toy.generator_config(cfg.run.seed))
    s = dataclasses.replace(settings_from(cfg), knn_k=cfg.toy.knn_k)
    a = run_cfl(data, cfg.cfl.kw, cfg.cfl.kt, s)
    var_ratio = float(np.var(a.expectations) / np.var(data.Y))
    g = a.knn.values
    cv = (g.std(axis=0) / g.mean(axis=0)).tolist()
    report = {
        "n_samples": len(data),
        "kw_requested": cfg.cfl.kw,
        "n_w": a.n_w,
        "n_effective_w": a.n_effective_w,
        "n_effective_t": a.n_effective_t,
        "knn_k": cfg.toy.knn_k,
        "regression_variance_ratio": var_ratio,
        "knn_column_cv": cv,
        "checks": {
            "constant_regression": var_ratio < 0.01,
            "single_effective_input_state": a.n_effective_w == 1,
            "flat_knn_rows": max(cv) < 0.2,
        },
    }
    return report, a


def cmd_toy(cfg: RunConfig) -> int:
    out = _out_dir(cfg)
    report, a = toy_report(cfg)
    arts = [write_json(out / "toy_report.json", report),
            write_csv(out / "toy_knn_cv.csv", ["w", "cv"], enumerate(report["knn_column_cv"])),
            write_table(out / "conditional_table.csv", conditional_table(a, effective=False))]
    _finish(out, cfg, Inputs(None, None, None, None, {"generator": "toy"}), arts,
            {"n_effective_w": report["n_effective_w"], "checks": report["checks"]})
    return 0 if all(report["checks"].values()) else 3


def cmd_ingest(cfg: RunConfig) -> int:
    if cfg.data.source != "files":
        raise ConfigError("ingest needs data.source = files")
    out = _out_dir(cfg)
    inputs = load_inputs(cfg)
    arts = [write_grid_series(inputs.zw, out / "zw_processed.bin"),
            write_grid_series(inputs.sst, out / "sst_processed.bin")]
    arts += [out / "zw_processed.bin.json", out / "sst_processed.bin.json"]
    arts.append(write_csv(out / "anomalies.csv", ["sample", "time", "anomaly"],
                          zip(range(len(inputs.data)), inputs.data.time, inputs.anomalies)))
    _finish(out, cfg, inputs, arts, {"grid": list(inputs.sst.grid_shape), "n_pairs": len(inputs.data)})
    return 0


def _int_list(text: str) -> tuple[int, ...]:
    try:
        vals = []
        for part in text.split(","):
            part = part.strip()
            if "-" in part[1:]:
                lo, hi = part.split("-", 1)
                vals.extend(range(int(lo), int(hi) + 1))
            elif part:
                vals.append(int(part))
        return tuple(vals)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad integer list {text!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cflenso", description="Causal feature learning on gridded climate data.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="INI configuration file")
        p.add_argument("--kw", type=int)
        p.add_argument("--kt", type=int)
        p.add_argument("--knn-k", type=int)
        p.add_argument("--seed", type=int)
        p.add_argument("--out")
        p.add_argument("-v", "--verbose", action="store_true", help="log progress")
        return p

    common(sub.add_parser("print-config", help="print the configuration (defaults unless --config)"))
    common(sub.add_parser("ingest", help="smooth, crop and pair input files"))
    common(sub.add_parser("run", help="learn W and T and write all reports"))
    p = common(sub.add_parser("sweep", help="precision of every method over a range of K"))
    p.add_argument("--k-values", type=_int_list, help="e.g. 2-16 or 4,8,12")
    p = common(sub.add_parser("reshuffle", help="pipeline on time-reshuffled pairs"))
    p.add_argument("--trials", type=int)
    p = common(sub.add_parser("baseline", help="k-means precision baselines"))
    p.add_argument("--k", type=int)
    p.add_argument("--mode", choices=("sst_only", "joint", "both"), default="both")
    common(sub.add_parser("toy", help="two-band toy example"))
    return parser


def resolve_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    cfg = override(cfg, "cfl", kw=args.kw, kt=args.kt, knn_k=args.knn_k)
    cfg = override(cfg, "run", seed=args.seed, out=args.out)
    return cfg.validate()


@contextlib.contextmanager
def _thread_limit():
    raw = os.environ.get(THREADS_ENV)
    if not raw:
        yield
        return
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
    from threadpoolctl import threadpool_limits

    with threadpool_limits(limits=n):
        yield


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        if args.command == "print-config":
            sys.stdout.write(config_to_text(cfg) if args.config else default_config_text())
            return 0
        with _thread_limit():
            if args.command == "run":
                return cmd_run(cfg)
            if args.command == "sweep":
                return cmd_sweep(cfg, args.k_values)
            if args.command == "reshuffle":
                return cmd_reshuffle(cfg, args.trials)
            if args.command == "baseline":
                modes = ("sst_only", "joint") if args.mode == "both" else (args.mode,)
                return cmd_baseline(cfg, args.k, modes)
            if args.command == "toy":
                return cmd_toy(cfg)
            if args.command == "ingest":
                return cmd_ingest(cfg)
    except CflError as exc:
        print(f"cflenso: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except Exception as exc:  # noqa: BLE001
        log.exception("unexpected failure")
        print(f"cflenso: error: {exc}", file=sys.stderr)
        return 3
    return 1


if __name__ == "__main__":
    sys.exit(main())
