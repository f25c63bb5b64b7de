"""Report generation: the strategy grid, Table-2-shaped summary, curves,
timing, and ablation tables. Regeneration from the same run directory is
byte-identical; wall-clock timing therefore lives in its own files and the
grid's sec_per_100_steps column stays empty."""

import csv
import json
import os

import numpy as np

from csplab.evalkit import min_max_normalize
from .pipeline import RunPaths, ConfigMismatchError

GRID_COLUMNS = ["strategy", "seed", "epoch", "ss", "ers", "ter_target",
                "ter_source", "trainable_params", "total_params",
                "sec_per_100_steps"]


def _fmt(x):
    if isinstance(x, float):
        return repr(x)
    return str(x)


def _load_rows(cfg, strategy, seed, transfer=False):
    paths = RunPaths(cfg.out_dir)
    p = paths.rows(strategy, seed, transfer)
    if not os.path.exists(p):
        return None
    with open(p) as f:
        doc = json.load(f)
    if doc.get("config_hash") != cfg.config_hash():
        raise ConfigMismatchError(f"rows file {p} has a stale config hash")
    return doc


def _collect(cfg, strategies, transfer=False):
    docs, missing = [], []
    for strategy in strategies:
        if strategy == "origin":
            doc = _load_rows(cfg, "origin", 0, transfer)
            if doc is None:
                missing.append("origin")
            else:
                docs.append(doc)
            continue
        found = False
        for seed in cfg.seeds:
            doc = _load_rows(cfg, strategy, seed, transfer)
            if doc is not None:
                docs.append(doc)
                found = True
        if not found:
            missing.append(strategy)
    return docs, missing


def _write_grid(path, docs):
    lines = []
    for doc in docs:
        for r in doc["rows"]:
            lines.append([doc["strategy"], doc["seed"], r["epoch"],
                          r["ss"], r["ers"], r["ter_target"], r["ter_source"],
                          doc["trainable"], doc["total"], ""])
    lines.sort(key=lambda row: (row[0], row[1], row[2]))
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(GRID_COLUMNS)
        for row in lines:
            w.writerow([_fmt(x) for x in row])
    return len(lines)


def final_epoch_stats(docs, reducer=np.mean):
    """Per strategy: reduced final-epoch metrics over seeds."""
    by_strategy = {}
    for doc in docs:
        final = doc["rows"][-1]
        by_strategy.setdefault(doc["strategy"], []).append(
            (final, doc["trainable"], doc["total"]))
    out = {}
    for s, entries in by_strategy.items():
        rows = [e[0] for e in entries]
        out[s] = {
            "ss": float(reducer([r["ss"] for r in rows])),
            "ers": float(reducer([r["ers"] for r in rows])),
            "ter_target": float(reducer([r["ter_target"] for r in rows])),
            "ter_source": float(reducer([r["ter_source"] for r in rows])),
            "trainable": entries[0][1],
            "total": entries[0][2],
        }
    return out


def _write_table2(path, cfg, stats, strategies):
    best = {}
    present = [s for s in strategies if s in stats]
    if present:
        best["ss"] = max(stats[s]["ss"] for s in present)
        best["ers"] = max(stats[s]["ers"] for s in present)
        best["ter_target"] = min(stats[s]["ter_target"] for s in present)
        best["ter_source"] = min(stats[s]["ter_source"] for s in present)
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["strategy", "param_trainable", "param_total", "ss", "ers",
                    "ter_target", "ter_source", "best_flags"])
        for s in strategies:
            if s not in stats:
                w.writerow([s, "", "", "", "", "", "", "MISSING"])
                continue
            st = stats[s]
            flags = [m for m in ("ss", "ers", "ter_target", "ter_source")
                     if st[m] == best[m]]
            w.writerow([s, st["trainable"], st["total"], _fmt(st["ss"]),
                        _fmt(st["ers"]), _fmt(st["ter_target"]),
                        _fmt(st["ter_source"]), "+".join(flags)])


def _write_curves(path, cfg, docs):
    per = {}
    for doc in docs:
        s = doc["strategy"]
        for r in doc["rows"]:
            per.setdefault(s, {}).setdefault(r["epoch"], []).append(r)
    curves = {}
    for s, by_epoch in sorted(per.items()):
        epochs = sorted(by_epoch)
        curves[s] = {"epochs": epochs}
        for metric in ("ss", "ers", "ter_target", "ter_source"):
            raw = [float(np.mean([r[metric] for r in by_epoch[e]])) for e in epochs]
            norm, flat = min_max_normalize(raw) if len(raw) else (np.array([]), True)
            curves[s][metric] = {"raw": raw, "normalized": norm.tolist(),
                                 "constant": bool(flat)}
    with open(path, "w") as f:
        json.dump(curves, f, sort_keys=True, indent=1)


def _write_timing_csv(cfg, paths):
    if not os.path.exists(paths.timing):
        return False
    with open(paths.timing) as f:
        doc = json.load(f)
    if doc.get("config_hash") != cfg.config_hash():
        raise ConfigMismatchError("timing.json has a stale config hash")
    with open(paths.timing_csv, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["strategy", f"seconds_per_{doc['n_steps']}_steps",
                    "steps_per_sec", "speedup_vs_full"])
        for s in sorted(doc["results"]):
            r = doc["results"][s]
            w.writerow([s, _fmt(r["seconds"]), _fmt(r["steps_per_sec"]),
                        _fmt(r.get("speedup_vs_full", ""))])
    return True


def _write_ablation(path, stats, strategies):
    groups = {
        "layer_count": [s for s in strategies
                        if s == "csp" or s.startswith("csp_plus_") or s == "full"],
        "layer_choice": [s for s in strategies
                         if s in ("csp", "2nd_smallest", "3rd_smallest",
                                  "2nd_largest", "3rd_largest")],
    }
    ablation_markers = {
        "layer_count": lambda s: s.startswith("csp_plus_"),
        "layer_choice": lambda s: s.endswith(("smallest", "largest")),
    }
    rows = []
    for group, members in groups.items():
        present = [s for s in members if s in stats]
        if any(ablation_markers[group](s) for s in present):
            for s in present:
                st = stats[s]
                rows.append([group, s, st["trainable"], _fmt(st["ss"]),
                             _fmt(st["ers"]), _fmt(st["ter_target"])])
    if not rows:
        return False
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["ablation", "strategy", "param_trainable", "ss", "ers",
                    "ter_target"])
        for r in rows:
            w.writerow(r)
    return True


def write_reports(cfg, log):
    """Emit report.csv / table2.csv / curves.json / timing.csv / ablation.csv."""
    log.stage("report")
    paths = RunPaths(cfg.out_dir)
    docs, missing = _collect(cfg, cfg.strategies)
    if "origin" not in [d["strategy"] for d in docs]:
        raise ConfigMismatchError("report requires the Origin evaluation row")
    n = _write_grid(paths.report_csv, docs)
    stats = final_epoch_stats(docs)
    _write_table2(paths.table2_csv, cfg, stats, cfg.strategies)
    _write_curves(paths.curves_json, cfg, docs)
    timing = _write_timing_csv(cfg, paths)
    ablation = _write_ablation(paths.ablation_csv, stats, cfg.strategies)
    for m in missing:
        log.log(f"report: WARNING missing rows for strategy {m!r}")
    log.log(f"report: {n} grid rows -> {paths.report_csv}"
            + ("" if timing else " (no timing data)")
            + (" (+ablation)" if ablation else ""))
    return {"rows": n, "missing": missing, "stats": stats}


def write_transfer_report(cfg, log):
    log.stage("transfer-report")
    paths = RunPaths(cfg.out_dir)
    strategies = ["origin"] + list(cfg.transfer.strategies)
    docs, missing = _collect(cfg, strategies, transfer=True)
    n = _write_grid(paths.transfer_report_csv, docs)
    stats = final_epoch_stats(docs)
    _write_table2(os.path.join(cfg.out_dir, "transfer-table2.csv"),
                  cfg, stats, strategies)
    for m in missing:
        log.log(f"transfer report: WARNING missing rows for {m!r}")
    log.log(f"transfer report: {n} rows -> {paths.transfer_report_csv}")
    return {"rows": n, "missing": missing, "stats": stats}
