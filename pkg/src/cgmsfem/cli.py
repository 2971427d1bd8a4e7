"""Experiment driver and command line interface.

`run` executes the full pipeline from a JSON config: build grids, generate or
load the coefficient ensemble, fine reference solves, per-neighborhood model
reduction and clustering, offline bases per cluster count, coarse solves per
basis count, optional online enrichment, and error tables.  All outputs are
deterministic functions of the config, so reruns produce byte-identical CSVs.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from ._util import pmap
from .clustering import build_features, kmeans, partition_realizations
from .exceptions import ConfigurationError, IngestionError, NumericalError
from .fem import fine_reference_solve
from .fields import (
    case1_config,
    generate_inclusion_medium,
    generate_logsine_medium,
    load_ensemble,
    save_ensemble,
    Inclusion,
    InclusionMediumConfig,
)
from .grid import build_grids, neighborhood, oversample
from .localreduce import (
    certify_snapshot_count,
    kl_expand,
    local_randomized_snapshots,
    reduced_coefficients,
)
from .offline import assemble_offline_space, build_cluster_basis
from .online import enrich
from .solver import compute_errors, solve


@dataclass
class ExperimentConfig:
    """Validated experiment description (see from_dict for the JSON keys)."""

    nx: int = 40
    ny: int = 40
    Nx: int = 4
    Ny: int = 4
    medium: dict = field(default_factory=lambda: {"type": "logsine"})
    M: int = 10
    subset_size: int | None = None
    clusters: tuple = (1,)
    basis_counts: tuple = (3,)
    online_rounds: int = 0
    online_basis: int = 3
    oversample_layers: int = 4
    seed: int = 0
    eps: float = 1e-3
    alpha: float = 10.0
    k_probe: int = 5
    energy_tol: float = 0.99
    mode: str = "per-realization"
    error_subset_size: int = 10
    source: float = 1.0
    include_local_source: bool = False
    threads: int = 1
    cache_dir: str | None = None

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(raw) - known
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls(**raw)
        cfg.clusters = tuple(int(j) for j in cfg.clusters)
        cfg.basis_counts = tuple(int(b) for b in cfg.basis_counts)
        cfg._validate()
        return cfg

    def _validate(self):
        pos = {
            "nx": self.nx, "ny": self.ny, "Nx": self.Nx, "Ny": self.Ny,
            "M": self.M, "error_subset_size": self.error_subset_size,
            "k_probe": self.k_probe, "threads": self.threads,
        }
        for name, val in pos.items():
            if int(val) < 1:
                raise ConfigurationError(f"{name} must be positive, got {val}")
        if self.nx % self.Nx or self.ny % self.Ny:
            raise ConfigurationError(
                f"coarse grid {self.Nx}x{self.Ny} does not divide fine grid "
                f"{self.nx}x{self.ny}"
            )
        if self.seed < 0:
            raise ConfigurationError("seed must be non-negative")
        if not self.clusters or any(j < 1 or j > self.M for j in self.clusters):
            raise ConfigurationError("cluster counts must satisfy 1 <= J <= M")
        max_snap = 4 * (self.nx // self.Nx) + 4 * (self.ny // self.Ny)
        needed = list(self.basis_counts) + (
            [self.online_basis] if self.online_rounds > 0 else []
        )
        if not self.basis_counts or any(b < 1 or b > max_snap for b in needed):
            raise ConfigurationError(
                f"basis counts must satisfy 1 <= b <= {max_snap} (snapshot dim)"
            )
        if self.online_rounds < 0 or self.oversample_layers < 0:
            raise ConfigurationError("online_rounds and oversample_layers must be >= 0")
        if self.mode not in ("per-realization", "ensemble"):
            raise ConfigurationError(f"unknown mode {self.mode!r}")
        if not (self.eps > 0 and self.alpha > 1 and 0 < self.energy_tol <= 1):
            raise ConfigurationError("need eps > 0, alpha > 1, energy_tol in (0, 1]")
        if self.medium.get("type") not in ("inclusion", "logsine", "file"):
            raise ConfigurationError("medium.type must be inclusion, logsine or file")

    @property
    def subset(self) -> tuple:
        n = self.subset_size
        if n is None:
            n = max(8, math.ceil(0.1 * self.M))
        return tuple(range(min(n, self.M)))

    @property
    def error_subset(self) -> tuple:
        return tuple(range(min(self.error_subset_size, self.M)))


def _build_medium(cfg: ExperimentConfig, fine, coarse):
    spec = dict(cfg.medium)
    kind = spec.pop("type")
    if kind == "file":
        ens = load_ensemble(spec["path"])
        if (ens.grid.nx, ens.grid.ny) != (fine.nx, fine.ny):
            raise ConfigurationError(
                f"ensemble grid {ens.grid.nx}x{ens.grid.ny} does not match the "
                f"configured {fine.nx}x{fine.ny}"
            )
        if ens.M != cfg.M:
            raise ConfigurationError(f"ensemble has {ens.M} realizations, config says {cfg.M}")
        return ens
    seed = int(spec.pop("seed", cfg.seed))
    if kind == "logsine":
        if spec:
            raise ConfigurationError(f"unknown logsine medium keys: {sorted(spec)}")
        return generate_logsine_medium(fine, cfg.M, seed=seed)
    base = case1_config(fine, coarse, seed=seed)
    overrides = {}
    for key in ("background", "contrast", "jitter"):
        if key in spec:
            overrides[key] = spec.pop(key)
    for key in ("inclusions", "channels"):
        if key in spec:
            overrides[key] = tuple(Inclusion(**obj) for obj in spec.pop(key))
    if spec:
        raise ConfigurationError(f"unknown inclusion medium keys: {sorted(spec)}")
    if "contrast" in overrides:
        overrides["contrast"] = tuple(overrides["contrast"])
    mcfg = InclusionMediumConfig(
        background=overrides.get("background", base.background),
        inclusions=overrides.get("inclusions", base.inclusions),
        channels=overrides.get("channels", base.channels),
        contrast=overrides.get("contrast", base.contrast),
        jitter=int(overrides.get("jitter", base.jitter)),
        seed=seed,
    )
    return generate_inclusion_medium(fine, mcfg, cfg.M)


def _cache_key(cfg: ExperimentConfig, ensemble, i: int) -> str:
    h = hashlib.sha256()
    h.update(
        repr(
            (
                cfg.nx, cfg.ny, cfg.Nx, cfg.Ny, i, cfg.oversample_layers,
                cfg.seed, cfg.eps, cfg.alpha, cfg.k_probe, cfg.energy_tol,
                cfg.subset, cfg.include_local_source, cfg.source,
            )
        ).encode()
    )
    h.update(ensemble.values.tobytes())
    return h.hexdigest()[:32]


def _neighborhood_features(cfg: ExperimentConfig, ensemble, coarse, i: int):
    """Certified snapshots -> KL model -> reduced coefficients -> feature rows."""
    cache = None
    if cfg.cache_dir:
        cache = Path(cfg.cache_dir) / f"features_{_cache_key(cfg, ensemble, i)}.npz"
        if cache.is_file():
            data = np.load(cache)
            return data["rows"], int(data["k"]), int(data["L"])
    nb = neighborhood(coarse, i)
    ovs = oversample(nb, cfg.oversample_layers)
    source = cfg.source if cfg.include_local_source else None
    cert = certify_snapshot_count(
        ovs,
        ensemble,
        cfg.subset[0],
        eps=cfg.eps,
        alpha=cfg.alpha,
        k_probe=cfg.k_probe,
        seed=cfg.seed,
    )
    snaps = local_randomized_snapshots(
        ovs, ensemble, cfg.subset, cert.k, seed=cfg.seed, source=source
    )
    kl = kl_expand(snaps, cfg.energy_tol)
    rows = build_features(reduced_coefficients(kl, ensemble, source=source)).rows
    if cache is not None:
        cache.parent.mkdir(parents=True, exist_ok=True)
        np.savez(cache, rows=rows, k=cert.k, L=kl.L)
    return rows, cert.k, kl.L


@dataclass
class RunReport:
    config: dict
    rows: list
    traces: dict
    timings: dict
    stats: dict
    versions: dict

    def as_dict(self) -> dict:
        return asdict(self)


def run(cfg: ExperimentConfig, out_dir) -> RunReport:
    """Execute the full experiment and write report + CSV tables to out_dir."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    timings: dict = {}
    stats: dict = {}

    def timed(name, fn):
        t0 = time.perf_counter()
        try:
            result = fn()
        except NumericalError as exc:
            raise NumericalError(f"[stage {name}] {exc}") from exc
        timings[name] = timings.get(name, 0.0) + time.perf_counter() - t0
        return result

    fine, coarse = build_grids(cfg.nx, cfg.ny, cfg.Nx, cfg.Ny)
    ensemble = timed("medium", lambda: _build_medium(cfg, fine, coarse))
    u_h = timed(
        "fine_reference", lambda: fine_reference_solve(ensemble, cfg.source, cfg.threads)
    )

    features = None
    if any(j > 1 for j in cfg.clusters):
        def localreduce_stage():
            rows = pmap(
                lambda i: _neighborhood_features(cfg, ensemble, coarse, i),
                range(coarse.n_interior),
                cfg.threads,
            )
            stats["snapshot_counts"] = [int(r[1]) for r in rows]
            stats["kl_dims"] = [int(r[2]) for r in rows]
            return [r[0] for r in rows]

        features = timed("localreduce", localreduce_stage)

    max_basis = max(cfg.basis_counts)
    if cfg.online_rounds > 0:
        max_basis = max(max_basis, cfg.online_basis)

    rows_out = []
    traces = {}
    for J in cfg.clusters:
        def cluster_stage(J=J):
            partitions = {}
            for i in range(coarse.n_interior):
                nb = neighborhood(coarse, i)
                if J == 1 or features is None:
                    labels, Ji = np.zeros(cfg.M, dtype=int), 1
                else:
                    res = kmeans(features[i], J, seed=cfg.seed)
                    labels, Ji = res.labels, res.J
                partitions[i] = partition_realizations(nb, ensemble, labels, Ji)
            return partitions

        partitions = timed("clustering", cluster_stage)

        def offline_stage():
            def per_node(i):
                nb = neighborhood(coarse, i)
                part = partitions[i]
                return {
                    (i, j): build_cluster_basis(nb, part.mean_fields[j], max_basis, j)
                    for j in range(part.n_clusters)
                }

            bases = {}
            for chunk in pmap(per_node, range(coarse.n_interior), cfg.threads):
                bases.update(chunk)
            return assemble_offline_space(bases, partitions, coarse)

        space = timed("offline", offline_stage)

        for m in cfg.basis_counts:
            sol = timed(
                "solve",
                lambda m=m: solve(
                    space.sliced(m), ensemble, cfg.source, cfg.mode, cfg.threads
                ),
            )
            report = compute_errors(u_h, sol.fields, ensemble, cfg.error_subset)
            rows_out.append(
                {"J": J, "n_basis": m, "mode": cfg.mode, **report.as_dict()}
            )

        if cfg.online_rounds > 0:
            def online_stage():
                return enrich(
                    space.sliced(cfg.online_basis),
                    ensemble,
                    cfg.source,
                    u_h,
                    rounds=cfg.online_rounds,
                    mode=cfg.mode,
                    subset=cfg.error_subset,
                    threads=cfg.threads,
                )

            _, _, trace = timed("online", online_stage)
            traces[J] = trace

        _write_cluster_csv(out / f"clusters_J{J}.csv", partitions)

    report = RunReport(
        config=asdict(cfg),
        rows=rows_out,
        traces={str(j): t for j, t in traces.items()},
        timings=timings,
        stats=stats,
        versions={
            "cgmsfem": __version__,
            "numpy": np.__version__,
            "scipy": __import__("scipy").__version__,
        },
    )
    timed("io", lambda: _write_outputs(out, report))
    return report


def _fmt(x) -> str:
    return repr(float(x)) if isinstance(x, (float, np.floating)) else str(x)


def _write_csv(path: Path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def _write_cluster_csv(path: Path, partitions):
    rows = []
    for i in sorted(partitions):
        for omega, label in enumerate(partitions[i].labels):
            rows.append((i, omega, int(label)))
    _write_csv(path, ("i", "omega", "label"), rows)


def _write_outputs(out: Path, report: RunReport):
    (out / "report.json").write_text(json.dumps(report.as_dict(), indent=2, sort_keys=True))
    _write_csv(
        out / "errors.csv",
        ("J", "n_basis", "mode", "e1_omega", "e2_omega", "e1_S", "e2_S"),
        [
            (r["J"], r["n_basis"], r["mode"], r["e1_omega"], r["e2_omega"], r["e1_S"], r["e2_S"])
            for r in report.rows
        ],
    )
    for j, trace in report.traces.items():
        _write_csv(
            out / f"online_trace_J{j}.csv",
            ("round", "dofs", "e1_S", "e2_S"),
            [(t["round"], t["dofs"], t["e1_S"], t["e2_S"]) for t in trace],
        )


def compare_tables(report_a: dict, report_b: dict, tol: float = 0.01) -> list:
    """Per-cell relative differences between two run reports.

    Rows are matched by (J, n_basis, mode); a missing or extra combination is
    a grid mismatch and is rejected.  Returns the list of flagged cells.
    """
    def keyed(rows):
        return {(r["J"], r["n_basis"], r["mode"]): r for r in rows}

    rows_a, rows_b = keyed(report_a["rows"]), keyed(report_b["rows"])
    if set(rows_a) != set(rows_b):
        raise ConfigurationError("reports cover different experiment grids")
    flags = []
    metrics = ("e1_omega", "e2_omega", "e1_S", "e2_S")
    for key in sorted(rows_a):
        for metric in metrics:
            a, b = rows_a[key][metric], rows_b[key][metric]
            denom = max(abs(a), abs(b), 1e-300)
            rel = abs(a - b) / denom
            if rel > tol:
                flags.append({"row": key, "metric": metric, "a": a, "b": b, "rel": rel})
    return flags


def _load_config(path) -> ExperimentConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
    return ExperimentConfig.from_dict(raw)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="cgmsfem",
        description="Cluster-based multiscale solver for random elliptic ensembles",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a full experiment from a JSON config")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--out", default=None, help="output directory (default: ./out)")
    p_run.add_argument("--threads", type=int, default=None)
    p_run.add_argument("--seed-override", type=int, default=None)

    p_gen = sub.add_parser("generate-ensemble", help="write an ensemble directory")
    p_gen.add_argument("--config", required=True)
    p_gen.add_argument("--out", required=True)

    p_cmp = sub.add_parser("compare", help="diff two report.json files")
    p_cmp.add_argument("report_a")
    p_cmp.add_argument("report_b")
    p_cmp.add_argument("--tol", type=float, default=0.01)

    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            cfg = _load_config(args.config)
            if args.threads is not None:
                cfg.threads = args.threads
            if args.seed_override is not None:
                cfg.seed = args.seed_override
                cfg._validate()
            out = args.out or "out"
            report = run(cfg, out)
            for row in report.rows:
                print(
                    f"J={row['J']} n_basis={row['n_basis']} mode={row['mode']} "
                    f"e1_S={100 * row['rel_e1_S']:.2f}% e1_omega={100 * row['rel_e1_omega']:.2f}%"
                )
            print(f"report written to {Path(out) / 'report.json'}")
            return 0
        if args.command == "generate-ensemble":
            cfg = _load_config(args.config)
            fine, coarse = build_grids(cfg.nx, cfg.ny, cfg.Nx, cfg.Ny)
            ens = _build_medium(cfg, fine, coarse)
            save_ensemble(ens, args.out)
            print(f"wrote {ens.M} realizations to {args.out}")
            return 0
        if args.command == "compare":
            rep_a = json.loads(Path(args.report_a).read_text())
            rep_b = json.loads(Path(args.report_b).read_text())
            flags = compare_tables(rep_a, rep_b, args.tol)
            if not flags:
                print("no differences beyond tolerance")
                return 0
            for f in flags:
                print(
                    f"row {f['row']} {f['metric']}: {f['a']:.6g} vs {f['b']:.6g} "
                    f"(rel {f['rel']:.3g})"
                )
            return 1
    except (ConfigurationError, IngestionError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    raise AssertionError("unreachable")


if __name__ == "__main__":
    sys.exit(main())
