"""Command-line pipeline: embed, cluster, evaluate, plot, pipeline.

Options may come from a YAML config file (``--config``) with command-line
flags taking precedence.  Every run writes a ``manifest.json`` carrying the
full configuration echo, seeds and format versions needed to reproduce it.

Exit codes: 0 success, 2 configuration, 3 I/O or malformed file,
4 numerical failure, 5 precondition violation.
"""

from __future__ import annotations

import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import click
import numpy as np
import yaml

from . import __version__, data, dpgmm, kmeans, manifold, metrics, plotting
from .errors import ConfigError, FormatError, NpclusterError


def thread_cap() -> int:
    """Worker limit from NPCLUSTER_THREADS (default 1)."""
    raw = os.environ.get("NPCLUSTER_THREADS", "")
    try:
        cap = int(raw) if raw else 1
    except ValueError:
        raise ConfigError(f"NPCLUSTER_THREADS is not an integer: {raw!r}") from None
    return max(1, cap)


def _apply_thread_cap() -> int:
    """Propagate the cap to numba's parallel kernels."""
    cap = thread_cap()
    try:
        import numba

        numba.set_num_threads(min(cap, numba.config.NUMBA_NUM_THREADS))
    except Exception:
        pass  # parallel layer unavailable; sequential kernels unaffected
    return cap


@dataclass(frozen=True)
class PipelineConfig:
    umap: manifold.UmapConfig
    dpgmm: dpgmm.DpgmmConfig
    algorithm: str = "dpgmm"
    kmeans_k: int | None = None
    replications: int = 1
    seed: int = 0
    features: str | None = None
    labels: str | None = None
    out: str | None = None

    def __post_init__(self):
        if self.algorithm not in ("dpgmm", "kmeans"):
            raise ConfigError(f"unknown algorithm {self.algorithm!r}")
        if self.algorithm == "kmeans" and not self.kmeans_k:
            raise ConfigError("algorithm=kmeans requires --k")
        if self.replications < 1:
            raise ConfigError("replications must be >= 1")


def _load_config_file(path):
    if path is None:
        return {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            loaded = yaml.safe_load(fh) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse config file {path}: {exc}") from None
    if not isinstance(loaded, dict):
        raise ConfigError(f"config file {path} must hold a mapping")
    return loaded


def _build_config(file_cfg: dict, flags: dict) -> PipelineConfig:
    """Merge config file values with CLI flags; flags win."""
    umap_cfg = dict(file_cfg.get("umap", {}))
    dpgmm_cfg = dict(file_cfg.get("dpgmm", {}))
    paths = dict(file_cfg.get("paths", {}))

    def pick(flag_name, file_value):
        value = flags.get(flag_name)
        return value if value is not None else file_value

    seed = pick("seed", file_cfg.get("seed", 0))
    umap_kwargs = {
        "n_neighbors": pick("neighbors", umap_cfg.get("n_neighbors", 100)),
        "min_dist": pick("min_dist", umap_cfg.get("min_dist", 0.5)),
        "spread": umap_cfg.get("spread", 1.0),
        "p": pick("dim", umap_cfg.get("p", 2)),
        "n_epochs": pick("epochs", umap_cfg.get("n_epochs")),
        "negative_sample_rate": umap_cfg.get("negative_sample_rate", 5),
        "initial_learning_rate": umap_cfg.get("initial_learning_rate", 1.0),
        "init": umap_cfg.get("init", "spectral"),
        "seed": seed,
        "deterministic": pick("deterministic", umap_cfg.get("deterministic", True)),
    }
    dpgmm_kwargs = {
        "max_components": pick("max_components", dpgmm_cfg.get("max_components", 50)),
        "concentration": pick("alpha", dpgmm_cfg.get("concentration", 1.0 / 50.0)),
        "mean_prior_precision": pick("gamma", dpgmm_cfg.get("mean_prior_precision", 0.01)),
        "wishart_dof": dpgmm_cfg.get("wishart_dof"),
        "scale_matrix_mode": dpgmm_cfg.get("scale_matrix_mode", "empirical_precision"),
        "mean_prior_mode": dpgmm_cfg.get("mean_prior_mode", "empirical"),
        "max_iter": dpgmm_cfg.get("max_iter", 200),
        "n_init": dpgmm_cfg.get("n_init", 5),
        "convergence_tol": dpgmm_cfg.get("convergence_tol", 1e-4),
        "seed": seed,
    }
    try:
        return PipelineConfig(
            umap=manifold.UmapConfig(**umap_kwargs),
            dpgmm=dpgmm.DpgmmConfig(**dpgmm_kwargs),
            algorithm=pick("algorithm", file_cfg.get("algorithm", "dpgmm")),
            kmeans_k=pick("k", file_cfg.get("kmeans_k")),
            replications=pick("replications", file_cfg.get("replications", 1)),
            seed=seed,
            features=pick("features", paths.get("features")),
            labels=pick("labels", paths.get("labels")),
            out=pick("out", paths.get("out")),
        )
    except TypeError as exc:
        raise ConfigError(f"invalid configuration: {exc}") from None


def _config_echo(cfg: PipelineConfig) -> dict:
    return {
        "umap": {
            "n_neighbors": cfg.umap.n_neighbors,
            "min_dist": cfg.umap.min_dist,
            "spread": cfg.umap.spread,
            "p": cfg.umap.p,
            "n_epochs": cfg.umap.n_epochs,
            "negative_sample_rate": cfg.umap.negative_sample_rate,
            "initial_learning_rate": cfg.umap.initial_learning_rate,
            "init": cfg.umap.init,
            "seed": cfg.umap.seed,
            "deterministic": cfg.umap.deterministic,
        },
        "dpgmm": {
            "max_components": cfg.dpgmm.max_components,
            "concentration": cfg.dpgmm.concentration,
            "mean_prior_precision": cfg.dpgmm.mean_prior_precision,
            "wishart_dof": cfg.dpgmm.wishart_dof,
            "scale_matrix_mode": cfg.dpgmm.scale_matrix_mode,
            "mean_prior_mode": cfg.dpgmm.mean_prior_mode,
            "max_iter": cfg.dpgmm.max_iter,
            "n_init": cfg.dpgmm.n_init,
            "convergence_tol": cfg.dpgmm.convergence_tol,
            "seed": cfg.dpgmm.seed,
        },
        "algorithm": cfg.algorithm,
        "kmeans_k": cfg.kmeans_k,
        "replications": cfg.replications,
        "seed": cfg.seed,
        "paths": {"features": cfg.features, "labels": cfg.labels, "out": cfg.out},
    }


def _write_manifest(outdir: Path, command: str, cfg: PipelineConfig, extra: dict):
    manifest = {
        "command": command,
        "package_version": __version__,
        "format_version": data.FORMAT_VERSION,
        "config": _config_echo(cfg),
    }
    manifest.update(extra)
    (outdir / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="ascii"
    )


def _format_of(path) -> str:
    return "csv" if str(path).endswith(".csv") else "binary"


def _require(value, message):
    if value is None:
        raise ConfigError(message)
    return value


def _outdir(cfg) -> Path:
    out = Path(_require(cfg.out, "missing --out directory"))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _read_true_labels(cfg):
    """True labels from --labels file or embedded in the feature file."""
    if cfg.labels:
        return data.read_labels(cfg.labels)
    if cfg.features:
        _, labels = data.read_features(cfg.features, format=_format_of(cfg.features))
        return labels
    return None


def _stage_embed(cfg: PipelineConfig, outdir: Path, dump_graph: bool):
    features, _ = data.read_features(cfg.features, format=_format_of(cfg.features))
    started = time.perf_counter()
    dump = outdir / "fuzzy_graph.txt" if dump_graph else None
    embedding = manifold.embed(features, cfg.umap, graph_dump_path=dump)
    elapsed = time.perf_counter() - started
    path = outdir / "embedding.emat"
    data.write_embedding(embedding, None, path)
    return embedding, {"embedding_file": path.name, "n": embedding.n,
                       "p": embedding.p, "seconds": round(elapsed, 3)}


def _labels_name(rep: int, total: int, stem="labels") -> str:
    return f"{stem}.txt" if total == 1 else f"{stem}_{rep:03d}.txt"


def _cluster_once(embedding, cfg: PipelineConfig, rep: int):
    if cfg.algorithm == "kmeans":
        result = kmeans.kmeans_fit(
            embedding, cfg.kmeans_k, n_init=5, seed=cfg.seed + rep
        )
        summary = {
            "algorithm": "kmeans",
            "k": cfg.kmeans_k,
            "inertia": result.inertia,
            "centers": result.centers.tolist(),
            "seed": cfg.seed + rep,
        }
        return result.labels, None, summary
    from dataclasses import replace

    config = replace(cfg.dpgmm, seed=cfg.seed + rep)
    state, result = dpgmm.fit(embedding, config)
    summary = dpgmm.model_summary(state, result, config)
    return result.labels, state, summary


def _stage_cluster(embedding, cfg: PipelineConfig, outdir: Path):
    reps = cfg.replications
    results = [None] * reps
    cap = thread_cap()
    if cap > 1 and reps > 1:
        with ThreadPoolExecutor(max_workers=cap) as pool:
            futures = [pool.submit(_cluster_once, embedding, cfg, r) for r in range(reps)]
            results = [f.result() for f in futures]
    else:
        results = [_cluster_once(embedding, cfg, r) for r in range(reps)]

    stage = {"replications": reps, "runs": []}
    traces = {}
    for rep, (labels, state, summary) in enumerate(results):
        labels_file = _labels_name(rep, reps)
        data.write_labels(labels, outdir / labels_file)
        model_file = "model.json" if reps == 1 else f"model_{rep:03d}.json"
        (outdir / model_file).write_text(
            json.dumps(summary, indent=2) + "\n", encoding="ascii"
        )
        run_info = {
            "labels_file": labels_file,
            "model_file": model_file,
            "seed": cfg.seed + rep,
        }
        if state is not None:
            run_info["inferred_k"] = summary["inferred_k"]
            run_info["final_elbo"] = summary["final_elbo"]
            run_info["n_iterations"] = summary["n_iterations"]
            traces[f"replication {rep}"] = list(state.elbo_trace)
        stage["runs"].append(run_info)
    if traces:
        plotting.write_elbo_figure(traces, outdir / "elbo_trace.png")
        stage["elbo_figure"] = "elbo_trace.png"
    return [r[0] for r in results], stage


def _aggregate(reports, stage_runs):
    def stats(values):
        arr = np.asarray(values, dtype=np.float64)
        mean = float(arr.mean())
        std = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
        return {"mean": mean, "std": std}

    agg = {"replications": len(reports)}
    if reports:
        agg["metrics"] = {
            "acc": stats([r.acc for r in reports]),
            "nmi": stats([r.nmi for r in reports]),
            "ari": stats([r.ari for r in reports]),
        }
        agg["inferred_k"] = stats([r.inferred_k for r in reports])
    elbos = [r["final_elbo"] for r in stage_runs if "final_elbo" in r]
    if elbos:
        agg["final_elbo"] = stats(elbos)
    return agg


def _stage_evaluate(true_labels, predicted, cfg, outdir: Path, stage_runs):
    reports = []
    for rep, labels in enumerate(predicted):
        report = metrics.evaluate(true_labels, labels)
        reports.append(report)
        name = "metrics.json" if len(predicted) == 1 else f"metrics_{rep:03d}.json"
        (outdir / name).write_text(report.to_json() + "\n", encoding="ascii")
    agg = _aggregate(reports, stage_runs)
    (outdir / "aggregate.json").write_text(
        json.dumps(agg, indent=2, sort_keys=True) + "\n", encoding="ascii"
    )
    return reports, agg


def _fail(exc):
    click.echo(f"error: {exc}", err=True)
    code = exc.exit_code if isinstance(exc, NpclusterError) else 3
    sys.exit(code)


def _guarded(func, *args, **kwargs):
    try:
        return func(*args, **kwargs)
    except NpclusterError as exc:
        _fail(exc)
    except OSError as exc:
        _fail(exc)


_seed_option = click.option("--seed", type=int, default=None, help="Base RNG seed.")
_config_option = click.option(
    "--config", "config_path", type=click.Path(), default=None,
    help="YAML config file; flags override it.",
)


@click.group()
@click.version_option(version=__version__)
def main():
    """Nonparametric clustering of deep feature files."""
    _apply_thread_cap()


@main.command("embed")
@_config_option
@click.option("--features", type=click.Path(), default=None, help="Input feature file.")
@click.option("--out", type=click.Path(), default=None, help="Output directory.")
@click.option("--neighbors", type=int, default=None, help="kNN graph size.")
@click.option("--min-dist", "min_dist", type=float, default=None)
@click.option("--dim", type=int, default=None, help="Embedding dimension p.")
@click.option("--epochs", type=int, default=None, help="SGD epochs (0 keeps the init).")
@click.option("--deterministic/--parallel", "deterministic", default=None)
@click.option("--dump-graph", is_flag=True, default=False,
              help="Also write the fuzzy graph edge list.")
@_seed_option
def cmd_embed(config_path, dump_graph, **flags):
    """Project a feature file onto the low-dimensional manifold."""

    def run():
        cfg = _build_config(_load_config_file(config_path), flags)
        _require(cfg.features, "missing --features input")
        outdir = _outdir(cfg)
        _, info = _stage_embed(cfg, outdir, dump_graph)
        _write_manifest(outdir, "embed", cfg, {"stages": {"embed": info}})
        click.echo(f"wrote {outdir / info['embedding_file']} ({info['n']}x{info['p']})")

    _guarded(run)


@main.command("cluster")
@_config_option
@click.option("--embedding", type=click.Path(), default=None,
              help="Embedding file (skips the projection stage).")
@click.option("--features", type=click.Path(), default=None,
              help="Feature file; projection runs inline.")
@click.option("--labels", type=click.Path(), default=None,
              help="True labels for evaluation.")
@click.option("--out", type=click.Path(), default=None)
@click.option("--neighbors", type=int, default=None)
@click.option("--min-dist", "min_dist", type=float, default=None)
@click.option("--dim", type=int, default=None)
@click.option("--epochs", type=int, default=None)
@click.option("--max-components", "max_components", type=int, default=None)
@click.option("--alpha", type=float, default=None, help="DP concentration.")
@click.option("--gamma", type=float, default=None, help="Mean prior precision.")
@click.option("--algorithm", type=click.Choice(["dpgmm", "kmeans"]), default=None)
@click.option("--k", type=int, default=None, help="Cluster count for kmeans.")
@click.option("--replications", type=int, default=None)
@click.option("--deterministic/--parallel", "deterministic", default=None)
@_seed_option
def cmd_cluster(config_path, embedding, **flags):
    """Cluster an embedding (or features, embedding them first)."""

    def run():
        cfg = _build_config(_load_config_file(config_path), flags)
        outdir = _outdir(cfg)
        stages = {}
        if embedding:
            emb, _ = data.read_embedding(embedding, format=_format_of(embedding))
        else:
            _require(cfg.features, "missing --embedding or --features input")
            emb, info = _stage_embed(cfg, outdir, dump_graph=False)
            stages["embed"] = info
        predicted, stage = _stage_cluster(emb, cfg, outdir)
        stages["cluster"] = stage
        true_labels = _read_true_labels(cfg)
        if true_labels is not None:
            _, agg = _stage_evaluate(true_labels, predicted, cfg, outdir, stage["runs"])
            stages["evaluate"] = agg
        _write_manifest(outdir, "cluster", cfg, {"stages": stages})
        for run_info in stage["runs"]:
            line = f"wrote {outdir / run_info['labels_file']}"
            if "inferred_k" in run_info:
                line += f" (K-hat={run_info['inferred_k']})"
            click.echo(line)

    _guarded(run)


@main.command("evaluate")
@click.option("--pred", "pred_path", type=click.Path(), required=True,
              help="Predicted label file.")
@click.option("--true", "true_path", type=click.Path(), required=True,
              help="Reference label file.")
@click.option("--out", type=click.Path(), default=None,
              help="Optional directory for metrics.json.")
def cmd_evaluate(pred_path, true_path, out):
    """Score predicted labels against a reference labeling."""

    def run():
        pred = data.read_labels(pred_path)
        true = data.read_labels(true_path)
        report = metrics.evaluate(true, pred)
        click.echo(report.to_json())
        if out:
            outdir = Path(out)
            outdir.mkdir(parents=True, exist_ok=True)
            (outdir / "metrics.json").write_text(report.to_json() + "\n",
                                                 encoding="ascii")

    _guarded(run)


@main.command("plot")
@click.option("--embedding", type=click.Path(), required=True)
@click.option("--labels", type=click.Path(), required=True)
@click.option("--out", type=click.Path(), required=True, help="Output SVG path.")
def cmd_plot(embedding, labels, out):
    """Render a 2-d embedding as a labeled SVG scatter."""

    def run():
        emb, _ = data.read_embedding(embedding, format=_format_of(embedding))
        lab = data.read_labels(labels)
        plotting.write_scatter_svg(emb, lab, out)
        click.echo(f"wrote {out}")

    _guarded(run)


@main.command("pipeline")
@_config_option
@click.option("--features", type=click.Path(), default=None)
@click.option("--labels", type=click.Path(), default=None)
@click.option("--out", type=click.Path(), default=None)
@click.option("--neighbors", type=int, default=None)
@click.option("--min-dist", "min_dist", type=float, default=None)
@click.option("--dim", type=int, default=None)
@click.option("--epochs", type=int, default=None)
@click.option("--max-components", "max_components", type=int, default=None)
@click.option("--alpha", type=float, default=None)
@click.option("--gamma", type=float, default=None)
@click.option("--algorithm", type=click.Choice(["dpgmm", "kmeans"]), default=None)
@click.option("--k", type=int, default=None)
@click.option("--replications", type=int, default=None)
@click.option("--deterministic/--parallel", "deterministic", default=None)
@click.option("--dump-graph", is_flag=True, default=False)
@_seed_option
def cmd_pipeline(config_path, dump_graph, **flags):
    """Embed, cluster, evaluate (when labels exist) and plot in sequence."""

    def run():
        cfg = _build_config(_load_config_file(config_path), flags)
        _require(cfg.features, "missing --features input")
        outdir = _outdir(cfg)
        stages = {}
        emb, info = _stage_embed(cfg, outdir, dump_graph)
        stages["embed"] = info
        predicted, stage = _stage_cluster(emb, cfg, outdir)
        stages["cluster"] = stage
        true_labels = _read_true_labels(cfg)
        if true_labels is not None:
            _, agg = _stage_evaluate(true_labels, predicted, cfg, outdir, stage["runs"])
            stages["evaluate"] = agg
        else:
            stages["evaluate"] = "skipped: no labels provided"
        if cfg.umap.p == 2:
            plotting.write_scatter_svg(emb, predicted[0], outdir / "embedding.svg")
            stages["plot"] = {"file": "embedding.svg"}
        else:
            stages["plot"] = f"skipped: requires p=2, got p={cfg.umap.p}"
        _write_manifest(outdir, "pipeline", cfg, {"stages": stages})
        click.echo(f"pipeline complete: {outdir}")

    _guarded(run)


if __name__ == "__main__":
    main()
