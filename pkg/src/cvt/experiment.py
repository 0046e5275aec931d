"""Multi-seed experiment orchestration, aggregation, and report emission.

Each seed builds its split, trains once through the stream, and evaluates
both protocols at every task boundary; mean and std across seeds are then
collected into a summary row (method, parameter count, task-free, task-aware,
forgetting). Every figure and table is regenerable from the persisted JSON
alone, and methods sharing a seed share the identical split and stream so
ablation comparisons are paired.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .data_stream import get_dataset, make_task_splits, save_split_manifest
from .errors import ConfigurationError
from .evaluation import (
    PROTOCOLS,
    AccuracyMatrix,
    evaluate_boundary,
    forgetting,
    overall_accuracy,
    results_payload,
    write_results,
)
from .model import CvtConfig, CvtModel, count_parameters
from .seeding import MODEL, rng_from
from .trainer import TrainConfig, config_for_method, run_stream

KNOWN_METHODS = ("cvt", "cvt_no_fc", "cvt_scl", "cvt_no_dual", "sgd_baseline", "er_baseline")


@dataclass
class ExperimentConfig:
    dataset: str = "synthetic-10"
    num_tasks: int = 5
    buffer_capacity: int = 200
    protocols: tuple = PROTOCOLS
    seeds: tuple = (0, 1, 2)
    method: str = "cvt"
    output_dir: str = "results"
    train: TrainConfig = field(default_factory=TrainConfig)
    model: dict = field(default_factory=dict)  # CvtConfig overrides (num_classes is derived)
    train_per_class: int | None = None
    test_per_class: int | None = None

    def __post_init__(self):
        self.seeds = tuple(int(s) for s in self.seeds)
        self.protocols = tuple(self.protocols)
        if not self.seeds:
            raise ConfigurationError("seeds must be non-empty")
        if self.method not in KNOWN_METHODS:
            raise ConfigurationError(f"unknown method {self.method!r}; known: {KNOWN_METHODS}")
        for p in self.protocols:
            if p not in PROTOCOLS:
                raise ConfigurationError(f"unknown protocol {p!r}")
        if isinstance(self.train, dict):
            self.train = TrainConfig(**self.train)

    def resolved(self) -> dict:
        d = asdict(self)
        d["train"] = asdict(self.train) if not isinstance(self.train, dict) else self.train
        return d


def mean_std(values) -> dict:
    """Mean and population std (the convention used in the summary tables)."""
    arr = np.asarray([v for v in values if v is not None], dtype=np.float64)
    if arr.size == 0:
        return {"mean": None, "std": None, "values": list(values)}
    return {
        "mean": float(arr.mean()),
        "std": float(arr.std()),
        "values": [None if v is None else float(v) for v in values],
    }


def run_experiment(cfg: ExperimentConfig) -> dict:
    """Train every seed of one method, persist per-seed results, return the summary."""
    ds = get_dataset(cfg.dataset, cfg.train_per_class, cfg.test_per_class)
    model_cfg = CvtConfig(num_classes=ds.num_classes, **cfg.model)
    train_base = replace(cfg.train, buffer_capacity=cfg.buffer_capacity)
    method_dir = Path(cfg.output_dir) / cfg.method
    method_dir.mkdir(parents=True, exist_ok=True)

    per_seed = []
    n_params = None
    for seed in cfg.seeds:
        seed_dir = method_dir / f"seed_{seed}"
        seed_dir.mkdir(parents=True, exist_ok=True)
        split = make_task_splits(ds, cfg.num_tasks, seed)
        save_split_manifest(split, seed_dir / "split.json")

        model = CvtModel(model_cfg, rng_from(seed, MODEL))
        if n_params is None:
            n_params = count_parameters(model)
        train_cfg = config_for_method(replace(train_base, seed=seed), cfg.method)

        matrices = {p: AccuracyMatrix() for p in PROTOCOLS}

        def on_boundary(mdl, task_id, _buffer):
            accs = evaluate_boundary(mdl, ds, split, task_id)
            for protocol in PROTOCOLS:
                matrices[protocol].add_row(accs[protocol])

        run_stream(model, ds, split, train_cfg, out_dir=seed_dir,
                   boundary_callback=on_boundary, keep_log=False)

        seed_result = {"seed": seed}
        for protocol in cfg.protocols:
            payload = results_payload(protocol, seed, matrices[protocol])
            payload["method"] = cfg.method
            payload["config"] = cfg.resolved()
            write_results(seed_dir / f"results_{protocol}.json", payload)
            (seed_dir / f"matrix_{protocol}.csv").write_text(matrices[protocol].to_csv())
            seed_result[protocol] = {
                "overall_accuracy": payload["overall_accuracy"],
                "forgetting": payload["forgetting"],
                "per_boundary": payload["per_boundary"],
            }
        per_seed.append(seed_result)

    summary = {
        "method": cfg.method,
        "num_parameters": n_params,
        "dataset": cfg.dataset,
        "num_tasks": cfg.num_tasks,
        "buffer_capacity": cfg.buffer_capacity,
        "seeds": list(cfg.seeds),
        "config": cfg.resolved(),
        "protocols": {
            p: {
                "overall_accuracy": mean_std([s[p]["overall_accuracy"] for s in per_seed]),
                "forgetting": mean_std([s[p]["forgetting"] for s in per_seed]),
            }
            for p in cfg.protocols
        },
        "per_seed": per_seed,
    }
    (method_dir / "summary.json").write_text(
        json.dumps(summary, indent=2, sort_keys=True) + "\n"
    )
    return summary


def run_methods(cfg: ExperimentConfig, methods) -> dict:
    """Run several methods under the same seeds/split (paired comparisons)."""
    return {m: run_experiment(replace(cfg, method=m)) for m in methods}


# -- reporting -------------------------------------------------------------


def load_summaries(results_dir) -> list:
    root = Path(results_dir)
    summaries = []
    for path in sorted(root.glob("*/summary.json")):
        summaries.append(json.loads(path.read_text()))
    if not summaries:
        raise ConfigurationError(f"no summary.json files under {root}")
    return summaries


def _fmt(stat: dict) -> str:
    if stat is None or stat.get("mean") is None:
        return "-"
    return f"{stat['mean']:.2f} ± {stat['std']:.2f}"


def summary_table_markdown(summaries) -> str:
    lines = [
        "| Method | #Paras | Task-free A_T | Task-aware A_T | F_T (task-free) |",
        "|---|---|---|---|---|",
    ]
    for s in summaries:
        tf = s["protocols"].get("task_free", {})
        ta = s["protocols"].get("task_aware", {})
        lines.append(
            "| {m} | {p} | {tf} | {ta} | {f} |".format(
                m=s["method"],
                p=s["num_parameters"],
                tf=_fmt(tf.get("overall_accuracy")),
                ta=_fmt(ta.get("overall_accuracy")),
                f=_fmt(tf.get("forgetting")),
            )
        )
    return "\n".join(lines) + "\n"


def _boundary_curves(summary: dict, protocol: str):
    """Mean A_i and F_i per boundary across seeds; F_1 is undefined and omitted."""
    per_seed = summary["per_seed"]
    boundaries = [pb["task"] for pb in per_seed[0][protocol]["per_boundary"]]
    acc, forg = [], []
    for i, b in enumerate(boundaries):
        acc.append(float(np.mean(
            [s[protocol]["per_boundary"][i]["A_i"] for s in per_seed]
        )))
        f_vals = [s[protocol]["per_boundary"][i]["F_i"] for s in per_seed]
        forg.append(None if any(v is None for v in f_vals) else float(np.mean(f_vals)))
    return boundaries, acc, forg


def emit_report(results_dir, out_dir=None, protocol: str = "task_free") -> dict:
    """Write accuracy/forgetting curves (png) and a markdown summary table."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    summaries = load_summaries(results_dir)
    out = Path(out_dir) if out_dir is not None else Path(results_dir)
    out.mkdir(parents=True, exist_ok=True)

    fig_acc, ax_acc = plt.subplots(figsize=(5, 3.4))
    fig_forg, ax_forg = plt.subplots(figsize=(5, 3.4))
    for s in summaries:
        if protocol not in s["protocols"]:
            continue
        boundaries, acc, forg = _boundary_curves(s, protocol)
        ax_acc.plot(boundaries, acc, marker="o", label=s["method"])
        pts = [(b, f) for b, f in zip(boundaries, forg) if f is not None]
        if pts:
            ax_forg.plot(*zip(*pts), marker="o", label=s["method"])
    ax_acc.set_xlabel("tasks observed")
    ax_acc.set_ylabel("overall accuracy (%)")
    ax_acc.set_title(f"incremental accuracy ({protocol})")
    ax_acc.legend(fontsize=8)
    ax_forg.set_xlabel("tasks observed")
    ax_forg.set_ylabel("forgetting (%)")
    ax_forg.set_title(f"incremental forgetting ({protocol})")
    ax_forg.legend(fontsize=8)
    acc_path = out / "accuracy_curves.png"
    forg_path = out / "forgetting_curves.png"
    fig_acc.tight_layout()
    fig_forg.tight_layout()
    fig_acc.savefig(acc_path, dpi=120)
    fig_forg.savefig(forg_path, dpi=120)
    plt.close(fig_acc)
    plt.close(fig_forg)

    table = summary_table_markdown(summaries)
    report_path = out / "report.md"
    report_path.write_text(
        "# Results\n\n" + table + "\n"
        f"![accuracy]({acc_path.name})\n\n![forgetting]({forg_path.name})\n"
    )
    return {"report": report_path, "accuracy_plot": acc_path, "forgetting_plot": forg_path,
            "methods": [s["method"] for s in summaries]}
