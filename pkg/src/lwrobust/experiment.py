"""Experiment pipeline: corpus → splits → training → evaluation → report files.

Each stage reads what the previous stage left in the output directory, so the
CLI verbs can be run one at a time or all at once with ``run``. Report files
contain no timestamps; wall times go to ``timing.json`` only.
"""
from __future__ import annotations

import csv
import json
import logging
import math
import time
from pathlib import Path
from typing import Sequence

import numpy as np

from .config import ExperimentConfig, ObjectiveRun
from .data import (Corpus, LabelDistribution, SplitSet, chronological_split, head_tail_partition,
                   label_distribution, random_split, read_corpus, write_corpus)
from .metrics import Predictions, cev_details, evaluate, normalize_cev, wasserstein_label_shift
from .models import LinearModel, LwanModel, load_checkpoint, save_checkpoint
from .objectives import check_compatible
from .synthgen import generate_corpus
from .trainer import predict, select_best_seed, train

log = logging.getLogger(__name__)

METRICS = ("micro_f1", "macro_f1", "mean_rp")
SCOPES = ("overall", "head", "tail")
PARTIAL_MARKER = "_PARTIAL"


def fmt(x: float) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return "nan"
    if isinstance(x, float) and math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return f"{x:.6f}"


def _write_csv(path: Path, header: Sequence[str], rows: Sequence[Sequence]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def _read_json(path: Path):
    if not path.exists():
        raise FileNotFoundError(f"missing stage output {path}; run the earlier pipeline stage first")
    return json.loads(path.read_text(encoding="utf-8"))


def _entry(table: dict, tag: str, source: str):
    if tag not in table:
        raise ValueError(f"{source} has no entry for {tag!r}; rerun the earlier stages with this config")
    return table[tag]


# -- corpus and splits -------------------------------------------------------------

def load_corpus(cfg: ExperimentConfig) -> Corpus:
    if cfg.corpus_source == "file":
        return read_corpus(cfg.resolved_corpus_path())
    return generate_corpus(cfg.gen_config())


def stage_generate(cfg: ExperimentConfig, out: Path) -> Corpus:
    corpus = load_corpus(cfg)
    write_corpus(corpus, out / "corpus.jsonl")
    return corpus


def make_splits(cfg: ExperimentConfig, corpus: Corpus) -> dict[str, SplitSet]:
    return {"chronological": chronological_split(corpus, cfg.fractions),
            "random": random_split(corpus, cfg.fractions, cfg.split_seed)}


def emit_distribution_plotdata(corpus: Corpus, splits: SplitSet, path: Path) -> None:
    """One row per label in train-frequency order with train/dev/test probabilities."""
    dists = [label_distribution(corpus, getattr(splits, name)) for name in ("train", "dev", "test")]
    order = dists[0].rank_order()
    rows = [[rank, int(l)] + [fmt(float(d.probs[l])) for d in dists] for rank, l in enumerate(order)]
    _write_csv(path, ["rank", "label", "train", "dev", "test"], rows)


def stage_split(cfg: ExperimentConfig, out: Path, corpus: Corpus | None = None) -> dict[str, SplitSet]:
    corpus = corpus or load_corpus(cfg)
    splits = make_splits(cfg, corpus)
    _write_json(out / "splits.json", {k: v.to_json() for k, v in splits.items()})
    emit_distribution_plotdata(corpus, splits[cfg.split], out / "label_distribution.csv")
    shift = {}
    for name, s in splits.items():
        shift[name] = wasserstein_label_shift(label_distribution(corpus, s.train), label_distribution(corpus, s.test))
    ratio = shift["chronological"] / shift["random"] if shift["random"] > 0 else math.inf
    _write_csv(out / "shift.csv", ["split", "wasserstein_train_test"],
               [[k, fmt(v)] for k, v in shift.items()] + [["multiplier", fmt(ratio)]])
    return splits


def load_splits(out: Path) -> dict[str, SplitSet]:
    return {k: SplitSet.from_json(v) for k, v in _read_json(out / "splits.json").items()}


# -- training ---------------------------------------------------------------------

def build_model(cfg: ExperimentConfig, corpus: Corpus):
    spec = dict(cfg.model)
    kind = spec.pop("kind")
    if kind == "linear":
        if corpus.mode != "feature":
            raise ValueError("the linear model needs a feature-mode corpus")
        return LinearModel(corpus.feature_dim, corpus.num_labels, spec.get("h", 0))
    if corpus.mode != "token":
        raise ValueError("the LWAN model needs a token-mode corpus")
    return LwanModel(corpus.vocab_size, corpus.num_labels, spec.get("e", 16), spec.get("k", 16))


def run_tags(cfg: ExperimentConfig) -> list[tuple[str, ObjectiveRun, str]]:
    """(tag, objective, split name) for every training job, in config order."""
    jobs = [(o.name, o, cfg.split) for o in cfg.objectives]
    for o in cfg.objectives:
        if o.name in cfg.compare_random_split and cfg.split != "random":
            jobs.append((f"{o.name}@random", o, "random"))
    return jobs


def stage_train(cfg: ExperimentConfig, out: Path, corpus: Corpus | None = None) -> dict:
    corpus = corpus or load_corpus(cfg)
    splits = load_splits(out)
    model = build_model(cfg, corpus)
    for _, run, _ in run_tags(cfg):
        check_compatible(run.name, model)
    (out / "checkpoints").mkdir(exist_ok=True)
    (out / "logs").mkdir(exist_ok=True)
    summary, timing = {}, {}
    for tag, run, split_name in run_tags(cfg):
        tcfg = cfg.train_config(run, corpus.num_labels)
        runs = []
        start = time.perf_counter()
        for i, seed in enumerate(tcfg.seeds):
            log.info("training %s seed %d/%d", tag, i + 1, len(tcfg.seeds))
            params, history = train(corpus, splits[split_name], model, tcfg, seed,
                                    out / "logs" / f"{tag}_seed{i}.jsonl")
            save_checkpoint(out / "checkpoints" / f"{tag}_seed{i}.ckpt", model, params,
                            {"objective": run.name, "split": split_name, "seed": seed})
            runs.append({
                "seed": seed,
                "best_epoch": history.best_epoch,
                "stopped_epoch": history.stopped_epoch,
                "epochs": [{k: v for k, v in e.items() if k != "wall_time"} for e in history.epochs],
            })
        timing[tag] = time.perf_counter() - start
        summary[tag] = {"objective": run.name, "split": split_name, "runs": runs,
                        "selection_metric": tcfg.selection_metric, "threshold": tcfg.threshold}
    _write_json(out / "train_summary.json", summary)
    _write_json(out / "timing.json", timing)
    return summary


# -- evaluation ---------------------------------------------------------------------

def _report_json(report) -> dict:
    out = {"summary": report.summary(), "per_class_f1": [float(v) for v in report.per_class_f1],
           "rp_skipped": report.rp_skipped}
    return out


def stage_evaluate(cfg: ExperimentConfig, out: Path, corpus: Corpus | None = None) -> dict:
    corpus = corpus or load_corpus(cfg)
    splits = load_splits(out)
    summary = _read_json(out / "train_summary.json")
    results, best_preds = {}, {}
    for tag, _, _ in run_tags(cfg):
        info = _entry(summary, tag, "train_summary.json")
        split = splits[info["split"]]
        head, tail = head_tail_partition(label_distribution(corpus, split.train))
        per_seed, dev_scores, preds = [], [], []
        for i, run in enumerate(info["runs"]):
            model, params, _ = load_checkpoint(out / "checkpoints" / f"{tag}_seed{i}.ckpt")
            dev = evaluate(Predictions(predict(model, params, corpus, split.dev), corpus.targets(split.dev),
                                       info["threshold"]), head, tail)
            test_p = Predictions(predict(model, params, corpus, split.test), corpus.targets(split.test),
                                 info["threshold"])
            test = evaluate(test_p, head, tail)
            dev_scores.append(dev.metric(info["selection_metric"]))
            preds.append(test_p)
            per_seed.append({"seed": run["seed"], "dev": dev.summary(), "test": _report_json(test),
                             "test_head": _report_json(test.head), "test_tail": _report_json(test.tail)})
        best = select_best_seed(dev_scores)
        results[tag] = {"objective": info["objective"], "split": info["split"], "best_index": best,
                        "dev_mean": float(np.mean(dev_scores)), "dev_std": float(np.std(dev_scores)),
                        "per_seed": per_seed, "head": head, "tail": tail}
        if info["split"] == cfg.split:
            best_preds[tag] = preds[best]
    evaluation = {"results": results, "cev": cev_table(best_preds)}
    _write_json(out / "evaluation.json", evaluation)
    return evaluation


def cev_table(preds: dict[str, Predictions]) -> list[dict]:
    names = list(preds)
    rows = []
    for a in names:
        for b in names:
            if a == b:
                continue
            try:
                res = cev_details(preds[a], preds[b])
                rows.append({"model_a": a, "model_b": b, "raw": res.raw, "included": res.n_included,
                             "excluded": res.n_excluded})
            except ValueError:
                rows.append({"model_a": a, "model_b": b, "raw": float("nan"), "included": 0,
                             "excluded": preds[a].gold.shape[1]})
    norm = normalize_cev(np.array([r["raw"] for r in rows])) if rows else []
    for r, v in zip(rows, norm):
        r["normalized"] = float(v)
    return rows


# -- reports ---------------------------------------------------------------------

def emit_classwise_f1(per_class: dict[str, Sequence[float]], train_dist: LabelDistribution, path: Path) -> None:
    """Per-class F1 per objective, rows in train-frequency order."""
    if not per_class:
        raise ValueError("need at least one report")
    order = train_dist.rank_order()
    names = list(per_class)
    rows = [[rank, int(l), fmt(float(train_dist.probs[l]))] + [fmt(float(per_class[n][l])) for n in names]
            for rank, l in enumerate(order)]
    _write_csv(path, ["rank", "label", "train_prob"] + names, rows)


def _scope_values(seed_result: dict) -> list[float]:
    vals = []
    for scope in SCOPES:
        s = seed_result["test"]["summary"] if scope == "overall" else seed_result[f"test_{scope}"]["summary"]
        vals.extend(s[m] for m in METRICS)
    return vals


def stage_report(cfg: ExperimentConfig, out: Path, corpus: Corpus | None = None) -> None:
    corpus = corpus or load_corpus(cfg)
    splits = load_splits(out)
    evaluation = _read_json(out / "evaluation.json")
    summary = _read_json(out / "train_summary.json")
    results = evaluation["results"]
    scope_cols = [f"{scope}_{m}" for scope in SCOPES for m in METRICS]

    comparison, per_seed_rows, split_rows = [], [], []
    per_class = {}
    for tag, _, _ in run_tags(cfg):
        r = _entry(results, tag, "evaluation.json")
        best = r["per_seed"][r["best_index"]]
        row = [tag, r["split"], r["best_index"]] + [fmt(v) for v in _scope_values(best)] + \
              [fmt(r["dev_mean"]), fmt(r["dev_std"])]
        if r["split"] == cfg.split:
            comparison.append(row)
            per_class[tag] = best["test"]["per_class_f1"]
            _write_csv(out / f"metrics_{tag}.csv", ["scope"] + list(METRICS),
                       [[scope] + [fmt(v) for v in _scope_values(best)[i * 3:(i + 1) * 3]]
                        for i, scope in enumerate(SCOPES)])
        if r["objective"] in cfg.compare_random_split:
            split_rows.append([r["objective"], r["split"]] + [fmt(v) for v in _scope_values(best)])
        for i, s in enumerate(r["per_seed"]):
            per_seed_rows.append([tag, r["objective"], r["split"], i, s["seed"]] +
                                 [fmt(s["dev"][m]) for m in METRICS] + [fmt(v) for v in _scope_values(s)])

    _write_csv(out / "comparison.csv", ["objective", "split", "best_seed_index"] + scope_cols +
               ["dev_mean", "dev_std"], comparison)
    _write_csv(out / "per_seed.csv", ["tag", "objective", "split", "seed_index", "seed"] +
               [f"dev_{m}" for m in METRICS] + scope_cols, per_seed_rows)
    if split_rows:
        _write_csv(out / "split_comparison.csv", ["objective", "split"] + scope_cols, split_rows)

    train_dist = label_distribution(corpus, splits[cfg.split].train)
    emit_classwise_f1(per_class, train_dist, out / "classwise_f1.csv")

    _write_csv(out / "cev.csv", ["model_a", "model_b", "cev_raw", "cev_normalized", "classes_included",
                                 "classes_excluded", "definition"],
               [[c["model_a"], c["model_b"], fmt(c["raw"]), fmt(c["normalized"]), c["included"], c["excluded"],
                 "reconstructed"] for c in evaluation["cev"]])

    dro_rows = []
    for tag, _, _ in run_tags(cfg):
        info = _entry(summary, tag, "train_summary.json")
        if info["objective"] != "group_dro":
            continue
        for i, run in enumerate(info["runs"]):
            for e in run["epochs"]:
                dro_rows.append([tag, i, e["epoch"], fmt(e["dro"]["min_max_ratio"]), fmt(e["dro"]["entropy"])])
    if dro_rows:
        _write_csv(out / "dro_diagnostics.csv", ["tag", "seed_index", "epoch", "min_max_ratio", "entropy"],
                   dro_rows)

    lines = [f"split = {cfg.split}", f"seeds = {len(cfg.train_seeds())}"]
    for row in comparison:
        tag = row[0]
        for col, val in zip(scope_cols, row[3:3 + len(scope_cols)]):
            lines.append(f"{tag}.{col} = {val}")
    (out / "report.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")


def run_experiment(cfg: ExperimentConfig, out: Path, stages: Sequence[str] = ("split", "train", "evaluate", "report")) -> None:
    out.mkdir(parents=True, exist_ok=True)
    marker = out / PARTIAL_MARKER
    marker.write_text("pipeline started; outputs incomplete\n", encoding="utf-8")
    try:
        corpus = load_corpus(cfg)
        for stage in stages:
            fn = {"generate": stage_generate, "split": stage_split, "train": stage_train,
                  "evaluate": stage_evaluate, "report": stage_report}[stage]
            fn(cfg, out, corpus) if stage != "generate" else fn(cfg, out)
    except BaseException as exc:
        marker.write_text(f"pipeline failed: {type(exc).__name__}: {exc}\n", encoding="utf-8")
        raise
    marker.unlink()
