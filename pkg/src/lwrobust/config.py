"""Experiment configuration files.

INI-style sections with a fixed schema; unknown sections and keys are
errors so a misspelled penalty weight cannot silently fall back to a default.

Sections: ``[experiment]``, ``[corpus]``, ``[model]``, ``[train]`` and one
``[objective.<name>]`` per objective to train, in the order they appear.
"""
from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path

from .objectives import OBJECTIVES, ObjectiveConfig
from .sampler import GROUP_BALANCED, STANDARD, SamplerConfig
from .seeding import derive_seed
from .synthgen import GenConfig
from .trainer import SELECTION_METRICS, TrainConfig


class ConfigError(ValueError):
    pass


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.replace(",", " ").split())


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.replace(",", " ").split())


def _names(text: str) -> tuple[str, ...]:
    return tuple(v for v in text.replace(",", " ").split())


_SCHEMA = {
    "experiment": {"seed": int, "output": str, "fractions": _floats, "split": str,
                   "compare_random_split": _names},
    "corpus": {"source": str, "path": str, "L": int, "N": int, "mode": str, "d": int, "V": int, "T": int,
               "zipf_s": float, "drift_rho": float, "label_rate": float, "noise_sigma": float,
               "seed": int, "topic_concentration": float},
    "model": {"kind": str, "h": int, "e": int, "k": int},
    "train": {"lr": float, "weight_decay": float, "beta1": float, "beta2": float, "eps": float,
              "max_epochs": int, "patience": int, "seeds": _ints, "n_seeds": int,
              "selection_metric": str, "batch_size": int, "threshold": float},
    "objective": {"lambda": float, "lambda1": float, "lambda2": float, "dro_eta": float,
                  "sampler": str, "n_per_group": int},
}


@dataclass(frozen=True)
class ObjectiveRun:
    name: str
    objective_cfg: ObjectiveConfig
    strategy: str
    n_per_group: int | None


@dataclass
class ExperimentConfig:
    seed: int = 0
    output: str | None = None
    fractions: tuple[float, float, float] = (0.8, 0.1, 0.1)
    split: str = "chronological"
    compare_random_split: tuple[str, ...] = ()
    corpus_source: str = "generate"
    corpus_path: str | None = None
    gen: dict = field(default_factory=dict)
    model: dict = field(default_factory=lambda: {"kind": "linear", "h": 0})
    train: dict = field(default_factory=dict)
    objectives: list[ObjectiveRun] = field(default_factory=list)
    base_dir: Path = field(default_factory=Path.cwd)

    # -- seeds ---------------------------------------------------------------
    def gen_config(self) -> GenConfig:
        kw = dict(self.gen)
        kw.setdefault("seed", derive_seed(self.seed, "corpus"))
        try:
            return GenConfig(**kw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"[corpus]: {exc}") from exc

    @property
    def split_seed(self) -> int:
        return derive_seed(self.seed, "split")

    def train_seeds(self) -> tuple[int, ...]:
        if "seeds" in self.train:
            return tuple(self.train["seeds"])
        n = self.train.get("n_seeds", 3)
        return tuple(derive_seed(self.seed, f"train/{i}") for i in range(n))

    def resolved_corpus_path(self) -> Path:
        p = Path(self.corpus_path)
        return p if p.is_absolute() else self.base_dir / p

    def train_config(self, run: ObjectiveRun, num_labels: int) -> TrainConfig:
        t = self.train
        batch = t.get("batch_size", 64)
        n = run.n_per_group or (4 if 4 * num_labels <= batch else 1)
        sampler = SamplerConfig(batch, n if run.strategy == GROUP_BALANCED else 1, 0, run.strategy)
        return TrainConfig(
            objective=run.name, objective_cfg=run.objective_cfg, sampler=sampler,
            lr=t.get("lr", 1e-3), weight_decay=t.get("weight_decay", 0.01),
            betas=(t.get("beta1", 0.9), t.get("beta2", 0.999)), eps=t.get("eps", 1e-8),
            max_epochs=t.get("max_epochs", 20), patience=t.get("patience", 3),
            seeds=self.train_seeds(), selection_metric=t.get("selection_metric", "macro_f1"),
            threshold=t.get("threshold", 0.5))


def _section_values(parser: configparser.ConfigParser, section: str, schema: dict) -> dict:
    out = {}
    for key, raw in parser.items(section):
        if key not in schema:
            raise ConfigError(f"[{section}]: unknown key {key!r}; allowed: {', '.join(sorted(schema))}")
        try:
            out[key] = schema[key](raw.strip())
        except ValueError as exc:
            raise ConfigError(f"[{section}] {key}: cannot parse {raw!r}") from exc
    return out


def parse_config(text: str, base_dir: Path | None = None) -> ExperimentConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"), default_section="__none__",
                                       interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    cfg = ExperimentConfig(base_dir=base_dir or Path.cwd())
    for section in parser.sections():
        kind = section.split(".", 1)[0]
        if kind not in _SCHEMA or (kind == "objective") != ("." in section):
            raise ConfigError(f"unknown section [{section}]")
        values = _section_values(parser, section, _SCHEMA[kind])
        if kind == "experiment":
            _apply_experiment(cfg, values)
        elif kind == "corpus":
            cfg.corpus_source = values.pop("source", "generate")
            cfg.corpus_path = values.pop("path", None)
            cfg.gen = values
        elif kind == "model":
            cfg.model = {"kind": values.pop("kind", "linear"), **values}
        elif kind == "train":
            cfg.train = values
        else:
            cfg.objectives.append(_objective(section.split(".", 1)[1], values))
    _validate(cfg)
    return cfg


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config file not found: {path}")
    return parse_config(path.read_text(encoding="utf-8"), path.parent)


def _apply_experiment(cfg: ExperimentConfig, values: dict) -> None:
    if "fractions" in values:
        if len(values["fractions"]) != 3:
            raise ConfigError("[experiment] fractions needs three values")
        cfg.fractions = values["fractions"]
    for key in ("seed", "output", "split", "compare_random_split"):
        if key in values:
            setattr(cfg, key, values[key])


def _objective(name: str, values: dict) -> ObjectiveRun:
    if name not in OBJECTIVES:
        raise ConfigError(f"unknown objective {name!r}; choose from {', '.join(sorted(OBJECTIVES))}")
    strategy = values.get("sampler", STANDARD if name == "erm" else GROUP_BALANCED)
    if strategy not in (STANDARD, GROUP_BALANCED):
        raise ConfigError(f"[objective.{name}] sampler must be {STANDARD!r} or {GROUP_BALANCED!r}")
    try:
        ocfg = ObjectiveConfig(lam=values.get("lambda", 1.0), lam1=values.get("lambda1", 1.0),
                               lam2=values.get("lambda2", 1.0), dro_eta=values.get("dro_eta", 0.01))
    except ValueError as exc:
        raise ConfigError(f"[objective.{name}]: {exc}") from exc
    return ObjectiveRun(name, ocfg, strategy, values.get("n_per_group"))


def _validate(cfg: ExperimentConfig) -> None:
    if not cfg.objectives:
        raise ConfigError("at least one [objective.<name>] section is required")
    if cfg.split not in ("chronological", "random"):
        raise ConfigError("[experiment] split must be 'chronological' or 'random'")
    names = [o.name for o in cfg.objectives]
    for name in cfg.compare_random_split:
        if name not in names:
            raise ConfigError(f"compare_random_split names {name!r}, which has no [objective.{name}] section")
    if cfg.corpus_source not in ("generate", "file"):
        raise ConfigError("[corpus] source must be 'generate' or 'file'")
    if cfg.corpus_source == "file" and not cfg.corpus_path:
        raise ConfigError("[corpus] source = file needs a path")
    if cfg.model["kind"] not in ("linear", "lwan"):
        raise ConfigError("[model] kind must be 'linear' or 'lwan'")
    metric = cfg.train.get("selection_metric", "macro_f1")
    if metric not in SELECTION_METRICS:
        raise ConfigError(f"[train] selection_metric must be one of {SELECTION_METRICS}")
