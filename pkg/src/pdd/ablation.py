"""Ablation runner: named config transforms, multi-seed training and a CSV table.

Variant names follow ``base[+nodiv][@pairs][#tau_low,tau_high]``:

    full_2t2s                       the complete model
    full_2t2s+nodiv                 diversity loss switched off
    full_2t2s@student_student       scored by student-vs-student disagreement
    full_2t2s#0.75,0.40             tau_low=0.75, tau_high=0.40

Bases:

    rd_1t1s            local teacher only, one student, L_kr only
    ina_mmu_2t1s       both teachers + fusion, one student, L_kr only
    ina_mmu_2t1s_mpa   as above with MPA skips and the prior loss
    full_2t2s          both teachers, both students, all three losses

Variants that differ only in scoring share one trained model per seed.
"""
from __future__ import annotations

import csv
import io
import json
import re
from dataclasses import dataclass

import numpy as np

from .config import SCORING_DEFAULTS, Config
from .data import Manifest, generate
from .errors import ConfigError
from .pipeline import train
from .scoring import SCORE_PAIRS, eval_dataset

BASES = {
    "rd_1t1s": {"model": {"teachers": 1, "students": 1, "use_mpa": False},
                "loss": {"lambda_prp": 0.0, "lambda_div": 0.0}},
    "ina_mmu_2t1s": {"model": {"teachers": 2, "students": 1, "use_mpa": False},
                     "loss": {"lambda_prp": 0.0, "lambda_div": 0.0}},
    "ina_mmu_2t1s_mpa": {"model": {"teachers": 2, "students": 1, "use_mpa": True},
                         "loss": {"lambda_div": 0.0}},
    "full_2t2s": {"model": {"teachers": 2, "students": 2, "use_mpa": True}},
}

# Both orderings of the threshold pair: the text's and the swapped table header.
TAU_GRID = ((0.30, 0.75), (0.75, 0.30), (0.30, 0.40), (0.75, 0.40))

_NAME = re.compile(
    r"^(?P<base>[a-z0-9_]+)(?P<nodiv>\+nodiv)?(?:@(?P<pairs>[a-z_]+))?"
    r"(?:#(?P<lo>-?[0-9.]+),(?P<hi>-?[0-9.]+))?$")

CSV_COLUMNS = ("name", "auroc", "ap", "f1_max", "seed", "n_seeds", "config_digest")


@dataclass(frozen=True)
class Variant:
    name: str
    base: str
    div: bool = True
    score_pairs: str = "fused"
    tau: tuple | None = None

    @classmethod
    def parse(cls, name):
        m = _NAME.match(name.strip())
        if not m or m["base"] not in BASES:
            raise ConfigError(f"unknown ablation variant {name!r}; bases are {sorted(BASES)}")
        pairs = m["pairs"] or "fused"
        if pairs not in SCORE_PAIRS:
            raise ConfigError(f"variant {name!r}: score pairs must be one of {SCORE_PAIRS}")
        tau = (float(m["lo"]), float(m["hi"])) if m["lo"] is not None else None
        return cls(name.strip(), m["base"], m["nodiv"] is None, pairs, tau)

    def apply(self, base_config):
        """The variant's config: a pure transform of ``base_config``."""
        doc = base_config.to_dict()
        for sec, vals in BASES[self.base].items():
            doc[sec].update(vals)
        if not self.div:
            doc["loss"]["lambda_div"] = 0.0
        if self.tau is not None:
            doc["div"]["tau_low"], doc["div"]["tau_high"] = self.tau
        doc["scoring"]["score_pairs"] = self.score_pairs
        cfg = Config.from_dict(doc)
        if self.score_pairs == "student_student" and cfg.model.students != 2:
            raise ConfigError(f"variant {self.name!r}: student_student needs two students")
        return cfg


def tau_grid_variants(base="full_2t2s", grid=TAU_GRID):
    return [f"{base}#{lo:.2f},{hi:.2f}" for lo, hi in grid]


@dataclass
class Plan:
    variants: list
    seeds: list
    epochs: int | None = None

    @classmethod
    def from_doc(cls, doc, seeds=None):
        names = doc.get("variants") if isinstance(doc, dict) else doc
        if not names:
            raise ConfigError("ablation plan lists no variants")
        if isinstance(doc, dict) and doc.get("tau_grid"):
            names = list(names) + tau_grid_variants(grid=[tuple(p) for p in doc["tau_grid"]])
        raw = seeds if seeds is not None else (doc.get("seeds", 1) if isinstance(doc, dict) else 1)
        seed_list = list(range(raw)) if isinstance(raw, int) else [int(s) for s in raw]
        if not seed_list:
            raise ConfigError("ablation plan needs at least one seed")
        epochs = doc.get("epochs") if isinstance(doc, dict) else None
        return cls([Variant.parse(n) for n in names], seed_list, epochs)

    @classmethod
    def parse(cls, text, seeds=None):
        """A JSON plan document, or names separated by whitespace or ``;``."""
        text = text.strip()
        if text.startswith(("{", "[")):
            try:
                doc = json.loads(text)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"ablation plan is not valid JSON: {exc}") from None
        else:
            doc = [t for t in re.split(r"[\s;]+", text) if t]
        return cls.from_doc(doc, seeds)


def _training_key(cfg):
    """Digest of everything that influences training (scoring excluded)."""
    return cfg.replace(scoring=SCORING_DEFAULTS).digest()


class AblationRunner:
    def __init__(self, base_config, manifest=None, progress=None):
        self.base = base_config
        self.manifest = manifest or Manifest(*generate(base_config.data))
        self.progress = progress
        self._models = {}
        self.runs = []      # (variant name, seed, metrics)

    def model_for(self, cfg):
        key = _training_key(cfg)
        if key not in self._models:
            if self.progress:
                self.progress(f"train {key} seed={cfg.train.seed}")
            self._models[key] = train(cfg, self.manifest).model
        return self._models[key]

    def run_one(self, variant, seed, epochs=None):
        overrides = {"seed": seed}
        if epochs is not None:
            overrides["epochs"] = epochs
        cfg = variant.apply(self.base.replace(train=overrides))
        model = self.model_for(cfg)
        model.config = cfg        # scoring options differ between cached siblings
        report = eval_dataset(model, self.manifest.test, config_digest=cfg.digest(),
                              manifest_digest=self.manifest.digest())
        report.raise_for_status()
        self.runs.append((variant.name, seed, report.metrics))
        return report.metrics

    def run(self, plan):
        rows = []
        for v in plan.variants:
            per_seed = [self.run_one(v, s, plan.epochs) for s in plan.seeds]
            cfg = v.apply(self.base)
            row = {"name": v.name}
            for k in ("auroc", "ap", "f1_max"):
                row[k] = float(np.mean([m[k] for m in per_seed]))
            row["seed"] = ";".join(str(s) for s in plan.seeds)
            row["n_seeds"] = len(plan.seeds)
            row["config_digest"] = cfg.digest()
            rows.append(row)
        return rows


def rows_to_csv(rows):
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: (repr(r[k]) if isinstance(r[k], float) else r[k]) for k in CSV_COLUMNS})
    return buf.getvalue()


def run_ablation(base_config, plan, manifest=None, progress=None):
    return AblationRunner(base_config, manifest, progress).run(plan)
