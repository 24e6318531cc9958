"""``pdd`` command line: gen-data, train, eval, ablate.

Exit codes: 0 ok, 2 config error, 3 I/O or data error, 4 non-finite
values during training, 5 metric undefined on the test set.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import __version__
from .config import Config
from .errors import (
    ArgumentError,
    ConfigError,
    FormatError,
    NonFiniteError,
    ProtocolViolation,
    UndefinedMetricError,
)

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC, EXIT_METRIC = 0, 2, 3, 4, 5


def _log(msg):
    print(msg, file=sys.stderr, flush=True)


def _parse_set(items):
    """``section.key=value`` overrides; values are parsed as JSON when possible."""
    out = {}
    for item in items or ():
        key, sep, raw = item.partition("=")
        sec, dot, name = key.partition(".")
        if not sep or not dot:
            raise ConfigError(f"--set expects section.key=value, got {item!r}")
        try:
            val = json.loads(raw)
        except json.JSONDecodeError:
            val = raw
        out.setdefault(sec, {})[name] = val
    return out


def load_config(path=None, overrides=None):
    cfg = Config.load(path) if path else Config()
    return cfg.replace(**overrides) if overrides else cfg


def _write_json(path, doc):
    Path(path).write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n")


# -- commands ------------------------------------------------------------------

def cmd_gen_data(args):
    from .data import write_dataset

    cfg = load_config(args.config, _parse_set(args.set))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    digest = cfg.digest()
    manifest = write_dataset(cfg.data, out, comments=(f"config_digest={digest}",))
    _write_json(out / "manifest.json", {"config_digest": digest, "manifest_digest": manifest.digest(),
                                        "counts": manifest.counts(), "data": cfg.data.to_dict()})
    _log(f"wrote {sum(manifest.counts().values())} images to {out} (manifest {manifest.digest()})")
    return EXIT_OK


def cmd_train(args):
    from .checkpoint import checkpoint_from_training, load_checkpoint, save_checkpoint
    from .data import load_dataset
    from .pipeline import TrainLog, train

    resume = load_checkpoint(args.resume) if args.resume else None
    if args.config or resume is None:
        cfg = load_config(args.config, _parse_set(args.set))
    else:
        cfg = Config.from_dict(resume.config)
        cfg = cfg.replace(**_parse_set(args.set)) if args.set else cfg
    manifest = load_dataset(args.data)
    if resume is not None and resume.manifest_digest not in (None, manifest.digest()) and not args.allow_mismatch:
        raise ConfigError("dataset manifest differs from the one the checkpoint was trained on "
                          "(pass --allow-mismatch to continue anyway)")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ckpt_dir = out if cfg.train.checkpoint_every else None

    def progress(epoch, acc):
        _log(f"epoch {epoch}/{cfg.train.epochs} kr={acc[0]:.4f} prp={acc[1]:.4f} "
             f"div={acc[2]:.4f} total={acc[3]:.4f}")

    result = train(cfg, manifest, resume=resume, checkpoint_dir=ckpt_dir,
                   progress=None if args.quiet else progress)
    log = result.log
    prev = out / "train_log.csv"
    if resume is not None and prev.exists():
        old = TrainLog.from_csv(prev.read_text())
        log = TrainLog([r for r in old.rows if r[0] <= resume.epoch] + result.log.rows)
    digest = cfg.digest()
    save_checkpoint(checkpoint_from_training(result), out / "checkpoint.pdd")
    prev.write_text(log.to_csv())
    _write_json(out / "train_log.meta.json", {"config_digest": digest,
                                              "manifest_digest": manifest.digest(),
                                              "teacher_digests": result.model.teacher_digest()})
    doc = cfg.to_dict()
    doc_out = {"config": doc, "config_digest": digest}
    _write_json(out / "config.json", doc_out)
    _log(f"trained {result.epoch} epochs, checkpoint at {out / 'checkpoint.pdd'}")
    return EXIT_OK


def cmd_eval(args):
    from .checkpoint import load_checkpoint
    from .data import load_dataset
    from .scoring import eval_dataset

    ckpt = load_checkpoint(args.checkpoint)
    manifest = load_dataset(args.data)
    if ckpt.manifest_digest is not None and not args.allow_mismatch:
        # only the test split matters for scoring, but the digest covers the
        # whole tree the model was trained against
        if manifest.digest() != ckpt.manifest_digest:
            raise ConfigError(f"dataset manifest {manifest.digest()} differs from training manifest "
                              f"{ckpt.manifest_digest}; pass --allow-mismatch to evaluate anyway")
    model = ckpt.to_model()
    scoring = _parse_set(args.set).get("scoring", {})
    if args.score_pairs:
        scoring["score_pairs"] = args.score_pairs
    if args.raw_maps:
        scoring["raw_maps"] = True
    if scoring:
        model.config = model.config.replace(scoring=scoring)
    report = eval_dataset(model, manifest.test, out_dir=args.out,
                          config_digest=model.config.digest(), manifest_digest=manifest.digest())
    if report.metrics:
        _log(" ".join(f"{k}={v:.4f}" for k, v in report.metrics.items()))
    report.raise_for_status()
    return EXIT_OK


def cmd_ablate(args):
    from .ablation import AblationRunner, Plan, rows_to_csv
    from .data import load_dataset

    cfg = load_config(args.config, _parse_set(args.set))
    plan_text = Path(args.plan).read_text() if Path(args.plan).is_file() else args.plan
    plan = Plan.parse(plan_text, seeds=args.seeds)
    if args.epochs is not None:
        plan.epochs = args.epochs
    manifest = load_dataset(args.data) if args.data else None
    runner = AblationRunner(cfg, manifest, progress=None if args.quiet else _log)
    rows = runner.run(plan)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "ablation.csv").write_text(rows_to_csv(rows))
    runs = [{"name": n, "seed": s, **m} for n, s, m in runner.runs]
    _write_json(out / "ablation.meta.json", {"config_digest": cfg.digest(),
                                             "manifest_digest": runner.manifest.digest(),
                                             "runs": runs})
    for r in rows:
        _log(f"{r['name']}: auroc={r['auroc']:.4f} ap={r['ap']:.4f} f1_max={r['f1_max']:.4f}")
    return EXIT_OK


# -- entry point -----------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="pdd", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"pdd {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=True):
        if config:
            sp.add_argument("--config", help="JSON config file (defaults when omitted)")
        sp.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                        help="override one config value; repeatable")
        sp.add_argument("--quiet", action="store_true")

    g = sub.add_parser("gen-data", help="write a synthetic dataset tree")
    common(g)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train on the normal images of a dataset")
    common(t)
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--resume", help="checkpoint to continue from")
    t.add_argument("--allow-mismatch", action="store_true")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="score a dataset's test split")
    common(e, config=False)
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--score-pairs", choices=("fused", "raw", "student_student"))
    e.add_argument("--raw-maps", action="store_true")
    e.add_argument("--allow-mismatch", action="store_true")
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("ablate", help="train and score a list of variants")
    common(a)
    a.add_argument("--plan", required=True, help="plan JSON file, or variant names")
    a.add_argument("--out", required=True)
    a.add_argument("--seeds", type=int)
    a.add_argument("--epochs", type=int)
    a.add_argument("--data", help="dataset tree (generated from the config when omitted)")
    a.set_defaults(func=cmd_ablate)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ArgumentError) as exc:
        _log(f"config error: {exc}")
        return EXIT_CONFIG
    except NonFiniteError as exc:
        _log(f"numeric error in op '{exc.op}': {exc}")
        return EXIT_NUMERIC
    except UndefinedMetricError as exc:
        _log(f"undefined metric: {exc}")
        return EXIT_METRIC
    except (OSError, FormatError, ProtocolViolation) as exc:
        _log(f"I/O error: {exc}")
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
