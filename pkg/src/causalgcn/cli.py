"""Command-line entry point: ``causalgcn <command> [flags]``.

Training settings resolve in this order, later winning: built-in defaults,
the ``CAUSALGCN_SEED`` environment variable (seed only), the ``--config``
file (``key = value`` lines, ``#`` comments), then explicit flags.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from .data import (
    CorpusError,
    Sentence,
    format_sentence,
    generate_synthetic,
    load_embeddings,
    parse_corpus,
    split_dataset,
    write_corpus,
)
from .encoder import CheckpointError, GceModel, Vocab
from .eval import export_features, format_table, span_prf
from .graph import TreeError
from .tagging import TagError, iobes_to_spans
from .training import (
    TASKS,
    ConfigError,
    TaskDataError,
    TrainConfig,
    build_model,
    evaluate,
    predict_labels,
    predict_tags,
    train_ace,
    train_gce,
)

SEED_ENV = "CAUSALGCN_SEED"

# flag name -> TrainConfig field, for the overrides exposed on the command line
_OVERRIDES = {
    "epochs": int, "batch_size": int, "lr": float, "lr_decay": float, "dropout": float,
    "grl_lambda": float, "grl_warmup": int, "seed": int, "patience": int, "d_emb": int,
    "hidden": int, "gcn_layers": int, "ffnn_hidden": int, "fusion_width": int,
}


class CliError(Exception):
    pass


def read_config_file(path) -> dict:
    values = {}
    text = Path(path).read_text(encoding="utf-8")
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            key, _, value = line.partition(":")
            if not _:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        values[key.strip().replace("-", "_")] = value.strip()
    return values


def resolve_config(args) -> TrainConfig:
    values: dict = {}
    env_seed = os.environ.get(SEED_ENV)
    if env_seed is not None:
        values["seed"] = env_seed
    if getattr(args, "config", None):
        values.update(read_config_file(args.config))
    for name in _OVERRIDES:
        v = getattr(args, name, None)
        if v is not None:
            values[name] = v
    if getattr(args, "freeze_embeddings", False):
        values["freeze_embeddings"] = True
    return TrainConfig.from_mapping(values)


def _read(path, what="input") -> list[Sentence]:
    p = Path(path)
    if not p.is_file():
        raise CliError(f"{what} file not found: {path}")
    return parse_corpus(p)


def _model_task(model: GceModel, requested: str | None) -> str:
    task = requested or model.metadata.get("task")
    if task not in TASKS:
        raise CliError("cannot tell the task; pass --task identify|localise")
    return task


def _load_model(path) -> GceModel:
    if not Path(path).is_file():
        raise CliError(f"model file not found: {path}")
    return GceModel.load(path)


# ---------------------------------------------------------------------------
# commands


def cmd_gen_synth(args):
    seed = args.seed if args.seed is not None else int(os.environ.get(SEED_ENV, 1))
    data = generate_synthetic(args.domain, args.n, seed)
    if args.split:
        out = Path(args.out)
        parts = split_dataset(data, seed=seed)
        for name, part in zip(("train", "dev", "test"), parts):
            write_corpus(part, out.with_name(f"{out.stem}.{name}{out.suffix}"))
    else:
        write_corpus(data, args.out)
    return 0


def _finish_training(args, result, cfg, task, regime):
    log = logging.getLogger("causalgcn")
    meta = {"task": task, "regime": regime, "seed": cfg.seed, "best_epoch": result.best_epoch}
    result.model.save(args.out, meta)
    best = result.history[result.best_epoch - 1] if result.best_epoch else None
    log.info("saved %s (best epoch %s, dev F1 %s)", args.out, result.best_epoch,
             f"{best.dev_f1:.4f}" if best else "n/a")
    return 0


def _log_path(args):
    return args.log or f"{args.out}.log.jsonl"


def _maybe_embeddings(model, args):
    if getattr(args, "embeddings", None):
        table = load_embeddings(args.embeddings, model.vocab)
        hits = table.apply_to(model)
        logging.getLogger("causalgcn").info("initialized %d embedding rows from %s", hits, args.embeddings)


def cmd_train(args):
    cfg = resolve_config(args)
    train = _read(args.train, "training")
    dev = _read(args.dev, "dev") if args.dev else []
    model = build_model(Vocab.build(train), cfg)
    _maybe_embeddings(model, args)
    result = train_gce(train, dev, args.task, cfg, model=model, log_path=_log_path(args))
    return _finish_training(args, result, cfg, args.task, "gce")


def cmd_train_ace(args):
    cfg = resolve_config(args)
    source = _read(args.source, "source")
    target = _read(args.target, "target")
    dev = _read(args.dev, "dev") if args.dev else []
    if args.init:
        model = _load_model(args.init)
        if model.config != cfg.model_config():
            raise CliError("--init checkpoint dimensions differ from the configured model")
    else:
        model = build_model(Vocab.build(source + target), cfg)
        _maybe_embeddings(model, args)
    result = train_ace(source, target, dev, args.task, cfg, model=model, log_path=_log_path(args))
    return _finish_training(args, result, cfg, args.task, "ace")


def cmd_predict(args):
    model = _load_model(args.model)
    task = _model_task(model, args.task)
    data = _read(args.input)
    blocks = []
    if task == "identify":
        for s, label in zip(data, predict_labels(model, data)):
            blocks.append(format_sentence(Sentence(s.tokens, s.heads, label, None, s.domain, s.meta)))
    else:
        for s, tags in zip(data, predict_tags(model, data)):
            spans = " ".join(f"{sp.role}:{sp.start + 1}-{sp.end + 1}" for sp in iobes_to_spans(tags))
            meta = tuple(kv for kv in s.meta if kv[0] != "spans") + (("spans", spans or "none"),)
            blocks.append(format_sentence(Sentence(s.tokens, s.heads, s.label, tags, s.domain, meta)))
    with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(blocks))
    return 0


def cmd_eval(args):
    model = _load_model(args.model)
    task = _model_task(model, args.task)
    data = _read(args.data)
    reports = {"identify" if task == "identify" else "token": evaluate(model, data, task)}
    if task == "localise":
        pred = predict_tags(model, data)
        reports["span"] = span_prf([iobes_to_spans(t) for t in pred], [s.spans() for s in data])
    print(format_table(reports))
    return 0


def cmd_export_features(args):
    model = _load_model(args.model)
    export_features(model, _read(args.data), args.out)
    return 0


# ---------------------------------------------------------------------------
# parser


def _add_training_flags(p):
    p.add_argument("--task", choices=TASKS, required=True)
    p.add_argument("--dev", help="dev corpus used for model selection and lr decay")
    p.add_argument("--config", help="key = value file with training settings")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--log", help="epoch log path (default: <out>.log.jsonl)")
    p.add_argument("--embeddings", help="pretrained vectors in word-per-line text format")
    p.add_argument("--freeze-embeddings", action="store_true")
    for name, kind in _OVERRIDES.items():
        p.add_argument("--" + name.replace("_", "-"), dest=name, type=kind)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="causalgcn", description="Causality identification and localisation")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-synth", parents=[common], help="write a synthetic corpus")
    p.add_argument("--domain", choices=("medical", "financial"), required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, help=f"default: ${SEED_ENV} or 1")
    p.add_argument("--out", required=True)
    p.add_argument("--split", action="store_true", help="write <out>.train/.dev/.test at 60:20:20")
    p.set_defaults(func=cmd_gen_synth)

    p = sub.add_parser("train", parents=[common], help="supervised training")
    p.add_argument("--train", required=True)
    _add_training_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("train-ace", parents=[common], help="adversarial domain adaptation")
    p.add_argument("--source", required=True, help="labeled source corpus")
    p.add_argument("--target", required=True, help="target corpus (labels ignored)")
    p.add_argument("--init", help="start from this checkpoint instead of fresh weights")
    _add_training_flags(p)
    p.set_defaults(func=cmd_train_ace)

    p = sub.add_parser("predict", parents=[common], help="label or tag a corpus")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--task", choices=TASKS)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval", parents=[common], help="print precision, recall and F1")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--task", choices=TASKS)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("export-features", parents=[common], help="write sentence features for plotting")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_features)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (CliError, ConfigError, TaskDataError, CorpusError, CheckpointError, TreeError, TagError,
            ValueError, OSError) as exc:
        print(f"causalgcn {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
