"""Command-line driver: ``splat gen-synth|pretrain-rss|train|eval|robustness``.

Every command writes its artifacts under ``--out`` (default: the config's
``paths.output``).  Failures exit with status 1 and a one-line JSON error on
stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import dst_data
from .config import RunConfig, desk_config
from .dst_data import CorpusError, evaluate, write_predictions
from .numerics import ParamStore
from .schema_input import SchemaError, Vocabulary, build_vocab, dialogue_texts, schema_texts
from .synth import gen_synth, schema_variant
from .training import (
    DivergenceError, check_params, predict_corpus, pretrain_rss, sized_encoder, train,
)

log = logging.getLogger("splat")


def _dump(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _load_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg


def _out_dir(args, cfg: RunConfig) -> Path:
    out = Path(args.out) if args.out else cfg.path("output")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _corpus(cfg: RunConfig, which: str = "dialogues"):
    return dst_data.load_corpus(cfg.path("schema"), cfg.path(which), cfg.head.l_ans)


def _vocab(cfg: RunConfig) -> Vocabulary:
    path = cfg.path("vocab")
    if not path.exists():
        raise FileNotFoundError(f"vocabulary file {path} not found (gen-synth writes one)")
    return Vocabulary.load(path)


def _params_path(args, cfg: RunConfig) -> Path:
    # ``train --out D`` writes D/params.bin, so the same --out finds it again.
    if args.params:
        return Path(args.params)
    return Path(args.out) / "params.bin" if args.out else cfg.path("params")


def _load_params(path, cfg: RunConfig, vocab: Vocabulary) -> ParamStore:
    params = ParamStore.load(path)
    check_params(params, sized_encoder(cfg.encoder, vocab))
    return params


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_gen_synth(args):
    cfg = RunConfig.load(args.config) if args.config else desk_config()
    seed = cfg.seed if args.seed is None else args.seed
    syn = cfg.synth
    n_services = args.services or syn.n_services
    n_dialogues = args.dialogues or syn.n_dialogues
    n_variants = syn.n_variants if args.variants is None else args.variants
    out = Path(args.out or "synth")
    out.mkdir(parents=True, exist_ok=True)

    schemas, dialogues, docs = gen_synth(seed, n_services, n_dialogues)
    variants = [schema_variant(seed, n_services, v) for v in range(1, n_variants + 1)]
    _dump(out / "schema.json", [s.to_dict() for s in schemas])
    _dump(out / "dialogues.json", [d.to_dict() for d in dialogues])
    (out / "rss_corpus.txt").write_text("".join(doc + "\n" for doc in docs))
    variant_files = []
    for k, var in enumerate(variants, 1):
        name = f"schema_variant_{k}.json"
        _dump(out / name, [s.to_dict() for s in var])
        variant_files.append(name)
    texts = list(schema_texts(schemas)) + list(dialogue_texts(dialogues)) + docs
    for var in variants:
        texts += list(schema_texts(var))
    build_vocab(texts).save(out / "vocab.json")

    run = desk_config() if not args.config else cfg
    run = replace(run, seed=seed, synth=replace(syn, n_services=n_services, n_dialogues=n_dialogues,
                                                n_variants=n_variants))
    run.paths = replace(run.paths, schema="schema.json", dialogues="dialogues.json", vocab="vocab.json",
                        corpus="rss_corpus.txt", output="runs", params="runs/params.bin",
                        variants=variant_files)
    run.save(out / "config.json")
    print(f"wrote {len(schemas)} services, {len(dialogues)} dialogues, {len(docs)} documents, "
          f"{len(variants)} schema variants to {out}")


def cmd_pretrain_rss(args):
    cfg = _load_config(args)
    out = _out_dir(args, cfg)
    vocab = _vocab(cfg)
    docs = [line.strip() for line in cfg.path("corpus").read_text(encoding="utf-8").splitlines() if line.strip()]
    res = pretrain_rss(docs, vocab, cfg.encoder, cfg.head, cfg.pretrain, cfg.seed)
    res.params.save(out / "pretrained.params")
    _dump(out / "rss_losses.json", {"seed": cfg.seed, "steps": len(res.losses), "losses": res.losses})
    print(f"span-selection loss {res.losses[0]:.4f} -> {res.losses[-1]:.4f} over {len(res.losses)} steps")


def cmd_train(args):
    cfg = _load_config(args)
    out = _out_dir(args, cfg)
    corpus = _corpus(cfg)
    dev = _corpus(cfg, "dev_dialogues") if cfg.paths.dev_dialogues else None
    vocab = _vocab(cfg)
    init_path = args.init or cfg.path("init_params")
    init = _load_params(init_path, cfg, vocab) if init_path else None
    if args.epochs is not None:
        cfg.optimizer = replace(cfg.optimizer, epochs=args.epochs)
    ckpt = out / "checkpoints"
    ckpt.mkdir(exist_ok=True)
    res = train(corpus, vocab, cfg.encoder, cfg.head, cfg.optimizer, seed=cfg.seed, dev=dev, init=init,
                mode=cfg.matching_mode, threshold=cfg.fuzzy_threshold, checkpoint_dir=ckpt)
    res.params.save(out / "params.bin")
    _dump(out / "train_report.json", {
        "seed": cfg.seed,
        "best_epoch": res.best_epoch,
        "history": res.history,
        "step_losses": res.losses,
        "report": res.report.to_dict(with_turns=False),
    })
    print(f"best epoch {res.best_epoch}")
    print(res.report.table())


def cmd_eval(args):
    cfg = _load_config(args)
    out = _out_dir(args, cfg)
    corpus = _corpus(cfg, "dev_dialogues" if args.dev else "dialogues")
    vocab = _vocab(cfg)
    params = _load_params(_params_path(args, cfg), cfg, vocab)
    enc = sized_encoder(cfg.encoder, vocab)
    preds = predict_corpus(params, corpus, vocab, enc, cfg.head.l_ans)
    report = evaluate(preds, corpus, cfg.matching_mode, cfg.fuzzy_threshold)
    write_predictions(out / "predictions.jsonl", preds)
    _dump(out / "eval_report.json", report.to_dict())
    print(report.table())


def robustness_table(original: float, variant_jga: list[float]) -> dict:
    """Original JGA, per-variant JGA, their mean, and mean / max drop from the original."""
    drops = [original - v for v in variant_jga]
    return {
        "original": original,
        "variants": list(variant_jga),
        "avg": sum(variant_jga) / len(variant_jga) if variant_jga else None,
        "avg_delta": sum(drops) / len(drops) if drops else None,
        "max_delta": max(drops) if drops else None,
    }


def cmd_robustness(args):
    cfg = _load_config(args)
    out = _out_dir(args, cfg)
    corpus = _corpus(cfg, "dev_dialogues" if args.dev else "dialogues")
    vocab = _vocab(cfg)
    params = _load_params(_params_path(args, cfg), cfg, vocab)
    enc = sized_encoder(cfg.encoder, vocab)
    paths = args.variants or [str(Path(cfg.base_dir) / p) for p in cfg.paths.variants]
    if not paths:
        raise ValueError("no schema variants given (use --variants or paths.variants)")

    def jga_of(c):
        preds = predict_corpus(params, c, vocab, enc, cfg.head.l_ans)
        return evaluate(preds, c, cfg.matching_mode, cfg.fuzzy_threshold).jga

    original = jga_of(corpus)
    scores = []
    for p in paths:
        scores.append(jga_of(dst_data.swap_schema_variant(corpus, dst_data.load_schemas(p))))
    table = robustness_table(original, scores)
    table["variant_files"] = [Path(p).name for p in paths]
    _dump(out / "robustness.json", table)
    rows = [("schema", "jga")] + [("original", f"{original:.4f}")]
    rows += [(f"v{k}", f"{s:.4f}") for k, s in enumerate(scores, 1)]
    rows += [("avg", f"{table['avg']:.4f}"), ("avg_delta", f"{table['avg_delta']:.4f}"),
             ("max_delta", f"{table['max_delta']:.4f}")]
    print("\n".join(f"{a:<10}  {b}" for a, b in rows))


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="splat", description="Schema-guided dialogue state tracking at desk scale.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, need_config=True):
        sp.add_argument("--config", required=need_config, help="run configuration (JSON)")
        sp.add_argument("--seed", type=int, default=None, help="override the config seed")
        sp.add_argument("--out", default=None, help="output directory")

    g = sub.add_parser("gen-synth", help="write a synthetic corpus, vocabulary and config")
    common(g, need_config=False)
    g.add_argument("--services", type=int, default=None)
    g.add_argument("--dialogues", type=int, default=None)
    g.add_argument("--variants", type=int, default=None, help="number of paraphrased schema variants")
    g.set_defaults(func=cmd_gen_synth)

    r = sub.add_parser("pretrain-rss", help="recurring span selection pre-training")
    common(r)
    r.set_defaults(func=cmd_pretrain_rss)

    t = sub.add_parser("train", help="train on the configured dialogues")
    common(t)
    t.add_argument("--init", default=None, help="initialise from a parameter file")
    t.add_argument("--epochs", type=int, default=None, help="override the configured epoch count")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="predict and score")
    common(e)
    e.add_argument("--params", default=None)
    e.add_argument("--dev", action="store_true", help="score the dev dialogues instead")
    e.set_defaults(func=cmd_eval)

    b = sub.add_parser("robustness", help="score every schema variant against the original")
    common(b)
    b.add_argument("--params", default=None)
    b.add_argument("--variants", nargs="*", default=None)
    b.add_argument("--dev", action="store_true")
    b.set_defaults(func=cmd_robustness)
    return p


EXPECTED = (CorpusError, SchemaError, DivergenceError, ValueError, KeyError, FileNotFoundError, OSError)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except EXPECTED as exc:
        err = exc.to_dict() if isinstance(exc, CorpusError) else {
            "error": type(exc).__name__, "message": str(exc).strip("'\"")}
        err["command"] = args.command
        print(json.dumps(err, sort_keys=True), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
