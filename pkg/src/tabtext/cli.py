"""Command-line pipeline: build -> synth -> train -> embed -> index -> search -> eval.

Every subcommand reads declarative options from an optional --config JSON file
(keys named like the flags, underscores for dashes); explicit flags win. Each
artifact embeds provenance metadata (tool version, seed, and a hash of the
behavior-affecting options) in its format's comment channel: a leading
``_meta`` record in JSONL, ``#`` lines in CSV, a ``_meta`` key in JSON and a
``.meta.json`` sidecar for binaries. report.json never carries timestamps, so
two runs of the same seeded pipeline produce byte-identical reports.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .blocks import (TfidfStats, block_from_record, block_record, build_blocks,
                     flat_from_record, flat_record, flatten, rank_passages_tfidf,
                     truncate)
from .bm25 import build_sparse, search_sparse
from .corpus import (CorpusError, corpus_stats, iter_jsonl, load_corpus,
                     load_questions, load_tables, load_passages, write_jsonl)
from .encoder import (STRATEGIES, build_vocab, encode_flat, init_params,
                      pool_block, question_embedding)
from .evaluator import (HIT_BUDGET, KS_DEFAULT, RetrievalRun, evaluate, load_run,
                        sweep, write_curve, write_report, write_run)
from .figures import loss_curve_figure, recall_curve_figure
from .index import DenseIndex, build_approx, load_index, save_index, search_dense
from .negatives import (STRATEGIES as HN_STRATEGIES, instance_from_record,
                        instance_record, make_instances)
from .pretrain import (coverage_ratio, import_generated, make_titleq_pairs,
                       mine_blocks, pair_from_record, pair_record,
                       pretrain_instances)
from .tokenizer import get_tokenizer
from .trainer import (TrainConfig, TrainingDiverged, load_dual, make_dual,
                      prepare_items, train, write_losscurve)


class CLIError(Exception):
    pass


# ---------------------------------------------------------------------------
# option plumbing


def _config_of(args) -> dict:
    if getattr(args, "config", None):
        with open(args.config, "r", encoding="utf-8") as f:
            cfg = json.load(f)
        if not isinstance(cfg, dict):
            raise CLIError(f"config {args.config} must hold a JSON object")
        return cfg
    return {}


def opt(args, key: str, default=None):
    value = getattr(args, key, None)
    if value is None:
        value = args._config.get(key, default)
    return value


def need(args, key: str):
    value = opt(args, key)
    if value is None:
        raise CLIError(f"missing required option --{key.replace('_', '-')}")
    return value


def meta_for(args, options: dict, **extra) -> dict:
    """Provenance stamp: version, seed and a hash of behavior options."""
    payload = json.dumps(options, sort_keys=True, default=str).encode("utf-8")
    return {"version": __version__,
            "seed": opt(args, "seed", 0),
            "config_hash": hashlib.sha256(payload).hexdigest()[:16],
            **extra}


def parse_ks(text) -> list[int]:
    if isinstance(text, (list, tuple)):
        return [int(k) for k in text]
    ks = [int(part) for part in str(text).split(",") if part.strip()]
    if not ks or any(k < 1 for k in ks):
        raise CLIError(f"bad k list {text!r}")
    return ks


def _load_blocks(path) -> dict:
    return {rec["block_id"]: block_from_record(rec) for _, rec in iter_jsonl(path)}


def _load_flats(path) -> dict:
    return {rec["block_id"]: flat_from_record(rec) for _, rec in iter_jsonl(path)}


def _load_instances(path) -> list:
    return [instance_from_record(rec) for _, rec in iter_jsonl(path)]


def _write_binary_meta(path, meta: dict) -> None:
    Path(str(path) + ".meta.json").write_text(
        json.dumps(meta, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


# ---------------------------------------------------------------------------
# subcommands


def cmd_build_blocks(args) -> int:
    tokenizer = get_tokenizer(opt(args, "tokenizer", "whitespace"))
    budget = int(opt(args, "budget_block", 512))
    tables, passages, links = load_corpus(need(args, "tables"),
                                          need(args, "passages"),
                                          need(args, "links"))
    stats = TfidfStats.from_corpus(passages)
    blocks = [rank_passages_tfidf(b, stats)
              for b in build_blocks(tables, passages, links)]
    flats = [truncate(flatten(b, tokenizer), budget, tokenizer) for b in blocks]
    options = {"tokenizer": tokenizer.name, "budget_block": budget}
    meta = meta_for(args, options, tool="build-blocks", n_blocks=len(blocks))
    write_jsonl(need(args, "blocks"), (block_record(b) for b in blocks), meta)
    write_jsonl(need(args, "flat_blocks"), (flat_record(f) for f in flats), meta)
    print(f"wrote {len(blocks)} blocks "
          f"({sum(f.token_count for f in flats)} tokens after budget {budget})")
    return 0


def cmd_stats(args) -> int:
    tables = load_tables(need(args, "tables"))
    passages = load_passages(need(args, "passages"))
    counts = None
    flat_path = opt(args, "flat_blocks")
    if flat_path:
        counts = [rec["token_count"] for _, rec in iter_jsonl(flat_path)]
    stats = corpus_stats(tables, passages, counts)
    out = json.dumps(stats.as_dict(), indent=2, sort_keys=True)
    print(out)
    if opt(args, "out"):
        Path(opt(args, "out")).write_text(out + "\n", encoding="utf-8")
    return 0


def cmd_mine_pretrain(args) -> int:
    tokenizer = get_tokenizer(opt(args, "tokenizer", "whitespace"))
    budget = int(opt(args, "budget_block", 512))
    tables, passages, links = load_corpus(need(args, "tables"),
                                          need(args, "passages"),
                                          need(args, "links"))
    blocks = mine_blocks(tables, passages, links)
    flats = [truncate(flatten(b, tokenizer), budget, tokenizer) for b in blocks]
    options = {"tokenizer": tokenizer.name, "budget_block": budget}
    meta = meta_for(args, options, tool="mine-pretrain", n_blocks=len(blocks))
    write_jsonl(need(args, "blocks"), (block_record(b) for b in blocks), meta)
    write_jsonl(need(args, "flat_blocks"), (flat_record(f) for f in flats), meta)
    print(f"mined {len(blocks)} linked-row blocks from {len(tables)} tables")
    return 0


def cmd_synth_questions(args) -> int:
    blocks = _load_blocks(need(args, "blocks"))
    mode = opt(args, "mode", "titleq")
    seed = int(opt(args, "seed", 0))
    rejected = 0
    if mode == "titleq":
        links = None
        if opt(args, "links"):
            tables, passages, links = load_corpus(need(args, "tables"),
                                                  need(args, "passages"),
                                                  need(args, "links"))
        ordered = sorted(blocks.values(), key=lambda b: b.block_id)
        pairs = make_titleq_pairs(ordered, links, seed)
    elif mode == "import":
        pairs, rejected = import_generated(need(args, "generated"), blocks)
    else:
        raise CLIError(f"unknown mode {mode!r} (titleq or import)")
    coverage = coverage_ratio(pairs, blocks)
    options = {"mode": mode, "seed": seed}
    meta = meta_for(args, options, tool="synth-questions", n_pairs=len(pairs),
                    rejected=rejected, coverage_ratio=round(coverage, 4))
    write_jsonl(need(args, "pairs"), (pair_record(p) for p in pairs), meta)
    print(f"wrote {len(pairs)} pairs (rejected {rejected}, "
          f"coverage {coverage:.3f})")
    return 0


def cmd_make_instances(args) -> int:
    blocks = _load_blocks(need(args, "blocks"))
    seed = int(opt(args, "seed", 0))
    if opt(args, "pairs"):
        pairs = [pair_from_record(rec) for _, rec in iter_jsonl(opt(args, "pairs"))]
        instances, fallbacks = pretrain_instances(pairs, blocks, seed)
        skipped = 0
        options = {"mode": "pretrain", "seed": seed}
    else:
        hn = opt(args, "hn", "mmhn")
        if hn not in HN_STRATEGIES:
            raise CLIError(f"--hn must be one of {HN_STRATEGIES}")
        tables = load_tables(need(args, "tables"))
        questions = load_questions(need(args, "questions"))
        sparse = None
        if hn == "bm25":
            flats = _load_flats(need(args, "flat_blocks"))
            sparse = build_sparse((f.block_id, f.text) for f in flats.values())
        instances, skipped = make_instances(questions, tables, blocks, hn, seed,
                                            sparse)
        fallbacks = sum(inst.fallback for inst in instances)
        options = {"mode": "finetune", "hn": hn, "seed": seed}
    meta = meta_for(args, options, tool="make-instances",
                    n_instances=len(instances), skipped=skipped,
                    fallbacks=int(fallbacks))
    write_jsonl(need(args, "instances"), (instance_record(i) for i in instances),
                meta)
    print(f"wrote {len(instances)} instances "
          f"(skipped {skipped}, fallbacks {int(fallbacks)})")
    return 0


def cmd_train(args) -> int:
    tokenizer = get_tokenizer(opt(args, "tokenizer", "whitespace"))
    config = TrainConfig(
        batch_size=int(opt(args, "batch_size", 8)),
        epochs=int(opt(args, "epochs", 10)),
        lr=float(opt(args, "lr", 0.5)),
        warmup=float(opt(args, "warmup", 0.1)),
        seed=int(opt(args, "seed", 0)),
        negatives=opt(args, "negatives", "all"),
        shared=not bool(opt(args, "separate_encoders", False)),
        budget_block=int(opt(args, "budget_block", 512)),
        budget_question=int(opt(args, "budget_question", 70)),
    )
    strategy = opt(args, "strategy", "first")
    dim = int(opt(args, "dim", 32))
    instances = _load_instances(need(args, "instances"))
    flats = _load_flats(need(args, "flat_blocks"))
    questions = {}
    if opt(args, "questions"):
        questions = {q.question_id: q
                     for q in load_questions(opt(args, "questions"))}
    items = prepare_items(instances, questions, flats, tokenizer,
                          config.budget_block, config.budget_question)
    token_lists = [list(it.q_tokens) for it in items]
    token_lists += [tokenizer.tokenize(it.pos.text) for it in items]
    token_lists += [tokenizer.tokenize(it.neg.text) for it in items]
    vocab = build_vocab(token_lists)
    dual = make_dual(init_params(vocab, dim, config.seed, strategy), config.shared)

    checkpoint = need(args, "checkpoint")
    result = train(config, items, dual, checkpoint, tokenizer=tokenizer)

    options = {"strategy": strategy, "dim": dim, "batch_size": config.batch_size,
               "epochs": config.epochs, "lr": config.lr, "warmup": config.warmup,
               "seed": config.seed, "negatives": config.negatives,
               "shared": config.shared, "budget_block": config.budget_block,
               "budget_question": config.budget_question,
               "tokenizer": tokenizer.name}
    meta = meta_for(args, options, tool="train")
    curve_path = opt(args, "losscurve") or str(Path(checkpoint).parent / "losscurve.csv")
    write_losscurve(curve_path, result.rows, meta)
    figure_path = opt(args, "figure") or str(Path(curve_path).with_suffix(".png"))
    loss_curve_figure(result.rows, figure_path)
    config_path = opt(args, "run_config") or str(Path(checkpoint).parent / "config.json")
    summary = dict(options)
    summary.update({"_meta": meta, "m": result.m, "n_instances": result.n_items,
                    "total_steps": result.total_steps,
                    "best_epoch": result.best_epoch,
                    "best_loss": result.best_loss,
                    "vocab_size": len(vocab)})
    Path(config_path).write_text(json.dumps(summary, sort_keys=True, indent=2) + "\n",
                                 encoding="utf-8")
    final = result.epoch_means[-1][1] if result.epoch_means else float("nan")
    print(f"trained {config.epochs} epochs over {result.n_items} instances; "
          f"final epoch loss {final:.4f}, best {result.best_loss:.4f} "
          f"(epoch {result.best_epoch})")
    print(f"checkpoint: {checkpoint}; loss curve: {curve_path}; "
          f"figure: {figure_path}")
    return 0


def cmd_embed(args) -> int:
    tokenizer = get_tokenizer(opt(args, "tokenizer", "whitespace"))
    dual = load_dual(need(args, "checkpoint"),
                     shared=not bool(opt(args, "separate_encoders", False)))
    params = dual.b
    strategy = opt(args, "strategy") or params.strategy
    flats = list(_load_flats(need(args, "flat_blocks")).values())
    threads = int(opt(args, "threads", 1))
    dim = params.d if strategy == "cls" else 3 * params.d
    vectors = np.zeros((len(flats), dim), dtype=np.float32)

    def encode_one(i: int) -> None:
        hidden = encode_flat(params, flats[i], tokenizer)
        vectors[i] = pool_block(hidden, strategy, params.w_att).vector.astype(np.float32)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(encode_one, range(len(flats))))
    else:
        for i in range(len(flats)):
            encode_one(i)
    dense = DenseIndex([f.block_id for f in flats], vectors, strategy)
    out = need(args, "out")
    save_index(dense, out)
    options = {"strategy": strategy, "tokenizer": tokenizer.name,
               "threads": threads}
    _write_binary_meta(out, meta_for(args, options, tool="embed", n=dense.n,
                                     dim=dense.dim))
    print(f"embedded {dense.n} blocks at dim {dense.dim} ({strategy})")
    return 0


def cmd_index(args) -> int:
    dense = load_index(need(args, "embeddings"))
    out = need(args, "index")
    save_index(dense, out)
    options = {"approx": bool(opt(args, "approx", False))}
    extra = {}
    if opt(args, "approx"):
        approx = build_approx(dense,
                              nprobe=int(opt(args, "nprobe", 4)),
                              seed=int(opt(args, "seed", 0)),
                              target_recall=float(opt(args, "target_recall", 0.95)))
        extra["approx_selftest_recall"] = round(approx.selftest_recall, 4)
        print(f"approximate self-test recall {approx.selftest_recall:.3f} "
              f"(nprobe {approx.nprobe})")
    _write_binary_meta(out, meta_for(args, options, tool="index", n=dense.n,
                                     dim=dense.dim, strategy=dense.strategy,
                                     **extra))
    print(f"index of {dense.n} vectors written to {out}")
    return 0


def _search_questions(args):
    """Yield (question_id, text) for --question or a --questions file."""
    if opt(args, "question") is not None:
        yield "q0", opt(args, "question")
        return
    for q in load_questions(need(args, "questions")):
        yield q.question_id, q.text


def cmd_search(args) -> int:
    tokenizer = get_tokenizer(opt(args, "tokenizer", "whitespace"))
    engine = opt(args, "engine", "dense")
    k = int(opt(args, "k", 10))
    budget_q = int(opt(args, "budget_question", 70))
    if engine == "dense":
        dense = load_index(need(args, "index"))
        dual = load_dual(need(args, "checkpoint"),
                         shared=not bool(opt(args, "separate_encoders", False)))
        params = dual.q
        if params.strategy != dense.strategy:
            raise CLIError(
                f"checkpoint strategy {params.strategy!r} does not match "
                f"index strategy {dense.strategy!r}")
        retriever = f"dense:{dense.strategy}"

        def run_one(text: str):
            tokens = tokenizer.tokenize(text)
            emb = question_embedding(params, tokens, budget_q)
            return search_dense(dense, emb, k)
    elif engine == "bm25":
        flats = _load_flats(need(args, "flat_blocks"))
        sparse = build_sparse((f.block_id, f.text) for f in flats.values())
        retriever = "bm25"

        def run_one(text: str):
            return search_sparse(sparse, text, k)
    else:
        raise CLIError(f"unknown engine {engine!r} (dense or bm25)")

    results = {qid: run_one(text) for qid, text in _search_questions(args)}
    if opt(args, "run"):
        run = RetrievalRun(results, retriever, _now())
        options = {"engine": engine, "k": k, "budget_question": budget_q,
                   "tokenizer": tokenizer.name}
        write_run(opt(args, "run"), run, meta_for(args, options, tool="search",
                                                  retriever=retriever,
                                                  timestamp=run.timestamp))
        print(f"wrote run for {len(results)} questions to {opt(args, 'run')}")
    else:
        for qid, ranked in results.items():
            for bid, score_value in ranked:
                print(f"{qid}\t{bid}\t{score_value!r}")
    return 0


def cmd_eval(args) -> int:
    tokenizer = get_tokenizer(opt(args, "tokenizer", "whitespace"))
    run = load_run(need(args, "run"))
    questions = load_questions(need(args, "questions"))
    blocks = _load_blocks(need(args, "blocks"))
    flats = _load_flats(need(args, "flat_blocks"))
    ks = parse_ks(opt(args, "k", ",".join(str(k) for k in KS_DEFAULT)))
    budget = int(opt(args, "budget", HIT_BUDGET))
    report = evaluate(run, questions, blocks, flats, ks, budget, tokenizer)
    rows = sweep(run, questions, blocks, flats, ks)

    run_path = Path(need(args, "run"))
    report_path = opt(args, "report") or str(run_path.parent / "report.json")
    curve_path = opt(args, "curve") or str(run_path.parent / "curve.csv")
    figure_path = opt(args, "figure") or str(Path(curve_path).with_suffix(".png"))
    options = {"k": ks, "budget": budget, "tokenizer": tokenizer.name}
    meta = meta_for(args, options, tool="eval", retriever=report.retriever)
    write_report(report_path, report, meta)
    write_curve(curve_path, rows, meta)
    recall_curve_figure(rows, figure_path,
                        title=f"Recall vs k ({report.retriever or 'run'})")
    for k in ks:
        print(f"k={k}: table recall {report.table_recall[k]:.4f}, "
              f"block recall {report.block_recall[k]:.4f}")
    print(f"hit@{budget}: {report.hit:.4f} over {report.n_questions} questions "
          f"({report.n_excluded} excluded)")
    print(f"report: {report_path}; curve: {curve_path}; figure: {figure_path}")
    return 0


# ---------------------------------------------------------------------------
# parser


def _add(parser: argparse.ArgumentParser, *flags: str, **kwargs) -> None:
    parser.add_argument(*flags, **kwargs)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tabtext",
        description="Fused table-text retrieval: block building, dual-encoder "
                    "training, dense/sparse search and recall evaluation.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name, func, help_text):
        p = sub.add_parser(name, help=help_text)
        p.set_defaults(func=func)
        _add(p, "--config", help="JSON file of option defaults")
        _add(p, "--seed", type=int, help="rng seed recorded in artifacts")
        _add(p, "--tokenizer", help="registered tokenizer name (whitespace)")
        return p

    p = command("build-blocks", cmd_build_blocks,
                "build the retrieval corpus: one block per table row")
    _add(p, "--tables"); _add(p, "--passages"); _add(p, "--links")
    _add(p, "--blocks", help="output blocks.jsonl")
    _add(p, "--flat-blocks", help="output flat_blocks.jsonl")
    _add(p, "--budget-block", type=int, help="token budget per block (512)")

    p = command("stats", cmd_stats, "corpus size and length statistics")
    _add(p, "--tables"); _add(p, "--passages")
    _add(p, "--flat-blocks", help="flat blocks for token statistics")
    _add(p, "--out", help="also write the JSON summary here")

    p = command("mine-pretrain", cmd_mine_pretrain,
                "mine linked-row blocks (first passage section only)")
    _add(p, "--tables"); _add(p, "--passages"); _add(p, "--links")
    _add(p, "--blocks", help="output mined blocks.jsonl")
    _add(p, "--flat-blocks", help="output mined flat_blocks.jsonl")
    _add(p, "--budget-block", type=int)

    p = command("synth-questions", cmd_synth_questions,
                "template or imported pseudo-questions for mined blocks")
    _add(p, "--blocks", help="mined blocks.jsonl")
    _add(p, "--pairs", help="output pretrain_pairs.jsonl")
    _add(p, "--mode", choices=["titleq", "import"])
    _add(p, "--tables"); _add(p, "--passages")
    _add(p, "--links", help="links file for linked-cell exclusion (titleq)")
    _add(p, "--generated", help="questions_generated.jsonl (import mode)")

    p = command("make-instances", cmd_make_instances,
                "attach one hard negative per question or pretrain pair")
    _add(p, "--questions"); _add(p, "--tables"); _add(p, "--blocks")
    _add(p, "--flat-blocks", help="needed for --hn bm25")
    _add(p, "--pairs", help="pretrain pairs (switches to pretrain mode)")
    _add(p, "--hn", choices=list(HN_STRATEGIES), help="negative strategy")
    _add(p, "--instances", help="output instances.jsonl")

    p = command("train", cmd_train, "contrastive training of the dual encoder")
    _add(p, "--instances"); _add(p, "--questions"); _add(p, "--flat-blocks")
    _add(p, "--checkpoint", help="output checkpoint path")
    _add(p, "--losscurve", help="output losscurve.csv")
    _add(p, "--figure", help="output loss figure (.png)")
    _add(p, "--run-config", help="output config.json")
    _add(p, "--strategy", choices=list(STRATEGIES))
    _add(p, "--dim", type=int, help="hidden dimension (32)")
    _add(p, "--batch-size", type=int); _add(p, "--epochs", type=int)
    _add(p, "--lr", type=float); _add(p, "--warmup", type=float)
    _add(p, "--negatives", choices=["all", "own"],
         help="in-batch candidate convention")
    _add(p, "--separate-encoders", action=argparse.BooleanOptionalAction,
         help="independent question and block encoders")
    _add(p, "--budget-block", type=int); _add(p, "--budget-question", type=int)

    p = command("embed", cmd_embed, "encode flattened blocks to a vector file")
    _add(p, "--flat-blocks"); _add(p, "--checkpoint")
    _add(p, "--out", help="output embeddings file (index format)")
    _add(p, "--strategy", choices=list(STRATEGIES),
         help="pooling override (defaults to the checkpoint's)")
    _add(p, "--threads", type=int, help="worker threads for encoding")
    _add(p, "--separate-encoders", action=argparse.BooleanOptionalAction)

    p = command("index", cmd_index, "validate embeddings into a search index")
    _add(p, "--embeddings", help="input vector file from embed")
    _add(p, "--index", help="output index.bin")
    _add(p, "--approx", action=argparse.BooleanOptionalAction,
         help="run the clustered-shortlist self-test")
    _add(p, "--nprobe", type=int); _add(p, "--target-recall", type=float)

    p = command("search", cmd_search, "top-k retrieval for questions")
    _add(p, "--index"); _add(p, "--checkpoint")
    _add(p, "--question", help="one query text")
    _add(p, "--questions", help="questions.jsonl for a batch run")
    _add(p, "--run", help="output run.jsonl (batch mode)")
    _add(p, "--k", type=int)
    _add(p, "--engine", choices=["dense", "bm25"])
    _add(p, "--flat-blocks", help="needed for --engine bm25")
    _add(p, "--budget-question", type=int)
    _add(p, "--separate-encoders", action=argparse.BooleanOptionalAction)

    p = command("eval", cmd_eval, "recall metrics, curve file and figure")
    _add(p, "--run"); _add(p, "--questions"); _add(p, "--blocks")
    _add(p, "--flat-blocks")
    _add(p, "--k", help="comma-separated ks (1,10,20,50,100)")
    _add(p, "--budget", type=int, help="token budget for the hit metric (4096)")
    _add(p, "--report", help="output report.json")
    _add(p, "--curve", help="output curve.csv")
    _add(p, "--figure", help="output recall figure (.png)")

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args._config = _config_of(args)
        return args.func(args)
    except (CLIError, CorpusError, ValueError, KeyError, OSError,
            TrainingDiverged) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
