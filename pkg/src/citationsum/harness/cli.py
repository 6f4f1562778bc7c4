"""Command line entry point.

Exit codes: 0 success, 1 verification failure or aborted training,
2 validation error, 3 too many degenerate training instances.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import fields
from pathlib import Path

import numpy as np

from ..corpus import (
    INDUCTIVE,
    SPLIT_MODES,
    CorpusSplit,
    load_corpus,
    load_split,
    make_splits,
    save_split,
)
from ..factorization import (
    problem_from_graph_record,
    random_bipartite_problem,
    random_citation_problem,
    verify_factorization,
)
from ..selection import load_selection_cache, save_selection_cache
from .config import ConfigError, TrainConfig, load_config, make_config, parse_value
from .instances import Vocabulary, dump_plan, populate_selection_cache, prepare_instances
from .synthetic import write_synthetic_corpus
from .training import (
    DegenerateDataError,
    TrainingError,
    evaluate,
    load_checkpoint,
    rho_records,
    rho_table,
    sweep_rho,
    train,
)

logger = logging.getLogger("citationsum")

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_INVALID = 2
EXIT_DEGENERATE = 3

CONFIG_KEYS = [f.name for f in fields(TrainConfig)]


def _write_report(out: Path, stem: str, text: str, records) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / f"{stem}.txt").write_text(text + "\n", encoding="utf-8")
    (out / f"{stem}.jsonl").write_text("".join(r + "\n" for r in records), encoding="utf-8")


# ---------------------------------------------------------------------------
# shared argument groups


def _add_config_args(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("training config (override --config / scale defaults)")
    g.add_argument("--config", type=Path, help="flat 'key = value' config file")
    for key in CONFIG_KEYS:
        flags = [f"--{key.replace('_', '-')}"]
        if "_" in key:
            flags.append(f"--{key}")
        g.add_argument(*flags, dest=f"cfg_{key}", metavar="VALUE", default=None)


def _config_from_args(args) -> TrainConfig:
    overrides = {}
    for key in CONFIG_KEYS:
        raw = getattr(args, f"cfg_{key}", None)
        if raw is not None:
            overrides[key] = parse_value(key, raw)
    if args.config is not None:
        return load_config(args.config, **overrides)
    scale = overrides.pop("scale", "desk")
    return make_config(scale, **overrides)


def _add_data_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--corpus", type=Path, required=True, help="corpus JSONL")
    p.add_argument("--split", type=Path, help="split JSON written by a previous command")
    p.add_argument("--mode", choices=SPLIT_MODES, default=INDUCTIVE)
    p.add_argument("--split-sizes", help="train,val,test node counts (default: 80/10/10 of the corpus)")
    p.add_argument("--split-seed", type=int, default=0)


def _parse_sizes(raw: str | None, n: int) -> tuple[int, int, int]:
    if raw is None:
        held = max(1, n // 10) if n >= 3 else 0
        return n - 2 * held, held, held
    try:
        sizes = tuple(int(x) for x in raw.split(","))
    except ValueError:
        raise ValueError(f"--split-sizes expects three integers, got {raw!r}") from None
    if len(sizes) != 3:
        raise ValueError(f"--split-sizes expects three integers, got {raw!r}")
    return sizes


def _load_data(args):
    docs, graph = load_corpus(args.corpus)
    by_id = {d.id: d for d in docs}
    if args.split is not None:
        split = load_split(args.split)
        missing = split.all_ids - set(by_id)
        if missing:
            raise ValueError(f"split references {len(missing)} ids missing from the corpus")
    else:
        split = make_splits(graph, _parse_sizes(args.split_sizes, len(docs)), args.mode, args.split_seed)
    return by_id, split


def _load_cache(args, docs, split: CorpusSplit, config: TrainConfig):
    if getattr(args, "selection", None) is not None:
        return load_selection_cache(args.selection)
    return populate_selection_cache(docs, split, config.max_sentences)


# ---------------------------------------------------------------------------
# commands


def cmd_build_dataset(args) -> int:
    corpus, edges = write_synthetic_corpus(args.out, args.num_docs, args.vocab_size, args.avg_edges, args.rng_seed)
    print(f"wrote {corpus} and {edges}")
    return EXIT_OK


def cmd_select(args) -> int:
    config = _config_from_args(args)
    docs, split = _load_data(args)
    cache = populate_selection_cache(docs, split, config.max_sentences)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_split(split, out / "split.json")
    save_selection_cache([cache[k] for k in sorted(cache)], out / "selection.jsonl")
    print(f"selected content for {len(cache)} (source, reference) pairs")
    return EXIT_OK


def cmd_train(args) -> int:
    config = _config_from_args(args)
    docs, split = _load_data(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_split(split, out / "split.json")
    (out / "config.txt").write_text(config.to_text(), encoding="utf-8")
    cache = _load_cache(args, docs, split, config)
    vocab = Vocabulary.from_documents(list(docs.values()))
    if args.dump_graphs:
        plans, _ = prepare_instances(split.train_ids, docs, split, cache, vocab, config)
        (out / "graphs.jsonl").write_text("".join(dump_plan(p) + "\n" for p in plans), encoding="utf-8")
    start = time.time()
    result = train(docs, split, config, out, cache=cache, vocab=vocab, resume_from=args.resume)
    lines = [
        f"steps {len(result.losses)} in {time.time() - start:.1f}s",
        f"skipped {len(result.skipped)} degenerate instances",
        f"final loss {result.losses[-1]:.4f}" if result.losses else "no steps run",
        f"best checkpoint {result.best_checkpoint.name if result.best_checkpoint else '-'}",
    ]
    lines += [f"val R-1 {name} {score:.4f}" for name, score in result.val_scores.items()]
    records = [json.dumps({"checkpoint": k, "val_rouge1": v}) for k, v in result.val_scores.items()]
    _write_report(out, "train_report", "\n".join(lines), records)
    print("\n".join(lines))
    return EXIT_OK


def cmd_evaluate(args) -> int:
    model, _, vocab, step, config = load_checkpoint(args.checkpoint)
    overrides = {k: parse_value(k, getattr(args, f"cfg_{k}")) for k in CONFIG_KEYS if getattr(args, f"cfg_{k}") is not None}
    if overrides:
        config = config.replace(**overrides)
        config.validate()
    docs, split = _load_data(args)
    cache = _load_cache(args, docs, split, config)
    ids = split.ids_for(args.role)
    if not ids:
        raise ValueError(f"split has no {args.role} documents")
    report = evaluate(model, ids, docs, split, config, vocab, cache, checkpoint=Path(args.checkpoint).name, role=args.role)
    _write_report(Path(args.out), f"eval_{args.role}", report.to_text(), report.to_records())
    print(report.to_text())
    return EXIT_OK


def cmd_sweep_rho(args) -> int:
    config = _config_from_args(args)
    docs, split = _load_data(args)
    out = Path(args.out)
    rows = sweep_rho(args.values, docs, split, config, out / "runs", eval_role=args.role)
    table = rho_table(rows)
    _write_report(out, "rho_sweep", table, rho_records(rows))
    print(table)
    return EXIT_OK


def cmd_verify_theory(args) -> int:
    rng = np.random.default_rng(args.rng_seed)
    problems = []
    if args.graph_dump is not None:
        for line in Path(args.graph_dump).read_text(encoding="utf-8").splitlines():
            rec = json.loads(line) if line.strip() else {}
            if "graph" in rec:
                problems.append((rec["source_id"], problem_from_graph_record(rec["graph"], args.negatives)))
    else:
        problems += [(f"bipartite-{i}", random_bipartite_problem(rng)) for i in range(args.problems)]
        problems += [(f"citation-{i}", random_citation_problem(rng)) for i in range(args.problems)]
    if not problems:
        raise ValueError("no problems to verify")
    texts, records, failed = [], [], 0
    for name, problem in problems:
        dim = args.embedding_dim or max(sum(problem.counts.shape) if problem.counts is not None else 0,
                                        len(problem.citation_weights) if problem.citation_weights is not None else 0)
        for rep in verify_factorization(problem, dim, args.steps, args.rng_seed, args.tolerance):
            texts.append(f"== {name}\n{rep.to_text()}")
            records += [json.dumps({"problem": name, **json.loads(r)}) for r in rep.to_records()]
            failed += not rep.passed
    verdict = f"{'FAIL' if failed else 'PASS'}: {len(texts) - failed}/{len(texts)} reports passed"
    _write_report(Path(args.out), "verify_theory", "\n\n".join(texts + [verdict]), records)
    print(verdict)
    return EXIT_FAIL if failed else EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="citationsum", description="Citation-aware summarization toolkit")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-dataset", help="write a synthetic corpus")
    p.add_argument("--num-docs", type=int, default=8)
    p.add_argument("--vocab-size", type=int, default=400)
    p.add_argument("--avg-edges", type=float, default=2.0)
    p.add_argument("--rng-seed", type=int, default=0)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_build_dataset)

    p = sub.add_parser("select", help="run oracle selection and write the cache")
    _add_data_args(p)
    _add_config_args(p)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("train", help="train a model")
    _add_data_args(p)
    _add_config_args(p)
    p.add_argument("--selection", type=Path, help="selection cache from 'select'")
    p.add_argument("--resume", type=Path, help="checkpoint to resume from")
    p.add_argument("--dump-graphs", action="store_true", help="write per-instance citation graphs")
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="decode and score a split")
    _add_data_args(p)
    _add_config_args(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--selection", type=Path)
    p.add_argument("--role", choices=("train", "val", "test"), default="test")
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep-rho", help="train and evaluate once per rho value")
    p.add_argument("values", type=float, nargs="+")
    _add_data_args(p)
    _add_config_args(p)
    p.add_argument("--role", choices=("train", "val", "test"), default="test")
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_sweep_rho)

    p = sub.add_parser("verify-theory", help="check the factorization fixed points numerically")
    p.add_argument("--problems", type=int, default=10, help="random problems of each kind")
    p.add_argument("--graph-dump", type=Path, help="graphs.jsonl written by 'train --dump-graphs'")
    p.add_argument("--negatives", type=int, default=1, help="k for dumped graphs")
    p.add_argument("--embedding-dim", type=int, default=None)
    p.add_argument("--steps", type=int, default=5000)
    p.add_argument("--tolerance", type=float, default=1e-2)
    p.add_argument("--rng-seed", type=int, default=0)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_verify_theory)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except DegenerateDataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE
    except TrainingError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except (ConfigError, ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
