"""Command-line entry point: ``lolprf <subcommand> [flags]``.

Exit codes: 0 success, 1 runtime failure, 2 usage error, 3 partial success
(``ablate`` with at least one failed variant).

Every subcommand writes ``manifest.json`` to ``--output-dir`` holding the
resolved arguments, the seed and sha256 hashes of inputs and outputs. The
manifest can be passed back as ``--config`` to repeat the run.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from dataclasses import asdict
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import io as lio
from .core import ContractViolation, Document, NumericFailure, Query
from .evaluation import depth_sweep, mrr_at_k, ndcg_at_k, paired_t_test, recall_at_k, robustness_index
from .index import DocumentMatrix, batch_search, build_matrix
from .prf import first_pass_runs, second_pass_runs
from .reformulator import ReformulatorConfig
from .synth import SynthConfig, generate, write_dataset
from .trainer import VARIANTS, TrainConfig, build_data, train

log = logging.getLogger("lolprf")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, EXIT_PARTIAL = 0, 1, 2, 3
MANIFEST_SCHEMA = 1
SWEEP_COLUMNS = ("depth", "mrr@10", "ndcg@10", "recall")
RI_COLUMNS = ("depth", "reference", "n_improved", "n_degraded", "n_total", "ri")


class UsageError(Exception):
    pass


# -- helpers ------------------------------------------------------------------------

def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def matrix_hash(matrix: DocumentMatrix) -> str:
    h = hashlib.sha256()
    h.update(f"{matrix.kind}:{matrix.dim}".encode())
    h.update("\n".join(matrix.doc_ids).encode("utf-8"))
    rows = matrix.rows
    if matrix.kind == "sparse":
        for part in (rows.data, rows.indices, rows.indptr):
            h.update(np.ascontiguousarray(part).tobytes())
    else:
        h.update(np.ascontiguousarray(rows, dtype="<f8").tobytes())
    return h.hexdigest()


def queries_hash(queries: Sequence[Query]) -> str:
    h = hashlib.sha256()
    for q in queries:
        h.update(q.query_id.encode("utf-8"))
        h.update(np.ascontiguousarray(q.vector.to_array(), dtype="<f8").tobytes())
    return h.hexdigest()


def _resolve(args, flag: str, default_name: Optional[str]) -> Optional[str]:
    """Explicit flag value, else ``--data-dir/default_name`` when that file exists."""
    value = getattr(args, flag.lstrip("-").replace("-", "_"), None)
    if value:
        return value
    data_dir = getattr(args, "data_dir", None)
    if data_dir and default_name and (Path(data_dir) / default_name).exists():
        return str(Path(data_dir) / default_name)
    return None


def _require(args, flag: str, default_name: Optional[str], what: str) -> str:
    path = _resolve(args, flag, default_name)
    if path is None:
        hint = f" or a --data-dir containing {default_name}" if default_name else ""
        raise UsageError(f"missing {what}: pass {flag} PATH{hint}")
    if not Path(path).exists():
        raise UsageError(f"{flag}: file not found: {path}")
    return path


def _vocab(args):
    path = _resolve(args, "--vocab", "vocab.tsv")
    return lio.read_vocabulary(path) if path else None


def load_documents(args, inputs: Dict[str, str]) -> List[Document]:
    vec_path = _resolve(args, "--doc-vectors", "corpus.vectors")
    corpus_path = _resolve(args, "--corpus", "corpus.tsv")
    if vec_path is None and corpus_path is None:
        raise UsageError("missing documents: pass --doc-vectors PATH and/or --corpus PATH (or --data-dir)")
    vectors = lio.read_vectors(vec_path) if vec_path else None
    vocab = None if vectors is not None else _vocab(args)
    if vectors is None and vocab is None:
        raise UsageError("--corpus without --doc-vectors needs --vocab to encode the text")
    for p in (vec_path, corpus_path):
        if p:
            inputs[p] = sha256_file(p)
    if corpus_path:
        return lio.read_corpus(corpus_path, vectors, vocab)
    return [Document(d, (), v) for d, v in vectors.items()]


def load_queries(args, inputs: Dict[str, str], prefix: str, split: str) -> List[Query]:
    """``prefix`` is "" for --queries or "train-"/"dev-" for the training splits."""
    q_flag, v_flag = f"--{prefix}queries", f"--{prefix}query-vectors"
    vec_path = _resolve(args, v_flag, f"queries.{split}.vectors")
    text_path = _resolve(args, q_flag, f"queries.{split}.tsv")
    if vec_path is None and text_path is None:
        raise UsageError(f"missing queries: pass {v_flag} PATH and/or {q_flag} PATH (or --data-dir)")
    vectors = lio.read_vectors(vec_path) if vec_path else None
    vocab = None if vectors is not None else _vocab(args)
    if vectors is None and vocab is None:
        raise UsageError(f"{q_flag} without {v_flag} needs --vocab to encode the text")
    for p in (vec_path, text_path):
        if p:
            inputs[p] = sha256_file(p)
    if text_path:
        return lio.read_queries(text_path, vectors, vocab)
    return [Query(q, (), v) for q, v in vectors.items()]


def load_qrels(args, inputs: Dict[str, str], flag: str, split: str):
    path = _require(args, flag, f"qrels.{split}.txt", "relevance judgments")
    inputs[path] = sha256_file(path)
    return lio.read_qrels(path)


def cached_first_pass(args, matrix: DocumentMatrix, queries: Sequence[Query], depth: int):
    """First-pass runs, cached on disk by (corpus hash, query encoder inputs, depth)."""
    key = hashlib.sha256(
        f"{matrix_hash(matrix)}|{queries_hash(queries)}|{queries[0].vector.kind}|{depth}".encode()
    ).hexdigest()[:24]
    cache_dir = Path(args.cache_dir) if args.cache_dir else Path(args.output_dir) / "cache"
    path = cache_dir / f"firstpass-{key}.run"
    if path.exists():
        log.info("first-pass cache hit %s", path.name)
        runs = lio.read_run(path)
        if set(runs) >= {q.query_id for q in queries}:
            return runs
        log.warning("cached run %s is incomplete; recomputing", path.name)
    cache_dir.mkdir(parents=True, exist_ok=True)
    runs = {qid: lio.round_run(r) for qid, r in first_pass_runs(matrix, queries, depth).items()}
    lio.write_run(runs, path, tag="base")
    return runs


def model_config_from(args, matrix: DocumentMatrix, max_depth: int) -> ReformulatorConfig:
    cfg = ReformulatorConfig(
        kind=matrix.kind, input_dim=matrix.dim, width=args.width, n_layers=args.layers,
        n_heads=args.heads, ffn_width=args.ffn_width, mlp_width=args.mlp_width,
        max_depth=max_depth, use_position=not args.no_position,
    )
    try:
        cfg.validate()
    except ContractViolation as exc:
        raise UsageError(str(exc)) from None
    return cfg


def train_config_from(args, variant: Optional[str] = None) -> TrainConfig:
    cfg = TrainConfig(
        depths=tuple(args.depths), k_size=args.k_size, lam=args.lam, learning_rate=args.lr,
        batch_queries=args.batch_queries, revision_budget=args.budget, seed=args.seed,
        variant=variant or args.variant, weight_decay=args.weight_decay,
        first_pass_depth=args.first_pass_depth, pool_cap=args.pool_cap, eval_top_n=args.eval_top_n,
        selection_depth=args.selection_depth,
    )
    try:
        return cfg.resolved()
    except ContractViolation as exc:
        raise UsageError(str(exc)) from None


def write_manifest(args, inputs: Dict[str, str], artifacts: Dict[str, Path], extra: Optional[dict] = None) -> Path:
    out = Path(args.output_dir)
    arguments = {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "config")}
    doc = {
        "schema_version": MANIFEST_SCHEMA,
        "command": args.command,
        "seed": args.seed,
        "arguments": arguments,
        "inputs": dict(sorted(inputs.items())),
        "artifacts": {name: {"path": str(p), "sha256": sha256_file(p)} for name, p in sorted(artifacts.items())},
    }
    if extra:
        doc.update(extra)
    path = out / "manifest.json"
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True, default=list)
        fh.write("\n")
    return path


def _sweep_tables(sweep, out: Path, stem: str) -> Dict[str, Path]:
    rows = [{"depth": r["depth"], "mrr@10": r["mrr@10"], "ndcg@10": r["ndcg@10"], "recall": r["recall"]}
            for r in sweep.rows()]
    ri_rows_base, ri_rows_prev = [], []
    for k in sweep.depths:
        rep = sweep.ri_vs_base[k]
        ri_rows_base.append({"depth": k, "reference": "base", "n_improved": rep.n_improved,
                             "n_degraded": rep.n_degraded, "n_total": rep.n_total, "ri": rep.ri})
        prev = sweep.ri_vs_previous[k]
        ri_rows_prev.append({"depth": k, "reference": "k-1" if prev is not None else "-",
                             "n_improved": prev.n_improved if prev else None,
                             "n_degraded": prev.n_degraded if prev else None,
                             "n_total": prev.n_total if prev else None, "ri": prev.ri if prev else None})
    paths = {"sweep": out / f"{stem}.tsv", "ri_base": out / f"{stem}.ri_base.tsv", "ri_prev": out / f"{stem}.ri_prev.tsv"}
    lio.write_table(rows, SWEEP_COLUMNS, paths["sweep"])
    lio.write_table(ri_rows_base, RI_COLUMNS, paths["ri_base"])
    lio.write_table(ri_rows_prev, RI_COLUMNS, paths["ri_prev"])
    return paths


# -- subcommands --------------------------------------------------------------------

def cmd_build_index(args) -> int:
    inputs: Dict[str, str] = {}
    docs = load_documents(args, inputs)
    matrix = build_matrix(docs)
    out = Path(args.output_dir)
    paths = {"index": out / "index.vectors", "index_info": out / "index.json"}
    lio.write_vectors([(d.doc_id, d.vector) for d in docs], paths["index"])
    info = {"kind": matrix.kind, "dim": matrix.dim, "count": len(matrix.doc_ids), "corpus_sha256": matrix_hash(matrix)}
    lio.write_config(info, paths["index_info"])
    write_manifest(args, inputs, paths)
    log.info("indexed %d %s documents of dim %d", info["count"], matrix.kind, matrix.dim)
    return EXIT_OK


def cmd_search(args) -> int:
    inputs: Dict[str, str] = {}
    matrix = build_matrix(load_documents(args, inputs))
    queries = load_queries(args, inputs, "", args.split)
    out = Path(args.output_dir)
    if args.checkpoint:
        params, meta = lio.load_checkpoint(args.checkpoint, with_metadata=True)
        inputs[args.checkpoint] = sha256_file(args.checkpoint)
        if args.depth is None:
            raise UsageError("--checkpoint needs --depth")
        if not 0 <= args.depth <= params.config.max_depth:
            raise UsageError(f"--depth {args.depth} outside [0, {params.config.max_depth}]")
        base = cached_first_pass(args, matrix, queries, max(args.first_pass_depth, args.depth))
        runs = second_pass_runs(params, matrix, queries, base, args.depth, args.top_n)
    else:
        threads = int(os.environ.get("LOLPRF_THREADS", "1"))
        lists = batch_search(matrix, [q.vector for q in queries], args.top_n,
                             [q.query_id for q in queries], tag="base", n_jobs=threads)
        runs = {r.query_id: r for r in lists}
    paths = {"run": out / "run.txt"}
    lio.write_run(runs, paths["run"])
    write_manifest(args, inputs, paths)
    return EXIT_OK


def _train_inputs(args, inputs):
    matrix = build_matrix(load_documents(args, inputs))
    train_q = load_queries(args, inputs, "train-", "train")
    dev_q = load_queries(args, inputs, "dev-", "dev")
    train_qrels = load_qrels(args, inputs, "--train-qrels", "train")
    dev_qrels = load_qrels(args, inputs, "--dev-qrels", "dev")
    return matrix, train_q, dev_q, train_qrels, dev_qrels


def _prf_data(args, matrix, queries, qrels, depth):
    return build_data(matrix, queries, qrels, depth, cached_first_pass(args, matrix, queries, depth))


def cmd_train(args) -> int:
    tcfg = train_config_from(args)
    inputs: Dict[str, str] = {}
    matrix, train_q, dev_q, train_qrels, dev_qrels = _train_inputs(args, inputs)
    mcfg = model_config_from(args, matrix, max(tcfg.depths))
    train_data = _prf_data(args, matrix, train_q, train_qrels, tcfg.first_pass_depth)
    dev_data = _prf_data(args, matrix, dev_q, dev_qrels, tcfg.first_pass_depth)
    result = train(tcfg, mcfg, matrix, train_data, dev_data)
    out = Path(args.output_dir)
    paths = {"best": out / "best.ckpt", "final": out / "final.ckpt", "metrics": out / "metrics.tsv"}
    meta = {"epoch": result.best.epoch, "dev_mrr_at_10": result.best.dev_mrr_at_10,
            "fingerprint": result.best.fingerprint, "train_config": tcfg.to_dict()}
    lio.save_checkpoint(result.best.params, paths["best"], meta)
    lio.save_checkpoint(result.final_params, paths["final"], {**meta, "epoch": tcfg.epochs})
    lio.write_table(result.log_rows, lio.METRICS_COLUMNS, paths["metrics"])
    write_manifest(args, inputs, paths, {"resolved_train_config": tcfg.to_dict(),
                                         "model_config": asdict(mcfg)})
    log.info("best epoch %d, dev MRR@10 %.4f", result.best.epoch, result.best.dev_mrr_at_10)
    return EXIT_OK


def _summary_rows(runs, qrels, recall_cutoff: int, graded: bool):
    return [
        mrr_at_k(runs, qrels, 10),
        ndcg_at_k(runs, qrels, 10),
        recall_at_k(runs, qrels, recall_cutoff, graded),
    ]


def cmd_evaluate(args) -> int:
    inputs: Dict[str, str] = {}
    run_path = _require(args, "--run", None, "run file")
    qrels = load_qrels(args, inputs, "--qrels", args.split)
    inputs[run_path] = sha256_file(run_path)
    runs = lio.read_run(run_path)
    results = _summary_rows(runs, qrels, args.recall_cutoff, args.graded)
    baseline = None
    if args.baseline_run:
        inputs[args.baseline_run] = sha256_file(args.baseline_run)
        base_runs = lio.read_run(args.baseline_run)
        if set(base_runs) != set(runs):
            raise UsageError("--baseline-run covers a different query set than --run")
        baseline = _summary_rows(base_runs, qrels, args.recall_cutoff, args.graded)
    rows, summary = [], {}
    for i, res in enumerate(results):
        row = {"metric": res.name, "mean": res.mean, "n_queries": len(res.per_query), "n_excluded": res.n_excluded}
        if baseline is not None:
            ref = baseline[i]
            ri = robustness_index(res.per_query, ref.per_query)
            tt = paired_t_test(res.per_query, ref.per_query)
            row.update({"baseline_mean": ref.mean, "ri": ri.ri,
                        "t": None if tt.degenerate else tt.t, "p_value": None if tt.degenerate else tt.p_value})
        rows.append(row)
        summary[res.name] = row
    columns = ["metric", "mean", "n_queries", "n_excluded"]
    if baseline is not None:
        columns += ["baseline_mean", "ri", "t", "p_value"]
    out = Path(args.output_dir)
    paths = {"metrics": out / "evaluation.tsv", "summary": out / "evaluation.json"}
    lio.write_table(rows, columns, paths["metrics"])
    with open(paths["summary"], "w", encoding="utf-8", newline="\n") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    write_manifest(args, inputs, paths)
    return EXIT_OK


def cmd_sweep(args) -> int:
    inputs: Dict[str, str] = {}
    ckpt = _require(args, "--checkpoint", None, "checkpoint")
    params, meta = lio.load_checkpoint(ckpt, with_metadata=True)
    inputs[ckpt] = sha256_file(ckpt)
    allowed = tuple(meta.get("train_config", {}).get("depths") or range(params.config.max_depth + 1))
    depths = tuple(args.depths) if args.depths else allowed
    bad = sorted(set(depths) - set(allowed))
    if bad:
        raise UsageError(f"--depths {bad} outside the checkpoint's depth set {list(allowed)}")
    matrix = build_matrix(load_documents(args, inputs))
    queries = load_queries(args, inputs, "", args.split)
    qrels = load_qrels(args, inputs, "--qrels", args.split)
    first = cached_first_pass(args, matrix, queries, max(args.first_pass_depth, max(depths)))
    sweep = depth_sweep(params, queries, matrix, first, qrels, depths, args.top_n,
                        graded_recall=args.graded)
    paths = _sweep_tables(sweep, Path(args.output_dir), "sweep")
    write_manifest(args, inputs, paths)
    return EXIT_OK


ABLATION_COLUMNS = ("variant", "depth", "mrr@10", "ndcg@10", "recall", "ri_vs_base", "ri_vs_prev")


def cmd_ablate(args) -> int:
    inputs: Dict[str, str] = {}
    out = Path(args.output_dir)
    if args.synth:
        data_dir = out / "data"
        write_dataset(generate(synth_config_from(args)), data_dir)
        args.data_dir = str(data_dir)
    matrix, train_q, dev_q, train_qrels, dev_qrels = _train_inputs(args, inputs)
    configs = {v: train_config_from(args, v) for v in args.variants}
    depth_cap = max(max(c.depths) for c in configs.values())
    mcfg = model_config_from(args, matrix, depth_cap)
    fp_depth = max(c.first_pass_depth for c in configs.values())
    train_data = _prf_data(args, matrix, train_q, train_qrels, fp_depth)
    dev_data = _prf_data(args, matrix, dev_q, dev_qrels, fp_depth)
    rows, status, paths = [], {}, {}
    for variant, tcfg in configs.items():
        try:
            result = train(tcfg, mcfg, matrix, train_data, dev_data)
            sweep = depth_sweep(result.best.params, dev_data.queries, matrix, dev_data.first_pass,
                                dev_data.qrels, tcfg.depths, args.eval_top_n)
        except (ContractViolation, NumericFailure, ArithmeticError, ValueError) as exc:
            log.error("variant %s failed: %s", variant, exc)
            status[variant] = f"failed: {exc}"
            continue
        status[variant] = "ok"
        for r in sweep.rows():
            rows.append({"variant": variant, **r})
        paths[f"metrics_{variant}"] = out / f"metrics.{variant}.tsv"
        lio.write_table(result.log_rows, lio.METRICS_COLUMNS, paths[f"metrics_{variant}"])
    paths["ablation"] = out / "ablation.tsv"
    lio.write_table(rows, ABLATION_COLUMNS, paths["ablation"])
    write_manifest(args, inputs, paths, {
        "variant_status": status,
        "variant_seeds": {v: c.seed for v, c in configs.items()},
        "variant_configs": {v: c.to_dict() for v, c in configs.items()},
    })
    failed = [v for v, s in status.items() if s != "ok"]
    if len(failed) == len(status):
        return EXIT_RUNTIME
    return EXIT_PARTIAL if failed else EXIT_OK


def synth_config_from(args) -> SynthConfig:
    cfg = SynthConfig(
        n_topics=args.n_topics, docs_per_topic=args.docs_per_topic, n_distractors=args.n_distractors,
        vocab_size=args.vocab_size, dense_dim=args.dense_dim, ambiguity_rate=args.ambiguity_rate,
        noise_sigma=args.noise_sigma, query_noise=args.query_noise, ambiguity_mix=args.ambiguity_mix,
        queries_per_topic=args.queries_per_topic, dev_fraction=args.dev_fraction, doc_len=args.doc_len,
        kind=args.kind, seed=args.seed,
    )
    try:
        cfg.validate()
    except ContractViolation as exc:
        raise UsageError(str(exc)) from None
    return cfg


def cmd_synth_gen(args) -> int:
    ds = generate(synth_config_from(args))
    paths = write_dataset(ds, args.output_dir)
    write_manifest(args, {}, paths)
    log.info("wrote %d docs, %d train and %d dev queries", len(ds.corpus), len(ds.train_queries), len(ds.dev_queries))
    return EXIT_OK


# -- parser -------------------------------------------------------------------------

def _depth_list(text: str) -> List[int]:
    try:
        values = [int(x) for x in text.replace(",", " ").split()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not values:
        raise argparse.ArgumentTypeError("empty depth list")
    return values


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("global")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--config", help="JSON config or a previous manifest; its values override flags")
    g.add_argument("--output-dir", default=".", help="where artifacts and manifest.json go")
    g.add_argument("--log-level", default=os.environ.get("LOLPRF_LOG_LEVEL", "INFO"),
                   choices=("DEBUG", "INFO", "WARNING", "ERROR"))
    return p


def _data_flags(p, split_default: str = "dev") -> None:
    g = p.add_argument_group("data")
    g.add_argument("--data-dir", help="directory laid out like synth-gen output; fills unset paths")
    g.add_argument("--corpus")
    g.add_argument("--doc-vectors")
    g.add_argument("--vocab")
    g.add_argument("--cache-dir", help="first-pass run cache (default OUTPUT_DIR/cache)")
    g.add_argument("--first-pass-depth", type=int, default=100)
    if split_default:
        g.add_argument("--split", default=split_default, help="split name used with --data-dir")
        g.add_argument("--queries")
        g.add_argument("--query-vectors")
        g.add_argument("--qrels")


def _training_flags(p) -> None:
    g = p.add_argument_group("training")
    for split in ("train", "dev"):
        g.add_argument(f"--{split}-queries")
        g.add_argument(f"--{split}-query-vectors")
        g.add_argument(f"--{split}-qrels")
    g.add_argument("--depths", type=_depth_list, default=[0, 1, 2, 3, 4, 5])
    g.add_argument("--k-size", type=int, default=2)
    g.add_argument("--lambda", dest="lam", type=float, default=1.0)
    g.add_argument("--lr", type=float, default=1e-4)
    g.add_argument("--batch-queries", type=int, default=8)
    g.add_argument("--budget", type=int, default=12, help="revisions per query over the whole run")
    g.add_argument("--weight-decay", type=float, default=0.01)
    g.add_argument("--pool-cap", type=int, default=64)
    g.add_argument("--eval-top-n", type=int, default=100)
    g.add_argument("--selection-depth", type=int, default=None)
    m = p.add_argument_group("model")
    m.add_argument("--width", type=int, default=32)
    m.add_argument("--layers", type=int, default=1)
    m.add_argument("--heads", type=int, default=2)
    m.add_argument("--ffn-width", type=int, default=64)
    m.add_argument("--mlp-width", type=int, default=32)
    m.add_argument("--no-position", action="store_true")


def _synth_flags(p) -> None:
    d = SynthConfig()
    g = p.add_argument_group("synthetic data")
    for name in ("n_topics", "docs_per_topic", "n_distractors", "vocab_size", "dense_dim",
                 "queries_per_topic", "doc_len"):
        g.add_argument("--" + name.replace("_", "-"), type=int, default=getattr(d, name))
    for name in ("ambiguity_rate", "noise_sigma", "query_noise", "ambiguity_mix", "dev_fraction"):
        g.add_argument("--" + name.replace("_", "-"), type=float, default=getattr(d, name))
    g.add_argument("--kind", choices=("dense", "sparse"), default=d.kind)


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="lolprf", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    p = sub.add_parser("build-index", parents=[common], help="validate a corpus and write its vector index")
    _data_flags(p, split_default="")
    p.set_defaults(func=cmd_build_index)

    p = sub.add_parser("search", parents=[common], help="first-pass (or revised second-pass) retrieval")
    _data_flags(p)
    p.add_argument("--top-n", type=int, default=1000)
    p.add_argument("--checkpoint")
    p.add_argument("--depth", type=int)
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("train", parents=[common], help="train the reformulator")
    _data_flags(p, split_default="")
    _training_flags(p)
    p.add_argument("--variant", choices=VARIANTS, default="standard")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", parents=[common], help="score a run file against qrels")
    p.add_argument("--data-dir")
    p.add_argument("--split", default="dev")
    p.add_argument("--run")
    p.add_argument("--qrels")
    p.add_argument("--baseline-run", help="reference run for RI and the paired t-test")
    p.add_argument("--recall-cutoff", type=int, default=1000)
    p.add_argument("--graded", action="store_true", help="recall counts only grade >= 2")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep", parents=[common], help="per-depth metrics and RI tables for a checkpoint")
    _data_flags(p)
    p.add_argument("--checkpoint")
    p.add_argument("--depths", type=_depth_list, default=None)
    p.add_argument("--top-n", type=int, default=1000)
    p.add_argument("--graded", action="store_true")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("ablate", parents=[common], help="train standard, no_reg and no_par side by side")
    _data_flags(p, split_default="")
    _training_flags(p)
    _synth_flags(p)
    p.add_argument("--synth", action="store_true", help="generate a synthetic dataset first")
    p.add_argument("--variants", nargs="+", choices=VARIANTS, default=list(VARIANTS))
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("synth-gen", parents=[common], help="write a synthetic dataset")
    _synth_flags(p)
    p.set_defaults(func=cmd_synth_gen)
    return parser


def apply_config(parser: argparse.ArgumentParser, args) -> None:
    """Overlay ``--config`` values on parsed flags (config wins)."""
    try:
        with open(args.config, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"--config: cannot read {args.config}: {exc}") from None
    if not isinstance(doc, dict):
        raise UsageError("--config must hold a JSON object")
    if "arguments" in doc:  # a manifest from an earlier run
        if doc.get("command") not in (None, args.command):
            raise UsageError(f"--config is a manifest for {doc.get('command')!r}, not {args.command!r}")
        # replaying a manifest keeps the caller's --output-dir
        doc = {k: v for k, v in doc["arguments"].items() if k != "output_dir"}
    doc = {k: v for k, v in doc.items() if k not in ("schema_version", "command")}
    known = vars(args)
    for key, value in doc.items():
        dest = key.replace("-", "_")
        if dest not in known:
            raise UsageError(f"--config: unknown setting {key!r} for {args.command}")
        setattr(args, dest, value)


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse usage errors exit 2, --help exits 0
        return int(exc.code or 0)
    try:
        if args.config:
            apply_config(parser, args)
        logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.INFO),
                            format="%(levelname)s %(name)s: %(message)s", force=True)
        Path(args.output_dir).mkdir(parents=True, exist_ok=True)
        return args.func(args)
    except UsageError as exc:
        print(f"lolprf {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ContractViolation, NumericFailure, lio.FormatError, lio.CheckpointError, OSError, ValueError) as exc:
        print(f"lolprf {args.command}: failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
