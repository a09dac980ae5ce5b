"""Command-line entry point: ``ldplam <command> ... --out DIR``.

Exit status: 0 ok, 2 usage or configuration error, 3 data error, 4 numeric error.
"""

from __future__ import annotations

import argparse
import csv
import itertools
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .attention import composed_modes, explain_gamma, top_k_words
from .autodiff import GraphError
from .cost import analytic_cost
from .labels import LabelCatalog, LabelFileError, save_label_vectors, sibling_groups
from .metrics import attention_mode_match, evaluate, micro_f1, sibling_agreement
from .model import PseudoLabelAttentionClassifier
from .pipeline import ConfigError, RunConfig, fit_truncator, label_prior_scores, pretrain_embeddings, split_records, train
from .synth import synth_generate
from .text import TfidfTruncator, Vocab, read_corpus, write_corpus

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
logger = logging.getLogger("ldplam")


def _dump_json(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _load_inputs(config: RunConfig):
    if not config.corpus or not config.catalog:
        raise ConfigError("config must set both corpus and catalog")
    return read_corpus(config.corpus), LabelCatalog.from_tsv(config.catalog)


def _config(args) -> RunConfig:
    config = RunConfig.load(args.config)
    overrides = {k: v for k, v in (("seed", getattr(args, "seed", None)), ("head", getattr(args, "head", None))) if v is not None}
    return config.replace(**overrides) if overrides else config


def _write_vectors(path: Path, vocab: Vocab, table: np.ndarray) -> None:
    lines = [f"{table.shape[0]} {table.shape[1]}"]
    lines += [" ".join([tok, *(repr(float(v)) for v in row)]) for tok, row in zip(vocab.itos, table)]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


class _Run:
    """A finished ``train`` output directory, reloaded for evaluation."""

    def __init__(self, run_dir):
        run_dir = Path(run_dir)
        self.config = RunConfig.load(run_dir / "config.txt")
        self.model = PseudoLabelAttentionClassifier.load(run_dir / "checkpoint.bin")
        self.records, self.catalog = _load_inputs(self.config)
        self.splits = split_records(self.records, self.config.seed)
        self.catalog.count_training_labels([r["labels"] for r in self.splits["train"]])
        self.truncator = TfidfTruncator(self.config.l_r, self.config.tokenizer, self.config.min_count)
        self.truncator.vocab_ = Vocab.load(run_dir / "vocab.tsv")

    def tokens(self, records) -> np.ndarray:
        return self.truncator.transform([r["text"] for r in records])


# -- commands ---------------------------------------------------------------


def cmd_synth(args, out: Path) -> None:
    corpus = synth_generate(
        n_labels=args.n_labels,
        depth=args.depth,
        branching=args.branching,
        n_docs=args.n_docs,
        doc_len=args.doc_len,
        vocab_size=args.vocab_size,
        zero_shot_fraction=args.zero_shot_fraction,
        seed=args.seed,
    )
    write_corpus(corpus.records, out / "corpus.jsonl")
    corpus.catalog.to_tsv(out / "catalog.tsv")
    _dump_json({"zero_shot": corpus.zero_shot, "parents": corpus.parents}, out / "synth.json")


def _preprocessed(config: RunConfig):
    records, catalog = _load_inputs(config)
    splits = split_records(records, config.seed)
    if not splits["train"]:
        raise ValueError("train split is empty")
    return splits, catalog, fit_truncator(config, splits["train"], catalog)


def cmd_preprocess(args, out: Path) -> None:
    config = _config(args)
    splits, _, truncator = _preprocessed(config)
    truncator.vocab_.save(out / "vocab.tsv")
    with open(out / "tokens.jsonl", "w", encoding="utf-8") as fh:
        for name in ("train", "valid", "test"):
            if not splits[name]:
                continue
            X = truncator.transform([r["text"] for r in splits[name]])
            for rec, row in zip(splits[name], X):
                fh.write(json.dumps({"id": rec["id"], "split": name, "tokens": row.tolist()}) + "\n")


def cmd_pretrain_emb(args, out: Path) -> None:
    config = _config(args)
    splits, catalog, truncator = _preprocessed(config)
    table = pretrain_embeddings(config, truncator, splits["train"], catalog)
    truncator.vocab_.save(out / "vocab.tsv")
    _write_vectors(out / "embeddings.vec", truncator.vocab_, table)
    np.save(out / "embeddings.npy", table)


def cmd_train(args, out: Path) -> None:
    config = _config(args).replace(output_dir=str(out))
    records, catalog = _load_inputs(config)
    est, prepared, log = train(config, records, catalog, log_path=out / "log.jsonl")
    (out / "config.txt").write_text(config.to_text(), encoding="utf-8")
    prepared.vocab.save(out / "vocab.tsv")
    _write_vectors(out / "embeddings.vec", prepared.vocab, prepared.embeddings)
    save_label_vectors(out / "label_vectors.txt", catalog.codes, prepared.label_vectors)
    est.save(out / "checkpoint.bin")
    logger.info("best validation MiF %.4f at epoch %d", est.best_score_, est.best_epoch_)


def cmd_eval(args, out: Path) -> None:
    run = _Run(args.run)
    records = run.splits[args.split]
    if not records:
        raise ValueError(f"{args.split} split is empty")
    Y = run.catalog.multi_hot([r["labels"] for r in records])
    if args.debug_oracle_scores:
        scores = Y.copy()
    else:
        scores = run.model.predict_proba(run.tokens(records))
    counts = run.catalog.train_counts
    report = evaluate(scores, Y, counts, threshold=run.config.threshold)
    prior = label_prior_scores(counts, len(run.splits["train"]), len(records))
    result = report.as_dict()
    result["label_prior_micro_f1"] = micro_f1(prior, Y, run.config.threshold)
    result["metadata"].update(split=args.split, head=run.config.head, debug_oracle_scores=bool(args.debug_oracle_scores))
    _dump_json(result, out / "metrics.json")
    with open(out / "buckets.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bucket", "aupr"])
        w.writerows([k, "" if v is None else repr(v)] for k, v in result["bucket_aupr"].items())
    with open(out / "groups.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["group", "k", "recall"])
        for group, by_k in result["group_r_at_k"].items():
            w.writerows([group, k, "" if v is None else repr(v)] for k, v in by_k.items())


def cmd_cost(args, out: Path) -> None:
    header = ["l_r", "n", "m", "d_c", "labelwise_mults", "pseudo_mults", "labelwise_elems", "pseudo_elems", "mult_ratio"]
    with open(out / "cost.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for l_r, n, m, d_c in itertools.product(args.l_r, args.n, args.m, args.d_c):
            rep = analytic_cost(l_r, n, m, d_c)
            w.writerow(
                [l_r, n, m, d_c, rep.multiplications_labelwise, rep.multiplications_pseudo,
                 rep.stored_elements_labelwise, rep.stored_elements_pseudo, repr(float(rep.multiplication_ratio))]
            )


def cmd_explain(args, out: Path) -> None:
    run = _Run(args.run)
    by_id = {r["id"]: r for r in run.records}
    missing = [d for d in args.docs if d not in by_id]
    if missing:
        raise ValueError(f"unknown document ids: {missing}")
    records = [by_id[d] for d in args.docs]
    X = run.tokens(records)
    trace = run.model.attention_trace(X)
    scores = run.model.predict_proba(X)
    with open(out / "trace.jsonl", "w", encoding="utf-8") as fh:
        for row, rec in enumerate(records):
            if args.labels:
                label_ids = [run.catalog.index(c) for c in args.labels]
            else:
                label_ids = [int(np.argmax(scores[row]))]
            for label in label_ids:
                gamma = explain_gamma(trace, label, doc=row, version=run.model.version_)
                words = top_k_words(gamma, X[row], args.top_k, run.truncator.vocab_)
                fh.write(
                    json.dumps(
                        {
                            "doc": rec["id"],
                            "label": run.catalog.codes[label],
                            "gamma": gamma.tolist(),
                            "top_words": [[tok, int(pos), float(wt)] for tok, pos, wt in words],
                        }
                    )
                    + "\n"
                )


def cmd_match_modes(args, out: Path) -> None:
    pseudo, labelwise = _Run(args.pseudo), _Run(args.labelwise)
    if pseudo.model.head != "pseudo" or labelwise.model.head != "labelwise":
        raise ConfigError("--pseudo must be a pseudo-head run and --labelwise a label-wise run")
    if pseudo.catalog.codes != labelwise.catalog.codes:
        raise ValueError("runs use different label catalogs")
    records = pseudo.splits[args.split]
    Xp, Xl = pseudo.tokens(records), labelwise.tokens(records)
    if not np.array_equal(Xp, Xl):
        raise ValueError("runs tokenize the documents differently; positions cannot be compared")
    tp, tl = pseudo.model.attention_trace(Xp), labelwise.model.attention_trace(Xl)
    ids = [r["id"] for r in records]
    mapping = attention_mode_match(
        {d: composed_modes(tp, i) for i, d in enumerate(ids)},
        {d: tl.alphas[0][i] for i, d in enumerate(ids)},
    )
    same_sib, same_non = sibling_agreement(mapping, sibling_groups(pseudo.catalog, args.prefix_len))
    _dump_json(
        {
            "mapping": {code: int(mode) for code, mode in zip(pseudo.catalog.codes, mapping)},
            "prefix_len": args.prefix_len,
            "sibling_same_mode": same_sib,
            "non_sibling_same_mode": same_non,
            "n_docs": len(ids),
        },
        out / "modes.json",
    )


# -- parser -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ldplam", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name, fn, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--out", required=True, help="output directory (created if missing)")
        p.set_defaults(fn=fn)
        return p

    p = command("synth", cmd_synth, "write a synthetic corpus.jsonl and catalog.tsv")
    p.add_argument("--n-labels", type=int, default=50)
    p.add_argument("--depth", type=int, default=3)
    p.add_argument("--branching", type=int, default=4)
    p.add_argument("--n-docs", type=int, default=300)
    p.add_argument("--doc-len", type=int, default=160)
    p.add_argument("--vocab-size", type=int, default=800)
    p.add_argument("--zero-shot-fraction", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)

    for name, fn, text in (
        ("preprocess", cmd_preprocess, "build vocab.tsv and the tokenized cache tokens.jsonl"),
        ("pretrain-emb", cmd_pretrain_emb, "skip-gram embeddings.vec (text) and embeddings.npy"),
        ("train", cmd_train, "fit a model; writes checkpoint.bin and log.jsonl"),
    ):
        p = command(name, fn, text)
        p.add_argument("--config", required=True)
        p.add_argument("--seed", type=int, help="override the config seed")
        if name == "train":
            p.add_argument("--head", choices=("pseudo", "labelwise"), help="override the config head")

    p = command("eval", cmd_eval, "metrics.json, buckets.csv, groups.csv for a trained run")
    p.add_argument("--run", required=True, help="train output directory")
    p.add_argument("--split", default="test", choices=("train", "valid", "test"))
    p.add_argument("--debug-oracle-scores", action="store_true", help="score with the true labels (harness check)")

    p = command("cost", cmd_cost, "analytic attention cost for every combination of the given sizes")
    p.add_argument("--l-r", type=int, nargs="+", default=[128])
    p.add_argument("--n", type=int, nargs="+", default=[50])
    p.add_argument("--m", type=int, nargs="+", default=[8])
    p.add_argument("--d-c", type=int, nargs="+", default=[32])

    p = command("explain", cmd_explain, "composed attention and top words per document (trace.jsonl)")
    p.add_argument("--run", required=True)
    p.add_argument("--docs", nargs="+", required=True, help="document ids")
    p.add_argument("--labels", nargs="+", help="label codes (default: each document's top-scored label)")
    p.add_argument("--top-k", type=int, default=10)

    p = command("match-modes", cmd_match_modes, "map every label to its nearest pseudo mode (modes.json)")
    p.add_argument("--pseudo", required=True, help="pseudo-head train directory")
    p.add_argument("--labelwise", required=True, help="label-wise train directory")
    p.add_argument("--split", default="test", choices=("train", "valid", "test"))
    p.add_argument("--prefix-len", type=int, default=3)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        args.fn(args, out)
    except ConfigError as exc:
        print(f"ldplam: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FloatingPointError, GraphError) as exc:
        print(f"ldplam: numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, ValueError, KeyError, IndexError, LabelFileError) as exc:
        print(f"ldplam: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
