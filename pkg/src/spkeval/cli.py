"""Command-line front end.

Every subcommand writes fixed-name reports into ``--out``. Reports embed the
toolkit version, the resolved configuration, the seed and SHA-256 digests of
all inputs; identical inputs give byte-identical reports.

Exit codes: 0 success, 2 input error, 3 internal invariant violation.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import math
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from . import __version__, abx, lm, mcd, quantize, unitmetrics, zeroshot
from .config import load_config, report_config
from .errors import InputError, InvariantError
from .io import (FeatureSequence, MANIFEST_NAME, _split_tsv, load_feature_dir, read_alignment, read_manifest,
                 read_pair_manifest)

log = logging.getLogger("spkeval")

EXIT_OK, EXIT_INPUT, EXIT_INTERNAL = 0, 2, 3


# ---------------------------------------------------------------- reporting

def digest_path(path) -> str:
    path = Path(path)
    h = hashlib.sha256()
    if path.is_dir():
        manifest = path / MANIFEST_NAME
        h.update(manifest.read_bytes())
        for utt, fpath in sorted(read_manifest(manifest).items()):
            h.update(utt.encode())
            h.update(hashlib.sha256(fpath.read_bytes()).digest())
    else:
        h.update(path.read_bytes())
    return h.hexdigest()


class Run:
    def __init__(self, command: str, config: dict, out: Path):
        self.command = command
        self.config = config
        self.out = out
        self.inputs: Dict[str, str] = {}
        out.mkdir(parents=True, exist_ok=True)

    def input(self, path) -> Path:
        path = Path(path)
        if not path.exists():
            raise InputError(f"input not found: {path}")
        self.inputs[str(path)] = digest_path(path)
        return path

    def envelope(self, results) -> dict:
        return {
            "toolkit": "spkeval",
            "version": __version__,
            "command": self.command,
            "seed": self.config["seed"],
            "config": report_config(self.config),
            "inputs": dict(sorted(self.inputs.items())),
            "results": results,
        }

    def write_json(self, name: str, results) -> Path:
        path = self.out / name
        text = json.dumps(self.envelope(results), indent=2, sort_keys=True, allow_nan=False)
        path.write_text(text + "\n", encoding="utf-8")
        return path

    def write_csv(self, name: str, rows: Sequence[dict], fields: Sequence[str]) -> Path:
        path = self.out / name
        with open(path, "w", encoding="utf-8", newline="") as f:
            w = csv.DictWriter(f, fieldnames=list(fields), lineterminator="\n", extrasaction="ignore")
            w.writeheader()
            for row in rows:
                w.writerow({k: _csv_value(row.get(k)) for k in fields})
        return path


def _csv_value(v):
    if isinstance(v, float):
        return repr(v)
    return "" if v is None else v


# ---------------------------------------------------------------- helpers

def _load_features(run: Run, directory) -> Dict[str, FeatureSequence]:
    directory = Path(directory)
    if not (directory / MANIFEST_NAME).is_file():
        raise InputError(f"manifest not found: {directory / MANIFEST_NAME}")
    run.input(directory)
    return load_feature_dir(directory)


def _represent(features: Dict[str, FeatureSequence], representation: str, codebook) -> Dict[str, FeatureSequence]:
    if representation == "continuous":
        return features
    if codebook is None:
        raise InputError(f"representation {representation!r} needs --codebook")
    out = {}
    for utt, seq in features.items():
        units = quantize.assign(codebook, seq)
        if representation == "centroid":
            out[utt] = quantize.centroid_features(codebook, units)
        elif representation == "one-hot":
            out[utt] = quantize.one_hot_features(units, codebook.k)
        else:
            raise InputError(f"unknown representation {representation!r}")
    return out


class ItemSource:
    """Items for each span, from an alignment or from item files."""

    def __init__(self, run: Run, alignment=None, items=None, phone_items=None):
        self.by_span = {}
        if alignment is not None:
            table = read_alignment(run.input(alignment))
            self.by_span["triphone"] = abx.extract_items(table, "triphone")
            self.by_span["phone"] = abx.extract_items(table, "phone")
        if items is not None:
            self.by_span["triphone"] = abx.read_items(run.input(items), "triphone")
        if phone_items is not None:
            self.by_span["phone"] = abx.read_items(run.input(phone_items), "phone")

    def for_task(self, task: str) -> List[abx.Item]:
        span = abx.task_span(task)
        if span not in self.by_span:
            flag = "--items" if span == "triphone" else "--phone-items"
            raise InputError(f"task {task} needs {span} items: pass --alignment or {flag}")
        return self.by_span[span]


def _paired(values: Optional[list], n: int, name: str) -> list:
    if values is None:
        return [None] * n
    if len(values) == 1:
        return values * n
    if len(values) != n:
        raise InputError(f"{name}: expected 1 or {n} values, got {len(values)}")
    return values


def _dataset_names(dirs: Sequence[str]) -> List[str]:
    names = []
    for d in dirs:
        base = Path(d).name or str(d)
        name, i = base, 2
        while name in names:
            name, i = f"{base}.{i}", i + 1
        names.append(name)
    return names


def _read_label_table(run: Run, path) -> Dict[str, List[str]]:
    path = run.input(path)
    out = {}
    for lineno, cols in _split_tsv(path):
        if len(cols) not in (1, 2):
            raise InputError(f"{path}: line {lineno}: expected 2 columns")
        out[cols[0]] = cols[1].split() if len(cols) == 2 else []
    return out


# ---------------------------------------------------------------- subcommands

def cmd_abx(args, config, run: Run) -> None:
    for task in config["tasks"]:
        abx.check_task(task)
    n = len(args.features)
    alignments = _paired(args.alignment, n, "--alignment")
    items = _paired(args.items, n, "--items")
    phone_items = _paired(args.phone_items, n, "--phone-items")
    codebook = quantize.read_codebook(run.input(args.codebook)) if args.codebook else None
    report = abx.ABXReport()
    for name, fdir, al, it, pit in zip(_dataset_names(args.features), args.features, alignments, items, phone_items):
        if al is None and it is None and pit is None:
            raise InputError("pass --alignment, --items or --phone-items")
        source = ItemSource(run, al, it, pit)
        feats = _represent(_load_features(run, fdir), config["representation"], codebook)
        for task in config["tasks"]:
            res = abx.evaluate_task(source.for_task(task), feats, task, cap=config["cell_cap"] or None,
                                    seed=config["seed"], threads=config["threads"])
            report.add(name, res)
            log.info("%s %s: error %.4f", name, task, res.error)
    run.write_json("abx.json", report.to_dict())
    run.write_csv("abx.csv", report.rows(), abx.CSV_FIELDS)


def cmd_sweep(args, config, run: Run) -> None:
    for task in config["tasks"]:
        abx.check_task(task)
    source = ItemSource(run, args.alignment, args.items, args.phone_items)
    if not source.by_span:
        raise InputError("pass --alignment, --items or --phone-items")
    codebook = quantize.read_codebook(run.input(args.codebook)) if args.codebook else None
    rows, results = [], {}
    for fdir in args.features:
        feats = _represent(_load_features(run, fdir), config["representation"], codebook)
        results[fdir] = {}
        for task in config["tasks"]:
            res = abx.evaluate_task(source.for_task(task), feats, task, cap=config["cell_cap"] or None,
                                    seed=config["seed"], threads=config["threads"])
            results[fdir][task] = res.to_dict(include_cells=False)
            rows.append({"features": fdir, "task": task, "error": res.error, "score": res.score,
                         "n_cells": res.n_cells})
    run.write_json("sweep.json", results)
    run.write_csv("sweep.csv", rows, ("features", "task", "error", "score", "n_cells"))


def cmd_quantize(args, config, run: Run) -> None:
    feats = _load_features(run, args.features)
    samples = quantize.stack_features([feats[u] for u in sorted(feats)])
    cb = quantize.kmeans_fit(samples, config["k"], seed=config["seed"], max_iter=config["max_iter"],
                             rel_tol=config["rel_tol"], threads=config["threads"])
    quantize.write_codebook(cb, run.out / "codebook.spkc")
    run.write_json("quantize.json", {
        "k": cb.k, "dim": cb.dim, "n_samples": int(samples.shape[0]), "final_inertia": cb.final_inertia,
        "iterations_run": cb.iterations_run, "inertia_history": list(cb.inertia_history),
    })


def cmd_assign(args, config, run: Run) -> None:
    feats = _load_features(run, args.features)
    if args.argmax == bool(args.codebook):
        raise InputError("pass exactly one of --codebook or --argmax")
    cb = quantize.read_codebook(run.input(args.codebook)) if args.codebook else None
    seqs = []
    for utt in sorted(feats):
        seq = feats[utt]
        seqs.append(quantize.argmax_units(seq) if cb is None else quantize.assign(cb, seq, config["threads"]))
    quantize.write_units(seqs, run.out / "units.tsv")
    n_frames = sum(len(s) for s in seqs)
    used = sorted({u for s in seqs for u in s.units.tolist()})
    run.write_json("assign.json", {"n_utterances": len(seqs), "n_frames": n_frames, "n_units_used": len(used),
                                   "mode": "argmax" if cb is None else "codebook"})


def cmd_unit_metrics(args, config, run: Run) -> None:
    units = quantize.read_units(run.input(args.units), frame_rate=config["frame_rate"])
    table = unitmetrics.joint_counts(units.values(), read_alignment(run.input(args.alignment)))
    rows = unitmetrics.metrics_report(table)
    run.write_json("unit-metrics.json", rows)
    run.write_csv("unit-metrics.csv", rows, ("metric", "value", "n_frames", "n_units", "n_phones"))


def cmd_per(args, config, run: Run) -> None:
    pred = _read_label_table(run, args.pred)
    gold = _read_label_table(run, args.gold)
    missing = sorted(set(gold) - set(pred))
    if missing:
        raise InputError(f"no prediction for utterance {missing[0]!r}")
    rows, correct, frames = [], 0, 0
    for utt in sorted(gold):
        p, g = pred[utt], gold[utt]
        if len(p) != len(g):
            raise InputError(f"{utt}: {len(p)} predicted frames vs {len(g)} gold frames")
        correct += sum(a == b for a, b in zip(p, g))
        frames += len(g)
        rows.append({"utterance_id": utt, "frame_accuracy": unitmetrics.frame_accuracy(p, g),
                     "per": unitmetrics.phone_error_rate(p, g, config["collapse_gold"])})
    summary = unitmetrics.corpus_per(((pred[u], gold[u]) for u in sorted(gold)), config["collapse_gold"])
    summary.update({"frame_accuracy": correct / frames, "n_frames": frames, "n_utterances": len(rows)})
    run.write_json("per.json", summary)
    run.write_csv("per.csv", rows, ("utterance_id", "frame_accuracy", "per"))


def _unit_corpus(run: Run, paths) -> Dict[str, quantize.UnitSequence]:
    out = {}
    for p in paths:
        for utt, seq in quantize.read_units(run.input(p)).items():
            if utt in out:
                raise InputError(f"sequence id {utt!r} appears in more than one unit file")
            out[utt] = seq
    return out


def cmd_lm_train(args, config, run: Run) -> None:
    corpus = _unit_corpus(run, args.units)
    seqs = [corpus[u] for u in sorted(corpus)]
    model = lm.ngram_train(seqs, order=config["order"], discount=config["discount"], dedup_units=config["dedup"])
    lm.save_model(model, run.out / "model.spkl")
    (run.out / "model.txt").write_text(lm.dump_text(model), encoding="utf-8")
    run.write_json("lm-train.json", {
        "order": model.order, "discount": model.discount, "vocab_size": model.vocab_size,
        "n_sequences": len(seqs), "train_perplexity": lm.perplexity(model, seqs, dedup_units=config["dedup"]),
    })


def cmd_lm_score(args, config, run: Run) -> None:
    model = lm.load_model(run.input(args.model))
    corpus = _unit_corpus(run, args.units)
    scorer = zeroshot.ModelScorer(model, corpus, dedup_units=config["dedup"])
    scores = {u: scorer(u) for u in sorted(corpus)}
    zeroshot.write_scores(scores, run.out / "scores.tsv")
    total = sum(s.logprob for s in scores.values())
    n_tok = sum(s.n_tokens for s in scores.values())
    run.write_json("lm-score.json", {"n_sequences": len(scores), "total_logprob": total, "n_tokens": n_tok,
                                     "perplexity": math.exp(-total / n_tok)})


def cmd_zeroshot(args, config, run: Run) -> None:
    pairs = read_pair_manifest(run.input(args.pairs))
    if bool(args.scores) == bool(args.model):
        raise InputError("pass exactly one of --scores or --model (with --units)")
    if args.scores:
        scorer = zeroshot.TableScorer(zeroshot.read_scores(run.input(args.scores)))
    else:
        if not args.units:
            raise InputError("--model needs --units to resolve sequence references")
        scorer = zeroshot.ModelScorer(lm.load_model(run.input(args.model)), _unit_corpus(run, args.units),
                                      dedup_units=config["dedup"])
    summary = zeroshot.evaluate(scorer, pairs)
    detail = zeroshot.pair_accuracy(scorer, pairs, "none", "all")["pairs"]
    run.write_json("zeroshot.json", summary)
    run.write_csv("zeroshot.csv", detail, ("pair_id", "true", "other", "credit"))


def cmd_mcd(args, config, run: Run) -> None:
    cfg = mcd.MFCCConfig(sample_rate=config["sample_rate"], win_length=config["win_length"],
                         hop_length=config["hop_length"], n_fft=config["n_fft"], n_mels=config["n_mels"],
                         fmax=config["sample_rate"] / 2, n_ceps=config["n_ceps"])
    pairs_path = run.input(args.pairs)
    rows, triples = [], []
    for lineno, cols in _split_tsv(pairs_path):
        if len(cols) != 3:
            raise InputError(f"{pairs_path}: line {lineno}: expected 3 columns (ref, syn, group)")
        ref_p, syn_p = (pairs_path.parent / c for c in cols[:2])
        ref, syn = mcd.wav_mfcc(run.input(ref_p), cfg), mcd.wav_mfcc(run.input(syn_p), cfg)
        triples.append((ref, syn, cols[2]))
        rows.append({"ref": cols[0], "syn": cols[1], "group": cols[2], "mcd": mcd.mcd(ref, syn, config["align"])})
    summary = mcd.mcd_by_group(triples, config["align"])
    run.write_json("mcd.json", summary)
    run.write_csv("mcd.csv", rows, ("ref", "syn", "group", "mcd"))


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spkeval", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"spkeval {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", required=True, help="report directory")
    common.add_argument("--config", help="TOML config file; flags override it")
    common.add_argument("--seed", type=int)
    common.add_argument("--threads", type=int, help="worker threads (fallback: $SPKEVAL_THREADS)")

    def abx_flags(p, multi):
        p.add_argument("--features", nargs="+" if multi else None, required=True,
                       help="feature directories containing manifest.tsv")
        p.add_argument("--alignment", nargs="+" if multi else None, help="alignment TSV to extract items from")
        p.add_argument("--items", nargs="+" if multi else None, help="triphone item TSV")
        p.add_argument("--phone-items", nargs="+" if multi else None, help="phone item TSV")
        p.add_argument("--task", action="append", dest="tasks", choices=abx.TASKS)
        p.add_argument("--cell-cap", type=int, help="max tokens per A/B/X list (0 disables)")
        p.add_argument("--representation", choices=("continuous", "centroid", "one-hot"))
        p.add_argument("--codebook", help="codebook for centroid / one-hot representations")

    p = sub.add_parser("abx", parents=[common], help="ABX error rates for one or more datasets")
    abx_flags(p, multi=True)
    p.set_defaults(func=cmd_abx)

    p = sub.add_parser("sweep", parents=[common], help="ABX over several feature directories (e.g. layers)")
    p.add_argument("--features", nargs="+", required=True)
    p.add_argument("--alignment")
    p.add_argument("--items")
    p.add_argument("--phone-items")
    p.add_argument("--task", action="append", dest="tasks", choices=abx.TASKS)
    p.add_argument("--cell-cap", type=int)
    p.add_argument("--representation", choices=("continuous", "centroid", "one-hot"))
    p.add_argument("--codebook")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("quantize", parents=[common], help="train a k-means codebook")
    p.add_argument("--features", required=True)
    p.add_argument("--k", type=int)
    p.add_argument("--max-iter", type=int)
    p.add_argument("--rel-tol", type=float)
    p.set_defaults(func=cmd_quantize)

    p = sub.add_parser("assign", parents=[common], help="map frames to units")
    p.add_argument("--features", required=True)
    p.add_argument("--codebook")
    p.add_argument("--argmax", action="store_true", help="label frames by their largest dimension (logits)")
    p.set_defaults(func=cmd_assign)

    p = sub.add_parser("unit-metrics", parents=[common], help="PNMI and purities against an alignment")
    p.add_argument("--units", required=True)
    p.add_argument("--alignment", required=True)
    p.add_argument("--frame-rate", type=float)
    p.set_defaults(func=cmd_unit_metrics)

    p = sub.add_parser("per", parents=[common], help="frame accuracy and phone error rate")
    p.add_argument("--pred", required=True, help="TSV: utterance_id, space-separated frame labels")
    p.add_argument("--gold", required=True)
    p.add_argument("--collapse-gold", action=argparse.BooleanOptionalAction, default=None)
    p.set_defaults(func=cmd_per)

    p = sub.add_parser("lm-train", parents=[common], help="train an n-gram unit LM")
    p.add_argument("--units", nargs="+", required=True)
    p.add_argument("--order", type=int)
    p.add_argument("--discount", type=float)
    p.add_argument("--dedup", action=argparse.BooleanOptionalAction, default=None)
    p.set_defaults(func=cmd_lm_train)

    p = sub.add_parser("lm-score", parents=[common], help="log-probabilities of unit sequences")
    p.add_argument("--model", required=True)
    p.add_argument("--units", nargs="+", required=True)
    p.add_argument("--dedup", action=argparse.BooleanOptionalAction, default=None)
    p.set_defaults(func=cmd_lm_score)

    p = sub.add_parser("zeroshot", parents=[common], help="paired spot-the-word / grammaticality accuracy")
    p.add_argument("--pairs", required=True)
    p.add_argument("--scores", help="TSV: sequence_id, logprob[, n_tokens]")
    p.add_argument("--model")
    p.add_argument("--units", nargs="+")
    p.add_argument("--dedup", action=argparse.BooleanOptionalAction, default=None)
    p.set_defaults(func=cmd_zeroshot)

    p = sub.add_parser("mcd", parents=[common], help="mel-cepstral distortion of resynthesised audio")
    p.add_argument("--pairs", required=True, help="TSV: ref_wav, syn_wav, group")
    p.add_argument("--align", choices=("dtw", "frame"))
    p.set_defaults(func=cmd_mcd)
    return parser


_OVERRIDE_FLAGS = ("seed", "threads", "tasks", "cell_cap", "representation", "k", "max_iter", "rel_tol",
                   "frame_rate", "collapse_gold", "order", "discount", "dedup", "align")


def dispatch(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_INPUT
    try:
        overrides = {k: getattr(args, k, None) for k in _OVERRIDE_FLAGS}
        config = load_config(args.config, overrides)
        run = Run(args.command, config, Path(args.out))
        if args.config:
            run.input(args.config)
        args.func(args, config, run)
    except InvariantError as exc:
        print(f"spkeval: internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except InputError as exc:
        print(f"spkeval: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except OSError as exc:
        print(f"spkeval: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    return EXIT_OK


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
