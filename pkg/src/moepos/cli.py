"""Command-line pipeline: ingest, tokenize, train, trace, metrics, probe,
ablate, project.

Options may come from a key=value config file (--config); explicit flags win.
Every report records the seed it ran with, outputs land under --out-dir with
fixed names, and reruns with identical inputs produce identical bytes.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import corpus as corpus_mod
from . import metrics as metrics_mod
from . import moe as moe_mod
from . import probe as probe_mod
from . import projection as projection_mod
from . import tokenizer as tokenizer_mod
from . import trace as trace_mod
from .reference import reference_footer


class CliError(ValueError):
    """Unusable command-line input."""


def parse_config_file(text: str) -> dict[str, str]:
    """key=value lines; '#' comments and blank lines ignored; later keys win."""
    values: dict[str, str] = {}
    for line_number, raw in enumerate(text.split("\n"), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise CliError(f"config line {line_number}: expected key=value")
        key, value = line.split("=", 1)
        values[key.strip()] = value.strip().strip("\"'")
    return values


def _load_tagset(args) -> corpus_mod.PosTagset:
    if args.tagset:
        return corpus_mod.parse_tagset_file(Path(args.tagset).read_text(encoding="utf-8"))
    return corpus_mod.DEFAULT_TAGSET


def _load_sentences(path: str, tagset: corpus_mod.PosTagset):
    text = Path(path).read_text(encoding="utf-8")
    sentences = corpus_mod.parse_conllu(text, tagset)
    if not sentences:
        raise CliError(f"{path}: no sentences parsed")
    return sentences


def _out_dir(args) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write(path: Path, text: str) -> Path:
    path.write_text(text, encoding="utf-8")
    print(f"wrote {path}")
    return path


def cmd_ingest(args) -> int:
    tagset = _load_tagset(args)
    sentences = _load_sentences(args.corpus, tagset)
    words = [w for sentence in sentences for w in sentence]
    distribution = corpus_mod.corpus_distribution(words, tagset)
    counts = {tag: 0 for tag in tagset.tags}
    for word in words:
        counts[word.upos] += 1
    order = sorted(tagset.tags, key=lambda t: (counts[t], t))
    out = _out_dir(args)

    lines = ["# POS distribution", "", f"seed: {args.seed}", "",
             f"sentences: {len(sentences)}", f"words: {len(words)}", "",
             "| POS | count | percent |", "| --- | ---: | ---: |"]
    for tag in order:
        pct = 100.0 * distribution.probabilities[tag]
        lines.append(f"| {tag} | {counts[tag]} | {pct:.2f} |")
    lines += ["", reference_footer()]
    _write(out / "pos_distribution.md", "\n".join(lines) + "\n")

    tsv = ["pos\tcount\tpercent"]
    for tag in order:
        tsv.append(f"{tag}\t{counts[tag]}\t{100.0 * distribution.probabilities[tag]:.4f}")
    _write(out / "pos_distribution.tsv", "\n".join(tsv) + "\n")
    return 0


def cmd_tokenize(args) -> int:
    tagset = _load_tagset(args)
    sentences = _load_sentences(args.corpus, tagset)
    words = [w.surface for sentence in sentences for w in sentence]
    vocab = tokenizer_mod.train_bpe(words, vocab_size=args.vocab_size, seed=args.seed)
    out = _out_dir(args)
    _write(out / "vocab.json", vocab.to_json() + "\n")
    print(f"vocab {vocab.identifier}: {len(vocab.vocab)} entries, "
          f"{len(vocab.merges)} merges")
    return 0


def _sentence_ids(sentences, vocab) -> list[list[int]]:
    return [
        [tid for word in sentence for tid in tokenizer_mod.tokenize_word_ids(vocab, word.surface)]
        for sentence in sentences
    ]


def cmd_train(args) -> int:
    tagset = _load_tagset(args)
    sentences = _load_sentences(args.corpus, tagset)
    vocab = tokenizer_mod.SubwordVocab.from_json(Path(args.vocab).read_text(encoding="utf-8"))
    config = moe_mod.ModelConfig(
        n_layers=args.layers, n_experts=args.experts, k=args.k,
        d_model=args.d_model, d_ff=args.d_ff,
        vocab_size=len(vocab.vocab), seed=args.seed,
    )
    ids = [seq for seq in _sentence_ids(sentences, vocab) if len(seq) >= 2]
    if not ids:
        raise CliError("corpus has no sentence with >= 2 subtokens")
    model = moe_mod.init_model(config)
    initial = moe_mod.evaluate_loss(model, ids, aux_weight=args.aux_weight)
    moe_mod.train_toy(model, ids, steps=args.steps, lr=args.lr, aux_weight=args.aux_weight)
    final = moe_mod.evaluate_loss(model, ids, aux_weight=args.aux_weight)
    out = _out_dir(args)
    moe_mod.save_model(model, out / "model.moep")
    print(f"wrote {out / 'model.moep'}")
    _write(out / "train_log.tsv",
           "stage\tloss\n" + f"initial\t{initial:.6f}\nfinal\t{final:.6f}\n")
    return 0


def cmd_trace(args) -> int:
    tagset = _load_tagset(args)
    sentences = _load_sentences(args.corpus, tagset)
    out = _out_dir(args)
    destination = out / "routing.trace.jsonl"

    if args.router == "model":
        if not args.model or not args.vocab:
            raise CliError("router 'model' needs --model and --vocab")
        vocab = tokenizer_mod.SubwordVocab.from_json(
            Path(args.vocab).read_text(encoding="utf-8"))
        model = moe_mod.load_model(args.model)
        if len(vocab.vocab) > model.config.vocab_size:
            raise CliError(f"vocab has {len(vocab.vocab)} entries but the model "
                           f"covers {model.config.vocab_size}")
        tokens = tokenizer_mod.align_pos(sentences, vocab)
        header, records = moe_mod.model_trace(
            model, tokens, _sentence_ids(sentences, vocab),
            tokenizer_id=vocab.identifier, tagset=tagset,
        )
    else:
        tokens = tokenizer_mod.word_level_tokens(sentences)
        if args.router == "pos_oracle":
            mapping = moe_mod.make_pos_oracle_map(
                tagset, args.layers, args.experts, args.k, seed=args.seed)
            router = moe_mod.synthetic_router("pos_oracle", pos_to_experts=mapping)
        else:
            router = moe_mod.synthetic_router(args.router, seed=args.seed)
        header, records = moe_mod.synthetic_trace(
            tokens, router, n_layers=args.layers, n_experts=args.experts,
            k=args.k, tagset=tagset, tokenizer_id="word",
        )
    written = trace_mod.write_trace(header, records, destination)
    print(f"wrote {destination} ({written} records)")
    return 0


def cmd_metrics(args) -> int:
    header, records = trace_mod.read_trace(args.trace)
    counts = metrics_mod.count_assignments(header, records)
    report = metrics_mod.spec_report(counts, header.k)
    if args.kl_corpus == "word":
        corpus_dist = metrics_mod.word_corpus_distribution(records, counts.tagset)
    else:
        corpus_dist = metrics_mod.token_corpus_distribution(counts)
    kl = metrics_mod.kl_stats(counts, corpus_dist)
    out = _out_dir(args)
    _write(out / "spec_report.md", metrics_mod.spec_report_markdown(report, seed=args.seed))
    _write(out / "spec_matrix.tsv", metrics_mod.spec_matrix_tsv(report))
    _write(out / "kl_report.md", metrics_mod.kl_report_markdown(kl, seed=args.seed))
    print(f"global {report.global_score:.2f}, U {report.u:.1f}, "
          f"delta {report.delta_u:+.2f}, kl mu_mean {kl.mu_mean:.4f}")
    return 0


def _probe_config(args) -> probe_mod.ProbeConfig:
    return probe_mod.ProbeConfig(
        hidden_width=args.hidden, batch_size=args.batch_size,
        max_epochs=args.max_epochs, seed=args.seed, encoding=args.encoding,
    )


def cmd_probe(args) -> int:
    header, records = trace_mod.read_trace(args.trace)
    config = _probe_config(args)
    classes = tuple(header.tagset)
    train_records, test_records = corpus_mod.split_tokens(records, seed=args.seed)
    results = {}
    confusion = None
    for mode in ("top_k", "top_1"):
        X_train = probe_mod.encode_inputs(
            [trace_mod.path_vector(r, mode) for r in train_records],
            config.encoding, header.n_experts)
        X_test = probe_mod.encode_inputs(
            [trace_mod.path_vector(r, mode) for r in test_records],
            config.encoding, header.n_experts)
        model = probe_mod.train_probe(
            X_train, [r.upos for r in train_records], config, classes)
        accuracy, matrix = probe_mod.evaluate_probe(
            model, X_test, [r.upos for r in test_records])
        results[mode] = (accuracy, model.n_epochs)
        if mode == "top_k":
            confusion = matrix
    baseline = probe_mod.baseline_most_common_pos(train_records, test_records)

    out = _out_dir(args)
    lines = [
        "# Probe report", "",
        f"seed: {args.seed}", "",
        f"encoding: {config.encoding}",
        f"split: {len(train_records)} train / {len(test_records)} test tokens",
        "",
        "| signal | accuracy | epochs |",
        "| --- | ---: | ---: |",
        f"| top_k path | {results['top_k'][0]:.4f} | {results['top_k'][1]} |",
        f"| top_1 path | {results['top_1'][0]:.4f} | {results['top_1'][1]} |",
        f"| word-form majority baseline | {baseline:.4f} | - |",
        "",
        reference_footer(),
    ]
    _write(out / "probe_report.md", "\n".join(lines) + "\n")
    _write(out / "confusion.tsv", probe_mod.confusion_tsv(confusion))
    print(f"top_k {results['top_k'][0]:.4f}, top_1 {results['top_1'][0]:.4f}, "
          f"baseline {baseline:.4f}")
    return 0


def cmd_ablate(args) -> int:
    header, records = trace_mod.read_trace(args.trace)
    config = _probe_config(args)
    rows = ["layers_removed\tside\taccuracy"]
    for side in ("first", "last"):
        for removed, accuracy in probe_mod.ablation_curve(header, records, side, config):
            rows.append(f"{removed}\t{side}\t{accuracy:.4f}")
    out = _out_dir(args)
    _write(out / "ablation.tsv", "\n".join(rows) + "\n")
    return 0


def cmd_project(args) -> int:
    header, records = trace_mod.read_trace(args.trace)
    if len(records) > args.max_points:
        keep = np.random.default_rng(args.seed).permutation(len(records))[:args.max_points]
        records = [records[i] for i in sorted(keep)]
    features = probe_mod.encode_inputs(
        [trace_mod.path_vector(r, "top_k") for r in records],
        "one_hot", header.n_experts)
    labels = [r.upos for r in records]
    if args.method == "pca":
        embedding = projection_mod.pca_2d(features, labels=labels)
    else:
        embedding = projection_mod.tsne_2d(
            features, perplexity=args.perplexity, iters=args.iters,
            seed=args.seed, labels=labels)
    out = _out_dir(args)
    tsv_path, svg_path = projection_mod.emit_scatter(embedding, out)
    print(f"wrote {tsv_path}")
    print(f"wrote {svg_path}")
    return 0


def _add_common(sp: argparse.ArgumentParser) -> None:
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--tagset", default=None, help="tagset file, '!' prefix excludes")
    sp.add_argument("--out-dir", default="out")
    sp.add_argument("--config", default=None, help="key=value defaults; flags win")


def _add_shape(sp: argparse.ArgumentParser) -> None:
    sp.add_argument("--layers", type=int, default=4)
    sp.add_argument("--experts", type=int, default=8)
    sp.add_argument("--k", type=int, default=2)


def _add_probe_flags(sp: argparse.ArgumentParser) -> None:
    sp.add_argument("--encoding", choices=probe_mod.ENCODINGS, default="raw_index")
    sp.add_argument("--hidden", type=int, default=100)
    sp.add_argument("--batch-size", type=int, default=200)
    sp.add_argument("--max-epochs", type=int, default=300)


def build_parser() -> tuple[argparse.ArgumentParser, dict[str, argparse.ArgumentParser]]:
    parser = argparse.ArgumentParser(
        prog="moepos",
        description="Routing-path POS analysis for mixture-of-experts models.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    commands: dict[str, argparse.ArgumentParser] = {}

    sp = sub.add_parser("ingest", help="corpus stats and POS distribution")
    sp.add_argument("corpus")
    sp.set_defaults(func=cmd_ingest)
    commands["ingest"] = sp

    sp = sub.add_parser("tokenize", help="train the subword vocabulary")
    sp.add_argument("corpus")
    sp.add_argument("--vocab-size", type=int, default=512)
    sp.set_defaults(func=cmd_tokenize)
    commands["tokenize"] = sp

    sp = sub.add_parser("train", help="train the toy MoE language model")
    sp.add_argument("corpus")
    sp.add_argument("--vocab", required=True)
    _add_shape(sp)
    sp.add_argument("--d-model", type=int, default=64)
    sp.add_argument("--d-ff", type=int, default=128)
    sp.add_argument("--steps", type=int, default=200)
    sp.add_argument("--lr", type=float, default=1e-3)
    sp.add_argument("--aux-weight", type=float, default=1e-2)
    sp.set_defaults(func=cmd_train)
    commands["train"] = sp

    sp = sub.add_parser("trace", help="write a routing trace for a corpus")
    sp.add_argument("corpus")
    sp.add_argument("--router", default="model",
                    choices=("model", "uniform_random", "pos_oracle", "tokenid_hash"))
    sp.add_argument("--model", default=None)
    sp.add_argument("--vocab", default=None)
    _add_shape(sp)
    sp.set_defaults(func=cmd_trace)
    commands["trace"] = sp

    sp = sub.add_parser("metrics", help="specialization and divergence reports")
    sp.add_argument("trace")
    sp.add_argument("--kl-corpus", choices=("token", "word"), default="token")
    sp.set_defaults(func=cmd_metrics)
    commands["metrics"] = sp

    sp = sub.add_parser("probe", help="train the POS probe on a trace")
    sp.add_argument("trace")
    _add_probe_flags(sp)
    sp.set_defaults(func=cmd_probe)
    commands["probe"] = sp

    sp = sub.add_parser("ablate", help="probe accuracy vs layers removed")
    sp.add_argument("trace")
    _add_probe_flags(sp)
    sp.set_defaults(func=cmd_ablate)
    commands["ablate"] = sp

    sp = sub.add_parser("project", help="2D embedding of routing paths")
    sp.add_argument("trace")
    sp.add_argument("--method", choices=("pca", "tsne"), default="pca")
    sp.add_argument("--perplexity", type=float, default=30.0)
    sp.add_argument("--iters", type=int, default=1000)
    sp.add_argument("--max-points", type=int, default=2000)
    sp.set_defaults(func=cmd_project)
    commands["project"] = sp

    for sp in commands.values():
        _add_common(sp)
    return parser, commands


def _convert(action: argparse.Action, raw: str):
    if action.type is not None:
        return action.type(raw)
    return raw


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config", default=None)
    known, _ = pre.parse_known_args(argv)

    parser, commands = build_parser()
    if known.config:
        try:
            overrides = parse_config_file(Path(known.config).read_text(encoding="utf-8"))
        except (ValueError, OSError) as exc:
            print(json.dumps({"error": type(exc).__name__, "message": str(exc)}),
                  file=sys.stderr)
            return 1
        for sp in commands.values():
            actions = {a.dest: a for a in sp._actions}
            defaults = {}
            for key, raw in overrides.items():
                if key in actions and key != "config":
                    try:
                        defaults[key] = _convert(actions[key], raw)
                    except (TypeError, ValueError) as exc:
                        print(json.dumps({"error": "CliError",
                                          "message": f"config key {key}: {exc}"}),
                              file=sys.stderr)
                        return 1
            sp.set_defaults(**defaults)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}),
              file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
