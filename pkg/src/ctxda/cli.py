"""Command-line pipeline: prep -> train-lm -> encode -> train -> eval.

Every subcommand is deterministic given its flags and seed, and writes a
JSON snapshot of its flags next to its outputs, so any artifact can be
reproduced byte-for-byte by re-running the same command.

The `prep` step emits a normalized dataset directory:
    dataset.csv   conversation_id,index,speaker,split,raw_tag,label,text
    labels.txt    one class label per line, vocabulary order

`encode` turns it into a vector cache (vecs.bin) plus sidecars carrying
the per-row metadata (vecs.bin.meta.csv) and the label vocabulary
(vecs.bin.labels.txt), which make the later stages self-contained.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np

from ctxda import charlm, corpus, encoder, synthetic, trainer
from ctxda.classifier import load_classifier, rnn_forward, save_classifier
from ctxda.corpus import Conversation, ContextWindow, LabelVocab, Utterance, make_windows
from ctxda.trainer import TrainConfig, vector_windows

log = logging.getLogger(__name__)

DATASET_FILE = "dataset.csv"
LABELS_FILE = "labels.txt"
LM_CORPUS_FILE = "lm_corpus.txt"


def write_config_snapshot(path, flags: dict) -> None:
    blob = json.dumps(flags, sort_keys=True, indent=2)
    Path(path).write_text(blob + "\n", encoding="utf-8")


def config_hash(flags: dict) -> str:
    blob = json.dumps(flags, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:12]


def write_dataset(out_dir, conversations, vocab, test_ids) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    test_set = {corpus.canonical_conversation_id(t) for t in test_ids}
    with open(out / DATASET_FILE, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["conversation_id", "index", "speaker", "split",
                         "raw_tag", "label", "text"])
        for conv in conversations:
            split = "test" if conv.id in test_set else "train"
            for u in conv.utterances:
                writer.writerow([conv.id, u.index, u.speaker, split,
                                 u.raw_tag, vocab.label(u.label), u.clean_text])
    (out / LABELS_FILE).write_text(
        "".join(f"{name}\n" for name in vocab.labels), encoding="utf-8")


def read_dataset(data_dir) -> tuple[list[Conversation], LabelVocab, set[str]]:
    data = Path(data_dir)
    vocab = LabelVocab(
        [line for line in (data / LABELS_FILE).read_text(encoding="utf-8").splitlines() if line])
    order: list[str] = []
    rows: dict[str, list[Utterance]] = {}
    test_ids: set[str] = set()
    with open(data / DATASET_FILE, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            cid = row["conversation_id"]
            if cid not in rows:
                rows[cid] = []
                order.append(cid)
            if row["split"] == "test":
                test_ids.add(cid)
            rows[cid].append(Utterance(
                conversation_id=cid,
                index=int(row["index"]),
                speaker=row["speaker"],
                raw_text=row["text"],
                clean_text=row["text"],
                raw_tag=row["raw_tag"],
                label=vocab.index(row["label"]),
            ))
    return [Conversation(c, rows[c]) for c in order], vocab, test_ids


def _row_index(conversations) -> dict:
    row_of = {}
    for conv in conversations:
        for u in conv.utterances:
            row_of[(conv.id, u.index)] = len(row_of)
    return row_of


def _meta_path(vecs_path) -> Path:
    return Path(str(vecs_path) + ".meta.csv")


def _labels_path(vecs_path) -> Path:
    return Path(str(vecs_path) + ".labels.txt")


def load_vector_dataset(vecs_path):
    """Vector table plus the conversation structure recorded at encode time."""
    table, mode, _ = encoder.load_vectors(vecs_path)
    vocab = LabelVocab([
        line for line in _labels_path(vecs_path).read_text(encoding="utf-8").splitlines()
        if line])
    order: list[str] = []
    rows: dict[str, list[Utterance]] = {}
    test_ids: set[str] = set()
    with open(_meta_path(vecs_path), newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            cid = row["conversation_id"]
            if cid not in rows:
                rows[cid] = []
                order.append(cid)
            if row["split"] == "test":
                test_ids.add(cid)
            rows[cid].append(Utterance(
                conversation_id=cid,
                index=int(row["index"]),
                speaker=row["speaker"],
                raw_text="",
                clean_text="",
                raw_tag=row["label"],
                label=vocab.index(row["label"]),
            ))
    conversations = [Conversation(c, rows[c]) for c in order]
    if table.shape[0] != sum(len(c.utterances) for c in conversations):
        raise ValueError("vector table and metadata row counts disagree")
    return table, mode, conversations, vocab, test_ids


def _split_conversations(conversations, test_ids):
    train = [c for c in conversations if c.id not in test_ids]
    test = [c for c in conversations if c.id in test_ids]
    return train, test


def _windows_for(conversations, n) -> list[ContextWindow]:
    out = []
    for conv in conversations:
        out.extend(make_windows(conv, n))
    return out


def cmd_prep(args) -> int:
    out = Path(args.out)
    if args.synthetic:
        conversations, vocab = synthetic.make_conversations(args.conversations, args.seed)
        test_ids = synthetic.synthetic_test_ids(conversations)
        write_dataset(out, conversations, vocab, test_ids)
        text = "".join(
            u.clean_text + "\n" for c in conversations for u in c.utterances)
        (out / LM_CORPUS_FILE).write_text(text, encoding="utf-8")
        snapshot = {"command": "prep", "synthetic": True,
                    "conversations": args.conversations, "seed": args.seed}
    else:
        if not args.swda:
            raise SystemExit("prep: either --synthetic or --swda <dir> is required")
        tag_map = (corpus.TagMap.from_file(args.map)
                   if args.map else corpus.default_tag_map())
        vocab = LabelVocab.from_tag_map(tag_map)
        if len(vocab) != 42:
            raise SystemExit(
                f"prep: tag map produces {len(vocab)} classes, expected 42")
        test_ids = (corpus.load_test_ids(args.test_ids)
                    if args.test_ids else corpus.default_test_ids())
        conversations = corpus.parse_corpus(args.swda, tag_map=tag_map)
        train, test = corpus.split_corpus(conversations, test_ids)
        write_dataset(out, conversations, vocab, test_ids)
        n_utts = sum(len(c.utterances) for c in conversations)
        unmapped = sum(tag_map.unmapped.values())
        print(f"parsed {len(conversations)} conversations "
              f"({len(train)} train / {len(test)} test), {n_utts} utterances")
        if unmapped:
            print(f"note: {unmapped} utterances fell back to the catch-all class "
                  f"({len(tag_map.unmapped)} distinct raw tags)")
        snapshot = {"command": "prep", "synthetic": False, "swda": str(args.swda),
                    "map": str(args.map) if args.map else None,
                    "test_ids": str(args.test_ids) if args.test_ids else None}
    write_config_snapshot(out / "prep.config.json", snapshot)
    return 0


def cmd_train_lm(args) -> int:
    text = Path(args.corpus).read_bytes()
    config = charlm.LMConfig(
        d_lm=args.hidden, e=args.embed, seq_len=args.seq_len,
        batch_size=args.batch, steps=args.steps, seed=args.seed, lr=args.lr)
    heldout = charlm.heldout_slice(text, config)
    initial = charlm.init_char_lm(config.d_lm, config.e, config.seed)
    bpc_before = charlm.corpus_bpc(initial, heldout)
    params = charlm.train_lm(text, config)
    bpc_after = charlm.corpus_bpc(params, heldout)
    charlm.save_lm(args.out, params)
    print(f"held-out bpc {bpc_before:.4f} -> {bpc_after:.4f} "
          f"after {args.steps} steps (d_lm={args.hidden})")
    write_config_snapshot(str(args.out) + ".config.json", {
        "command": "train-lm", "corpus": str(args.corpus), "hidden": args.hidden,
        "embed": args.embed, "seq_len": args.seq_len, "batch": args.batch,
        "steps": args.steps, "seed": args.seed, "lr": args.lr})
    return 0


def cmd_encode(args) -> int:
    params = charlm.load_lm(args.lm)
    conversations, vocab, test_ids = read_dataset(args.data)
    texts = [u.clean_text for c in conversations for u in c.utterances]
    table = encoder.encode_corpus(
        params, texts, mode=args.mode, cache_path=args.out, workers=args.workers)
    with open(_meta_path(args.out), "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["row", "conversation_id", "index", "speaker", "split", "label"])
        row = 0
        for conv in conversations:
            split = "test" if conv.id in test_ids else "train"
            for u in conv.utterances:
                writer.writerow([row, conv.id, u.index, u.speaker, split,
                                 vocab.label(u.label)])
                row += 1
    _labels_path(args.out).write_text(
        "".join(f"{name}\n" for name in vocab.labels), encoding="utf-8")
    print(f"encoded {table.shape[0]} utterances -> {args.out} "
          f"(mode={args.mode}, dim={table.shape[1]})")
    write_config_snapshot(str(args.out) + ".config.json", {
        "command": "encode", "lm": str(args.lm), "data": str(args.data),
        "mode": args.mode, "workers": args.workers})
    return 0


def cmd_train(args) -> int:
    table, mode, conversations, vocab, test_ids = load_vector_dataset(args.vecs)
    row_of = _row_index(conversations)
    train_convs, _ = _split_conversations(conversations, test_ids)
    if not train_convs:
        raise SystemExit("train: no training conversations in the dataset")
    windows = _windows_for(train_convs, args.context)
    speaker = args.speaker == "on"
    vwindows = vector_windows(windows, table, row_of, speaker=speaker)
    config = TrainConfig(
        learning_rate=args.lr, patience=args.patience, max_epochs=args.epochs,
        batch_size=args.batch, seed=args.seed, context_size=args.context,
        speaker=speaker, vector_mode=mode, hidden_size=args.hidden)
    params, logs = trainer.train_classifier(vwindows, config, len(vocab))
    meta = {"mode": mode, "context_size": args.context, "speaker": speaker}
    save_classifier(args.out, params, vocab.labels, meta)
    Path(str(args.out) + ".train.log").write_text(
        "".join(line + "\n" for line in logs), encoding="utf-8")
    print(f"trained context-{args.context} classifier on {len(vwindows)} windows, "
          f"{len(logs)} epochs -> {args.out}")
    write_config_snapshot(str(args.out) + ".config.json", {
        "command": "train", "vecs": str(args.vecs), "context": args.context,
        "speaker": args.speaker, "hidden": args.hidden, "seed": args.seed,
        "epochs": args.epochs, "patience": args.patience, "batch": args.batch,
        "lr": args.lr})
    return 0


def cmd_eval(args) -> int:
    params, labels, meta = load_classifier(args.clf)
    table, mode, conversations, vocab, test_ids = load_vector_dataset(args.vecs)
    if list(labels) != list(vocab.labels):
        raise SystemExit("eval: classifier and vector dataset label vocabularies differ")
    if meta["mode"] != mode:
        raise SystemExit(f"eval: classifier expects {meta['mode']} vectors, got {mode}")
    row_of = _row_index(conversations)
    train_convs, test_convs = _split_conversations(conversations, test_ids)
    chosen = test_convs if args.split == "test" else train_convs
    if not chosen:
        raise SystemExit(f"eval: no conversations in the {args.split} split")
    windows = _windows_for(chosen, meta["context_size"])
    vwindows = vector_windows(windows, table, row_of, speaker=meta["speaker"])
    accuracy, _ = trainer.evaluate(params, vwindows)
    print(f"{args.split} accuracy {accuracy:.4f} over {len(vwindows)} windows")
    return 0


def cmd_experiment(args) -> int:
    table, mode, conversations, vocab, test_ids = load_vector_dataset(args.vecs)
    row_of = _row_index(conversations)
    train_convs, test_convs = _split_conversations(conversations, test_ids)
    if not train_convs or not test_convs:
        raise SystemExit("experiment: need both train and test conversations")
    contexts = [int(x) for x in args.contexts.split(",") if x != ""]
    speaker = args.speaker == "on"
    flags = {"command": "experiment", "vecs": str(args.vecs), "contexts": contexts,
             "repeats": args.repeats, "seed": args.seed, "speaker": args.speaker,
             "hidden": args.hidden, "epochs": args.epochs, "patience": args.patience,
             "batch": args.batch, "lr": args.lr}
    out_dir = Path(args.out_dir) if args.out_dir else Path("runs") / config_hash(flags)
    out_dir.mkdir(parents=True, exist_ok=True)

    lines = [
        "setup                      acc(%)   sd",
        "-" * 40,
    ]
    majority = trainer.majority_baseline(
        vector_windows(_windows_for(train_convs, 0), table, row_of),
        vector_windows(_windows_for(test_convs, 0), table, row_of))
    lines.append(f"{'majority class':<25} {100 * majority:6.2f}     -")
    for n in contexts:
        train_w = vector_windows(_windows_for(train_convs, n), table, row_of, speaker)
        test_w = vector_windows(_windows_for(test_convs, n), table, row_of, speaker)
        config = TrainConfig(
            learning_rate=args.lr, patience=args.patience, max_epochs=args.epochs,
            batch_size=args.batch, seed=args.seed, context_size=n,
            speaker=speaker, vector_mode=mode, hidden_size=args.hidden)
        result = trainer.run_experiment(
            train_w, test_w, config, len(vocab), repeats=args.repeats)
        label = f"context-{n}" + (" +speaker" if speaker else "")
        lines.append(f"{label:<25} {100 * result.mean:6.2f} {100 * result.sd:5.2f}")
    lines.append("")
    lines.append(f"mean and sample (n-1) standard deviation over {args.repeats} runs")
    report = "\n".join(lines) + "\n"
    (out_dir / "report.txt").write_text(report, encoding="utf-8")
    write_config_snapshot(out_dir / "experiment.config.json", flags)
    print(report, end="")
    print(f"report written to {out_dir / 'report.txt'}")
    return 0


def cmd_export_states(args) -> int:
    params, labels, meta = load_classifier(args.clf)
    table, mode, conversations, vocab, test_ids = load_vector_dataset(args.vecs)
    if list(labels) != list(vocab.labels):
        raise SystemExit("export-states: classifier and dataset vocabularies differ")
    if meta["mode"] != mode:
        raise SystemExit(f"export-states: classifier expects {meta['mode']} vectors, got {mode}")
    row_of = _row_index(conversations)
    _, test_convs = _split_conversations(conversations, test_ids)
    if not test_convs:
        raise SystemExit("export-states: dataset has no test conversations")
    windows = _windows_for(test_convs, args.context)
    if args.count < len(windows):
        windows = windows[:args.count]
    else:
        if args.count > len(windows):
            log.warning("requested %d states but the test split has %d utterances; "
                        "exporting all", args.count, len(windows))
    vwindows = vector_windows(windows, table, row_of, speaker=meta["speaker"])
    d_h = params.d_h
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"h{k}" for k in range(d_h)] + ["label", "conversation", "index"])
        for window, (X, _) in zip(windows, vwindows):
            H, _ = rnn_forward(params, X)
            current = window.utterances[-1]
            writer.writerow(
                [format(v, ".9g") for v in H[-1]]
                + [vocab.label(current.label), current.conversation_id, current.index])
    print(f"wrote {len(windows)} hidden states to {args.out}")
    write_config_snapshot(str(args.out) + ".config.json", {
        "command": "export-states", "clf": str(args.clf), "vecs": str(args.vecs),
        "count": args.count, "context": args.context})
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ctxda",
        description="Dialogue act classification with character-level utterance "
                    "vectors and conversational context.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prep", help="normalize a transcript corpus or generate a synthetic one")
    p.add_argument("--swda", help="root directory of transcript CSV files")
    p.add_argument("--map", help="tag mapping file (default: shipped 42-class map)")
    p.add_argument("--test-ids", dest="test_ids",
                   help="file with one test conversation id per line")
    p.add_argument("--synthetic", action="store_true",
                   help="generate the built-in context benchmark corpus")
    p.add_argument("--conversations", type=int, default=5000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_prep)

    p = sub.add_parser("train-lm", help="train the byte-level language model")
    p.add_argument("--corpus", required=True)
    p.add_argument("--hidden", type=int, default=256)
    p.add_argument("--embed", type=int, default=16)
    p.add_argument("--seq-len", dest="seq_len", type=int, default=128)
    p.add_argument("--steps", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--batch", type=int, default=16)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_lm)

    p = sub.add_parser("encode", help="encode every utterance into a cached vector table")
    p.add_argument("--lm", required=True)
    p.add_argument("--data", required=True, help="prep output directory")
    p.add_argument("--mode", choices=encoder.MODES, default="average")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("train", help="train the context classifier")
    p.add_argument("--vecs", required=True)
    p.add_argument("--context", type=int, default=3)
    p.add_argument("--speaker", choices=("on", "off"), default="off")
    p.add_argument("--hidden", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--patience", type=int, default=5)
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a classifier on a dataset split")
    p.add_argument("--clf", required=True)
    p.add_argument("--vecs", required=True)
    p.add_argument("--split", choices=("train", "test"), default="test")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("experiment", help="repeated runs over several context sizes")
    p.add_argument("--vecs", required=True)
    p.add_argument("--contexts", default="0,1,2,3,4")
    p.add_argument("--repeats", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--speaker", choices=("on", "off"), default="off")
    p.add_argument("--hidden", type=int, default=64)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--patience", type=int, default=5)
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--out-dir", dest="out_dir")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("export-states", help="export classifier hidden states as CSV")
    p.add_argument("--clf", required=True)
    p.add_argument("--vecs", required=True)
    p.add_argument("--count", type=int, default=2000)
    p.add_argument("--context", type=int, default=2)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_states)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
