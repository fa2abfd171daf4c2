"""Command-line pipeline: gen-data, train, eval, predict, hpo, inspect.

Every subcommand is deterministic given its flags; randomness funnels
through --seed.  Errors print one line to stderr with the stable prefix
"spiralfield: error:" and exit nonzero (2 for flag problems, 1 otherwise).
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from . import fileio
from .dataset import (
    DATASET_MAGIC,
    DATASET_VERSION,
    DatasetManifest,
    TokenQuantizer,
    build_dataset,
    read_dataset,
    split_indices,
    token_matrix,
    write_dataset,
)
from .model import (
    CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
    TransformerConfig,
    generate,
    init_params,
    load_checkpoint,
)
from .training import (
    SearchSpace,
    TrainConfig,
    evaluate,
    random_search,
    train,
    write_trials_csv,
)

PROG = "spiralfield"


class _Parser(argparse.ArgumentParser):
    # one-line errors with a stable prefix, for scripting
    def error(self, message):
        sys.stderr.write(f"{PROG}: error: {message}\n")
        sys.exit(2)


def _int_tuple(s: str) -> tuple[int, ...]:
    return tuple(int(x) for x in s.split(","))


def _float_tuple(s: str) -> tuple[float, ...]:
    return tuple(float(x) for x in s.split(","))


def _manifest_from_args(args) -> DatasetManifest:
    return DatasetManifest(
        max_degree=args.max_degree,
        num_points=args.num_points,
        c=args.c,
        t_margin=args.t_margin,
        bins=args.bins,
        seed=args.seed,
        split_fraction=args.split_fraction,
    )


def _load_split(path):
    """Dataset file -> (manifest, token matrix, train indices, val indices).

    The split is fixed by the manifest's own fraction and seed so that
    train, eval, and hpo always agree on it.
    """
    manifest, fields = read_dataset(path)
    tokens = token_matrix(fields)
    train_idx, val_idx = split_indices(manifest.num_fields, manifest.split_fraction, manifest.seed)
    return manifest, fields, tokens, train_idx, val_idx


def _check_compat(config: TransformerConfig, manifest: DatasetManifest) -> None:
    if config.vocab_size != manifest.vocab_size():
        raise ValueError(
            f"checkpoint/config mismatch: model vocab_size {config.vocab_size}, "
            f"dataset vocabulary {manifest.vocab_size()}"
        )
    if config.max_seq_len < manifest.num_points:
        raise ValueError(
            f"checkpoint/config mismatch: model max_seq_len {config.max_seq_len} "
            f"is smaller than the dataset's num_points {manifest.num_points}"
        )


def _metrics_line(m) -> str:
    return (
        f"epoch {m.epoch}: train_loss {m.train_loss:.4f} train_acc {m.train_acc:.4f} "
        f"val_loss {m.val_loss:.4f} val_acc {m.val_acc:.4f}"
    )


def cmd_gen_data(args) -> int:
    manifest = _manifest_from_args(args)
    fields = build_dataset(manifest)
    write_dataset(args.out, manifest, fields)
    print(f"wrote {args.out}")
    print(
        f"fields: {manifest.num_fields}  points: {manifest.num_points}  "
        f"vocab: {manifest.vocab_size()}"
    )
    if manifest.num_fields >= 2:
        tr, va = split_indices(manifest.num_fields, manifest.split_fraction, manifest.seed)
        print(f"split: {tr.size} train / {va.size} val (fraction {manifest.split_fraction}, seed {manifest.seed})")
    else:
        print("split: not applicable (single field)")
    return 0


def cmd_train(args) -> int:
    manifest, _, tokens, train_idx, val_idx = _load_split(args.data)
    if args.max_seq_len < manifest.num_points:
        raise ValueError(
            f"--max-seq-len {args.max_seq_len} is smaller than the dataset's "
            f"num_points {manifest.num_points}"
        )
    model_config = TransformerConfig(
        num_layers=args.layers,
        num_heads=args.heads,
        d_model=args.d_model,
        d_ff=args.d_ff,
        vocab_size=manifest.vocab_size(),
        max_seq_len=args.max_seq_len,
        dropout_rate=args.dropout,
    )
    train_config = TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch_size,
        learning_rate=args.lr,
        weight_decay=args.weight_decay,
        early_stop_patience=args.early_stop_patience,
        seed=args.seed,
    )
    log = None
    if args.log_every > 0:
        every = args.log_every

        def log(m, every=every):
            if m.epoch % every == 0 or m.epoch == 1:
                print(_metrics_line(m), flush=True)

    params = init_params(model_config, np.random.default_rng(args.seed))
    result = train(
        params,
        model_config,
        tokens[train_idx],
        tokens[val_idx],
        train_config,
        checkpoint_path=args.out,
        metrics_path=args.metrics,
        log=log,
    )
    print(_metrics_line(result.history[-1]))
    print(f"best epoch {result.best_epoch} (val_loss {result.best_val_loss:.6f})")
    if result.stopped_early:
        print(f"stopped early after {len(result.history)} epochs")
    print(f"wrote {args.out} and {args.metrics}")
    return 0


def cmd_eval(args) -> int:
    manifest, _, tokens, train_idx, val_idx = _load_split(args.data)
    ckpt = load_checkpoint(args.checkpoint)
    _check_compat(ckpt.config, manifest)
    splits = []
    if args.split in ("train", "both"):
        splits.append(("train", tokens[train_idx]))
    if args.split in ("val", "both"):
        splits.append(("val", tokens[val_idx]))
    for name, subset in splits:
        loss, acc = evaluate(ckpt.params, ckpt.config, subset, batch_size=args.batch_size)
        print(f"{name}: loss {loss:.6f}  acc {acc:.4f}  ({subset.shape[0]} sequences)")
    return 0


def cmd_predict(args) -> int:
    manifest, fields, _, _, _ = _load_split(args.data)
    ckpt = load_checkpoint(args.checkpoint)
    _check_compat(ckpt.config, manifest)
    if not 0 <= args.field_index < manifest.num_fields:
        raise ValueError(
            f"field index {args.field_index} outside [0, {manifest.num_fields})"
        )
    k = args.prefix
    if not 1 <= k < manifest.num_points:
        # k = 0 would mean an empty context; at least one token is required
        raise ValueError(
            f"prefix length {k} outside [1, {manifest.num_points - 1}]"
        )
    field = fields[args.field_index]
    prefix = field.tokens[:k].astype(np.int64)
    rng = np.random.default_rng(args.seed) if args.temperature > 0 else None
    generated = generate(
        ckpt.params,
        ckpt.config,
        prefix,
        manifest.num_points - k,
        temperature=args.temperature,
        rng=rng,
    )
    print(
        f"field {args.field_index} (l={field.idx.l}, m={field.idx.m}): "
        f"prefix {k} tokens, generated {generated.size}",
        file=sys.stderr,
    )
    quantizer = TokenQuantizer(manifest.bins).fit()
    print("pos,token,v_theta,v_phi,source")
    for source, offset, toks in (("prefix", 0, prefix), ("generated", k, generated)):
        comps = quantizer.inverse_transform(toks)
        for i, (tok, (vt, vp)) in enumerate(zip(toks, comps)):
            print(f"{offset + i},{int(tok)},{float(vt)!r},{float(vp)!r},{source}")
    return 0


def cmd_hpo(args) -> int:
    manifest, _, tokens, train_idx, val_idx = _load_split(args.data)
    if args.max_seq_len < manifest.num_points:
        raise ValueError(
            f"--max-seq-len {args.max_seq_len} is smaller than the dataset's "
            f"num_points {manifest.num_points}"
        )
    space = SearchSpace(
        num_layers=args.layers,
        num_heads=args.heads,
        dropout_rate=args.dropout,
        learning_rate=args.lr,
        d_model=args.d_model,
        budget=args.trials,
        seed=args.seed,
    )
    base_model = TransformerConfig(
        vocab_size=manifest.vocab_size(), max_seq_len=args.max_seq_len
    )
    base_train = TrainConfig(batch_size=args.batch_size, seed=args.seed)

    def log(r):
        tag = f"error: {r.error}" if r.error else (
            f"val_loss {r.best_val_loss:.6f} val_acc {r.best_val_acc:.4f}"
        )
        c = r.model_config
        print(
            f"trial {r.trial}: layers {c.num_layers} heads {c.num_heads} "
            f"d_model {c.d_model} dropout {c.dropout_rate} lr {r.learning_rate} -> {tag}",
            flush=True,
        )

    results = random_search(
        space, tokens[train_idx], tokens[val_idx], base_model, base_train,
        epochs=args.epochs, log=log,
    )
    write_trials_csv(args.out, results)
    best = results[0]
    print(f"wrote {args.out}")
    if best.error is None:
        c = best.model_config
        print(
            f"best: trial {best.trial} (layers {c.num_layers} heads {c.num_heads} "
            f"d_model {c.d_model} dropout {c.dropout_rate} lr {best.learning_rate}) "
            f"val_loss {best.best_val_loss:.6f}"
        )
    else:
        print("best: none (all trials failed)")
    return 0


def cmd_inspect(args) -> int:
    magic, _ = fileio.probe(args.path)
    print(f"file: {args.path}")
    if magic == DATASET_MAGIC:
        header, payload = fileio.read_framed(args.path, DATASET_MAGIC, DATASET_VERSION)
        manifest = DatasetManifest.from_dict(header)
        print(f"kind: dataset (format version {manifest.format_version})")
        print(f"integrity: OK (crc32 verified, {len(payload)} payload bytes)")
        for key, val in sorted(header.items()):
            print(f"  {key}: {val}")
        print(f"  vocab_size: {manifest.vocab_size()}")
    elif magic == CHECKPOINT_MAGIC:
        header, payload = fileio.read_framed(args.path, CHECKPOINT_MAGIC, CHECKPOINT_VERSION)
        print(f"kind: checkpoint (format version {CHECKPOINT_VERSION})")
        print(f"integrity: OK (crc32 verified, {len(payload)} payload bytes)")
        for key, val in sorted(header["config"].items()):
            print(f"  {key}: {val}")
        step = header["optimizer_step"]
        print(f"  optimizer: {'absent' if step is None else f'present (step {step})'}")
        print(f"  rng_state: {'absent' if header['rng_state'] is None else 'present'}")
        for key, val in sorted(header.get("meta", {}).items()):
            print(f"  meta.{key}: {val}")
        if args.tensors:
            total = 0
            for name, shape in header["tensors"]:
                size = int(np.prod(shape))
                total += size
                print(f"  tensor {name}: shape {tuple(shape)} ({size} values)")
            print(f"  total parameters: {total}")
    else:
        raise fileio.FileFormatError(f"{args.path}: unrecognized file kind {magic!r}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog=PROG, description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, metavar="command", parser_class=_Parser)

    p = sub.add_parser("gen-data", help="generate the field dataset")
    p.add_argument("--out", default="dataset.sfd", help="output dataset path (default %(default)s)")
    p.add_argument("--max-degree", type=int, default=32, help="harmonic degrees 0..N-1 (default %(default)s)")
    p.add_argument("--num-points", type=int, default=100, help="samples along the spiral (default %(default)s)")
    p.add_argument("--c", type=float, default=32.0, help="spiral winding rate (default %(default)s)")
    p.add_argument("--t-margin", type=float, default=1e-2, help="pole inset of the spiral parameter (default %(default)s)")
    p.add_argument("--bins", type=int, default=16, help="quantizer bins per component (default %(default)s)")
    p.add_argument("--split-fraction", type=float, default=0.9, help="train fraction of the canonical split (default %(default)s)")
    p.add_argument("--seed", type=int, default=42, help="split shuffle seed (default %(default)s)")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a model on a dataset file")
    p.add_argument("--data", default="dataset.sfd", help="dataset path (default %(default)s)")
    p.add_argument("--out", default="model.ckpt", help="checkpoint output path (default %(default)s)")
    p.add_argument("--metrics", default="metrics.csv", help="metrics CSV output path (default %(default)s)")
    p.add_argument("--layers", type=int, default=2, help="transformer layers (default %(default)s)")
    p.add_argument("--heads", type=int, default=4, help="attention heads (default %(default)s)")
    p.add_argument("--d-model", type=int, default=64, help="model width (default %(default)s)")
    p.add_argument("--d-ff", type=int, default=128, help="feed-forward width (default %(default)s)")
    p.add_argument("--dropout", type=float, default=0.2, help="dropout rate (default %(default)s)")
    p.add_argument("--max-seq-len", type=int, default=128, help="maximum sequence length (default %(default)s)")
    p.add_argument("--epochs", type=int, default=2000, help="training epochs (default %(default)s)")
    p.add_argument("--batch-size", type=int, default=32, help="sequences per batch (default %(default)s)")
    p.add_argument("--lr", type=float, default=1e-3, help="learning rate (default %(default)s)")
    p.add_argument("--weight-decay", type=float, default=0.0, help="decoupled weight decay (default %(default)s)")
    p.add_argument("--early-stop-patience", type=int, default=None,
                   help="stop after N epochs without validation improvement (default: off)")
    p.add_argument("--log-every", type=int, default=10, help="print metrics every N epochs, 0 to disable (default %(default)s)")
    p.add_argument("--seed", type=int, default=42, help="init/shuffle/dropout seed (default %(default)s)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on the dataset splits")
    p.add_argument("--data", default="dataset.sfd", help="dataset path (default %(default)s)")
    p.add_argument("--checkpoint", default="model.ckpt", help="checkpoint path (default %(default)s)")
    p.add_argument("--split", choices=("train", "val", "both"), default="both", help="which split(s) to score (default %(default)s)")
    p.add_argument("--batch-size", type=int, default=64, help="evaluation batch size (default %(default)s)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="autoregressively continue one field's sequence")
    p.add_argument("--data", default="dataset.sfd", help="dataset path (default %(default)s)")
    p.add_argument("--checkpoint", default="model.ckpt", help="checkpoint path (default %(default)s)")
    p.add_argument("--field-index", type=int, required=True, help="which field to continue (0-based)")
    p.add_argument("--prefix", type=int, required=True, help="context length k; tokens k..end are generated")
    p.add_argument("--temperature", type=float, default=0.0, help="sampling temperature, 0 = greedy (default %(default)s)")
    p.add_argument("--seed", type=int, default=42, help="sampling seed, used when temperature > 0 (default %(default)s)")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("hpo", help="random hyperparameter search")
    p.add_argument("--data", default="dataset.sfd", help="dataset path (default %(default)s)")
    p.add_argument("--out", default="trials.csv", help="trial table output path (default %(default)s)")
    p.add_argument("--trials", type=int, default=8, help="number of sampled configs (default %(default)s)")
    p.add_argument("--epochs", type=int, default=30, help="reduced epoch budget per trial (default %(default)s)")
    p.add_argument("--layers", type=_int_tuple, default=(1, 2, 3), help="candidate layer counts, comma-separated (default 1,2,3)")
    p.add_argument("--heads", type=_int_tuple, default=(2, 4, 8), help="candidate head counts (default 2,4,8)")
    p.add_argument("--dropout", type=_float_tuple, default=(0.0, 0.1, 0.2), help="candidate dropout rates (default 0.0,0.1,0.2)")
    p.add_argument("--lr", type=_float_tuple, default=(3e-4, 1e-3, 3e-3), help="candidate learning rates (default 3e-4,1e-3,3e-3)")
    p.add_argument("--d-model", type=_int_tuple, default=(32, 64), help="candidate model widths (default 32,64)")
    p.add_argument("--batch-size", type=int, default=32, help="sequences per batch (default %(default)s)")
    p.add_argument("--max-seq-len", type=int, default=128, help="maximum sequence length (default %(default)s)")
    p.add_argument("--seed", type=int, default=42, help="sampling and per-trial seed root (default %(default)s)")
    p.set_defaults(func=cmd_hpo)

    p = sub.add_parser("inspect", help="print a dataset or checkpoint header and integrity status")
    p.add_argument("path", help="file to inspect")
    p.add_argument("--tensors", action="store_true", help="also list tensor names and shapes (from the header)")
    p.set_defaults(func=cmd_inspect)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError, FloatingPointError, fileio.FileFormatError) as e:
        print(f"{PROG}: error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
