"""``nlcnn`` command line: describe, train, eval, sweep.

Exit codes: 0 success, 1 usage/configuration error, 2 data or model-file
error, 3 numeric failure during training.
"""
import argparse
import csv
import io
import itertools
import logging
import os
import re
import sys
import tempfile
from pathlib import Path

from . import kernels
from .datasets import default_data_dir, load_split
from .errors import ConfigError, DatasetFormatError, ModelFileError, NumericError
from .model import BN_AFTER_POOL, BN_BEFORE_POOL, HyperParams, build_plan, count_params
from .model_io import load_model, save_model
from .network import init_network
from .trainer import TrainConfig, evaluate, train

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
SWEEP_HEADER = ["nl", "width", "k", "separ", "flat", "params", "test_acc", "train_time_s"]

log = logging.getLogger("nlcnn")


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def parse_pair(text):
    parts = [p for p in re.split(r"[,\s]+", text.strip("() ")) if p]
    if len(parts) != 2:
        raise argparse.ArgumentTypeError(f"expected a pair like 2,2, got {text!r}")
    try:
        return int(parts[0]), int(parts[1])
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected integers in {text!r}") from None


def parse_shape(text):
    try:
        shape = tuple(int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected h,w,c, got {text!r}") from None
    if len(shape) != 3:
        raise argparse.ArgumentTypeError(f"expected h,w,c, got {text!r}")
    return shape


def parse_pair_list(text):
    """'(1,1),(2,1)' or '1,1;2,1' -> [(1, 1), (2, 1)]."""
    if "(" in text:
        items = re.findall(r"\(([^)]*)\)", text)
    else:
        items = [t for t in re.split(r"[;\s]+", text) if t]
    if not items:
        raise argparse.ArgumentTypeError("empty nl list")
    return [parse_pair(t) for t in items]


def list_of(conv):
    def parse(text):
        items = [t for t in re.split(r"[,\s]+", text) if t]
        if not items:
            raise argparse.ArgumentTypeError("empty list")
        try:
            return [conv(t) for t in items]
        except ValueError:
            raise argparse.ArgumentTypeError(f"bad list {text!r}") from None
    return parse


def flag01(text):
    if text not in ("0", "1"):
        raise argparse.ArgumentTypeError(f"expected 0 or 1, got {text!r}")
    return text == "1"


def add_arch_args(p, lists=False):
    g = p.add_argument_group("architecture")
    g.add_argument("--input-shape", type=parse_shape, default=None,
                   help="h,w,c (default: taken from the dataset, else 28,28,1)")
    g.add_argument("--classes", type=int, default=10, help="number of classes (default: 10)")
    if lists:
        g.add_argument("--nl-list", type=parse_pair_list, default=[(2, 2)],
                       help="nl pairs, e.g. '(1,1),(2,1)' or '1,1;2,1' (default: (2,2))")
        g.add_argument("--width-list", type=list_of(int), default=[20], help="default: 20")
        g.add_argument("--k-list", type=list_of(float), default=[2.0], help="default: 2")
        g.add_argument("--flat-list", type=list_of(flag01), default=[True], help="default: 1")
        g.add_argument("--separ-list", type=list_of(flag01), default=[False], help="default: 0")
    else:
        g.add_argument("--width", type=int, default=20, help="filters in the first macro-layer (default: 20)")
        g.add_argument("--k", type=float, default=2.0, help="filter expansion factor (default: 2)")
        g.add_argument("--nl", type=parse_pair, default=(2, 2),
                       help="conv depth of macro-layers 1 and 2 (default: 2,2)")
        g.add_argument("--separ", type=flag01, nargs="?", const=True, default=False,
                       help="depthwise-separable convolutions (default: 0)")
        g.add_argument("--flat", type=flag01, default=True,
                       help="1 = flatten head, 0 = global average pooling head (default: 1)")
    g.add_argument("--add-layer", type=flag01, nargs="?", const=True, default=False,
                   help="append a 4th macro-layer (default: 0)")
    g.add_argument("--bn-position", choices=[BN_AFTER_POOL, BN_BEFORE_POOL], default=BN_AFTER_POOL,
                   help=f"batch-norm placement in each macro-layer (default: {BN_AFTER_POOL})")


def add_data_args(p, with_limits=True):
    g = p.add_argument_group("data")
    g.add_argument("--dataset", choices=["idx", "cifar10"], default="idx", help="default: idx")
    g.add_argument("--data-dir", type=Path, default=default_data_dir(),
                   help="dataset directory (default: $NLCNN_DATA_DIR)")
    if with_limits:
        g.add_argument("--limit-train", type=int, default=None, help="use the first N training images")
        g.add_argument("--limit-test", type=int, default=None, help="use the first N test images")


def add_train_args(p):
    g = p.add_argument_group("training")
    g.add_argument("--epochs", type=int, default=20, help="default: 20")
    g.add_argument("--batch-size", type=int, default=500, help="default: 500")
    g.add_argument("--lr", type=float, default=1e-3, help="Adam learning rate (default: 0.001)")
    g.add_argument("--seed", type=int, default=0, help="weights and shuffling seed (default: 0)")
    g.add_argument("--deterministic", action="store_true",
                   help="omit wall-clock columns from CSV output so reruns are byte-identical")
    g.add_argument("--backend", choices=kernels.available_backends(), default=None,
                   help="kernel backend (default: $NLCNN_BACKEND or numba)")


def build_parser():
    p = Parser(prog="nlcnn", description="NL-CNN: build, count, train and sweep compact CNNs.")
    p.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=Parser)

    d = sub.add_parser("describe", help="print the layer table, parameter totals, MACs, receptive fields")
    add_arch_args(d)
    d.add_argument("--format", choices=["text", "csv"], default="text", help="default: text")

    t = sub.add_parser("train", help="train a model, write metrics CSV and a weight file")
    add_arch_args(t)
    add_data_args(t)
    add_train_args(t)
    t.add_argument("--out", type=Path, default=Path("model.nlcw"), help="weight file (default: model.nlcw)")
    t.add_argument("--metrics", type=Path, default=Path("metrics.csv"),
                   help="per-epoch metrics CSV (default: metrics.csv)")

    e = sub.add_parser("eval", help="evaluate a weight file on a dataset split")
    e.add_argument("model", type=Path, help="weight file written by 'train'")
    add_data_args(e, with_limits=False)
    e.add_argument("--split", choices=["train", "test"], default="test", help="default: test")
    e.add_argument("--limit", type=int, default=None, help="use the first N images")

    s = sub.add_parser("sweep", help="grid over hyper-parameter lists, one CSV row per cell")
    add_arch_args(s, lists=True)
    add_data_args(s)
    add_train_args(s)
    s.add_argument("--params-only", action="store_true", help="count parameters only, no training")
    s.add_argument("--out", type=Path, default=None, help="CSV path (default: stdout)")
    return p


def hyperparams(args, input_shape=None, **overrides):
    shape = input_shape or args.input_shape or (28, 28, 1)
    kw = dict(input_shape=shape, num_classes=args.classes, add_layer=args.add_layer,
              bn_position=args.bn_position)
    if hasattr(args, "width"):
        kw.update(k=args.k, width=args.width, nl=args.nl, separ=args.separ, flat=args.flat)
    kw.update(overrides)
    hp = HyperParams(**kw)
    build_plan(hp)  # raises ConfigError early
    return hp


def write_atomic(path, data):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, mode) as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        os.unlink(tmp)
        raise


def load_data(args, limit_train=None, limit_test=None):
    if args.data_dir is None:
        raise FileNotFoundError("no data directory: pass --data-dir or set NLCNN_DATA_DIR")
    tr = load_split(args.dataset, args.data_dir, "train").subset(limit_train)
    te = load_split(args.dataset, args.data_dir, "test").subset(limit_test)
    return tr, te


def train_config(args):
    return TrainConfig(epochs=args.epochs, batch_size=args.batch_size, learning_rate=args.lr,
                       seed=args.seed, deterministic=args.deterministic)


def cmd_describe(args, out):
    rep = count_params(build_plan(hyperparams(args)))
    out.write(rep.to_csv() if args.format == "csv" else rep.to_text())


def cmd_train(args, out):
    cfg = train_config(args)
    cfg.validate()
    tr, te = load_data(args, args.limit_train, args.limit_test)
    hp = hyperparams(args, input_shape=tuple(tr.input_shape), num_classes=tr.num_classes)
    net = init_network(build_plan(hp), seed=args.seed)
    net, metrics = train(net, tr, cfg, test_set=te)
    csv_text = metrics.to_csv(include_timing=not args.deterministic)
    # the weight file goes to a temp name first so a failure leaves nothing behind
    with tempfile.TemporaryDirectory(dir=args.out.parent if args.out.parent.exists() else None) as tmp:
        tmp_model = Path(tmp) / "model.nlcw"
        save_model(net, tmp_model, metrics, include_timing=not args.deterministic)
        write_atomic(args.metrics, csv_text)
        args.out.parent.mkdir(parents=True, exist_ok=True)
        os.replace(tmp_model, args.out)
    final = metrics.final
    out.write(f"params {metrics.param_total}\n")
    if final is not None:
        out.write(f"final train_loss {final.train_loss:.6f} train_acc {final.train_acc:.6f} "
                  f"test_acc {final.test_acc:.6f}\n")
    if not args.deterministic:
        out.write(f"train time {metrics.total_train_seconds:.2f}s\n")
    out.write(f"wrote {args.out} and {args.metrics}\n")


def cmd_eval(args, out):
    net, hp = load_model(args.model)
    if args.data_dir is None:
        raise FileNotFoundError("no data directory: pass --data-dir or set NLCNN_DATA_DIR")
    ds = load_split(args.dataset, args.data_dir, args.split).subset(args.limit)
    loss, acc = evaluate(net, ds)
    out.write(f"split {args.split} n {len(ds)} loss {loss:.6f} accuracy {acc:.6f}\n")


def cmd_sweep(args, out):
    cells = list(itertools.product(args.nl_list, args.width_list, args.k_list,
                                   args.separ_list, args.flat_list))
    cfg = train_config(args)
    data = None
    if not args.params_only:
        cfg.validate()
        data = load_data(args, args.limit_train, args.limit_test)
    input_shape = tuple(data[0].input_shape) if data else None

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SWEEP_HEADER)
    for nl, width, k, separ, flat in cells:
        hp = hyperparams(args, input_shape=input_shape, nl=nl, width=width, k=k, separ=separ, flat=flat,
                         **({"num_classes": data[0].num_classes} if data else {}))
        plan = build_plan(hp)
        params = count_params(plan).total
        test_acc = train_time = ""
        if data is not None:
            net = init_network(plan, seed=args.seed)
            _, metrics = train(net, data[0], cfg, test_set=data[1])
            test_acc = repr(metrics.final.test_acc) if metrics.rows else ""
            if not args.deterministic:
                train_time = f"{metrics.total_train_seconds:.2f}"
        log.info("cell nl=%s width=%d k=%g separ=%d flat=%d -> %d params %s",
                 nl, width, k, separ, flat, params, test_acc)
        writer.writerow([f"{nl[0]},{nl[1]}", width, repr(float(k)), int(separ), int(flat), params,
                         test_acc, train_time])
    if args.out is None:
        out.write(buf.getvalue())
    else:
        write_atomic(args.out, buf.getvalue())


COMMANDS = {"describe": cmd_describe, "train": cmd_train, "eval": cmd_eval, "sweep": cmd_sweep}


def main(argv=None, out=None):
    out = out or sys.stdout
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "backend", None):
        kernels.set_backend(args.backend)
    try:
        COMMANDS[args.command](args, out)
    except ConfigError as e:
        print(f"nlcnn: configuration error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (FileNotFoundError, NotADirectoryError, DatasetFormatError, ModelFileError) as e:
        print(f"nlcnn: data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as e:
        print(f"nlcnn: numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def main_entry():
    sys.exit(main())


if __name__ == "__main__":
    main_entry()
