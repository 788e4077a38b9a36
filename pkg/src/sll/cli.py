"""Command-line entry point: ``sll <command> [options]``.

Exit codes: 0 ok, 2 configuration error, 3 data error, 4 training diverged,
5 corrupt checkpoint, 6 a verification check failed.

Options may also come from a ``key=value`` file given with ``--config``; flags
on the command line take precedence. Keys use the long flag names without the
leading dashes (``lr=0.001``, ``batch=128``).
"""

from __future__ import annotations

import argparse
import csv
import os
import sys

import numpy as np

from .exceptions import DivergedError, FormatError, InvalidInputError

EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGED, EXIT_CHECKPOINT, EXIT_VIOLATION = 2, 3, 4, 5, 6


class ConfigError(Exception):
    pass


def _ints(text: str) -> list[int]:
    try:
        return [int(t) for t in str(text).split(",") if t.strip()]
    except ValueError as exc:
        raise ConfigError(f"expected comma-separated integers, got {text!r}") from exc


def parse_arch(text: str):
    """``mlp:800,800`` or ``cnn:64,128,256`` (optionally ``cnn:64,128+fc:256``)."""
    kind, _, rest = text.partition(":")
    if kind == "mlp":
        return "mlp", _ints(rest), []
    if kind == "cnn":
        conv, _, fc = rest.partition("+fc:")
        channels = _ints(conv)
        if not channels:
            raise ConfigError("cnn architecture needs at least one conv layer")
        return "cnn", _ints(fc), channels
    raise ConfigError(f"unknown architecture {text!r}; use mlp:W1,W2,... or cnn:C1,C2,...")


def read_config_file(path) -> dict:
    out = {}
    try:
        with open(path) as fh:
            for n, line in enumerate(fh, 1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                key, sep, value = line.partition("=")
                if not sep:
                    raise ConfigError(f"{path}:{n}: expected key=value")
                out[key.strip().replace("-", "_")] = value.strip()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    return out


def _coerce(value, like):
    if isinstance(like, bool):
        return str(value).lower() in ("1", "true", "yes", "on")
    if isinstance(like, int):
        return int(value)
    if isinstance(like, float):
        return float(value)
    return value


def _merge_config(parser: argparse.ArgumentParser, args: argparse.Namespace, argv) -> None:
    if not getattr(args, "config", None):
        return
    given = set()
    for tok in argv:
        if tok.startswith("--"):
            given.add(tok[2:].split("=", 1)[0].replace("-", "_"))
    for key, value in read_config_file(args.config).items():
        if not hasattr(args, key):
            raise ConfigError(f"unknown config key {key!r}")
        if key in given:
            continue
        default = parser.get_default(key)
        try:
            setattr(args, key, _coerce(value, default) if default is not None else value)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {value!r}") from exc


# ------------------------------------------------------------------ commands

def _load_split(name, split, root, limit=None):
    from .data import load_dataset
    ds = load_dataset(name, split, root)
    if limit:
        return ds.images[:limit], ds.labels[:limit], ds
    return ds.images, ds.labels, ds


def cmd_train(args) -> int:
    from .estimator import BPClassifier, SLLClassifier
    from .telemetry import write_metrics_csv

    kind, hidden, channels = parse_arch(args.arch)
    for path in (args.checkpoint, args.metrics):
        if path and os.path.exists(path) and not (args.overwrite or
                                                  (path == args.metrics and args.append_metrics)):
            raise ConfigError(f"{path} exists; pass --overwrite to replace it")
    augment = tuple(a for a in (args.augment or "").split(",") if a)
    try:
        X, y, ds = _load_split(args.dataset, "train", args.data_root, args.limit)
        X_te, y_te, _ = _load_split(args.dataset, "test", args.data_root, args.test_limit)
    except (OSError, FormatError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA

    cls = SLLClassifier if args.method == "sll" else BPClassifier
    try:
        est = cls(hidden_layer_sizes=tuple(hidden), conv_channels=tuple(channels),
                  image_shape=ds.image_shape if (channels or augment) else None,
                  optimizer=args.opt, learning_rate=args.lr, epochs=args.epochs,
                  batch_size=args.batch, keep_prob=args.keep_prob, dropout=args.dropout,
                  batchnorm=args.batchnorm, bc_weight=args.bc_weight,
                  final_align=not args.no_final_align,
                  bc_layers=_ints(args.bc_layers) if args.bc_layers else None,
                  label_concat=args.label_concat, head_dim=args.head_dim,
                  augment=augment, random_state=args.seed, verbose=not args.quiet)
        est._config()
    except InvalidInputError as exc:
        raise ConfigError(str(exc)) from exc
    try:
        est.fit(X, y, eval_set=(X_te, y_te), run_id=args.run_id)
    except DivergedError as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    acc = est.score(X_te, y_te)
    if args.metrics:
        write_metrics_csv(args.metrics, est.history_, append=args.append_metrics)
    if args.checkpoint:
        est.save(args.checkpoint)
    print(f"test_acc={acc:.6f}")
    return 0


def _load_estimator(path):
    from .estimator import SLLClassifier
    try:
        return SLLClassifier.load(path)
    except FileNotFoundError as exc:
        print(f"checkpoint not found: {exc}", file=sys.stderr)
        raise _Exit(EXIT_CHECKPOINT)
    except (FormatError, KeyError, ValueError, TypeError) as exc:
        print(f"corrupt checkpoint: {exc}", file=sys.stderr)
        raise _Exit(EXIT_CHECKPOINT)


class _Exit(Exception):
    def __init__(self, code):
        self.code = code


def cmd_eval(args) -> int:
    est = _load_estimator(args.checkpoint)
    try:
        X, y, _ = _load_split(args.dataset, args.split, args.data_root, args.limit)
    except (OSError, FormatError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    print(f"accuracy={est.score(X, y):.6f}")
    return 0


def cmd_probe(args) -> int:
    est = _load_estimator(args.checkpoint)
    try:
        X, y, _ = _load_split(args.dataset, args.split, args.data_root, args.limit)
    except (OSError, FormatError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    rows = est.probe(X, y)
    cols = ["layer", "pred_loss", "bc_loss", "total_loss", "head_acc"]
    fh = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        w = csv.DictWriter(fh, fieldnames=cols)
        w.writeheader()
        w.writerows(rows)
    finally:
        if args.out:
            fh.close()
    if args.export_activations:
        H = est.transform(X, layer=args.layer)
        data = np.column_stack([y, H])
        header = "label," + ",".join(f"a{i}" for i in range(H.shape[1]))
        np.savetxt(args.export_activations, data, delimiter=",", header=header,
                   comments="", fmt=["%d"] + ["%.8g"] * H.shape[1])
    return 0


def cmd_bench_memory(args) -> int:
    from .telemetry import depth_sweep, fit_affine

    depths = _ints(args.depths)
    if not depths or min(depths) < 1:
        raise ConfigError("depths must be positive integers")
    if len(depths) == 1:
        print("warning: a single depth gives a degenerate sweep", file=sys.stderr)
    sll = depth_sweep(args.width, depths, "sll", batch_size=args.batch, seed=args.seed)
    bp = depth_sweep(args.width, depths, "bp", batch_size=args.batch, seed=args.seed)
    print(f"{'depth':>6} {'sll_peak_bytes':>16} {'bp_peak_bytes':>16}")
    for d in depths:
        print(f"{d:>6} {sll[d]:>16} {bp[d]:>16}")
    if args.out:
        with open(args.out, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["depth", "sll_peak_bytes", "bp_peak_bytes"])
            for d in depths:
                w.writerow([d, sll[d], bp[d]])
    ok = True
    if len(depths) > 1:
        lo, hi = min(depths), max(depths)
        ratio = sll[hi] / sll[lo]
        fit = fit_affine(depths, [bp[d] for d in depths])
        sll_ok = ratio <= 1.25
        bp_ok = fit.r2 >= 0.99 and fit.slope > 0
        print(f"sll peak({hi})/peak({lo}) = {ratio:.4f} -> {'PASS' if sll_ok else 'FAIL'}")
        print(f"bp affine fit slope={fit.slope:.1f} B/layer r2={fit.r2:.6f} -> "
              f"{'PASS' if bp_ok else 'FAIL'}")
        ok = sll_ok and bp_ok
    return 0 if ok else EXIT_VIOLATION


def cmd_check_theory(args) -> int:
    from .numerics import make_rng
    from .theory import adversarial_hierarchy, random_hierarchy, sharpening_hierarchy, \
        verify_layerwise_bound

    rng = make_rng(args.seed, 23)
    if args.fixture == "adversarial":
        models = [adversarial_hierarchy()]
    elif args.fixture == "sharpening":
        models = [sharpening_hierarchy(rng, L=int(rng.integers(2, 5)))
                  for _ in range(args.models)]
    else:
        models = [random_hierarchy(rng) for _ in range(args.models)]
    bad = 0
    rows = []
    for i, h in enumerate(models):
        r = verify_layerwise_bound(h)
        residual_ok = r.identity_residual <= 1e-9
        verdict = ("holds" if r.holds else "VIOLATED") if r.asserted else "not asserted"
        if not residual_ok or (r.asserted and not r.holds):
            bad += 1
        rows.append([i, h.L, f"{r.lhs:.12g}", f"{r.rhs:.12g}", f"{r.slack:.12g}",
                     f"{r.identity_residual:.3e}", r.asserted, verdict])
    header = ["model", "layers", "mean_layer_elbo", "global_elbo", "slack",
              "identity_residual", "assumptions_hold", "verdict"]
    fh = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    finally:
        if args.out:
            fh.close()
    asserted = sum(1 for r in rows if r[6])
    print(f"models={len(rows)} assumptions_hold={asserted} failures={bad}", file=sys.stderr)
    return EXIT_VIOLATION if bad else 0


def cmd_jl_probe(args) -> int:
    from .numerics import make_rng
    from .projection import jl_distortion_probe

    dims = _ints(args.out_dims)
    if not dims:
        raise ConfigError("need at least one output dimension")
    pts = make_rng(args.seed, 29).standard_normal((args.n, args.d))
    medians = []
    print("out_dim,median_eps,max_eps")
    for k in dims:
        rep = jl_distortion_probe(pts, k, args.trials, make_rng(args.seed, 31, k))
        medians.append(rep.median_eps)
        print(f"{k},{rep.median_eps:.6f},{rep.max_eps:.6f}")
    order = np.argsort(dims)
    med = np.asarray(medians)[order]
    monotone = bool(np.all(np.diff(med) <= 0))
    print(f"monotone={'yes' if monotone else 'no'}", file=sys.stderr)
    return 0 if monotone else EXIT_VIOLATION


# -------------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sll", description=__doc__.split("\n")[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="key=value file with defaults for these options")
        sp.add_argument("--seed", type=int, default=0)

    t = sub.add_parser("train", help="train a network and write metrics and a checkpoint")
    common(t)
    t.add_argument("--method", choices=["sll", "bp"], default="sll")
    t.add_argument("--dataset", default="mnist",
                   choices=["mnist", "cifar10", "cifar100", "digits", "blobs"])
    t.add_argument("--data-root", default=None)
    t.add_argument("--arch", default="mlp:800,800")
    t.add_argument("--epochs", type=int, default=100)
    t.add_argument("--lr", type=float, default=1e-3)
    t.add_argument("--opt", choices=["sgd", "adam", "adamax"], default="adamax")
    t.add_argument("--batch", type=int, default=128)
    t.add_argument("--keep-prob", type=float, default=0.9)
    t.add_argument("--dropout", type=float, default=0.0)
    t.add_argument("--batchnorm", action="store_true")
    t.add_argument("--bc-weight", type=float, default=1.0)
    t.add_argument("--bc-layers", default=None, help="comma-separated 1-based layers")
    t.add_argument("--no-final-align", action="store_true")
    t.add_argument("--label-concat", action="store_true")
    t.add_argument("--head-dim", type=int, default=None)
    t.add_argument("--augment", default="", help="comma-separated: flip,crop")
    t.add_argument("--limit", type=int, default=None, help="use the first N training samples")
    t.add_argument("--test-limit", type=int, default=None)
    t.add_argument("--metrics", default=None, help="metrics CSV path")
    t.add_argument("--append-metrics", action="store_true")
    t.add_argument("--checkpoint", default=None)
    t.add_argument("--overwrite", action="store_true")
    t.add_argument("--run-id", default="run")
    t.add_argument("--quiet", action="store_true")
    t.set_defaults(func=cmd_train)

    for name, func, helptext in (("eval", cmd_eval, "accuracy of a checkpoint"),
                                 ("probe", cmd_probe, "per-layer losses of a checkpoint")):
        e = sub.add_parser(name, help=helptext)
        common(e)
        e.add_argument("--checkpoint", required=True)
        e.add_argument("--dataset", default="mnist",
                       choices=["mnist", "cifar10", "cifar100", "digits", "blobs"])
        e.add_argument("--data-root", default=None)
        e.add_argument("--split", default="test", choices=["train", "test"])
        e.add_argument("--limit", type=int, default=None)
        if name == "probe":
            e.add_argument("--out", default=None, help="CSV path (default: stdout)")
            e.add_argument("--export-activations", default=None,
                           help="write one layer's activations with labels as CSV")
            e.add_argument("--layer", type=int, default=-2)
        e.set_defaults(func=func)

    b = sub.add_parser("bench-memory", help="peak activation memory versus depth")
    common(b)
    b.add_argument("--width", type=int, default=1024)
    b.add_argument("--depths", default="2,4,8,16,32")
    b.add_argument("--batch", type=int, default=128)
    b.add_argument("--out", default=None)
    b.set_defaults(func=cmd_bench_memory)

    c = sub.add_parser("check-theory", help="exact layer-wise ELBO bound checks")
    common(c)
    c.add_argument("--models", type=int, default=1000)
    c.add_argument("--fixture", choices=["random", "sharpening", "adversarial"], default="random")
    c.add_argument("--out", default=None)
    c.set_defaults(func=cmd_check_theory)

    j = sub.add_parser("jl-probe", help="random-projection distortion versus output dimension")
    common(j)
    j.add_argument("--out-dims", default="16,64,256")
    j.add_argument("--n", type=int, default=32)
    j.add_argument("--d", type=int, default=1024)
    j.add_argument("--trials", type=int, default=30)
    j.set_defaults(func=cmd_jl_probe)
    return p


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    sub_parser = parser._subparsers._group_actions[0].choices[args.command]
    try:
        _merge_config(sub_parser, args, argv)
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InvalidInputError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except _Exit as exc:
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
