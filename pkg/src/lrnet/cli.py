"""Command-line interface.

    lrnet pretrain --config C --out DIR        full-precision reference run
    lrnet train --config C --out DIR           stochastic training
        [--init-from CKPT] [--mode M] [--seed N] [--epochs E]
    lrnet eval --checkpoint CKPT [--k K]       sampled evaluation
    lrnet diagnose clt|entropy|gumbel ...      verification instruments
    lrnet export-kernels --checkpoint CKPT --out DIR

Exit codes: 0 success, 2 configuration problem, 3 data problem,
4 training divergence. Dataset location comes from the config's
data.data_dir, else the LRNET_DATA_DIR environment variable, else ./data.
"""

import argparse
import json
import os
import sys

import numpy as np

from .checkpoint import restore_run
from .config import apply_overrides, config_from_dict, save_config
from .data import augment_color_images, load_for_run
from .diagnostics import (
    EntropyTrace,
    clt_for_network,
    compare_estimators,
    export_kernels,
)
from .errors import ConfigError, DataError, DivergenceError, LrnetError
from .evaluate import accuracy, evaluate_sampled
from .network import build_network, network_from_pretrained
from .tensor import Rng, STREAM_DIAG, STREAM_INIT, STREAM_SAMPLE
from .training import fit, make_streams, write_csv


def _load_payload(path):
    if path is None:
        raise ConfigError("--config is required for this command")
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc


def _config_from_args(args, forced_mode=None):
    payload = _load_payload(args.config)
    overrides = []
    if getattr(args, "seed", None) is not None:
        overrides.append(("train.seed", args.seed))
    if forced_mode is not None:
        overrides.append(("train.mode", forced_mode))
    elif getattr(args, "mode", None) is not None:
        overrides.append(("train.mode", args.mode))
    if getattr(args, "epochs", None) is not None:
        overrides.append(("train.epochs", args.epochs))
    return config_from_dict(apply_overrides(payload, overrides))


def _build_net(cfg, init_from=None):
    tr = cfg.train
    if init_from:
        restored = restore_run(init_from)
        src_cfg = restored.net.net_cfg
        for name in ("input_shape", "conv_channels", "conv_kernel",
                     "fc_units", "num_classes"):
            want, have = getattr(cfg.network, name), getattr(src_cfg, name)
            if want != have:
                raise ConfigError(
                    f"network.{name} is {want} but the pretrained checkpoint "
                    f"was built with {have}"
                )
        return network_from_pretrained(
            restored.net, tr.mode, tau=tr.gumbel_tau, var_floor=tr.var_floor,
            p_min=tr.init_p_min, p_max=tr.init_p_max,
            dropout_rate=cfg.network.dropout_rate,
        )
    return build_network(
        cfg.network, tr.mode, Rng(tr.seed, stream=STREAM_INIT),
        tau=tr.gumbel_tau, var_floor=tr.var_floor,
        p_min=tr.init_p_min, p_max=tr.init_p_max,
    )


def _run_training(cfg, out_dir, init_from=None):
    train, val, test = load_for_run(cfg)
    os.makedirs(out_dir, exist_ok=True)
    save_config(cfg, os.path.join(out_dir, "config.json"))
    net = _build_net(cfg, init_from=init_from)
    rngs = make_streams(cfg.train.seed)
    trace = EntropyTrace(net) if net.mode != "fp" else None
    augment_fn = augment_color_images if cfg.data.augment else None
    history = fit(
        net, train, cfg.train, rngs, out_dir=out_dir, run_cfg=cfg,
        epoch_hook=trace.hook if trace else None, augment_fn=augment_fn,
    )
    if trace:
        trace.write(os.path.join(out_dir, "entropy.csv"))
    if history.epoch_mean_loss:
        print(f"final epoch mean loss {history.epoch_mean_loss[-1]:.6f}")
    score = test if test is not None else val
    if score is not None:
        acc = accuracy(net, score, weight_mode="mean")
        print(f"deterministic-weight test accuracy {acc:.4f}")
    return 0


def cmd_pretrain(args):
    cfg = _config_from_args(args, forced_mode="fp")
    return _run_training(cfg, args.out)


def cmd_train(args):
    cfg = _config_from_args(args)
    if cfg.train.mode == "fp" and args.init_from:
        raise ConfigError("--init-from only applies to discrete modes")
    return _run_training(cfg, args.out, init_from=args.init_from)


def cmd_eval(args):
    restored = restore_run(args.checkpoint)
    cfg = restored.run_cfg
    if cfg is None:
        cfg = _config_from_args(args)
    if restored.net.mode == "fp":
        raise ConfigError("sampled evaluation needs a discrete-mode checkpoint")
    train, val, test = load_for_run(cfg)
    select_ds = val if val is not None else test
    report_ds = test if val is not None else None
    seed = args.seed if args.seed is not None else cfg.train.seed
    result = evaluate_sampled(
        restored.net, select_ds, Rng(seed, stream=STREAM_SAMPLE),
        k=args.k, test_ds=report_ds,
    )
    out_dir = args.out or os.path.dirname(os.path.abspath(args.checkpoint))
    os.makedirs(out_dir, exist_ok=True)
    write_csv(os.path.join(out_dir, "eval.csv"), result.columns(), result.rows())
    accs = np.array(result.accuracies)
    print(f"samples {args.k} select-set accuracy mean {accs.mean():.4f} "
          f"std {accs.std():.4f} best {result.best_accuracy:.4f}")
    if result.test_accuracies:
        print(f"test accuracy of chosen sample {result.best_test_accuracy:.4f}")
    return 0


def _parse_unit(text):
    try:
        parts = tuple(int(p) for p in text.split(","))
    except ValueError as exc:
        raise ConfigError(f"malformed --unit {text!r}") from exc
    return parts if len(parts) > 1 else parts[0]


def cmd_diagnose_clt(args):
    if args.checkpoint:
        restored = restore_run(args.checkpoint)
        net, cfg = restored.net, restored.run_cfg
        if cfg is None:
            cfg = _config_from_args(args)
    else:
        cfg = _config_from_args(args)
        net = _build_net(cfg)
    if net.mode not in ("ternary", "binary"):
        raise ConfigError("the normality check applies to ternary/binary modes")
    train, _, _ = load_for_run(cfg)
    x = train.images[:1]
    seed = args.seed if args.seed is not None else cfg.train.seed
    report = clt_for_network(
        net, x, args.layer, _parse_unit(args.unit),
        Rng(seed, stream=STREAM_DIAG), draws=args.draws,
    )
    print(
        f"layer {args.layer} unit {args.unit}: mean {report.mean:.6f} "
        f"std {report.std:.6f} ks {report.ks:.6f} draws {report.draws} "
        f"degenerate {report.degenerate}"
    )
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        rows = [
            [float(report.bin_edges[i]), float(report.bin_edges[i + 1]), int(c)]
            for i, c in enumerate(report.counts)
        ]
        write_csv(os.path.join(args.out, "clt.csv"), ["bin_lo", "bin_hi", "count"], rows)
    return 0


def cmd_diagnose_entropy(args):
    restored = restore_run(args.checkpoint)
    net = restored.net
    if net.mode == "fp":
        raise ConfigError("a full-precision checkpoint has no weight entropy")
    names = [name for name, _ in net.slots()]
    values = net.entropies()
    for name, value in zip(names, values):
        print(f"entropy_{name} {value:.6f}")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        write_csv(
            os.path.join(args.out, "entropy.csv"),
            ["epoch"] + [f"entropy_{n}" for n in names],
            [[restored.epoch] + values],
        )
    return 0


def cmd_diagnose_gumbel(args):
    cfg = _config_from_args(args)
    train, _, _ = load_for_run(cfg)
    os.makedirs(args.out, exist_ok=True)
    losses = compare_estimators(cfg, train, out_dir=args.out)
    print(f"final mean loss gaussian {losses['gaussian'][-1]:.6f} "
          f"relaxed {losses['relaxed'][-1]:.6f}")
    return 0


def cmd_export_kernels(args):
    restored = restore_run(args.checkpoint)
    os.makedirs(args.out, exist_ok=True)
    paths = export_kernels(restored.net, args.out)
    print(f"wrote {len(paths)} kernel images to {args.out}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="lrnet",
        description="train and probe networks with discrete stochastic weights",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", help="JSON run configuration")
        p.add_argument("--seed", type=int, help="override train.seed")

    p = sub.add_parser("pretrain", help="train the full-precision reference")
    add_common(p)
    p.add_argument("--epochs", type=int, help="override train.epochs")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("train", help="train a discrete-weight network")
    add_common(p)
    p.add_argument("--mode", choices=["ternary", "binary", "gumbel", "fp"],
                   help="override train.mode")
    p.add_argument("--epochs", type=int, help="override train.epochs")
    p.add_argument("--init-from", dest="init_from",
                   help="full-precision checkpoint to mean-match from")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="sampled evaluation of a checkpoint")
    add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--k", type=int, default=10, help="weight samples to draw")
    p.add_argument("--out", help="directory for eval.csv (default: beside the checkpoint)")
    p.set_defaults(func=cmd_eval)

    diag = sub.add_parser("diagnose", help="verification instruments")
    dsub = diag.add_subparsers(dest="diagnostic", required=True)

    p = dsub.add_parser("clt", help="normality of true discrete pre-activations")
    add_common(p)
    p.add_argument("--checkpoint")
    p.add_argument("--layer", default="conv0")
    p.add_argument("--unit", default="0,0,0",
                   help="output unit: channel,row,col for conv, index for dense")
    p.add_argument("--draws", type=int, default=10000)
    p.add_argument("--out")
    p.set_defaults(func=cmd_diagnose_clt)

    p = dsub.add_parser("entropy", help="per-layer weight entropy of a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_diagnose_entropy)

    p = dsub.add_parser("gumbel", help="compare against the relaxed estimator")
    add_common(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_diagnose_gumbel)

    p = sub.add_parser("export-kernels", help="first-layer kernels as PGM images")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_kernels)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except DivergenceError as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return 4
    except LrnetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
