"""Command-line entry point: ``eddynet <subcommand> ...``.

Exit status is 0 on success, 2 on usage errors and 1 on runtime errors.
Diagnostics go to stderr; results go to files or stdout.
"""

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import formats
from .data import PatchPair, SynthConfig, eddy_contours, rasterize_contours, sample_patch, sanitize, \
    split_train_val, synth_scene

MANIFEST = "manifest.txt"


def _eddy_range(text):
    try:
        if "-" in text:
            lo, hi = (int(v) for v in text.split("-", 1))
        else:
            lo = hi = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected K or A-B, got {text!r}")
    if lo < 0 or hi < lo:
        raise argparse.ArgumentTypeError(f"invalid eddy count range {text!r}")
    return lo, hi


def _float_range(text):
    try:
        lo, hi = (float(v) for v in text.split("-", 1))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected A-B, got {text!r}")
    if not 0 < lo <= hi:
        raise argparse.ArgumentTypeError(f"invalid range {text!r}")
    return lo, hi


def build_parser():
    p = argparse.ArgumentParser(prog="eddynet", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="write synthetic SSH scenes with masks and contours")
    s.add_argument("--out", required=True, type=Path)
    s.add_argument("--n", required=True, type=int)
    s.add_argument("--grid-size", type=int, default=64)
    s.add_argument("--n-eddies", type=_eddy_range, default=(3, 6))
    s.add_argument("--radius", type=_float_range, default=(2.5, 5.0),
                   help="range of the Gaussian bump width in grid cells, A-B")
    s.add_argument("--noise", type=float, default=0.05)
    s.add_argument("--seed", type=int, default=0)

    t = sub.add_parser("train", help="train on a scene directory")
    t.add_argument("--data", required=True, type=Path)
    t.add_argument("--out", required=True, type=Path)
    t.add_argument("--variant", choices=("relu_bn", "selu"), default="relu_bn")
    t.add_argument("--loss", choices=("dice", "cce"), default="dice")
    t.add_argument("--lr", type=float, default=1e-3)
    t.add_argument("--dropout", type=float, default=0.2)
    t.add_argument("--batch", type=int, default=16)
    t.add_argument("--patience", type=int, default=5)
    t.add_argument("--max-epochs", type=int, default=200)
    t.add_argument("--patch", type=int, default=128)
    t.add_argument("--val-ratio", type=float, default=0.8,
                   help="fraction of patches used for training")
    t.add_argument("--bn-momentum", type=float, default=0.99,
                   help="moving-statistics momentum; lower it when an epoch has few batches")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--no-timing", action="store_true",
                   help="write 0 in the seconds column so reruns are byte-identical")

    pr = sub.add_parser("predict", help="segment one grid file")
    pr.add_argument("--weights", required=True, type=Path)
    pr.add_argument("--grid", required=True, type=Path)
    pr.add_argument("--out", required=True, type=Path, action="append",
                    help="output path ending in .mask or .ppm; may repeat")

    e = sub.add_parser("eval", help="random-set evaluation protocol")
    e.add_argument("--weights", type=Path)
    e.add_argument("--data", required=True, type=Path)
    e.add_argument("--n-sets", type=int, default=50)
    e.add_argument("--set-size", type=int, default=360)
    e.add_argument("--patch", type=int, default=120)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--aggregation", choices=("pooled", "per_patch"), default="pooled")
    e.add_argument("--oracle", action="store_true",
                   help="use the ground truth as the prediction (protocol sanity check)")

    g = sub.add_parser("ghost", help="hit rates at ghost eddy centres")
    g.add_argument("--weights", required=True, type=Path)
    g.add_argument("--grid", required=True, type=Path)
    g.add_argument("--ghosts", required=True, type=Path)

    gc = sub.add_parser("gradcheck", help="finite-difference check of every layer and loss")
    gc.add_argument("--seed", type=int, default=0)
    gc.add_argument("--seeds", type=int, default=20)

    pa = sub.add_parser("params", help="per-layer parameter table")
    pa.add_argument("--variant", choices=("relu_bn", "selu"), default="relu_bn")
    pa.add_argument("--up-kernel", type=int, default=3)
    return p


# ---------------------------------------------------------------------------


def cmd_synth(args):
    if args.n < 0:
        raise ValueError("--n must be non-negative")
    args.out.mkdir(parents=True, exist_ok=True)
    cfg = SynthConfig(grid_size=args.grid_size, n_eddies=args.n_eddies, radius_range=args.radius,
                      noise_sigma=args.noise)
    children = np.random.SeedSequence(args.seed).spawn(args.n)
    stems = []
    for i, child in enumerate(children):
        grid, mask, eddies = synth_scene(cfg, np.random.default_rng(child))
        stem = f"scene_{i:05d}"
        formats.save_grid(grid, args.out / f"{stem}.sshg")
        formats.save_mask(mask, args.out / f"{stem}.mask")
        formats.save_contours(eddy_contours(eddies, grid.geometry), args.out / f"{stem}.contours")
        stems.append(stem)
    (args.out / MANIFEST).write_text("".join(s + "\n" for s in stems), encoding="utf-8")
    print(f"wrote {len(stems)} scenes to {args.out}")


def load_scenes(directory):
    """``[(stem, sanitized grid, mask)]`` for every manifest entry.

    A ``.mask`` file is used when present, otherwise the ``.contours`` file
    is rasterized onto the grid.
    """
    directory = Path(directory)
    manifest = directory / MANIFEST
    if not manifest.exists():
        raise FileNotFoundError(f"{manifest} not found")
    out = []
    for stem in manifest.read_text(encoding="utf-8").split():
        grid = sanitize(formats.load_grid(directory / f"{stem}.sshg"))
        mpath = directory / f"{stem}.mask"
        if mpath.exists():
            mask = formats.load_mask(mpath)
        else:
            mask = rasterize_contours(formats.load_contours(directory / f"{stem}.contours"), grid.geometry)
        if mask.shape != grid.shape:
            raise ValueError(f"{stem}: mask shape {mask.shape} != grid shape {grid.shape}")
        out.append((stem, grid, mask))
    return out


def cmd_train(args):
    from .trainer import TrainConfig, checkpoint, train

    if not 0.0 <= args.bn_momentum <= 1.0:
        raise UsageError(f"--bn-momentum must lie in [0, 1], got {args.bn_momentum}")
    scenes = load_scenes(args.data)
    rng = np.random.default_rng(args.seed)
    patches = [sample_patch(g, m, rng, args.patch, stem) for stem, g, m in scenes]
    tr, va = split_train_val(patches, args.val_ratio, args.seed)
    cfg = TrainConfig(loss=args.loss, variant=args.variant, batch_size=args.batch, patience=args.patience,
                      max_epochs=args.max_epochs, learning_rate=args.lr, dropout_rate=args.dropout,
                      seed=args.seed, record_time=not args.no_timing,
                      model_overrides={"bn_momentum": args.bn_momentum})
    weights, history = train(cfg, tr, va, log_fn=lambda m: print(m, file=sys.stderr))
    wpath, hpath = checkpoint(weights, history, args.out)
    print(f"best epoch {history.best_epoch} of {len(history)}; wrote {wpath} and {hpath}")


def cmd_predict(args):
    from .evaluator import predict_grid

    weights = formats.load_weights(args.weights)
    labels = predict_grid(weights, formats.load_grid(args.grid))
    for out in args.out:
        if out.suffix == ".ppm":
            formats.save_ppm(labels, out)
        elif out.suffix == ".mask":
            formats.save_mask(labels, out)
        else:
            raise ValueError(f"{out}: output must end in .mask or .ppm")
    print(f"predicted {labels.shape[0]}x{labels.shape[1]} mask")


def cmd_eval(args):
    from .evaluator import EvalProtocolConfig, evaluate_protocol, report_json

    if not args.oracle and args.weights is None:
        raise UsageError("eval needs --weights unless --oracle is given")
    pool = [PatchPair(g.values, m, stem) for stem, g, m in load_scenes(args.data)]
    cfg = EvalProtocolConfig(args.n_sets, args.set_size, args.patch, args.seed, args.aggregation)
    if args.oracle:
        model = _truth_lookup(pool, args.patch)
    else:
        model = formats.load_weights(args.weights)
    report = evaluate_protocol(model, pool, cfg)
    print(report_json(report, args.aggregation))


def _truth_lookup(pool, size):
    from .evaluator import _center_crop

    masks = np.stack([_center_crop(p.mask, size) for p in pool])
    ssh = np.stack([_center_crop(p.ssh, size) for p in pool]).astype(np.float32)

    def predict(batch):
        # pool order is preserved by evaluate_protocol
        if batch.shape != ssh.shape or not np.array_equal(batch, ssh):
            raise RuntimeError("oracle predictor called on unexpected input")
        return masks
    return predict


def cmd_ghost(args):
    from .evaluator import ghost_check

    weights = formats.load_weights(args.weights)
    grid = formats.load_grid(args.grid)
    rates = ghost_check(weights, grid, formats.load_ghosts(args.ghosts))
    print(json.dumps({"anticyclonic": rates[1], "cyclonic": rates[2]}))


def cmd_gradcheck(args):
    from .gradcheck import run_suite

    ok = run_suite(seeds=range(args.seed, args.seed + args.seeds),
                   network_seeds=range(args.seed, args.seed + 3))
    if not ok:
        print("gradient check failed", file=sys.stderr)
        return 1
    return 0


def cmd_params(args):
    from .model import EddyNetConfig, build_model, parameter_report

    w = build_model(EddyNetConfig(variant=args.variant, up_kernel=args.up_kernel), np.random.default_rng(0))
    print(parameter_report(w))


class UsageError(Exception):
    pass


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "predict": cmd_predict, "eval": cmd_eval,
            "ghost": cmd_ghost, "gradcheck": cmd_gradcheck, "params": cmd_params}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args) or 0
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"eddynet: error: {exc}", file=sys.stderr)
        return 2
    except formats.FormatError as exc:
        print(f"eddynet {args.command}: [{exc.code}] {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError, RuntimeError) as exc:
        print(f"eddynet {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
