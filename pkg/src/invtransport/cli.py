"""Command-line entry point: ``python3 -m invtransport <command> ...``.

Exit codes: 0 success, 1 invalid input (bad scene, arguments or
parameters), 2 file-system or PFM I/O failure.  Every command writes a
``<out>.run.json`` manifest next to its output recording everything needed
to reproduce it.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from dataclasses import asdict, dataclass, field

from . import __version__
from ._config import configured_workers
from .dataset import SPLITS, atomic_write_text, default_spec, gen_dataset, load_dataset
from .grad import PARAMS, render_with_gradients, sign_preview
from .inverse import invert
from .itn import MODES, Network, TrainConfig, evaluate, examples_from, train
from .pfm import PFMError, read_pfm, write_pfm
from .scene import Medium, SceneError, load_scene
from .transport import render


EXIT_OK = 0
EXIT_INVALID = 1
EXIT_IO = 2


@dataclass
class RunManifest:
    command: str
    argv: list
    seed: int
    spp: int
    scenes: list = field(default_factory=list)
    outputs: list = field(default_factory=list)
    wall_clock_s: float = 0.0
    workers: int = 1
    version: str = __version__

    def write(self, path):
        atomic_write_text(path, json.dumps(asdict(self), indent=2))


def _manifest_path(out):
    return out.rstrip("/\\") + ".run.json"


def _parse_init(text):
    try:
        values = [float(v) for v in text.split(",")]
    except ValueError:
        raise ValueError(f"--init must be 'sigma_t,albedo,g', got {text!r}") from None
    if len(values) != 3:
        raise ValueError(f"--init must have three values, got {text!r}")
    return Medium(*values)


def cmd_render(args):
    scene = load_scene(args.scene)
    if args.max_depth is not None:
        scene = scene.replace(max_depth=args.max_depth)
    write_pfm(render(scene, args.spp, args.seed), args.out)
    return [args.scene], [args.out]


def cmd_grad(args):
    scene = load_scene(args.scene)
    result = render_with_gradients(scene, args.spp, args.seed)
    os.makedirs(args.out, exist_ok=True)
    outputs = [os.path.join(args.out, "forward.pfm")]
    write_pfm(result.forward, outputs[0])
    for name in PARAMS:
        img = result.derivative(name)
        path = os.path.join(args.out, f"d_{name}.pfm")
        preview = os.path.join(args.out, f"d_{name}_sign.pfm")
        write_pfm(img, path)
        write_pfm(sign_preview(img), preview)
        outputs += [path, preview]
    return [args.scene], outputs


def cmd_invert(args):
    init = _parse_init(args.init)
    scene = load_scene(args.scene)
    target = read_pfm(args.target)
    trace = invert(target, scene, init, iterations=args.iters, spp=args.spp,
                   seed=args.seed, lr=args.lr, final_spp=args.final_spp, final_lr=args.final_lr)
    trace.write_jsonl(args.out)
    if trace.error:
        logging.error("inversion stopped early: %s", trace.error)
        raise ValueError(trace.error)
    return [args.scene, args.target], [args.out]


def cmd_gen_dataset(args):
    spec = default_spec(seed=args.seed, spp=args.spp, size=args.size,
                        params_per_combo=args.per_combo)
    ds = gen_dataset(spec, args.out,
                     progress=lambda i, rec: logging.info("rendered %s", rec.image))
    if not ds.complete:
        raise OSError(f"dataset in {args.out} is incomplete; see dataset.json")
    return [], [args.out]


def cmd_train(args):
    ds = load_dataset(args.data)
    cfg = TrainConfig(mode=args.mode, lam=args.lam, epochs=args.epochs, minibatch=args.minibatch,
                      lr=args.lr, reg_spp=args.spp, seed=args.seed,
                      warm_start_epochs=args.warm_start, finetune_lr=args.finetune_lr)
    examples = examples_from(ds, ds.split("train"))
    net, tlog = train(examples, cfg,
                      progress=lambda row: logging.info("epoch %(epoch)d sup %(supervised).5g "
                                                        "reg %(regularizer).5g", row))
    net.save(args.out)
    log_path = args.out + ".log.jsonl"
    with open(log_path, "w", encoding="utf-8") as fh:
        for row in tlog.epochs:
            fh.write(json.dumps(row) + "\n")
    return [args.data], [args.out, log_path]


def cmd_eval(args):
    ds = load_dataset(args.data)
    net = Network.load(args.net)
    rows = evaluate(net, ds, args.splits, spp=args.spp, seed=args.seed)
    with open(args.out, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row.as_record()) + "\n")
    return [args.data, args.net], [args.out]


def build_parser():
    p = argparse.ArgumentParser(prog="invtransport",
                                description="Volumetric path tracing, derivatives and inversion.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, spp):
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--spp", type=int, default=spp)
        sp.add_argument("--out", required=True)

    sp = sub.add_parser("render", help="render a scene to PFM")
    sp.add_argument("--scene", required=True)
    sp.add_argument("--max-depth", type=int)
    common(sp, 64)
    sp.set_defaults(func=cmd_render)

    sp = sub.add_parser("grad", help="forward and derivative images into a directory")
    sp.add_argument("--scene", required=True)
    common(sp, 64)
    sp.set_defaults(func=cmd_grad)

    sp = sub.add_parser("invert", help="fit medium parameters to a target image")
    sp.add_argument("--scene", required=True)
    sp.add_argument("--target", required=True)
    sp.add_argument("--init", required=True, help="sigma_t,albedo,g")
    sp.add_argument("--iters", type=int, default=200)
    sp.add_argument("--lr", type=float, default=0.05)
    sp.add_argument("--final-spp", type=int, default=64)
    sp.add_argument("--final-lr", type=float, default=0.01)
    common(sp, 16)
    sp.set_defaults(func=cmd_invert)

    sp = sub.add_parser("gen-dataset", help="render the desk-scale training set")
    sp.add_argument("--size", type=int, default=64)
    sp.add_argument("--per-combo", type=int, default=25)
    common(sp, 32)
    sp.set_defaults(func=cmd_gen_dataset)

    sp = sub.add_parser("train", help="train a regressor network")
    sp.add_argument("--data", required=True)
    sp.add_argument("--mode", choices=MODES, default="RN")
    sp.add_argument("--lambda", dest="lam", type=float, default=None,
                    help="regularizer weight (default: auto-scaled after warm start)")
    sp.add_argument("--epochs", type=int, default=TrainConfig.epochs)
    sp.add_argument("--warm-start", type=int, default=TrainConfig.warm_start_epochs)
    sp.add_argument("--minibatch", type=int, default=TrainConfig.minibatch)
    sp.add_argument("--lr", type=float, default=TrainConfig.lr)
    sp.add_argument("--finetune-lr", type=float, default=None,
                    help="step size once the regularizer is on (default: keep --lr)")
    common(sp, TrainConfig.reg_spp)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="parameter and appearance metrics per split")
    sp.add_argument("--data", required=True)
    sp.add_argument("--net", required=True)
    sp.add_argument("--splits", nargs="+", default=list(SPLITS[1:]) + ["test"],
                    choices=list(SPLITS) + ["test"])
    common(sp, 16)
    sp.set_defaults(func=cmd_eval)
    return p


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INVALID
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    if args.spp < 1:
        print("error: --spp must be >= 1", file=sys.stderr)
        return EXIT_INVALID
    start = time.perf_counter()
    try:
        scenes, outputs = args.func(args)
    except (SceneError, ValueError, FloatingPointError, KeyError) as exc:
        if isinstance(exc, PFMError):
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_IO
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    manifest = RunManifest(args.command, argv, args.seed, args.spp, scenes, outputs,
                           time.perf_counter() - start, configured_workers())
    try:
        manifest.write(_manifest_path(args.out))
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK
