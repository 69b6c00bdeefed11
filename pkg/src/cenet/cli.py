"""Command-line surface: forward, gradcheck, train, eval, ablate,
dump-features, and info. Every command is deterministic given --seed and
writes files byte-identically on re-runs."""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import tensor as T
from .config import ModelConfig, load_config
from .fileio import dump_features, load_checkpoint, read_pgm, save_checkpoint, save_loss_trace
from .gradcheck import all_passed, finite_diff_check
from .metrics import dice_score, hd95, pixel_accuracy
from .model import CENet
from .train import dice_ce_loss, make_optimizer, fit_samples, synth_dataset


class CliError(RuntimeError):
    pass


def _load_cfg(args) -> ModelConfig:
    if args.config:
        if not os.path.exists(args.config):
            raise CliError(f"config file not found: {args.config}")
        cfg = load_config(args.config)
    else:
        cfg = ModelConfig()
    if getattr(args, "seed", None) is not None:
        cfg = cfg.replace(seed=args.seed)
    return cfg.validate()


def _build_model(cfg: ModelConfig, ckpt: str | None) -> CENet:
    model = CENet(cfg)
    if ckpt:
        if not os.path.exists(ckpt):
            raise CliError(f"checkpoint not found: {ckpt}")
        model.params.load_state(load_checkpoint(ckpt))
    return model


def cmd_forward(args) -> int:
    cfg = _load_cfg(args)
    if not os.path.exists(args.input):
        raise CliError(f"input image not found: {args.input}")
    image = read_pgm(args.input)
    _, _, h, w = image.shape
    cfg = cfg.replace(input_hw=(h, w), in_channels=1).validate()
    model = _build_model(cfg, args.ckpt)
    logits = model.predict_logits(image.data)
    dump_features(args.out, logits, mode="csv")
    print(f"wrote logits {logits.shape} to {args.out}")
    return 0


def cmd_gradcheck(args) -> int:
    from .cfam import ContextAttentionStage
    from .dseb import DualEnhancementBlock
    from .params import ParamSet, SplitMix64

    cfg = _load_cfg(args)
    rng = SplitMix64(cfg.seed + 17)

    def draw(shape, low=-1.0, high=1.0):
        return T.Tensor(rng.uniform(int(np.prod(shape)), low, high).reshape(shape))

    if args.block == "model":
        small = cfg.replace(input_hw=(32, 32))
        model = CENet(small)
        x = draw((1, small.in_channels, 32, 32), 0.0, 1.0)
        # mean keeps the objective O(1) so FD noise stays below the abs floor
        fn = lambda: T.tmean(model.forward(x))
        params = model.params
    else:
        params = ParamSet()
        prng = SplitMix64(cfg.seed)
        if args.block == "dseb":
            block = DualEnhancementBlock(params, "dseb", 4, 1, prng,
                                         enable_edge=cfg.enable_fea,
                                         enable_attention=cfg.enable_diffatt,
                                         sequential=cfg.dseb_sequential)
            enc = draw((1, 4, 4, 4))
            dec = draw((1, 4, 4, 4))
            fn = lambda: T.tsum(block.forward(enc, dec))
        else:
            block = ContextAttentionStage(params, "cfam", 16, prng, cfg.dilations,
                                          enable_ccu=cfg.enable_ccu,
                                          enable_wnlb=cfg.enable_wnlb)
            x = draw((1, 16, 6, 6))
            fn = lambda: T.tsum(block.forward(x))
    reports = finite_diff_check(fn, params, tol_rel=args.tol)
    for r in reports:
        print(r.row())
    ok = all_passed(reports)
    print(f"gradcheck {args.block}: {'all passed' if ok else 'FAILED'} "
          f"({sum(r.passed for r in reports)}/{len(reports)})")
    return 0 if ok else 1


def cmd_train(args) -> int:
    cfg = _load_cfg(args)
    model, losses = _train(cfg, args.steps, args.lr, args.opt)
    save_checkpoint(args.out, model.params)
    if args.trace:
        save_loss_trace(args.trace, losses)
    print(f"trained {args.steps} steps; final loss {losses[-1]:.6f}; checkpoint {args.out}")
    return 0


def _train(cfg, steps, lr, opt):
    from .train import train_loop
    return train_loop(cfg, steps, lr=lr, opt=opt)


def _parse_data_spec(spec: str) -> int:
    kind, _, seed = spec.partition(":")
    if kind != "synth" or not seed:
        raise CliError(f"unsupported data spec {spec!r}; expected synth:<seed>")
    try:
        return int(seed)
    except ValueError:
        raise CliError(f"bad seed in data spec {spec!r}")


def _evaluate(model: CENet, cfg: ModelConfig, data_seed: int, n: int = 32):
    samples = synth_dataset(n, cfg.input_hw, cfg.num_classes, data_seed)
    rows = []
    for cls in range(cfg.num_classes):
        dices, hds, accs = [], [], []
        for s in samples:
            pred = np.argmax(model.predict_logits(s.image), axis=1)[0]
            dices.append(dice_score(pred, s.mask, cls))
            h = hd95(pred, s.mask, cls)
            if h is not None:
                hds.append(h)
            accs.append(pixel_accuracy(pred, s.mask))
        rows.append({
            "class": cls,
            "dice": float(np.mean(dices)),
            "hd95": float(np.mean(hds)) if hds else float("nan"),
            "acc": float(np.mean(accs)),
        })
    return rows


def _write_metrics_csv(path: str, rows) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("class,dice,hd95,acc\n")
        for row in rows:
            fh.write(f"{row['class']},{row['dice']!r},{row['hd95']!r},{row['acc']!r}\n")


def cmd_eval(args) -> int:
    cfg = _load_cfg(args)
    model = _build_model(cfg, args.ckpt)
    rows = _evaluate(model, cfg, _parse_data_spec(args.data))
    _write_metrics_csv(args.report, rows)
    for row in rows:
        print(f"class {row['class']}: dice={row['dice']:.4f} "
              f"hd95={row['hd95']:.4f} acc={row['acc']:.4f}")
    return 0


ABLATION_ROWS = [
    # (enable_fea, enable_diffatt, enable_wnlb, enable_ccu)
    (False, False, False, False),
    (True, False, True, False),
    (True, True, False, False),
    (True, True, True, False),
    (True, True, True, True),
]


def cmd_ablate(args) -> int:
    cfg = _load_cfg(args)
    os.makedirs(args.out, exist_ok=True)
    summary_path = os.path.join(args.out, "ablation.csv")
    with open(summary_path, "w", encoding="utf-8") as fh:
        fh.write("fea,diffatt,wnlb,ccu,final_loss,fg_dice\n")
        for row_idx, (fea, datt, wnlb, ccu) in enumerate(ABLATION_ROWS):
            row_cfg = cfg.replace(enable_fea=fea, enable_diffatt=datt,
                                  enable_wnlb=wnlb, enable_ccu=ccu)
            model, losses = _train(row_cfg, args.steps, args.lr, args.opt)
            rows = _evaluate(model, row_cfg, row_cfg.seed + 424243, n=8)
            fg_dice = float(np.mean([r["dice"] for r in rows[1:]]))
            _write_metrics_csv(os.path.join(args.out, f"row{row_idx}.csv"), rows)
            fh.write(f"{fea},{datt},{wnlb},{ccu},{losses[-1]!r},{fg_dice!r}\n")
            print(f"row {row_idx} fea={fea} diffatt={datt} wnlb={wnlb} ccu={ccu}: "
                  f"loss={losses[-1]:.4f} fg_dice={fg_dice:.4f}")
    print(f"wrote {summary_path}")
    return 0


def cmd_dump_features(args) -> int:
    cfg = _load_cfg(args)
    if not os.path.exists(args.input):
        raise CliError(f"input image not found: {args.input}")
    image = read_pgm(args.input)
    _, _, h, w = image.shape
    cfg = cfg.replace(input_hw=(h, w), in_channels=1).validate()
    model = _build_model(cfg, args.ckpt)
    with T.no_grad():
        feats = model.encoder.forward(T.Tensor(image.data))
    stages = {f"enc{i + 1}": f for i, f in enumerate(feats)}
    if args.stage not in stages:
        raise CliError(f"unknown stage {args.stage!r}; choose from {sorted(stages)}")
    dump_features(args.out, stages[args.stage], mode=args.mode)
    print(f"wrote {args.stage} features {stages[args.stage].shape} to {args.out}")
    return 0


def cmd_info(args) -> int:
    cfg = _load_cfg(args)
    model = CENet(cfg)
    print(f"parameters: {model.param_count()}")
    print(f"input: {cfg.in_channels}x{cfg.input_hw[0]}x{cfg.input_hw[1]}, "
          f"classes: {cfg.num_classes}")
    for i, (c, h, w) in enumerate(model.stage_shapes(), start=1):
        print(f"stage {i}: {c}x{h}x{w}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cenet", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, seed=True):
        p.add_argument("--config", help="flat key=value config file")
        if seed:
            p.add_argument("--seed", type=int, default=None, help="override config seed")

    p = sub.add_parser("forward", help="one inference pass on a PGM image")
    common(p)
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--ckpt", default=None)
    p.set_defaults(fn=cmd_forward)

    p = sub.add_parser("gradcheck", help="finite-difference audit of gradients")
    common(p)
    p.add_argument("--block", choices=("dseb", "cfam", "model"), default="model")
    p.add_argument("--tol", type=float, default=1e-4)
    p.set_defaults(fn=cmd_gradcheck)

    p = sub.add_parser("train", help="train on synthetic data")
    common(p)
    p.add_argument("--steps", type=int, required=True)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--trace", default=None, help="loss trace CSV path")
    p.add_argument("--lr", type=float, default=3e-3)
    p.add_argument("--opt", choices=("sgd", "adam"), default="adam")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on synthetic data")
    common(p)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True, help="synth:<seed>")
    p.add_argument("--report", required=True, help="metrics CSV path")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("ablate", help="train all component-toggle rows")
    common(p)
    p.add_argument("--steps", type=int, required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--lr", type=float, default=3e-3)
    p.add_argument("--opt", choices=("sgd", "adam"), default="adam")
    p.set_defaults(fn=cmd_ablate)

    p = sub.add_parser("dump-features", help="export intermediate feature maps")
    common(p)
    p.add_argument("--input", required=True)
    p.add_argument("--stage", default="enc1")
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=("csv", "pgm-grid"), default="csv")
    p.add_argument("--ckpt", default=None)
    p.set_defaults(fn=cmd_dump_features)

    p = sub.add_parser("info", help="print parameter count and stage shapes")
    common(p)
    p.set_defaults(fn=cmd_info)
    return parser


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.fn(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run())
