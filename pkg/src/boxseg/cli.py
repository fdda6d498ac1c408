"""``boxseg`` command line: gen-data, train, proxy, eval, gradcheck.

Exit status: 0 success, 1 usage error, 2 data error (bad path or manifest),
3 numeric failure (non-finite loss, failed gradient check).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import synthdata
from .diffcore import FormatError, NonFiniteError
from .fileio import (ManifestError, image_pixels, instance_mask, load_manifest, rle_encode,
                     save_manifest, write_pgm)
from .geometry import Box
from .gradsuite import run_suite
from .heads import Model
from .losses import LossConfig
from .metrics import InstanceRecord, evaluate
from .proxymask import (DEFAULT_ALPHA, DEFAULT_DROP_THRESHOLD, ProxyAnnotation, drop_masks,
                        merge_annotations, predict_proxies)
from .augment import PROXY_SIZE
from .sampler import FIXED, RANDOM, SamplerConfig
from .trainer import JOINT, MIL_ONLY, TrainConfig, TrainData, load_salient, load_val, load_weak, train

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
VAL_SEED_OFFSET = 100_003
CHECKPOINT = "checkpoint.bxt"
TRAIN_LOG = "train_log.jsonl"
CONFIG_ECHO = "config.json"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


# ---------------------------------------------------------------- gen-data

def cmd_gen_data(args) -> int:
    out = Path(args.out)
    synthdata.generate(synthdata.WEAK, args.weak, args.seed, out / "weak", args.weak_size)
    synthdata.generate(synthdata.SALIENT, args.salient, args.seed, out / "salient", args.salient_size)
    if args.val:
        synthdata.generate(synthdata.WEAK, args.val, args.seed + VAL_SEED_OFFSET, out / "val", args.weak_size)
    _write_json(out / CONFIG_ECHO, {"command": "gen-data", **_plain(vars(args))})
    print(f"wrote {args.weak} weak, {args.salient} salient and {args.val} validation images to {out}")
    return EXIT_OK


# ---------------------------------------------------------------- train

_TRAIN_FLAGS = ("epochs", "lr", "momentum", "weight_decay", "mode", "seed", "patch_size",
                "clip_norm", "head_lr_scale")


def effective_train_config(args) -> tuple:
    """(TrainConfig, paths) from defaults, then ``--config``, then explicit flags."""
    base = TrainConfig().to_dict()
    paths = {"weak": None, "salient": None, "val": None}
    if args.config:
        try:
            doc = json.loads(Path(args.config).read_text())
        except FileNotFoundError:
            raise ManifestError(f"{args.config}: no such config file") from None
        except json.JSONDecodeError as exc:
            raise ManifestError(f"{args.config}: invalid JSON ({exc.msg})") from None
        train_doc = doc.get("train", {})
        for k in base:
            if k in train_doc:
                base[k] = train_doc[k]
        paths.update({k: v for k, v in doc.get("paths", {}).items() if k in paths})
    for k in _TRAIN_FLAGS:
        v = getattr(args, k)
        if v is not None:
            base[k] = v
    loss = dict(base["loss_cfg"])
    if args.alpha is not None:
        loss["alpha"] = args.alpha
    sampler = dict(base["sampler_cfg"])
    if args.ratio is not None:
        r = SamplerConfig.from_ratio(args.ratio)
        sampler["weak_per_batch"], sampler["salient_per_batch"] = r.weak_per_batch, r.salient_per_batch
    if args.sampler is not None:
        sampler["mode"] = args.sampler
    if args.seed is not None:
        sampler["seed"] = args.seed
    base["loss_cfg"], base["sampler_cfg"] = loss, sampler
    for k in paths:
        v = getattr(args, k)
        if v is not None:
            paths[k] = str(v)
    if paths["weak"] is None or paths["salient"] is None:
        raise UsageError("train needs --weak and --salient manifests (flags or --config)")
    return TrainConfig.from_dict(base), paths


def cmd_train(args) -> int:
    try:
        cfg, paths = effective_train_config(args)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ManifestError):
            raise
        raise UsageError(str(exc)) from None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    echo = {"command": "train", "paths": paths, "train": cfg.to_dict()}
    _write_json(out / CONFIG_ECHO, echo)
    print(json.dumps(echo, sort_keys=True))
    data = TrainData(load_weak(paths["weak"]), load_salient(paths["salient"]))
    val = load_val(paths["val"]) if paths["val"] else None
    result = train(data, cfg, val, out / CHECKPOINT, out / TRAIN_LOG)
    last = result.log[-1]
    print(f"trained {cfg.epochs} epochs ({cfg.mode}); checkpoint {out / CHECKPOINT}; "
          f"last record {json.dumps(last, sort_keys=True)}")
    return EXIT_OK


# ---------------------------------------------------------------- proxy

def cmd_proxy(args) -> int:
    if not 0.0 <= args.drop_thresh <= 1.0:
        raise UsageError(f"--drop-thresh must lie in [0, 1], got {args.drop_thresh}")
    if not 0.0 <= args.alpha <= 1.0:
        raise UsageError(f"--alpha must lie in [0, 1], got {args.alpha}")
    if not Path(args.checkpoint).exists():
        raise ManifestError(f"{args.checkpoint}: checkpoint not found")
    model = Model.load(args.checkpoint)
    doc = load_manifest(args.manifest)
    out = Path(args.out)
    (out / "masks").mkdir(parents=True, exist_ok=True)

    entries, all_anns = [], []
    for img in doc["images"]:
        pixels = image_pixels(doc, img)
        boxes = [Box.from_list(i["box"]) for i in img["instances"]]
        masks = predict_proxies(pixels, boxes, model, args.alpha, args.proxy_size)
        anns = [ProxyAnnotation.from_mask(i["id"], img["id"], i["class"], b, m)
                for i, b, m in zip(img["instances"], boxes, masks)]
        anns = merge_annotations(anns)
        all_anns += anns
        entries.append((img, anns))
    flagged, drop_rate = drop_masks(all_anns, args.drop_thresh) if all_anns else ([], 0.0)
    flag_iter = iter(flagged)

    src_root = Path(doc["_root"])
    images = []
    for img, anns in entries:
        rel = os.path.relpath(src_root / img["file"], out)
        entry = {k: img[k] for k in ("id", "width", "height") if k in img}
        entry.update({"file": rel, "instances": []})
        for _ in anns:
            a = next(flag_iter)
            inst = {"id": a.instance_id, "class": a.class_label, "box": a.gt_box.to_list(),
                    "ignore": bool(a.ignore), "agreement": round(float(a.agreement), 12), "score": 1.0}
            if args.rle:
                inst["rle"] = rle_encode(a.mask)
            else:
                write_pgm(out / "masks" / f"{a.instance_id}.pgm", a.mask)
                inst["mask_file"] = f"masks/{a.instance_id}.pgm"
            entry["instances"].append(inst)
        images.append(entry)
    save_manifest(out / "manifest.json", {"images": images, "drop_threshold": args.drop_thresh,
                                          "drop_rate": drop_rate, "alpha": args.alpha})
    print(f"{len(all_anns)} proxy masks, drop threshold {args.drop_thresh}: drop_rate {drop_rate:.4f}")
    return EXIT_OK


# ---------------------------------------------------------------- eval

def eval_records(pred_doc: dict, gt_doc: dict) -> list:
    preds = {}
    for img in pred_doc["images"]:
        for inst in img["instances"]:
            preds[inst["id"]] = (inst, img)
    records = []
    for img in gt_doc["images"]:
        for inst in img["instances"]:
            gt = instance_mask(gt_doc, inst)
            if inst["id"] in preds:
                p_inst, _ = preds[inst["id"]]
                pred = instance_mask(pred_doc, p_inst)
                score = float(p_inst.get("score", 1.0))
            else:
                pred, score = gt & False, 0.0
            if pred.shape != gt.shape:
                raise ManifestError(f"instance {inst['id']}: prediction {pred.shape} vs GT {gt.shape}")
            records.append(InstanceRecord(inst["class"], gt, pred, score, img["id"]))
    if not records:
        raise ManifestError("eval: ground-truth manifest holds no instances")
    return records


def cmd_eval(args) -> int:
    report = evaluate(eval_records(load_manifest(args.pred), load_manifest(args.gt)))
    if args.out:
        Path(args.out).write_text(report.to_json() + "\n")
    print(report.to_table(), end="")
    return EXIT_OK


# ---------------------------------------------------------------- gradcheck

def cmd_gradcheck(args) -> int:
    results = run_suite(range(args.seeds), args.size)
    worst = {}
    for r in results:
        worst[r.name] = max(worst.get(r.name, 0.0), r.max_rel_error)
    ok = all(r.passed for r in results)
    for name, err in worst.items():
        print(f"{name:12s} max rel err {err:.3e}  {'PASS' if err < 1e-4 else 'FAIL'}")
    print("gradcheck", "PASS" if ok else "FAIL")
    return EXIT_OK if ok else EXIT_NUMERIC


# ---------------------------------------------------------------- entry

def _plain(d: dict) -> dict:
    return {k: v for k, v in d.items() if k != "func"}


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="boxseg", description="Box-supervised class-agnostic segmentation toolkit.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-data", help="render the synthetic weak/salient/validation splits")
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--weak", type=int, default=500, help="weak images")
    g.add_argument("--salient", type=int, default=100, help="salient images")
    g.add_argument("--val", type=int, default=100, help="held-out weak images with masks (0 to skip)")
    g.add_argument("--weak-size", type=int, default=None)
    g.add_argument("--salient-size", type=int, default=None)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="joint or MIL-only training")
    t.add_argument("--weak", help="weak manifest")
    t.add_argument("--salient", help="salient manifest")
    t.add_argument("--val", help="held-out manifest with masks (optional)")
    t.add_argument("--out", required=True)
    t.add_argument("--config", help="config echo from a previous run")
    t.add_argument("--mode", choices=(JOINT, MIL_ONLY))
    t.add_argument("--ratio", help="weak:salient samples per batch (default 9:7)")
    t.add_argument("--sampler", choices=(FIXED, RANDOM))
    t.add_argument("--alpha", type=float, help=f"salient weight in the blend (default {LossConfig.alpha})")
    t.add_argument("--lr", type=float, help="learning rate (default 4e-3)")
    t.add_argument("--momentum", type=float)
    t.add_argument("--weight-decay", type=float)
    t.add_argument("--epochs", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--patch-size", type=int, help="training patch side (default 288)")
    t.add_argument("--clip-norm", type=float, help="per-tensor gradient norm cap")
    t.add_argument("--head-lr-scale", type=float, help="lr multiplier for salient head and transfer MLP")
    t.set_defaults(func=cmd_train)

    x = sub.add_parser("proxy", help="predict, merge and drop proxy masks")
    x.add_argument("--checkpoint", required=True)
    x.add_argument("--manifest", required=True, help="manifest with boxes")
    x.add_argument("--out", required=True)
    x.add_argument("--alpha", type=float, default=DEFAULT_ALPHA)
    x.add_argument("--drop-thresh", type=float, default=DEFAULT_DROP_THRESHOLD)
    x.add_argument("--proxy-size", type=int, default=PROXY_SIZE)
    x.add_argument("--rle", action="store_true", help="store masks as RLE instead of PGM files")
    x.set_defaults(func=cmd_proxy)

    e = sub.add_parser("eval", help="score predicted masks against ground truth")
    e.add_argument("--pred", required=True)
    e.add_argument("--gt", required=True)
    e.add_argument("--out", help="write the JSON report here")
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("gradcheck", help="finite-difference check of all losses")
    c.add_argument("--seeds", type=int, default=20)
    c.add_argument("--size", type=int, default=16)
    c.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"boxseg {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ManifestError, FormatError, OSError) as exc:
        print(f"boxseg {args.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NonFiniteError as exc:
        print(f"boxseg {args.command}: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"boxseg {args.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
