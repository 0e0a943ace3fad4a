"""``casi`` command line: datasets, training, inference, baselines, evaluation.

Every subcommand resolves its configuration as built-in defaults, then an
optional ``--config`` key=value file, then explicit flags. The effective
configuration is echoed as canonical JSON and embedded in reports.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import data_io, gradcheck, metrics, trainer
from . import model as Mdl
from .checkpoint import CheckpointError, canonical_json, load_checkpoint, save_checkpoint
from .tensor import ContractError, DimensionError

log = logging.getLogger("casi")


class UsageError(Exception):
    pass


# (flag dest, type, default) per subcommand; these are the keys a --config file may set
OPTIONS: dict[str, dict[str, tuple[type, object]]] = {
    "synth-data": {
        "seed": (int, 0),
        "size": (int, 32),
        "per_class": (int, 16),
        "test_per_class": (int, 4),
        "grain": (float, 0.0),
    },
    "pretrain": {
        "seed": (int, 0),
        "epochs": (int, 20),
        "batch": (int, 8),
        "lr": (float, 1e-3),
        "base_channels": (int, 16),
    },
    "train": {
        "seed": (int, 0),
        "size": (int, 32),
        "overlap": (int, 4),
        "lambda_adv": (float, 0.001),
        "lambda_per": (float, 0.2),
        "diters": (int, 1),
        "iters": (int, 300),
        "batch": (int, 8),
        "lr": (float, 2e-4),
        "base_channels": (int, 16),
        "variant": (str, "casi"),
        "checkpoint_interval": (int, 0),
    },
    "inpaint": {},
    "baseline": {"method": (str, "mean")},
    "eval": {"threads": (int, 1), "full_image": (bool, False), "similarity_crop": (bool, False)},
    "gradcheck": {"seeds": (int, 10), "tol": (float, 1e-4)},
}


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def read_config_file(path, command: str) -> dict:
    """``key = value`` lines; ``#`` comments; keys use flag names (dashes or underscores)."""
    spec = OPTIONS[command]
    out = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot read config file: {exc}") from None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in spec:
            raise UsageError(f"{path}:{lineno}: unknown key {key!r} for {command}")
        typ = spec[key][0]
        try:
            out[key] = _parse_bool(value) if typ is bool else typ(value)
        except ValueError as exc:
            raise UsageError(f"{path}:{lineno}: {exc}") from None
    return out


def resolve(command: str, args: argparse.Namespace) -> dict:
    cfg = {k: default for k, (_, default) in OPTIONS[command].items()}
    if args.config:
        cfg.update(read_config_file(args.config, command))
    for k in OPTIONS[command]:
        v = getattr(args, k, None)
        if v is not None:
            cfg[k] = v
    return cfg


# ------------------------------------------------------------------ parser


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _add_options(p: argparse.ArgumentParser, command: str) -> None:
    for key, (typ, default) in OPTIONS[command].items():
        flag = "--" + key.replace("_", "-")
        if typ is bool:
            p.add_argument(flag, action="store_const", const=True, default=None, help=f"(default {default})")
        elif key == "variant":
            p.add_argument(flag, choices=trainer.VARIANTS, default=None, help=f"(default {default})")
        elif key == "method":
            p.add_argument(flag, choices=("mean", "nn"), default=None, help=f"(default {default})")
        else:
            p.add_argument(flag, type=typ, default=None, help=f"(default {default})")
    p.add_argument("--config", help="key=value file; flags take precedence")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="casi", description="Context-aware semantic inpainting toolkit.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth-data", help="render the synthetic labelled dataset")
    p.add_argument("--out", required=True)
    _add_options(p, "synth-data")

    p = sub.add_parser("pretrain", help="train the feature classifier")
    p.add_argument("--train", required=True, help="training manifest (.tsv)")
    p.add_argument("--heldout", help="held-out manifest for accuracy")
    p.add_argument("--out", required=True, help="output checkpoint path")
    _add_options(p, "pretrain")

    p = sub.add_parser("train", help="adversarial inpainting training")
    p.add_argument("--train", required=True, help="training manifest (.tsv)")
    p.add_argument("--classifier", help="pretrained classifier checkpoint")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--out", required=True, help="output directory")
    _add_options(p, "train")

    p = sub.add_parser("inpaint", help="complete images with a trained generator")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True, help="manifest (.tsv) of images to complete")
    p.add_argument("--mask", help="binary PGM mask; default is the centre square")
    p.add_argument("--out", required=True)
    _add_options(p, "inpaint")

    p = sub.add_parser("baseline", help="mean-fill or nearest-neighbour completion")
    p.add_argument("--input", required=True, help="manifest (.tsv) of images to complete")
    p.add_argument("--train", help="training manifest, for --method nn")
    p.add_argument("--mask", help="binary PGM mask; default is the centre square")
    p.add_argument("--out", required=True)
    _add_options(p, "baseline")

    p = sub.add_parser("eval", help="metric report of results against ground truth")
    p.add_argument("--truth", required=True, help="ground-truth manifest (.tsv)")
    p.add_argument("--results", required=True, help="directory laid out like the truth manifest")
    p.add_argument("--mask", help="binary PGM mask; default is the centre square")
    p.add_argument("--probs", help="external CSV sample_id,p_x,p_z for SME")
    p.add_argument("--classifier", help="classifier checkpoint for SME")
    p.add_argument("--out", required=True)
    _add_options(p, "eval")

    p = sub.add_parser("gradcheck", help="finite-difference check of every primitive")
    _add_options(p, "gradcheck")
    return parser


# ---------------------------------------------------------------- helpers


def _echo(command: str, cfg: dict) -> None:
    print(f"config {command} {canonical_json(cfg)}")


def _mask_for(args, h: int, w: int) -> np.ndarray:
    if args.mask:
        m = data_io.read_mask(args.mask).astype(np.float64)
        if m.shape != (h, w):
            raise DimensionError(f"mask is {m.shape}, images are {(h, w)}")
        return m
    return Mdl.make_center_mask(h, w, 0).mask


def _write_outputs(manifest: data_io.Manifest, images: np.ndarray, out: Path) -> None:
    for (rel, _), img in zip(manifest.entries, images):
        data_io.write_image(img, out / rel)
    data_io.write_manifest(
        data_io.Manifest(manifest.entries, manifest.split, manifest.categories, out),
        out / f"{manifest.split}.tsv",
    )


def _write_json(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


# ------------------------------------------------------------ subcommands


def cmd_synth_data(args, cfg) -> None:
    sc = data_io.SynthConfig(
        cfg["per_class"], cfg["size"], cfg["seed"], test_per_class=cfg["test_per_class"], grain=cfg["grain"]
    )
    made = data_io.synth_dataset(sc, args.out)
    for split, man in made.items():
        print(f"{split}: {len(man)} images -> {Path(args.out) / (split + '.tsv')}")


def cmd_pretrain(args, cfg) -> None:
    man = data_io.load_manifest(args.train)
    pc = trainer.PretrainConfig(
        epochs=cfg["epochs"], batch_size=cfg["batch"], lr=cfg["lr"], seed=cfg["seed"], base_channels=cfg["base_channels"]
    )
    heldout = None
    if args.heldout:
        hm = data_io.load_manifest(args.heldout)
        heldout = (hm.load_images(), hm.labels())
    res = trainer.pretrain_classifier(man.load_images(), man.labels(), pc, heldout)
    meta = {"pretrain": cfg, "categories": man.categories}
    save_checkpoint(trainer.classifier_checkpoint(res.net, meta), args.out)
    print(f"initial loss {res.initial_loss:.6f}  final loss {res.epoch_losses[-1]:.6f}")
    print(f"train accuracy {res.train_accuracy:.4f}")
    if res.heldout_accuracy is not None:
        print(f"held-out accuracy {res.heldout_accuracy:.4f}")


def _train_config(cfg: dict, manifest: str) -> trainer.TrainConfig:
    return trainer.TrainConfig(
        max_iterations=cfg["iters"],
        d_iters=cfg["diters"],
        batch_size=cfg["batch"],
        image_size=cfg["size"],
        overlap=cfg["overlap"],
        lambda_adv=cfg["lambda_adv"],
        lambda_per=cfg["lambda_per"],
        lr=cfg["lr"],
        seed=cfg["seed"],
        base_channels=cfg["base_channels"],
        variant=cfg["variant"],
        checkpoint_interval=cfg["checkpoint_interval"],
        manifest=manifest,
    )


def cmd_train(args, cfg) -> None:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    man = data_io.load_manifest(args.train)
    tc = _train_config(cfg, str(args.train))
    classifier = None
    if args.classifier:
        classifier = trainer.classifier_from_checkpoint(load_checkpoint(args.classifier))
    resume = None
    if args.resume:
        resume = load_checkpoint(args.resume)
    ckpt = out / "model.ckpt"
    st = trainer.train_casi(tc, man.load_images(), classifier, resume=resume, checkpoint_path=ckpt)
    save_checkpoint(trainer.state_to_checkpoint(st), ckpt)
    trainer.write_curve_csv(st.curve, out / "curve.csv")
    _write_json({"config": cfg, "train_config": tc.to_dict()}, out / "run.json")
    first, last = st.curve[0], st.curve[-1]
    print(f"L_inp iteration {first[0]}: {first[4]:.6f}  iteration {last[0]}: {last[4]:.6f}")
    print(f"checkpoint -> {ckpt}")


def cmd_inpaint(args, cfg) -> None:
    ck = load_checkpoint(args.checkpoint)
    gen = trainer.generator_from_checkpoint(ck)
    man = data_io.load_manifest(args.input)
    images = man.load_images()
    mask = _mask_for(args, *images.shape[1:3])
    result = trainer.inpaint_batch(gen, images, mask)
    _write_outputs(man, result, Path(args.out))
    print(f"{len(result)} composites -> {args.out}")


def cmd_baseline(args, cfg) -> None:
    man = data_io.load_manifest(args.input)
    images = man.load_images()
    mask = _mask_for(args, *images.shape[1:3])
    if cfg["method"] == "nn":
        if not args.train:
            raise UsageError("--method nn needs --train")
        pool = data_io.load_manifest(args.train).load_images()
        result = np.stack([data_io.nn_inpaint(im, mask, pool)[0] for im in images])
    else:
        result = np.stack([data_io.mean_fill(im, mask) for im in images])
    _write_outputs(man, result, Path(args.out))
    print(f"{len(result)} {cfg['method']} completions -> {args.out}")


def cmd_eval(args, cfg) -> None:
    truth = data_io.load_manifest(args.truth)
    results_root = Path(args.results)
    gt = truth.load_images()
    res = np.stack([data_io.read_image(results_root / rel).pixels for rel, _ in truth.entries])
    if res.shape != gt.shape:
        raise DimensionError(f"results {res.shape} differ from ground truth {gt.shape}")
    mask = _mask_for(args, *gt.shape[1:3])

    def one(i):
        return metrics.evaluate_pair(gt[i], res[i], mask, cfg["full_image"], cfg["similarity_crop"])

    with ThreadPoolExecutor(max_workers=max(1, cfg["threads"])) as pool:
        rows = list(pool.map(one, range(len(gt))))

    probs = _sme_probs(args, truth, gt, res)
    for (rel, _), row in zip(truth.entries, rows):
        row["sample_id"] = rel
        p = probs.get(rel) if probs is not None else None
        if probs is not None and p is None:
            raise ContractError(f"no SME probabilities for {rel}")
        row["sme"] = metrics.sme_term(p) if p is not None else None
    report = metrics.MetricReport(rows)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report.write_csv(out / "report.csv")
    _write_json(report.to_json_obj(cfg), out / "report.json")
    agg = report.aggregate()
    print("  ".join(f"{k} {'-' if agg[k] is None else format(agg[k], '.6g')}" for k in metrics.METRIC_FIELDS))


def _sme_probs(args, truth, gt, res):
    if args.probs and args.classifier:
        raise UsageError("give at most one of --probs and --classifier")
    if args.probs:
        return metrics.read_probs_csv(args.probs)
    if args.classifier:
        net = trainer.classifier_from_checkpoint(load_checkpoint(args.classifier))
        labels = truth.labels()
        r = np.arange(len(labels))
        px = trainer.classify(net, trainer.to_nchw(gt))[r, labels]
        pz = trainer.classify(net, trainer.to_nchw(res))[r, labels]
        return {
            rel: metrics.ClassifierProbs(float(a), float(b), rel, "builtin")
            for (rel, _), a, b in zip(truth.entries, px, pz)
        }
    return None


def cmd_gradcheck(args, cfg) -> int:
    rows, _ = gradcheck.run_suite(range(cfg["seeds"]), cfg["tol"])
    print(gradcheck.format_table(rows))
    return 0 if all(r.passed for r in rows) else 1


COMMANDS = {
    "synth-data": cmd_synth_data,
    "pretrain": cmd_pretrain,
    "train": cmd_train,
    "inpaint": cmd_inpaint,
    "baseline": cmd_baseline,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
}


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        cfg = resolve(args.command, args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 2
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    _echo(args.command, cfg)
    try:
        code = COMMANDS[args.command](args, cfg)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 2
    except (OSError, ValueError, CheckpointError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return int(code or 0)


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
