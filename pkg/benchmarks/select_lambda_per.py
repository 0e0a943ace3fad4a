"""Pick the perceptual-loss weight on a validation draw of the toy dataset.

    python3 benchmarks/select_lambda_per.py [--seeds 10,11] [--grid 0.2,0.05,0.02,0.01]

The validation draw (data seed 7) and training seeds are disjoint from the
ones the acceptance suite scores. Each candidate trains the full model for
300 iterations; the weight with the lowest mean held-out masked L2 wins.
The L2-only configuration and mean-fill are printed for reference.
"""

from __future__ import annotations

import argparse
import tempfile

import numpy as np

from casi_inpaint import data_io, metrics, model, trainer

GRAIN = 0.05


def score(truth, out, mask):
    return float(np.mean([metrics.pixel_error_report(a, b, mask)[1] for a, b in zip(truth, out)])), float(
        np.mean([metrics.entropy_errors(a, b, mask)[0] for a, b in zip(truth, out)])
    )


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", default="10,11")
    ap.add_argument("--grid", default="0.2,0.05,0.02,0.01")
    ap.add_argument("--data-seed", type=int, default=7)
    args = ap.parse_args()
    seeds = [int(s) for s in args.seeds.split(",")]
    grid = [float(g) for g in args.grid.split(",")]

    with tempfile.TemporaryDirectory() as tmp:
        toy = data_io.synth_dataset(data_io.SynthConfig(16, 32, args.data_seed, grain=GRAIN), f"{tmp}/toy")
        pre = data_io.synth_dataset(data_io.SynthConfig(128, 32, 1000, test_per_class=25, grain=GRAIN), f"{tmp}/pre")
        train, val = toy["train"].load_images(), toy["test"].load_images()
        cls = trainer.pretrain_classifier(pre["train"].load_images(), pre["train"].labels()).net

    mask = model.make_center_mask(32, 32, 4).mask
    mf = np.stack([data_io.mean_fill(im, mask) for im in val])
    print("mean-fill   l2 %.3f  lemse %.3f" % score(val, mf, mask))
    results = {}
    for per in [None, *grid]:
        rows = []
        for seed in seeds:
            adv = 0.0 if per is None else 0.001
            cfg = trainer.TrainConfig(seed=seed, lambda_adv=adv, lambda_per=per or 0.0)
            st = trainer.train_casi(cfg, train, cls)
            rows.append(score(val, trainer.inpaint_batch(st.generator, val, mask), mask))
        l2, le = np.mean(rows, axis=0)
        label = "L2-only" if per is None else f"per={per:g}"
        print(f"{label:<11} l2 {l2:.3f}  lemse {le:.3f}", flush=True)
        if per is not None:
            results[per] = l2
    print(f"selected lambda_per = {min(results, key=results.get):g}")


if __name__ == "__main__":
    main()
