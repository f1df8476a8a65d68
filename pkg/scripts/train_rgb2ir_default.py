"""Train the shipped RGB->IR bridge checkpoint and print its step-count sweep.

Data: 640 toy RGB->IR pairs at 16 px (seed 0); the first 512 train the
denoiser, the last 128 are held out for the sweep. Writes the checkpoint,
its loss curve and the sweep table into --out (default artifacts/).

    python3 scripts/train_rgb2ir_default.py            # about 15 minutes on one core
"""

import argparse
import os
import time

import numpy as np

from bridgelab.data import make_toy_translation
from bridgelab.denoiser import save_checkpoint
from bridgelab.pipeline import sweep_images, train_image_bridge
from bridgelab.sampler import best_row, write_sweep_csv
from bridgelab.schedule import VpSchedule
from bridgelab.trainer import TrainConfig

N_PAIRS, N_TRAIN, RES, SEED = 640, 512, 16, 0
STEPS = [1, 2, 5, 10, 20, 100]


def main():
    root = os.path.join(os.path.dirname(os.path.abspath(__file__)), os.pardir)
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", default=os.path.join(root, "artifacts"))
    p.add_argument("--iters", type=int, default=6000)
    p.add_argument("--width", type=int, default=16)
    args = p.parse_args()
    os.makedirs(args.out, exist_ok=True)

    sched = VpSchedule()
    ds = make_toy_translation("rgb2ir", N_PAIRS, RES, SEED)
    train, held_out = ds.subset(np.arange(N_TRAIN)), ds.subset(np.arange(N_TRAIN, N_PAIRS))
    cfg = TrainConfig(batch_size=32, n_iterations=args.iters, learning_rate=2e-3, seed=SEED, log_every=10)
    start = time.perf_counter()
    model, curve = train_image_bridge(train, cfg, sched, base_width=args.width)
    print(f"trained {args.iters} iterations in {time.perf_counter() - start:.0f} s")
    save_checkpoint(model, os.path.join(args.out, "rgb2ir_default.ckpt"), extra={"task": "rgb2ir"})
    curve.write_csv(os.path.join(args.out, "rgb2ir_default_loss.csv"))

    rows = sweep_images(model, held_out, STEPS, 0.0, sched, seed=0)
    write_sweep_csv(rows, os.path.join(args.out, "rgb2ir_default_sweep.csv"))
    print("n_steps,fid_norm,lpips_surrogate,l1,score")
    for r in rows:
        print(f"{r.n_steps},{r.fid_norm:.4f},{r.lpips:.4f},{r.l1:.4f},{r.score:.4f}")
    print(f"best: n_steps={best_row(rows).n_steps}")


if __name__ == "__main__":
    main()
