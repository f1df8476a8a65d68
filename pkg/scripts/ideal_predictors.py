"""Score of ideal predictors on the toy RGB->IR task.

The IR target carries per-scene quantities the RGB source cannot reveal
(object offsets, a heating gradient, an ambient offset). Two ideal
predictors bound what any sampler can reach under the composite score:

* the posterior mean, which renders the scene with every hidden quantity
  at its mean (what a one-step prediction aims for);
* an independent sample, which renders the same scene with fresh hidden
  quantities (what an exact sampler produces).

    python3 scripts/ideal_predictors.py --n 128 --res 16
"""

import argparse

import numpy as np
from scipy.ndimage import gaussian_filter

from bridgelab import data
from bridgelab.metrics import evaluate_images


def render(rng, labels, ids, res, hidden=True):
    img = data._IR[labels].copy()
    for k in range(1, ids.max() + 1):
        offset = rng.uniform(-data.IR_OBJECT_OFFSET, data.IR_OBJECT_OFFSET)
        img[ids == k] += offset if hidden else 0.0
    theta = rng.uniform(0, 2 * np.pi)
    yy, xx = (np.mgrid[0:res, 0:res] + 0.5) / res - 0.5
    ambient = rng.normal(0.0, data.IR_AMBIENT)
    if hidden:
        img += data.IR_GRADIENT * (np.cos(theta) * xx + np.sin(theta) * yy) + ambient
    return np.clip(gaussian_filter(img, 0.6), 0.0, 1.0)[None]


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--n", type=int, default=128)
    p.add_argument("--res", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()

    rng = np.random.default_rng(args.seed)
    target, mean, sample = [], [], []
    for _ in range(args.n):
        labels, ids = data._scene(rng, args.res)
        target.append(render(rng, labels, ids, args.res))
        mean.append(render(rng, labels, ids, args.res, hidden=False))
        sample.append(render(rng, labels, ids, args.res))
    target = np.array(target)
    print("predictor,fid_norm,lpips_surrogate,l1,score")
    for name, pred in (("posterior_mean", np.array(mean)), ("independent_sample", np.array(sample))):
        m = evaluate_images(pred, target)
        print(f"{name},{m['fid_norm']:.4f},{m['lpips']:.4f},{m['l1']:.4f},{m['score']:.4f}")


if __name__ == "__main__":
    main()
