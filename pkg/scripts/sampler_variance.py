"""Output spread of the sampler family on the Gaussian task.

Runs the analytic posterior-mean denoiser from a fixed source value and
prints the variance of the outputs for several step counts and eta values,
next to the true conditional variance 1 - r^2.

    python3 scripts/sampler_variance.py --r 0.8 --n 20000
"""

import argparse

import numpy as np

from bridgelab.denoiser import AnalyticGaussianDenoiser
from bridgelab.sampler import SamplerConfig, dbim_sample
from bridgelab.schedule import VpSchedule


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--r", type=float, default=0.8)
    p.add_argument("--x", type=float, default=0.5)
    p.add_argument("--n", type=int, default=20_000)
    p.add_argument("--seed", type=int, default=2)
    p.add_argument("--steps", default="2,4,8,16,64,256")
    p.add_argument("--etas", default="0,0.5,1")
    args = p.parse_args()

    sched = VpSchedule()
    oracle = AnalyticGaussianDenoiser(args.r)
    x = np.full((args.n, 1), args.x)
    etas = [float(e) for e in args.etas.split(",")]
    print(f"true conditional variance {1 - args.r**2:.4f}")
    print("n_steps," + ",".join(f"var_eta_{e:g}" for e in etas))
    for steps in (int(s) for s in args.steps.split(",")):
        row = [dbim_sample(oracle, x, SamplerConfig(steps, e, args.seed), sched)[0].var() for e in etas]
        print(f"{steps}," + ",".join(f"{v:.4f}" for v in row))


if __name__ == "__main__":
    main()
