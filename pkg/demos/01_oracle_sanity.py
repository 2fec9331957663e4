"""Sanity walk with no training: every analytic piece agrees with simulation.

Three short checks, each printing measured vs expected:

  1. the forward Euler cloud lands on the closed-form kernel moments,
  2. the reverse sampler driven by the exact conditional score reproduces
     the conditional law of the pair world (moments and KS distance),
  3. the conditional channels never move during reverse integration.

Runs in a few seconds; everything is seeded.
"""

import math

import numpy as np

from mmsynth import rng
from mmsynth.modality import enumerate_partitions
from mmsynth.sampling import OracleScoreSource, SamplerConfig, generate, generate_many
from mmsynth.sde import VPSDE
from mmsynth.verification import ks_statistic
from mmsynth.worlds import gaussian_pair


def forward_cloud():
    print("== 1. forward SDE vs closed-form kernel ==")
    sde = VPSDE()
    paths, steps, x0 = 4000, 2000, 1.2
    dt = 1.0 / steps
    x = np.full(paths, x0)
    for k in range(steps):
        beta = sde.beta(k * dt)
        z = rng.randn((paths,), rng.derive_seed(101, k))
        x = x - 0.5 * beta * x * dt + math.sqrt(beta * dt) * z
        t = (k + 1) * dt
        for tt in (0.25, 0.5, 1.0):
            if abs(t - tt) < dt / 2:
                al, sg = float(sde.alpha(tt)), float(sde.sigma(tt))
                print(f"  t={tt:4.2f}  mean {x.mean():+.4f} (kernel {al * x0:+.4f})"
                      f"   std {x.std():.4f} (kernel {sg:.4f})")
    print()


def reverse_oracle():
    print("== 2. reverse sampler with the exact score ==")
    world = gaussian_pair(0.8)
    part = enumerate_partitions(world.mset)[0]   # synthesize m0 given m1
    b = 0.5
    draws = generate_many(OracleScoreSource(world, VPSDE()),
                          np.full((1, 1, 1), b), part,
                          SamplerConfig(steps=500), seed=7, n_draws=4000)
    flat = draws.reshape(-1)
    mean_want, var_want = 0.8 * b, 0.36
    ks = ks_statistic(flat, mean_want, var_want)
    print(f"  E[m0|m1={b}]   measured {flat.mean():+.4f}   closed form {mean_want:+.4f}")
    print(f"  Var[m0|m1]    measured {flat.var(ddof=1):.4f}   closed form {var_want:.4f}")
    print(f"  KS distance to the conditional law: {ks:.4f}")
    print()


def frozen_conditionals():
    print("== 3. conditional channels are bit-frozen ==")
    world = gaussian_pair(0.8)
    part = enumerate_partitions(world.mset)[0]
    b = np.full((1, 1, 1), -1.3)
    hits = []

    def watch(k, x):
        hits.append(np.array_equal(x[0, list(part.cond)], b))

    generate(OracleScoreSource(world, VPSDE()), b, part,
             SamplerConfig(steps=400), seed=9, watch=watch)
    print(f"  {sum(hits)}/{len(hits)} integrator steps kept m1 bit-identical")
    print()


if __name__ == "__main__":
    forward_cloud()
    reverse_oracle()
    frozen_conditionals()
    print("all three checks above should read as equalities up to Monte Carlo noise")
