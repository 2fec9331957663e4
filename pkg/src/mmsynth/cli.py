"""Command-line entry points.

Subcommands: make-data, train, sample, eval, oracle-check.  Exit codes:
0 success, 1 usage error (unknown flags or subcommands, bad invocations),
2 runtime error (bad files, numerical failures, failed checks).  All
randomness flows from explicit --seed values, so repeated invocations with
identical arguments produce byte-identical artifacts.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from .config import apply_overrides, default_config, format_config, load_config
from .errors import ContractError, MmsynthError
from .fileio import (build_net_config, build_schedule, build_train_config,
                     load_checkpoint, read_dataset, read_tensor, read_world,
                     save_checkpoint, snapshot_config, write_dataset,
                     write_tensor, write_world)
from .metrics import eval_report
from .modality import enumerate_partitions, format_partition, partition_from_missing
from .sampling import (NetScoreSource, OracleScoreSource, SamplerConfig,
                       generate, generate_many)
from .training import make_train_state, train
from .verification import (net_score_errors, sampler_moment_errors,
                           score_fd_max_rel_err)
from .worlds import GaussianWorld, build_world, make_shape_dataset


class _Parser(argparse.ArgumentParser):
    # usage problems must exit 1, not argparse's default 2
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(1)


def _add_config_flags(p):
    p.add_argument("--config", help="config file of section.key = value lines")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="config override, repeatable")


def _config_from(args) -> dict:
    cfg = default_config()
    if getattr(args, "config", None):
        cfg = load_config(args.config, base=cfg)
    return apply_overrides(cfg, args.set)


def _build_parser() -> _Parser:
    parser = _Parser(prog="mmsynth",
                     description="conditional score-based synthesis of missing "
                                 "image modalities")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("make-data", help="generate a dataset from a built-in world")
    p.add_argument("--world", required=True, choices=["gaussian2", "gaussian3", "shapes"])
    p.add_argument("--n", required=True, type=int, help="number of subjects")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output dataset (.mmct)")
    p.add_argument("--world-out", help="also save the Gaussian world file (.mmgw)")
    _add_config_flags(p)
    p.set_defaults(func=_cmd_make_data)

    p = sub.add_parser("train", help="train the score network on a dataset")
    p.add_argument("--data", required=True, help="dataset file (.mmct)")
    p.add_argument("--steps", type=int, help="override train.steps")
    p.add_argument("--seed", type=int, help="override train.seed")
    p.add_argument("--out", default="checkpoint.mmck", help="checkpoint path")
    _add_config_flags(p)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("sample", help="synthesize missing modalities")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--checkpoint", help="trained checkpoint (.mmck)")
    src.add_argument("--oracle", help="Gaussian world file (.mmgw): analytic score")
    p.add_argument("--input", required=True, help="tensor with the conditional channels")
    p.add_argument("--index", type=int, default=0,
                   help="subject index when --input holds a dataset")
    p.add_argument("--missing", required=True,
                   help="modality names to synthesize, ',' or '+' separated")
    p.add_argument("--steps", type=int, help="integration steps (default sample.steps)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--draws", type=int, default=1)
    p.add_argument("--no-final-noise", action="store_true",
                   help="drop the noise injection of the last step")
    p.add_argument("--out", required=True, help="output tensor (.mmct)")
    _add_config_flags(p)
    p.set_defaults(func=_cmd_sample)

    p = sub.add_parser("eval", help="per-partition metrics report (CSV)")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="test dataset (.mmct)")
    p.add_argument("--missing", help="restrict to one partition (modality names)")
    p.add_argument("--steps", type=int, help="integration steps (default sample.steps)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--no-final-noise", action="store_true")
    p.add_argument("--passthrough", action="store_true",
                   help="score ground truth against itself (report-path check)")
    p.add_argument("--out", required=True, help="output CSV path")
    _add_config_flags(p)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("oracle-check",
                       help="verify scores and sampler against Gaussian closed forms")
    p.add_argument("--world", default="gaussian3", choices=["gaussian2", "gaussian3"])
    p.add_argument("--checkpoint", help="also check this trained net against the oracle")
    p.add_argument("--quick", action="store_true", help="smaller draw counts, looser tolerances")
    p.add_argument("--seed", type=int, default=0)
    _add_config_flags(p)
    p.set_defaults(func=_cmd_oracle_check)
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    except MmsynthError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


def _cmd_make_data(args) -> int:
    world = build_world(args.world)
    if isinstance(world, GaussianWorld):
        data = world.sample_joint(args.n, args.seed)
        names = world.names
        if args.world_out:
            write_world(args.world_out, world)
    else:
        if args.world_out:
            raise ContractError("--world-out only applies to Gaussian worlds")
        data = make_shape_dataset(world, args.n, args.seed)
        names = world.names
    write_dataset(args.out, data, names)
    print(f"wrote {args.out}: {data.shape[0]} subjects, "
          f"{data.shape[1]} modalities, {data.shape[2]}x{data.shape[3]}")
    return 0


def _cmd_train(args) -> int:
    cfg = _config_from(args)
    if args.steps is not None:
        cfg["train.steps"] = args.steps
    if args.seed is not None:
        cfg["train.seed"] = args.seed
    data, names = read_dataset(args.data)
    state = make_train_state(data, names, build_net_config(cfg),
                             build_train_config(cfg), build_schedule(cfg))
    steps = state.cfg.steps
    losses = train(state, data, log_every=max(1, steps // 10))
    if losses:
        print(f"trained {len(losses)} steps, final loss {losses[-1]:.6f}")
    save_checkpoint(args.out, state, base_cfg=cfg)
    print(f"wrote {args.out}")
    return 0


def _load_sample_input(args, mset, image_hw):
    inp = read_tensor(args.input)
    if inp.ndim == 4:
        if not 0 <= args.index < inp.shape[0]:
            raise ContractError(f"--index {args.index} out of range for "
                                f"{inp.shape[0]} subjects")
        inp = inp[args.index]
    if inp.ndim != 3 or inp.shape[0] != mset.count or inp.shape[1:] != tuple(image_hw):
        raise ContractError(f"input must be [{mset.count},{image_hw[0]},{image_hw[1]}] "
                            f"(or a dataset of such), got {inp.shape}")
    return inp


def _cmd_sample(args) -> int:
    cfg = _config_from(args)
    if args.checkpoint:
        source = NetScoreSource.from_state(load_checkpoint(args.checkpoint))
    else:
        source = OracleScoreSource(read_world(args.oracle), build_schedule(cfg))
    steps = args.steps if args.steps is not None else cfg["sample.steps"]
    scfg = SamplerConfig(steps=steps,
                         final_noise=cfg["sample.final_noise"] and not args.no_final_noise)
    partition = partition_from_missing(source.mset, args.missing)
    inp = _load_sample_input(args, source.mset, source.image_hw)
    b = inp[list(partition.cond)]
    if args.draws < 1:
        raise ContractError(f"--draws must be >= 1, got {args.draws}")
    if args.draws == 1:
        out = inp.copy()
        out[list(partition.synth)] = generate(source, b, partition, scfg, args.seed)
    else:
        many = generate_many(source, b, partition, scfg, args.seed, args.draws)
        out = np.repeat(inp[None], args.draws, axis=0)
        out[:, list(partition.synth)] = many
    write_tensor(args.out, out)
    label = format_partition(partition, source.mset)
    print(f"wrote {args.out}: synthesized [{label}] with {steps} steps, "
          f"{args.draws} draw(s)")
    return 0


def _cmd_eval(args) -> int:
    cfg = _config_from(args)
    state = load_checkpoint(args.checkpoint)
    data, names = read_dataset(args.data)
    if tuple(names) != state.mset.names:
        raise ContractError(f"dataset modalities {names} do not match "
                            f"checkpoint modalities {list(state.mset.names)}")
    steps = args.steps if args.steps is not None else cfg["sample.steps"]
    scfg = SamplerConfig(steps=steps,
                         final_noise=cfg["sample.final_noise"] and not args.no_final_noise)
    if args.missing:
        partitions = [partition_from_missing(state.mset, args.missing)]
    else:
        partitions = enumerate_partitions(state.mset)
    source = NetScoreSource.from_state(state)
    cfg_lines = [f"cfg {ln}" for ln in
                 format_config(snapshot_config(state, cfg)).splitlines()]
    report = eval_report(source, data, partitions, scfg, seed=args.seed,
                         passthrough=args.passthrough, header_extra=cfg_lines)
    with open(args.out, "w", encoding="utf-8") as f:
        f.write(report.to_csv())
    print(f"wrote {args.out}: {len(report.rows)} rows")
    return 0


def _cmd_oracle_check(args) -> int:
    cfg = _config_from(args)
    world = build_world(args.world)
    schedule = build_schedule(cfg)
    failures = 0

    def check(label, value, tol, fmt="{:.4g}"):
        nonlocal failures
        ok = value <= tol
        failures += 0 if ok else 1
        status = "PASS" if ok else "FAIL"
        print(f"[{status}] {label}: {fmt.format(value)} (tol {fmt.format(tol)})")

    err = score_fd_max_rel_err(world, schedule, args.seed)
    check("analytic score vs finite differences, max rel err", err, 1e-6, "{:.3e}")

    n_draws, steps, tol = (2000, 200, 0.05) if args.quick else (10000, 1000, 0.02)
    scfg = SamplerConfig(steps=steps)
    oracle = OracleScoreSource(world, schedule)
    for pi, part in enumerate(enumerate_partitions(world.mset)):
        b_values = np.ones(world.indices(part.cond).size)
        m_err, v_err = sampler_moment_errors(
            oracle, world, part, scfg, n_draws,
            seed=1000 + pi if args.seed == 0 else args.seed + pi, b_values=b_values)
        label = format_partition(part, world.mset)
        check(f"oracle sampler mean error [{label}]", m_err, tol)
        check(f"oracle sampler var error  [{label}]", v_err, tol)

    if args.checkpoint:
        state = load_checkpoint(args.checkpoint)
        if state.mset.names != world.mset.names:
            raise ContractError(f"checkpoint modalities {list(state.mset.names)} do not "
                                f"match world modalities {list(world.mset.names)}")
        source = NetScoreSource.from_state(state)
        n_points = 300 if args.quick else 1000
        errs = net_score_errors(source, world, seed=args.seed, n_points=n_points)
        for label, e in errs.items():
            check(f"net score rel L2 [{label}]", e, 0.15)
        n_net = 1000 if args.quick else 4000
        net_cfg_steps = 200 if args.quick else 400
        for pi, part in enumerate(enumerate_partitions(world.mset)):
            b_values = np.ones(world.indices(part.cond).size)
            m_err, v_err = sampler_moment_errors(
                source, world, part, SamplerConfig(steps=net_cfg_steps), n_net,
                seed=2000 + pi, b_values=b_values)
            label = format_partition(part, world.mset)
            check(f"net sampler mean error [{label}]", m_err, 0.05)
            check(f"net sampler var error  [{label}]", v_err, 0.05)

    if failures:
        print(f"{failures} check(s) failed")
        return 2
    print("all checks passed")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
