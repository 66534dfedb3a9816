"""Command line: ``poseinsert {collect,train,eval,rollout,export}``.

Every subcommand takes ``--seed`` (the only source of randomness) and
``--config FILE``.  The config file uses ``key = value`` lines; a key names a
long option (``epochs = 300``, ``batch-size = 40``) and acts as that option's
default, so flags on the command line still win.  One file can serve the whole
pipeline: keys for other subcommands are skipped.  Keys of the form
``task.<field>`` override fields of the task description.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import fields, replace
from pathlib import Path

from ..policy import VARIANTS, PolicyConfig, TrainConfig
from ..sim import STYLES, PRESETS, TaskSpec
from .collect import collect
from .evaluation import evaluate, rollout, write_expert_checkpoint
from .export import export_traces
from .training import train_cmd

log = logging.getLogger("poseinsert")


def read_config(path) -> tuple[dict, dict]:
    """``(option defaults, task overrides)`` from a ``key = value`` file."""
    opts, task = {}, {}
    for n, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, val = (s.strip() for s in line.partition("="))
        if not sep or not key:
            raise ValueError(f"{path}:{n}: expected 'key = value'")
        if key.startswith("task."):
            task[key[5:]] = val
        else:
            opts[key.replace("-", "_")] = val
    return opts, task


def resolve_task(name_or_path: str | None, fallback: Path | None = None) -> TaskSpec:
    if name_or_path is None:
        if fallback is not None and fallback.exists():
            return TaskSpec.load(fallback)
        name_or_path = "easy"
    if name_or_path in PRESETS:
        return PRESETS[name_or_path]
    p = Path(name_or_path)
    if not p.exists():
        raise ValueError(f"task {name_or_path!r} is neither a preset {sorted(PRESETS)} nor a file")
    return TaskSpec.load(p)


def apply_task_overrides(spec: TaskSpec, overrides: dict, noise: float | None, corr: float | None) -> TaskSpec:
    if overrides:
        kinds = {f.name: f.type for f in fields(TaskSpec)}
        kw = {}
        for k, v in overrides.items():
            if k not in kinds:
                raise ValueError(f"unknown task field {k!r}")
            kw[k] = v if kinds[k] == "str" else int(v) if kinds[k] == "int" else float(v)
        spec = replace(spec, **kw)
    if noise is not None or corr is not None:
        sigma = spec.sigma_t_source if noise is None else noise * spec.clearance
        spec = spec.with_noise(sigma, corr=corr)
    return spec


def _common(p: argparse.ArgumentParser):
    p.add_argument("--seed", type=int, default=0, help="seed for every random draw (default 0)")
    p.add_argument("--config", type=Path, help="key = value file of option defaults and task.* overrides")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress")


def _task_opts(p: argparse.ArgumentParser, default_hint: str):
    p.add_argument("--task", help=f"preset ({', '.join(sorted(PRESETS))}) or task file; default {default_hint}")
    p.add_argument("--noise", type=float, help="tracker noise sigma_t as a multiple of the clearance")
    p.add_argument("--noise-corr", type=float, help="frame-to-frame noise correlation in [0, 1]")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="poseinsert", description="relative-pose diffusion policies for peg insertion")
    sub = ap.add_subparsers(dest="command", required=True)
    ap.subcommands = sub.choices

    p = sub.add_parser("collect", help="record scripted demonstrations")
    _common(p)
    _task_opts(p, "easy")
    p.add_argument("--demos", type=int, default=10)
    p.add_argument("--style", choices=STYLES, default="direct")
    p.add_argument("--fix-target", action="store_true", help="keep episode 0's target for all episodes")
    p.add_argument("--no-patches", action="store_true", help="skip RGBD patch rendering")
    p.add_argument("--out", type=Path, required=True, help="dataset directory")

    p = sub.add_parser("train", help="train a policy on a dataset")
    _common(p)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--variant", choices=VARIANTS, default="posedp-dpe")
    p.add_argument("--epochs", type=int, default=TrainConfig.epochs)
    p.add_argument("--batch-size", type=int, default=TrainConfig.batch_size)
    p.add_argument("--lr", type=float, default=TrainConfig.lr)
    p.add_argument("--weight-decay", type=float, default=TrainConfig.weight_decay)
    p.add_argument("--horizon", type=int, default=PolicyConfig.horizon)
    p.add_argument("--exec-steps", type=int, default=PolicyConfig.exec_steps)
    p.add_argument("--goal-mode", choices=("task", "episode"), default="task")
    p.add_argument("--out", type=Path, required=True, help="checkpoint path (.ckpt added)")

    for name, helptext in (("eval", "closed-loop success rate"), ("rollout", "one closed-loop trial")):
        p = sub.add_parser(name, help=helptext)
        _common(p)
        _task_opts(p, "the checkpoint's task file, else easy")
        g = p.add_mutually_exclusive_group(required=True)
        g.add_argument("--ckpt", type=Path)
        g.add_argument("--expert", choices=STYLES, help="replay the scripted expert instead of a policy")
        if name == "eval":
            p.add_argument("--trials", type=int, default=50)
        else:
            p.add_argument("--index", type=int, default=0, help="trial number (same seeding as eval)")
        p.add_argument("--ood", action="store_true", help="targets outside the training region")
        p.add_argument("--calib-error", type=float, nargs=3, metavar=("DX", "DY", "DZ"), help="mm added to T_b^c")
        p.add_argument("--out", type=Path, required=True, help="run directory")

    p = sub.add_parser("export", help="CSV and SVG traces from a run directory")
    _common(p)
    p.add_argument("--run", type=Path, required=True)
    p.add_argument("--out", type=Path, help="default: <run>/export")
    return ap


def parse(argv) -> tuple[argparse.Namespace, dict]:
    ap = build_parser()
    args = ap.parse_args(argv)
    task_over = {}
    if args.config is not None:
        opts, task_over = read_config(args.config)
        sp = ap.subcommands[args.command]
        known = {a.dest: a for a in sp._actions}
        anywhere = {a.dest for q in ap.subcommands.values() for a in q._actions}
        for k, v in opts.items():
            if k not in anywhere or k in ("config", "help", "command"):
                raise ValueError(f"config key {k!r} is not an option of any subcommand")
            if k not in known:
                continue  # shared config file: meant for another subcommand
            a = known[k]
            if a.nargs == 0:
                val = v.lower() in ("1", "true", "yes", "on")
            elif a.nargs is not None:
                val = [a.type(x) for x in v.split()]
            else:
                val = a.type(v) if a.type is not None else v
            sp.set_defaults(**{k: val})
        args = ap.parse_args(argv)
    return args, task_over


def run(args: argparse.Namespace, task_over: dict) -> int:
    cmd = args.command
    if cmd == "collect":
        spec = apply_task_overrides(resolve_task(args.task), task_over, args.noise, args.noise_corr)
        out = collect(spec, args.demos, args.out, args.style, args.seed, args.fix_target, not args.no_patches)
        print(f"wrote {args.demos} episodes to {out}")
    elif cmd == "train":
        cfg = PolicyConfig(variant=args.variant, horizon=args.horizon, exec_steps=args.exec_steps)
        tcfg = TrainConfig(
            epochs=args.epochs, batch_size=args.batch_size, lr=args.lr, weight_decay=args.weight_decay, seed=args.seed
        )
        out = train_cmd(args.data, args.variant, args.out, cfg, tcfg, args.goal_mode)
        print(f"wrote {out}")
    elif cmd in ("eval", "rollout"):
        if args.expert:
            ckpt = write_expert_checkpoint(args.out / "expert.ckpt", args.expert)
            fallback = None
        else:
            ckpt = args.ckpt
            if not ckpt.exists():
                raise FileNotFoundError(f"checkpoint {ckpt} not found")
            fallback = ckpt.parent / (ckpt.with_suffix("").name + ".task.cfg")
        spec = apply_task_overrides(resolve_task(args.task, fallback), task_over, args.noise, args.noise_corr)
        common = dict(in_dist=not args.ood, seed=args.seed, calib_error=args.calib_error, out_dir=args.out)
        if cmd == "eval":
            rep = evaluate(ckpt, spec, args.trials, **common)
        else:
            rep = rollout(ckpt, spec, args.index, **common)
        t = rep.trials[-1]
        print(f"success_rate = {rep.successes}/{rep.n} = {rep.success_rate:.4f}%")
        if cmd == "rollout":
            print(f"trial {t.index}: success={t.success} steps={t.steps} depth={t.final_depth:.4f} mm")
    elif cmd == "export":
        paths = export_traces(args.run, args.out)
        print(f"wrote {len(paths)} files to {paths[0].parent}")
    return 0


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args, task_over = parse(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
        return run(args, task_over)
    except (ValueError, FileNotFoundError, RuntimeError) as e:
        print(f"poseinsert: error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
