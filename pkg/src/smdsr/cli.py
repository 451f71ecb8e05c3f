"""Command-line entry point: ``smdsr <command> [options]``.

Settings come from an optional flat ``key=value`` file (``--config``) and
are overridden by ``--key value`` flags. Exit codes: 0 success, 1 failed
check or invalid input, 2 usage error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import dataclass, fields
from pathlib import Path

from smdsr import checks, data, denoiser, diffusion, experiment, imageio, mask, metrics, schedule, train


def _bool(text: str) -> bool:
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _optional_str(text: str):
    return None if text in ("", "none", "None") else text


@dataclass(frozen=True)
class Key:
    name: str
    parse: type
    default: object
    help: str


_scene = data.SceneSpec()
_train = train.TrainConfig()
_sampler = diffusion.SamplerOptions()

KEYS = [
    # training
    Key("iterations", int, _train.iterations, "training iterations"),
    Key("batch_size", int, _train.batch_size, "crops per iteration"),
    Key("patch_size", int, _train.patch_size, "HR crop side, a multiple of 4"),
    Key("T", int, _train.T, "number of diffusion steps"),
    Key("schedule", str, _train.schedule, "noise schedule: cosine or linear"),
    Key("lr0", float, _train.lr0, "initial Adam learning rate (cosine decay to 0)"),
    Key("seed", int, _train.seed, "seed for training, for the sampler in restore and for check"),
    Key("scheme", str, _train.scheme, "position grid for the encoded mask: rope, cosine or linear"),
    Key("baseline", _bool, _train.baseline, "train with the encoded mask forced to zero"),
    Key("width", int, _train.width, "denoiser hidden channels"),
    Key("depth", int, _train.depth, "denoiser residual blocks"),
    Key("kernel", int, _train.kernel, "convolution kernel size (odd)"),
    Key("temb_dim", int, _train.temb_dim, "time embedding size (even)"),
    Key("dilation_growth", int, _train.dilation_growth, "block j is dilated by this to the power j"),
    Key("num_scenes", int, _train.num_scenes, "generated scenes to train on when data_dir is unset"),
    Key("data_dir", _optional_str, _train.data_dir, "train on scene_* files in this directory instead"),
    # scenes
    Key("scene_h", int, _scene.h, "HR scene height"),
    Key("scene_w", int, _scene.w, "HR scene width"),
    Key("regions", int, _scene.regions, "regions per scene"),
    Key("freq_min", float, _scene.freq_range[0], "lowest grating frequency, cycles per HR pixel"),
    Key("freq_max", float, _scene.freq_range[1], "highest grating frequency"),
    Key("amp_min", float, _scene.amp_range[0], "lowest grating amplitude, byte units"),
    Key("amp_max", float, _scene.amp_range[1], "highest grating amplitude"),
    Key("base_min", float, _scene.base_range[0], "lowest region base colour"),
    Key("base_max", float, _scene.base_range[1], "highest region base colour"),
    Key("noise", float, _scene.noise, "std of Gaussian noise added to HR, byte units"),
    Key("scene_seed", int, _scene.seed, "seed of the first scene; scene i uses scene_seed + i"),
    Key("count", int, 4, "scenes written by gen"),
    # sampling
    Key("clamp_x0", _bool, _sampler.clamp_x0, "clip the implied x0 to [-1, 1] at each reverse step"),
    Key("final_step_noise", _bool, _sampler.final_step_noise, "draw noise at the last reverse step"),
    Key("sampling_noise", _bool, _sampler.sampling_noise, "add posterior noise during sampling"),
]
KEY_MAP = {k.name: k for k in KEYS}


class UsageError(Exception):
    pass


def read_config(path) -> dict[str, str]:
    out = {}
    for num, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{num}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in KEY_MAP:
            raise UsageError(f"{path}:{num}: unknown key {key!r}")
        out[key] = value
    return out


def resolve(args) -> dict[str, object]:
    """Defaults, then the config file, then explicit flags."""
    raw = {k.name: k.default for k in KEYS}
    if getattr(args, "config", None):
        for key, value in read_config(args.config).items():
            raw[key] = KEY_MAP[key].parse(value)
    for k in KEYS:
        value = getattr(args, f"cfg_{k.name}", None)
        if value is not None:
            raw[k.name] = k.parse(value)
    return raw


def scene_spec(cfg) -> data.SceneSpec:
    return data.SceneSpec(
        h=cfg["scene_h"], w=cfg["scene_w"], regions=cfg["regions"],
        freq_range=(cfg["freq_min"], cfg["freq_max"]), amp_range=(cfg["amp_min"], cfg["amp_max"]),
        base_range=(cfg["base_min"], cfg["base_max"]), noise=cfg["noise"], seed=cfg["scene_seed"],
    )


def train_config(cfg) -> train.TrainConfig:
    names = {f.name for f in fields(train.TrainConfig)} - {"scene"}
    return train.TrainConfig(scene=scene_spec(cfg), **{n: cfg[n] for n in names})


def sampler_options(cfg) -> diffusion.SamplerOptions:
    return diffusion.SamplerOptions(clamp_x0=cfg["clamp_x0"], final_step_noise=cfg["final_step_noise"],
                                    sampling_noise=cfg["sampling_noise"])


def dump_config(cfg) -> str:
    def show(v):
        return "none" if v is None else str(v).lower() if isinstance(v, bool) else str(v)
    return "".join(f"{k.name}={show(cfg[k.name])}\n" for k in KEYS)


# ---------------------------------------------------------------------------
# commands


def cmd_gen(args, cfg) -> int:
    stems = data.write_dataset(args.out, scene_spec(cfg), cfg["count"])
    print(f"wrote {len(stems)} scenes to {args.out}")
    return 0


def cmd_encode(args, cfg) -> int:
    labels = imageio.read_label_map(args.mask)
    imageio.write_spe(args.out, mask.encode_label_map(labels, args.scheme))
    return 0


def cmd_train(args, cfg) -> int:
    ckpt = train.train(train_config(cfg), checkpoint_path=args.out, log_path=args.log)
    print(f"trained {ckpt.adam.step} steps -> {args.out}")
    return 0


def cmd_restore(args, cfg) -> int:
    lr = imageio.read_netpbm(args.lr)
    if lr.ndim != 3:
        raise ValueError(f"{args.lr}: expected an RGB PPM")
    sr = train.restore(denoiser.load_checkpoint(args.checkpoint), lr, cfg["seed"], sampler_options(cfg))
    imageio.write_netpbm(args.out, data.to_byte(sr))
    return 0


def cmd_eval(args, cfg) -> int:
    a, b = imageio.read_netpbm(args.sr), imageio.read_netpbm(args.hr)
    report = {"psnr_y": metrics.psnr_y(a, b)}
    if min(a.shape[-2:]) >= metrics.SSIM_WINDOW:
        report["ssim_y"] = metrics.ssim_y(a, b)
    sys.stdout.write(metrics.format_report(report))
    return 0


def cmd_schedule(args, cfg) -> int:
    schedule.dump_table(schedule.build_schedule(cfg["T"], cfg["schedule"]), sys.stdout)
    return 0


def cmd_check(args, cfg) -> int:
    report = checks.run_invariant_suite(seed=cfg["seed"])
    sys.stdout.write(report.format())
    return 0 if report.passed else 1


def cmd_ab(args, cfg) -> int:
    seeds = [int(s) for s in args.seeds.split(",")]
    report = experiment.run_ab(train_config(cfg), seeds, args.held_out, sampler_options(cfg))
    sys.stdout.write(report.format())
    return 0 if report.passed else 1


def cmd_dump_config(args, cfg) -> int:
    train_config(cfg)  # validate before emitting
    sys.stdout.write(dump_config(cfg))
    return 0


RESTORE_KEYS = ("seed", "clamp_x0", "final_step_noise", "sampling_noise")


def _add_keys(p: argparse.ArgumentParser, only=None) -> None:
    p.add_argument("--config", metavar="FILE", help="flat key=value settings file")
    group = p.add_argument_group("settings (also valid as key=value lines in --config)")
    for k in KEYS:
        if only is not None and k.name not in only:
            continue
        default = "none" if k.default is None else k.default
        group.add_argument(f"--{k.name}", dest=f"cfg_{k.name}", metavar="V",
                           help=f"{k.help} (default {default})")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="smdsr", description=__doc__.split("\n")[0], allow_abbrev=False)
    parser.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name, help):
        return sub.add_parser(name, help=help, allow_abbrev=False)


    p = command("gen", "write synthetic HR/LR/label scenes")
    p.add_argument("--out", required=True, help="output directory")
    _add_keys(p)
    p.set_defaults(func=cmd_gen)

    p = command("encode", "encode a label-map PGM into a mask file")
    p.add_argument("mask", help="16-bit label map PGM")
    p.add_argument("--out", required=True, help="output .spe file")
    p.add_argument("--scheme", choices=mask.SCHEMES, default="rope")
    p.set_defaults(func=cmd_encode)

    p = command("train", "train a denoiser checkpoint")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--log", help="CSV loss log path")
    _add_keys(p)
    p.set_defaults(func=cmd_train)

    p = command("restore", "super-resolve an LR PPM (model only, no mask input)")
    p.add_argument("checkpoint")
    p.add_argument("lr", help="LR PPM")
    p.add_argument("--out", required=True, help="SR PPM path")
    _add_keys(p, RESTORE_KEYS)
    p.set_defaults(func=cmd_restore)

    p = command("eval", "PSNR/SSIM on the Y channel")
    p.add_argument("sr")
    p.add_argument("hr")
    p.set_defaults(func=cmd_eval)

    p = command("schedule", "print the noise schedule table")
    _add_keys(p)
    p.set_defaults(func=cmd_schedule)

    p = command("check", "run the invariant suite")
    _add_keys(p)
    p.set_defaults(func=cmd_check)

    p = command("ab", "matched modulated-vs-baseline comparison on held-out scenes")
    p.add_argument("--seeds", default="0,1,2,3,4", help="comma-separated training seeds")
    p.add_argument("--held_out", type=int, default=6, help="held-out scenes scored per model")
    _add_keys(p)
    p.set_defaults(func=cmd_ab)

    p = command("dump-config", "print every setting after file and flag overrides")
    _add_keys(p)
    p.set_defaults(func=cmd_dump_config)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = resolve(args)
    except UsageError as exc:
        parser.error(str(exc))
    except ValueError as exc:
        print(f"smdsr: invalid setting: {exc}", file=sys.stderr)
        return 1
    try:
        return args.func(args, cfg)
    except (ValueError, FileNotFoundError, FloatingPointError) as exc:
        print(f"smdsr {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
