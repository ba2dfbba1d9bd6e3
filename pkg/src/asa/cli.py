"""Command-line entry points.

Exit codes: 0 on success, 1 for usage errors (bad flags, malformed
arguments), 2 for runtime failures (missing files, corrupt inputs, training
blow-ups).  All failure detail goes to stderr.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from .checkpoint import load_checkpoint, load_parameters, save_checkpoint
from .config import RunConfig
from .encoding import make_table
from .errors import AsaError, ContractViolation
from .gradcheck import format_results, run_suite
from .model import AsaModel, make_train_volumes, make_eval_volumes, reconstruct_volume, run_pretraining
from .patching import PatchGrid, make_mask_plan
from .phantom import PhantomSpec, gen_phantom
from .segmentation import (
    SegModel,
    evaluate_segmentation,
    mean_foreground_dice,
    run_finetune,
)
from .vhog import compute_gradient_field, patch_histograms, patch_means, weights_from_means
from .volume import load_volume, save_volume


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _load_config(path: str | None) -> RunConfig:
    if path is None:
        return RunConfig()
    return RunConfig.from_json_file(path)


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(v) if isinstance(v, float) else v for v in row])


def _cmd_pretrain(args) -> int:
    cfg = _load_config(args.config)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    result = run_pretraining(cfg, log_every=args.log_every)
    save_checkpoint(
        out_dir / "pretrain.asac",
        cfg.to_dict(),
        result.model.parameters(),
        result.opt_state,
        step=cfg.total_steps,
    )
    _write_csv(
        out_dir / "pretrain_loss.csv",
        ["step", "loss", "lr"],
        [[i, loss, lr] for i, (loss, lr) in enumerate(zip(result.losses, result.lrs))],
    )
    print(f"final loss {result.losses[-1]:.6f} after {cfg.total_steps} steps")
    print(f"wrote {out_dir / 'pretrain.asac'}")
    return 0


def _cmd_finetune(args) -> int:
    cfg = _load_config(args.config)
    encoder_init = None
    if args.init != "scratch":
        ckpt = load_checkpoint(args.init)
        encoder_init = ckpt.params()
    seed = cfg.seed if args.seed is None else args.seed
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    volumes = make_train_volumes(cfg)
    result = run_finetune(
        cfg, volumes, seed, encoder_init=encoder_init, log_every=args.log_every
    )
    save_checkpoint(
        out_dir / "seg.asac",
        cfg.to_dict(),
        result.model.parameters(),
        step=cfg.ft_steps,
    )
    _write_csv(
        out_dir / "finetune_loss.csv",
        ["step", "loss"],
        [[i, loss] for i, loss in enumerate(result.losses)],
    )
    print(f"final loss {result.losses[-1]:.6f} after {cfg.ft_steps} steps")
    print(f"wrote {out_dir / 'seg.asac'}")
    return 0


def _cmd_eval(args) -> int:
    ckpt = load_checkpoint(args.ckpt)
    cfg = RunConfig.from_dict(ckpt.config)
    model = SegModel(cfg)
    load_parameters(model.parameters(), ckpt.params())
    volumes = make_eval_volumes(cfg)
    rows = evaluate_segmentation(model, volumes)
    header = list(rows[0].keys())
    _write_csv(Path(args.out), header, [[row[k] for k in header] for row in rows])
    print(f"mean foreground dice {mean_foreground_dice(rows):.4f} over {len(rows)} volumes")
    return 0


def _cmd_reconstruct(args) -> int:
    ckpt = load_checkpoint(args.ckpt)
    cfg = RunConfig.from_dict(ckpt.config)
    model = AsaModel(cfg)
    load_parameters(model.parameters(), ckpt.params())
    volume = load_volume(args.infile)
    ratio = cfg.mask_ratio if args.mask_ratio is None else args.mask_ratio
    plan = make_mask_plan(model.grid.n_patches, ratio, seed=args.seed)
    out = reconstruct_volume(volume, plan, model)
    save_volume(out, args.out)
    print(f"wrote {args.out} ({plan.n_masked}/{model.grid.n_patches} patches masked)")
    return 0


def _cmd_vhog(args) -> int:
    volume = load_volume(args.infile)
    grid = PatchGrid.for_dims(volume.voxels.shape, args.patch)
    field = compute_gradient_field(volume.voxels)
    hists = patch_histograms(field, grid, args.bins)
    means = patch_means(hists)
    everything = tuple(range(grid.n_patches))
    weights = weights_from_means(means, everything)
    rows = []
    for i in range(grid.n_patches):
        t, h, w = grid.patch_coord(i)
        rows.append([i, t, h, w, float(means[i]), float(weights[i])])
    _write_csv(Path(args.out), ["patch", "t", "h", "w", "mean", "weight"], rows)
    print(f"wrote {args.out} ({grid.n_patches} patches)")
    return 0


def _cmd_spe(args) -> int:
    try:
        counts = tuple(int(p) for p in args.grid.split(","))
    except ValueError:
        raise _UsageError(f"--grid wants T,H,W integers, got {args.grid!r}")
    if len(counts) != 3:
        raise _UsageError(f"--grid wants three axes, got {args.grid!r}")
    grid = PatchGrid.for_dims(counts, 1)
    table = make_table(args.kind, grid, args.dim)
    header = ["t", "h", "w"] + [f"e{k}" for k in range(args.dim)]
    rows = []
    for i in range(grid.n_patches):
        t, h, w = grid.patch_coord(i)
        rows.append([t, h, w] + [float(v) for v in table.table[i]])
    _write_csv(Path(args.out), header, rows)
    print(f"wrote {args.out} ({grid.n_patches} rows, dim {args.dim})")
    return 0


def _cmd_gradcheck(args) -> int:
    results = run_suite(include_models=not args.quick)
    print(format_results(results))
    failed = [r for r in results if not r.ok]
    if failed:
        print(f"{len(failed)} of {len(results)} checks failed", file=sys.stderr)
        return 2
    print(f"all {len(results)} checks passed")
    return 0


def _cmd_phantom(args) -> int:
    if args.spec is None:
        spec = PhantomSpec(seed=args.seed)
    else:
        with open(args.spec) as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ContractViolation(f"{args.spec}: {exc}") from exc
        if not isinstance(data, dict):
            raise ContractViolation(f"{args.spec}: spec must be a JSON object")
        if "dims" in data:
            data["dims"] = tuple(data["dims"])
        try:
            spec = PhantomSpec(**data)
        except TypeError as exc:
            raise ContractViolation(f"{args.spec}: {exc}") from exc
    volume = gen_phantom(spec)
    save_volume(volume, args.out)
    print(f"wrote {args.out} dims {volume.voxels.shape}")
    return 0


def _build_parser() -> _Parser:
    parser = _Parser(prog="asa", description="Masked 3D volume pretraining toolkit.")
    sub = parser.add_subparsers(dest="command", metavar="command")

    p = sub.add_parser("pretrain", help="pretrain on generated phantoms")
    p.add_argument("--config", help="run config JSON (defaults apply if omitted)")
    p.add_argument("--out-dir", required=True, help="directory for checkpoint and loss CSV")
    p.add_argument("--log-every", type=int, default=0)
    p.set_defaults(fn=_cmd_pretrain)

    p = sub.add_parser("finetune", help="fine-tune segmentation")
    p.add_argument("--config", help="run config JSON")
    p.add_argument("--init", required=True, help="pretrain checkpoint path, or 'scratch'")
    p.add_argument("--seed", type=int, default=None, help="head init seed (default: config seed)")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--log-every", type=int, default=0)
    p.set_defaults(fn=_cmd_finetune)

    p = sub.add_parser("eval", help="evaluate a segmentation checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--out", required=True, help="metrics CSV path")
    p.set_defaults(fn=_cmd_eval)

    p = sub.add_parser("reconstruct", help="mask and reconstruct one volume")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--mask-ratio", type=float, default=None)
    p.add_argument("--seed", type=int, default=0, help="mask plan seed")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_reconstruct)

    p = sub.add_parser("vhog", help="per-patch gradient-histogram weights")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--patch", type=int, required=True)
    p.add_argument("--bins", type=int, default=8)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_vhog)

    p = sub.add_parser("spe", help="dump a positional-encoding table")
    p.add_argument("--grid", required=True, help="patch counts as T,H,W")
    p.add_argument("--dim", type=int, required=True)
    p.add_argument("--kind", choices=("spe", "vanilla"), default="spe")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_spe)

    p = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    p.add_argument("--quick", action="store_true", help="skip the full-model checks")
    p.set_defaults(fn=_cmd_gradcheck)

    p = sub.add_parser("phantom", help="generate a labeled phantom volume")
    p.add_argument("--spec", help="PhantomSpec JSON (defaults apply if omitted)")
    p.add_argument("--seed", type=int, default=0, help="seed when no spec is given")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_phantom)

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "fn", None) is None:
            raise _UsageError("a subcommand is required (see --help)")
        return args.fn(args)
    except SystemExit as exc:  # argparse --help exits 0
        code = exc.code or 0
        return 0 if code == 0 else 1
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except AsaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
