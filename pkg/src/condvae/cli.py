"""Command-line entry point: ``condvae {make-synth,train,eval,sample}``.

Every run writes its fully resolved configuration next to its outputs; results
go to stdout as one JSON object, failures to stderr as one JSON line.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import config as cfgmod
from .data import (SYNTHETIC_ATTRS, iter_batches, load_dataset, make_synthetic, parse_attr_vector, read_attr_table,
                   split, write_attr_table)
from .inference import reconstruct, sample_conditional, sample_grid, save_png, to_uint8
from .metrics import fid_protocol, read_features
from .plotting import plot_history, plot_image_rows
from .training import evaluate_nll, fit, load_checkpoint, read_history, save_checkpoint, write_history

logger = logging.getLogger("condvae")


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    """Argument errors become a single JSON line, like every other failure."""

    def error(self, message):
        _emit_error("UsageError", message)
        sys.exit(2)


def _emit_error(kind: str, message: str):
    sys.stderr.write(json.dumps({"error": kind, "message": message}) + "\n")


def _emit(obj: dict):
    sys.stdout.write(json.dumps(obj, sort_keys=True) + "\n")


def _resolve(args, **overrides) -> cfgmod.RunConfig:
    values = cfgmod.load_config(args.config) if args.config else {}
    return cfgmod.resolve(values, **overrides)


def _attr_names(run: cfgmod.RunConfig):
    if run.source == "synthetic":
        return list(SYNTHETIC_ATTRS)
    return read_attr_table(run.attr_file)[2]


def _datasets(run: cfgmod.RunConfig):
    spec = run.dataset_spec()
    return split(load_dataset(spec), spec.train_fraction, spec.split_seed)


def cmd_make_synth(args) -> dict:
    run = _resolve(args, data_seed=args.seed, n_samples=args.n_samples, out_dir=args.out_dir,
                   image_size=args.image_size)
    out = Path(run.out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    ds = make_synthetic(run.n_samples, run.dataset_spec())
    names = [f"{i:06d}.png" for i in range(len(ds))]
    for name, img in zip(names, to_uint8(ds.images)):
        save_png(img, out / "images" / name)
    write_attr_table(out / "list_attr.txt", names, ds.attrs, ds.attr_names)
    # the echo points at the written folder, so it can be fed straight to ``train``
    folder = cfgmod.resolve({**run.to_dict(), "source": "folder", "root": str(out / "images"),
                             "attr_file": str(out / "list_attr.txt")})
    cfgmod.write_config(folder, out / "config.json")
    return {"n": len(ds), "images": str(out / "images"), "attr_file": str(out / "list_attr.txt"),
            "config": str(out / "config.json")}


def cmd_train(args) -> dict:
    run = _resolve(args, setting=args.setting, seed=args.seed, out_dir=args.out_dir)
    out = Path(run.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfgmod.write_config(run, out / "config.json")
    train, test = _datasets(run)
    attr_names = _attr_names(run)
    model_config = run.model_config(len(attr_names), channels=train.image_shape[0])
    state, history = fit(run.train_config(), model_config, train, test, spec=run.dataset_spec())
    write_history(history, out / "history.jsonl")
    save_checkpoint(out / "checkpoint.pt", state, {**run.to_dict(), "attr_names": attr_names})
    plot_history(history, out / "history.png", title=run.setting)
    return {"setting": run.setting, "seed": run.seed, "best_test_nll": state.best_test_nll,
            "best_step": state.best_step, "evals": len(history), "out_dir": str(out)}


def _load(args):
    state = load_checkpoint(args.checkpoint)
    saved = dict(state.run_config)
    attr_names = saved.pop("attr_names", None)
    return state, saved, attr_names


def cmd_eval(args) -> dict:
    state, saved, _ = _load(args)
    # dataset keys may be overridden by a config file; the model keys come from the checkpoint
    values = {**saved, **(cfgmod.load_config(args.config) if args.config else {})}
    run = cfgmod.resolve(values, seed=args.seed)
    out = Path(args.out_dir or Path(args.checkpoint).parent)
    out.mkdir(parents=True, exist_ok=True)
    _, test = _datasets(run)
    model = state.model.eval()
    reference = read_features(args.features_file) if args.features_file else None
    through_flow = bool(args.through_flow or run.through_flow)
    report = {
        "test_nll": evaluate_nll(model, test, state.sigma_sq),
        "fid_recon": fid_protocol(model, test, "recon", reference_features=reference),
        "fid_sampled": fid_protocol(model, test, "sampled", seed=run.seed, reference_features=reference,
                                    through_flow=through_flow),
        "setting": run.setting,
        "seed": run.seed,
    }
    (out / "metrics.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")

    x, y = next(iter_batches(test, 8, shuffle=False))
    samples = sample_conditional(y, model, run.seed, through_flow)
    plot_image_rows([("test", to_uint8(x)), ("recon", to_uint8(reconstruct(x, y, model))),
                     ("sampled", to_uint8(samples))], out / "reconstructions.png", title=run.setting)
    history_path = Path(args.checkpoint).parent / "history.jsonl"
    if history_path.exists():
        plot_history(read_history(history_path), out / "history.png", title=run.setting)
    return report


def cmd_sample(args) -> dict:
    state, saved, attr_names = _load(args)
    attr_names = attr_names or [f"attr{i}" for i in range(state.model.attr_dim)]
    if not args.attrs:
        raise UsageError("at least one --attrs row is required")
    rows = [parse_attr_vector(text, attr_names) for text in args.attrs]
    through_flow = bool(args.through_flow or saved.get("through_flow", False))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    grid = sample_grid(rows, state.model.eval(), args.seed, out, n_cols=args.n_cols, through_flow=through_flow)
    return {"out": str(out), "rows": len(rows), "cols": args.n_cols, "height": grid.shape[0], "width": grid.shape[1]}


def build_parser() -> argparse.ArgumentParser:
    p = Parser(prog="condvae", description="Conditional VAE with a flow-based label prior and calibrated decoder.")
    p.add_argument("-q", "--quiet", action="store_true", help="suppress progress logging on stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=Parser)

    s = sub.add_parser("make-synth", help="render the synthetic shapes dataset to PNG files plus an attribute table")
    s.add_argument("--config", help="flat JSON config; flags override its values")
    s.add_argument("--seed", type=int, help="dataset seed")
    s.add_argument("--n-samples", type=int)
    s.add_argument("--image-size", type=int, nargs=2, metavar=("H", "W"))
    s.add_argument("--out-dir")
    s.set_defaults(func=cmd_make_synth)

    s = sub.add_parser("train", help="train one model and write checkpoint, history and config echo")
    s.add_argument("--config", help="flat JSON config; flags override its values")
    s.add_argument("--setting", choices=["gaussian", "sigma-nonnf", "sigma-nf"])
    s.add_argument("--seed", type=int, help="training seed (initialisation and batch order)")
    s.add_argument("--out-dir")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="report test NLL, reconstruction FID and sampled FID as JSON")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--config", help="override dataset keys of the checkpoint's config")
    s.add_argument("--seed", type=int, help="sampling seed (defaults to the training seed)")
    s.add_argument("--features-file", help="precomputed test-set features ('N F' header) replacing the extractor's")
    s.add_argument("--through-flow", action="store_true", help="pull sampled latents back through the inverse flow")
    s.add_argument("--out-dir", help="defaults to the checkpoint's directory")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("sample", help="write a PNG grid with one row of samples per attribute vector")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--attrs", action="append",
                   help="'1,0,1,0,0' or a named list 'is_red,has_border'; repeat for more rows")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--n-cols", type=int, default=8)
    s.add_argument("--through-flow", action="store_true", help="pull sampled latents back through the inverse flow")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_sample)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(message)s",
                        stream=sys.stderr)
    try:
        _emit(args.func(args))
    except Exception as exc:  # report every failure the same way
        _emit_error(type(exc).__name__, " ".join(str(exc).split()))
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
