"""Command-line entry point.

Subcommands: synth, select, graphs, train, eval, gradcheck, ablate.
Exit codes: 0 success, 1 usage error, 2 data/format error, 3 numeric
failure (non-finite loss or a gradient-oracle breach). All output is
deterministic given config+seed; timing lines are suppressed under
--deterministic. LGQAVE_THREADS caps evaluation parallelism.
"""

import argparse
import json
import os
import sys
import time

import numpy as np

from .config import load_config
from .errors import ConfigError, DataError, FormatError, LgqaveError, NumericError, TrainingError
from .frame_select import run_selection
from .model import forward_episode, init_model, load_model, save_model
from .synthbench import evaluate_accuracy, generate_dataset, load_split
from .tensor import inference_mode
from .training import train

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

ABLATION_CONFIGS = {
    "C-1": {"sampling": False, "grounding": False, "local_repr": False, "global_repr": True},
    "C-2": {"sampling": True, "grounding": False, "local_repr": False, "global_repr": True},
    "C-3": {"sampling": True, "grounding": True, "local_repr": False, "global_repr": True},
    "C-4": {"sampling": True, "grounding": False, "local_repr": True, "global_repr": True},
    "C-5": {"sampling": True, "grounding": True, "local_repr": True, "global_repr": True},
}


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on usage errors; the contract here is exit 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error: {message}\n")
        raise SystemExit(EXIT_USAGE)


def _build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="flat TOML config file")
    common.add_argument("--seed", type=int)
    common.add_argument("--beta", type=float)
    common.add_argument("--gamma", type=float)
    common.add_argument("--lambda", type=float, dest="lambda_")
    common.add_argument("--pool", choices=["mean", "max"])
    common.add_argument("--no-sampling", action="store_true")
    common.add_argument("--no-grounding", action="store_true")
    common.add_argument("--no-local", action="store_true")
    common.add_argument("--deterministic", action="store_true", help="suppress timing output")
    common.add_argument("--out", metavar="DIR")

    p = _Parser(prog="lgqave", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sp = sub.add_parser("synth", parents=[common], help="generate a synthetic dataset")
    sp.add_argument("--n-episodes", type=int)
    sp.add_argument("--noise-std", type=float)

    for name, help_ in (
        ("select", "emit frame scores and selections as NDJSON"),
        ("graphs", "dump frame-graph statistics as NDJSON"),
    ):
        sp = sub.add_parser(name, parents=[common], help=help_)
        sp.add_argument("--data", required=True, metavar="DIR")
        sp.add_argument("--split", default="test", choices=["train", "val", "test"])
        sp.add_argument("--model", metavar="PATH", help="checkpoint; fresh init otherwise")
        sp.add_argument("--limit", type=int, default=0, help="cap episode count (0 = all)")

    sp = sub.add_parser("train", parents=[common], help="train on a generated dataset")
    sp.add_argument("--data", required=True, metavar="DIR")
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--edge-width", type=int)
    sp.add_argument("--lr0", type=float)
    sp.add_argument("--batch-size", type=int)
    sp.add_argument("--d", type=int)
    sp.add_argument("--train-limit", type=int, default=0)

    sp = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint")
    sp.add_argument("--data", required=True, metavar="DIR")
    sp.add_argument("--model", required=True, metavar="PATH")
    sp.add_argument("--split", default="test", choices=["train", "val", "test"])

    sp = sub.add_parser("gradcheck", parents=[common], help="run the gradient-oracle suite")
    sp.add_argument("--tol", type=float, default=1e-3)

    sp = sub.add_parser("ablate", parents=[common], help="train/evaluate the C-1..C-5 matrix")
    sp.add_argument("--data", required=True, metavar="DIR")
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--edge-width", type=int)
    sp.add_argument("--lr0", type=float)
    sp.add_argument("--batch-size", type=int)
    sp.add_argument("--d", type=int)
    sp.add_argument("--train-limit", type=int, default=0)
    sp.add_argument("--configs", default="C-1,C-2,C-3,C-4,C-5")
    return p


def _overrides_from_args(args):
    out = {}
    for key in ("seed", "beta", "gamma", "lambda_", "pool"):
        v = getattr(args, key, None)
        if v is not None:
            out[key] = v
    if getattr(args, "no_sampling", False):
        out["sampling"] = False
    if getattr(args, "no_grounding", False):
        out["grounding"] = False
    if getattr(args, "no_local", False):
        out["local_repr"] = False
    for arg_key, cfg_key in (
        ("n_episodes", "n_episodes"),
        ("noise_std", "noise_std"),
        ("epochs", "epochs"),
        ("edge_width", "edge_width"),
        ("lr0", "lr0"),
        ("batch_size", "batch_size"),
        ("d", "d"),
        ("out", "out"),
    ):
        v = getattr(args, arg_key, None)
        if v is not None:
            out[cfg_key] = v
    return out


def _episodes(args, cfg, split):
    eps = load_split(args.data, split)
    limit = getattr(args, "limit", 0) or getattr(args, "train_limit", 0)
    return eps[:limit] if limit else eps


def _model_for(args, cfg, episodes):
    if getattr(args, "model", None):
        return load_model(args.model)
    c_vis = episodes[0].frames[0].patch_embeddings.shape[1]
    c_text = episodes[0].question_tokens.shape[1]
    return init_model(cfg.dims(c_vis, c_text), cfg.seed)


def cmd_synth(args, cfg):
    out = cfg.out or args.out
    if not out:
        raise ConfigError("synth needs --out (or out= in the config)")
    paths = generate_dataset(cfg.synth_config(), out)
    print(json.dumps({"out": out, "manifests": {k: os.path.basename(v) for k, v in paths.items()}}))
    return EXIT_OK


def cmd_select(args, cfg):
    episodes = _episodes(args, cfg, args.split)
    params = _model_for(args, cfg, episodes)
    settings = cfg.settings()
    for ep in episodes:
        slot_frames, selection = run_selection(ep, params.selector(settings.beta))
        seen = set()
        for slot, fidx in enumerate(slot_frames):
            t = ep.frames[fidx].frame_index
            if t in seen:
                continue
            seen.add(t)
            row = {
                "video_id": ep.video_id,
                "t": t,
                "s_t": round(float(selection.scores[slot]), 8),
                "kept": slot in selection.kept,
            }
            print(json.dumps(row))
    return EXIT_OK


def cmd_graphs(args, cfg):
    episodes = _episodes(args, cfg, args.split)
    params = _model_for(args, cfg, episodes)
    settings = cfg.settings()
    for ep in episodes:
        with inference_mode():
            fwd = forward_episode(params, ep, settings)
        for clip_idx, clip in enumerate(fwd.clips):
            for g in clip:
                row_sums = np.asarray(g.adjacency.data)[g.node_mask].sum(axis=1)
                row = {
                    "video_id": ep.video_id,
                    "clip": clip_idx,
                    "t": g.frame_index,
                    "slot": g.slot,
                    "m": int(g.node_mask.sum()) - 1,
                    "nodes": int(g.node_mask.shape[0]),
                    "row_sum_dev": round(float(np.abs(row_sums - 1.0).max()), 9),
                }
                print(json.dumps(row))
    return EXIT_OK


def cmd_train(args, cfg):
    out = cfg.out or args.out
    if not out:
        raise ConfigError("train needs --out (or out= in the config)")
    os.makedirs(out, exist_ok=True)
    train_eps = _episodes(args, cfg, "train")
    val_eps = load_split(args.data, "val")
    params = _model_for(args, cfg, train_eps)
    started = time.time()
    train(
        train_eps,
        val_eps,
        params,
        cfg.train_config(),
        metrics_path=os.path.join(out, "metrics.ndjson"),
        eval_fn=evaluate_accuracy,
    )
    save_model(os.path.join(out, "model.npz"), params)
    summary = {"out": out, "val_accuracy": evaluate_accuracy(params, val_eps, cfg.settings())}
    if not args.deterministic:
        summary["elapsed_s"] = round(time.time() - started, 1)
    print(json.dumps(summary))
    return EXIT_OK


def cmd_eval(args, cfg):
    episodes = _episodes(args, cfg, args.split)
    params = load_model(args.model)
    acc = evaluate_accuracy(params, episodes, cfg.settings())
    print(json.dumps({"split": args.split, "n": len(episodes), "accuracy": acc}))
    return EXIT_OK


def cmd_gradcheck(args, cfg):
    from .verify import run_gradcheck_suite

    report, worst, ok = run_gradcheck_suite(seed=cfg.seed, tol_model=args.tol)
    for name in sorted(report):
        print(f"{name}  max_rel_err={report[name]:.3e}")
    print(f"worst={worst:.3e} tol={args.tol:.1e} -> {'PASS' if ok else 'FAIL'}")
    return EXIT_OK if ok else EXIT_NUMERIC


def _train_variant(cfg, flags, train_eps, val_eps):
    run_cfg = cfg.train_config()
    for key, val in flags.items():
        setattr(run_cfg, key, val)
    settings = run_cfg.settings()
    c_vis = train_eps[0].frames[0].patch_embeddings.shape[1]
    c_text = train_eps[0].question_tokens.shape[1]
    params = init_model(cfg.dims(c_vis, c_text), cfg.seed)
    train(train_eps, val_eps, params, run_cfg, eval_fn=evaluate_accuracy)
    return params, settings


def cmd_ablate(args, cfg):
    names = [n.strip() for n in args.configs.split(",") if n.strip()]
    unknown = [n for n in names if n not in ABLATION_CONFIGS]
    if unknown:
        raise ConfigError(f"unknown ablation configs {unknown}")
    train_eps = _episodes(args, cfg, "train")
    val_eps = load_split(args.data, "val")
    test_eps = load_split(args.data, "test")
    results = {}
    for name in names:
        params, settings = _train_variant(cfg, ABLATION_CONFIGS[name], train_eps, val_eps)
        acc = evaluate_accuracy(params, test_eps, settings)
        results[name] = acc
        flags = ABLATION_CONFIGS[name]
        print(
            json.dumps(
                {
                    "config": name,
                    "sampling": flags["sampling"],
                    "grounding": flags["grounding"],
                    "local_repr": flags["local_repr"],
                    "global_repr": flags["global_repr"],
                    "test_accuracy": acc,
                }
            )
        )
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth,
    "select": cmd_select,
    "graphs": cmd_graphs,
    "train": cmd_train,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
    "ablate": cmd_ablate,
}


def dispatch(argv):
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg = load_config(args.config, _overrides_from_args(args))
        return COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, FormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (TrainingError, NumericError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except LgqaveError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


def main():
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
