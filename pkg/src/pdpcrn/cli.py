"""Command line driver: synth / train / enhance / eval / profile / ablate.

Every subcommand writes only beneath its --out argument. Exit codes:
0 success, 2 configuration problem, 3 I/O problem, 4 numeric failure
(a loss or gradient went non-finite). Set PDPCRN_THREADS to cap the
BLAS/OpenMP thread pools before numpy spins them up.
"""

import os

_threads = os.environ.get("PDPCRN_THREADS", "")
if _threads.isdigit() and int(_threads) > 0:
    for _var in (
        "OMP_NUM_THREADS",
        "OPENBLAS_NUM_THREADS",
        "MKL_NUM_THREADS",
        "NUMEXPR_NUM_THREADS",
        "VECLIB_MAXIMUM_THREADS",
    ):
        os.environ.setdefault(_var, _threads)

import argparse
import sys
from dataclasses import replace

import numpy as np

from . import dataset, metrics, profiling, stft, training, wavio
from .config import ConfigError, effective_config, load_config
from .models import ModelConfig, ModelError, build_dpcrn_baseline, build_model
from .training import NumericError, TrainConfig, TrainError

VARIANT_NAMES = ("pdpcrn", "pdpcrn-no-bi", "dpcrn")


def _check_threads():
    raw = os.environ.get("PDPCRN_THREADS")
    if raw is not None and (not raw.isdigit() or int(raw) == 0):
        raise ConfigError(f"PDPCRN_THREADS must be a positive integer, got {raw!r}")


def _manifest_path(data):
    return data if data.endswith(".jsonl") else os.path.join(data, "manifest.jsonl")


def _load_configs(path):
    if path is None:
        return ModelConfig(), TrainConfig()
    return load_config(path)


def _build_variant(name, mics):
    key = name.lower()
    if key not in VARIANT_NAMES:
        raise ConfigError(f"unknown variant {name!r}, expected one of {VARIANT_NAMES}")
    cfg = ModelConfig(mics=mics)
    if key == "pdpcrn":
        return build_model(cfg)
    if key == "pdpcrn-no-bi":
        return build_model(replace(cfg, bi_interaction=False))
    return build_dpcrn_baseline(cfg)


def _split_rows(rows, val_frac, seed):
    if len(rows) < 2:
        raise ConfigError("need at least two manifest rows to hold out a validation set")
    order = np.random.default_rng(seed).permutation(len(rows))
    n_val = min(len(rows) - 1, max(1, int(round(val_frac * len(rows)))))
    val = [rows[i] for i in order[:n_val]]
    train = [rows[i] for i in order[n_val:]]
    return train, val


def cmd_synth(args):
    os.makedirs(args.out, exist_ok=True)
    manifest = dataset.synthesize_dataset(
        args.out,
        args.count,
        seed=args.seed,
        num_mics=args.mics,
        duration=args.duration,
        corpus_dir=args.corpus,
        noise_dir=args.noise,
        log=print,
    )
    print(f"wrote {manifest} (seed {args.seed})")
    return 0


def cmd_train(args):
    model_cfg, train_cfg = _load_configs(args.config)
    if args.seed is not None:
        train_cfg = replace(train_cfg, seed=args.seed)
    rows = dataset.load_manifest(_manifest_path(args.data))
    train_rows, val_rows = _split_rows(rows, args.val_frac, train_cfg.seed)
    os.makedirs(args.out, exist_ok=True)
    text = effective_config(model_cfg, train_cfg)
    print(text, end="")
    with open(os.path.join(args.out, "config_used.ini"), "w") as f:
        f.write(text)
    result = training.train(
        model_cfg, train_cfg, train_rows, val_rows, args.out,
        log=print, resume=args.resume,
    )
    print(f"best val loss {result['best_val']!r} -> {result['best_path']}")
    return 0


def cmd_enhance(args):
    model, _, _ = training.load_checkpoint(args.checkpoint)
    mix, rate = wavio.read_wav(args.mix)
    if rate != dataset.FS:
        raise ConfigError(f"{args.mix}: expected {dataset.FS} Hz, got {rate}")
    if mix.shape[0] != model.cfg.mics:
        raise ConfigError(
            f"{args.mix}: model wants {model.cfg.mics} channels, file has {mix.shape[0]}"
        )
    fn = metrics.model_fn(model)
    spec = stft.stft(mix)
    planes = np.concatenate([spec.real, spec.imag], axis=0)
    out_planes = fn(planes)
    m = model.cfg.mics
    enhanced = stft.istft(out_planes[:m] + 1j * out_planes[m:])
    wavio.write_wav(args.out, enhanced.astype(np.float32), rate, encoding="float32")
    print(f"wrote {args.out}")
    return 0


def cmd_eval(args):
    model, _, _ = training.load_checkpoint(args.checkpoint)
    rows = dataset.load_manifest(_manifest_path(args.data))
    os.makedirs(args.out, exist_ok=True)
    report = metrics.evaluate(
        metrics.model_fn(model),
        rows,
        csv_path=os.path.join(args.out, "rows.csv"),
        json_path=os.path.join(args.out, "summary.json"),
        log=print,
    )
    for err in report.errors:
        print(f"skipped: {err}", file=sys.stderr)
    print(metrics.table(report))
    return 0


def cmd_profile(args):
    profiles = {}
    for name in args.variant or ["pdpcrn", "dpcrn"]:
        model = _build_variant(name, args.mics)
        profiles[name] = profiling.profile(model, args.seconds)
        ref = profiling.REFERENCE_PARAM_BUDGETS.get(model.cfg.variant)
        if args.mics == 16 and model.cfg.bi_interaction and ref is not None:
            print(f"## {name}")
            print(profiling.param_report(model, ref))
            print()
    print(profiling.comparison(profiles, args.seconds))
    return 0


def cmd_ablate(args):
    model_cfg, train_cfg = _load_configs(args.config)
    rows = dataset.load_manifest(_manifest_path(args.data))
    train_rows, val_rows = _split_rows(rows, args.val_frac, train_cfg.seed)
    os.makedirs(args.out, exist_ok=True)
    result = training.ablate(model_cfg, train_cfg, train_rows, val_rows, args.out, log=print)
    print(open(result["report_path"]).read())
    return 0


def _build_parser():
    p = argparse.ArgumentParser(prog="pdpcrn", description=__doc__)
    sub = p.add_subparsers(dest="command")

    s = sub.add_parser("synth", help="synthesize a reverberant multichannel dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--count", type=int, default=50)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--mics", type=int, default=16)
    s.add_argument("--duration", type=float, default=3.0)
    s.add_argument("--corpus", default=None, help="optional dir of 16 kHz speech WAVs")
    s.add_argument("--noise", default=None, help="optional dir of 16 kHz noise WAVs")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("train", help="train a model on a manifest")
    s.add_argument("--config", default=None, help="INI file with [model]/[train]")
    s.add_argument("--data", required=True, help="manifest.jsonl or its directory")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=None, help="override [train] seed")
    s.add_argument("--val-frac", type=float, default=0.2)
    s.add_argument("--resume", action="store_true")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("enhance", help="run a checkpoint over one mixture WAV")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--mix", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_enhance)

    s = sub.add_parser("eval", help="score a checkpoint over a manifest")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("profile", help="parameter/FLOP comparison")
    s.add_argument("--variant", action="append", choices=VARIANT_NAMES)
    s.add_argument("--seconds", type=float, default=1.0)
    s.add_argument("--mics", type=int, default=16)
    s.set_defaults(func=cmd_profile)

    s = sub.add_parser("ablate", help="train with and without the interaction gates")
    s.add_argument("--config", default=None)
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--val-frac", type=float, default=0.2)
    s.set_defaults(func=cmd_ablate)

    return p


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    if not hasattr(args, "func"):
        parser.print_help()
        return 2
    try:
        _check_threads()
        return args.func(args)
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 4
    except (ConfigError, ModelError, TrainError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (OSError, wavio.WavError, dataset.DatasetError, metrics.MetricError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
