"""Command-line harness.

Exit codes: 0 success, 2 config error, 3 I/O or file-format error,
4 numeric failure (zero-norm vector or zero probability).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .compressor import compress_sequence
from .config import ConfigError, RunConfig, load_config
from .core import FormatError, NumericError, RetcompError, TokenSequence, make_rng
from .experiment import evaluate, metrics_csv, policy_from_json, policy_to_json, prepare, split, train
from .pipeline import run_sample, sample_report
from .synth import gen_dataset, load_dataset, save_dataset
from .vmr import atomic_write, bank_load, bank_save, build_bank

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4


def _overrides(args) -> dict:
    out = {}
    for flag, key in (
        ("seed", "run.seed"),
        ("mode", "train.mode"),
        ("top_k", "retrieval.top_k"),
        ("rho", "compress.rho"),
        ("tau", "cgrpo.tau"),
    ):
        v = getattr(args, flag, None)
        if v is not None:
            out[key] = v
    return out


def _config(args) -> RunConfig:
    return load_config(getattr(args, "config", None), _overrides(args))


def _out_path(args, cfg: RunConfig, default: str) -> Path:
    return Path(args.out or cfg.io.out or default)


def _data_path(args, cfg: RunConfig) -> Path:
    path = args.data or cfg.io.data
    if not path:
        raise ConfigError("no dataset given (use --data or [io] data)")
    return Path(path)


def _check_fresh(path: Path, force: bool) -> None:
    if path.exists() and not force:
        raise FileExistsError(f"{path} exists; pass --force to overwrite")


def _write_json(path: Path, obj) -> None:
    atomic_write(path, (json.dumps(obj, indent=2, sort_keys=True) + "\n").encode("utf-8"))


def cmd_gen_data(args) -> int:
    cfg = _config(args)
    out = _out_path(args, cfg, "data.marcdata")
    _check_fresh(out, args.force)
    _, samples = gen_dataset(cfg.synth, make_rng(cfg.run.seed, "data"))
    save_dataset(samples, out, cfg.synth, cfg.run.seed, manifest_path=Path(str(out) + ".json"))
    print(f"wrote {len(samples)} samples to {out}")
    return EXIT_OK


def cmd_pipeline(args) -> int:
    cfg = _config(args)
    samples = load_dataset(_data_path(args, cfg))
    reports = []
    for i, s in enumerate(samples):
        out = run_sample(s, cfg.segment, cfg.retrieval, cfg.compress, video_id=i)
        reports.append(sample_report(i, s, out))
    path = _out_path(args, cfg, "pipeline.json")
    _check_fresh(path, args.force)
    _write_json(path, {"config": cfg.to_dict(), "samples": reports})
    print(f"wrote {len(reports)} sample reports to {path}")
    return EXIT_OK


def save_sequence(seq: TokenSequence, path) -> None:
    with open(path, "wb") as fh:
        np.savez(fh, frames=seq.frames, timestamps=seq.timestamps, grid_hw=np.array(seq.grid_hw))


def load_sequence(path) -> TokenSequence:
    try:
        with np.load(path) as z:
            return TokenSequence(z["frames"], z["timestamps"], tuple(int(v) for v in z["grid_hw"]))
    except (KeyError, ValueError) as exc:
        raise FormatError(f"{path}: not a token-sequence container ({exc})") from None


def cmd_compress(args) -> int:
    cfg = _config(args)
    seq = load_sequence(args.input)
    out_seq, report = compress_sequence(seq, cfg.compress)
    out = _out_path(args, cfg, "compressed.npz")
    _check_fresh(out, args.force)
    save_sequence(out_seq, out)
    text = json.dumps(report.to_dict(), indent=2, sort_keys=True)
    if args.report:
        atomic_write(args.report, (text + "\n").encode("utf-8"))
    else:
        print(text)
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _config(args)
    samples = load_dataset(_data_path(args, cfg))
    data, held_out = split(prepare(samples, cfg), cfg.train.eval_samples)
    out = _out_path(args, cfg, "run")
    out.mkdir(parents=True, exist_ok=True)
    csv_path, policy_path = out / "metrics.csv", out / "policy.json"
    for p in (csv_path, policy_path):
        _check_fresh(p, args.force)
    policy, history = train(data, cfg, held_out)
    atomic_write(csv_path, metrics_csv(history).encode("utf-8"))
    atomic_write(policy_path, policy_to_json(policy).encode("utf-8"))
    print(f"wrote {csv_path} and {policy_path}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _config(args)
    policy = policy_from_json(Path(args.policy).read_text(encoding="utf-8"))
    samples = load_dataset(_data_path(args, cfg))
    data = prepare(samples, cfg)
    if args.split == "heldout":
        _, data = split(data, cfg.train.eval_samples)
        if data is None:
            raise ConfigError("train.eval_samples is 0; nothing held out")
    result = evaluate(policy, data, cfg.cgrpo)
    text = json.dumps(result, indent=2, sort_keys=True)
    if args.out:
        _check_fresh(Path(args.out), args.force)
        atomic_write(args.out, (text + "\n").encode("utf-8"))
    else:
        print(text)
    return EXIT_OK


def _bank_summary(bank) -> dict:
    return {"dim": bank.dim, "fragments": len(bank), "videos": len({f.video_id for f in bank.fragments})}


def cmd_bank(args) -> int:
    if args.action == "save":
        cfg = _config(args)
        samples = load_dataset(_data_path(args, cfg))
        bank = build_bank(((i, s.video) for i, s in enumerate(samples)), cfg.segment)
        out = _out_path(args, cfg, "bank.marcbank")
        _check_fresh(out, args.force)
        bank_save(bank, out)
        print(json.dumps(_bank_summary(bank), sort_keys=True))
        return EXIT_OK
    if not args.input:
        raise ConfigError("bank load/inspect needs --in")
    bank = bank_load(args.input)
    if args.action == "load":
        print(json.dumps(_bank_summary(bank), sort_keys=True))
    else:
        rows = [
            {
                "fragment_id": f.fragment_id,
                "video_id": f.video_id,
                "start_frame": f.start_frame,
                "end_frame": f.end_frame,
                "start_time": f.start_time,
                "end_time": f.end_time,
            }
            for f in bank.fragments
        ]
        print(json.dumps({**_bank_summary(bank), "records": rows}, indent=2, sort_keys=True))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="retcomp",
        description="Retrieve-then-compress video token experiments on synthetic data.",
        epilog="Defaults: top-k 3, at most 64 frames sampled at 1 fps, group size 8, "
        "KL weight 0.04, tau 0.6, single-frame compression target.",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, data=True):
        p.add_argument("--config", help="INI-style run config (see README)")
        p.add_argument("--seed", type=int, help="master seed (default from [run] seed, 0)")
        p.add_argument("--out", help="output path")
        p.add_argument("--force", action="store_true", help="overwrite existing outputs")
        if data:
            p.add_argument("--data", help="MARCDATA dataset file")

    p = sub.add_parser("gen-data", help="generate a synthetic dataset and its JSON manifest")
    common(p, data=False)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("pipeline", help="segment, retrieve and compress every sample; JSON report")
    common(p)
    p.add_argument("--top-k", type=int, help="fragments to retrieve (default 3)")
    p.add_argument("--rho", type=float, help="compression ratio in (0, 1) (default 0.75)")
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("compress", help="compress one token sequence stored as .npz")
    common(p, data=False)
    p.add_argument("--in", dest="input", required=True, help="input .npz with frames, timestamps, grid_hw")
    p.add_argument("--rho", type=float, help="compression ratio in (0, 1) (default 0.75)")
    p.add_argument("--report", help="write the compression report JSON here instead of stdout")
    p.set_defaults(func=cmd_compress)

    p = sub.add_parser("train", help="train the toy policy; writes metrics.csv and policy.json")
    common(p)
    p.add_argument("--mode", choices=("cgrpo", "grpo", "sft"), help="training objective (default cgrpo)")
    p.add_argument("--tau", type=float, help="minimum retention for the compression bonus (default 0.6)")
    p.add_argument("--top-k", type=int, help="fragments to retrieve (default 3)")
    p.add_argument("--rho", type=float, help="compression ratio in (0, 1) (default 0.75)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="argmax accuracy on full and compressed inputs")
    common(p)
    p.add_argument("--policy", required=True, help="policy.json written by train")
    p.add_argument("--split", choices=("all", "heldout"), default="heldout")
    p.add_argument("--top-k", type=int)
    p.add_argument("--rho", type=float)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bank", help="build, load or inspect a MARCBANK memory bank")
    p.add_argument("action", choices=("save", "load", "inspect"))
    common(p)
    p.add_argument("--in", dest="input", help="bank file for load/inspect")
    p.set_defaults(func=cmd_bank)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FormatError, OSError, RetcompError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
