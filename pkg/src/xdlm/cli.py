"""Command-line entry point: ``xdlm verify | train | sample | bench``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from xdlm import bench, verify
from xdlm.config import load_config
from xdlm.corpus import CharVocab, build_vocab, detokenize, load_text, pack
from xdlm.denoiser import (
    TrainConfig, config_dict, context_for, load_checkpoint, save_checkpoint, smoothed, train,
)
from xdlm.errors import XDLMError
from xdlm.sampler import GenSchedule, ancestral_sample, confidence_generate, default_gen_schedule, eval_generation

log = logging.getLogger("xdlm")


def cmd_verify(args) -> int:
    results = verify.run_all(args.seed, args.trials)
    if args.json:
        print(json.dumps([r.__dict__ for r in results], indent=2))
    else:
        for r in results:
            print(r.line())
    failed = [r.name for r in results if not r.passed]
    if failed:
        print(f"verify failed: {', '.join(failed)}", file=sys.stderr)
        return 1
    return 0


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    train_cfg = cfg.train
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.steps is not None:
        overrides["steps"] = args.steps
    if overrides:
        train_cfg = TrainConfig(**{**config_dict(train_cfg), **overrides})
    if cfg.corpus is None:
        raise XDLMError(f"{args.config}: [train] corpus is required")
    text = load_text(cfg.corpus)
    vocab = build_vocab(text)
    seqs = np.array(pack(text, vocab, train_cfg.seq_len))
    if len(seqs) == 0:
        raise XDLMError(f"corpus shorter than seq_len={train_cfg.seq_len}")
    result = train(train_cfg, seqs, vocab.N, vocab.mask_id)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    meta = {
        "config": config_dict(train_cfg),
        "schedule": cfg.schedule,
        "vocab": vocab.to_json(),
        "corpus": str(Path(cfg.corpus).resolve()),
        "history": result.history,
    }
    save_checkpoint(out / "model.bin", result.model, meta)
    (out / "history.json").write_text(json.dumps(result.history, indent=2), encoding="utf-8")
    vocab.save(out / "vocab.json")
    summary = {"steps": train_cfg.steps, "parameters": result.model.num_parameters()}
    if result.history:
        first, last = smoothed(result.history)
        summary.update(initial_loss=first, final_loss=last, ratio=last / first)
    print(json.dumps(summary) if args.json else
          " ".join(f"{k}={v:.4g}" if isinstance(v, float) else f"{k}={v}" for k, v in summary.items()))
    return 0


def cmd_sample(args) -> int:
    model, meta = load_checkpoint(args.checkpoint)
    train_cfg = TrainConfig(**meta["config"])
    vocab = CharVocab.from_json(meta["vocab"])
    ctx = context_for(train_cfg, model.N, model.mask_id)
    out = Path(args.out)
    (out / "traces").mkdir(parents=True, exist_ok=True)
    T, L = args.steps, model.L
    gen = default_gen_schedule(L, T, train_cfg.k)
    if args.topk_uniform is not None:
        gen = GenSchedule(gen.topk_absorb, (args.topk_uniform,) * T)
    samples, remask = [], 0
    for i in range(args.n):
        seed = args.seed + i
        if args.mode == "ancestral":
            ids, trace = ancestral_sample(ctx, model, L, T, seed)
        else:
            ids, trace = confidence_generate(model, gen, L, model.mask_id, train_cfg.k, seed)
        remask += trace.count("REMASK") > 0
        samples.append(ids)
        (out / "traces" / f"sample_{i:04d}.jsonl").write_text(trace.to_jsonl(), encoding="utf-8")
    (out / "samples.txt").write_text("".join(detokenize(s, vocab) + "\n" for s in samples), encoding="utf-8")
    (out / "samples.json").write_text(json.dumps([s.tolist() for s in samples]), encoding="utf-8")
    summary = {"n": args.n, "mode": args.mode, "steps": T, "traces_with_remask": remask}
    corpus = meta.get("corpus")
    if corpus and Path(corpus).exists():
        reference = pack(load_text(corpus), vocab, L)
        summary.update(eval_generation(samples, reference))
    print(json.dumps(summary) if args.json else
          " ".join(f"{k}={v:.4g}" if isinstance(v, float) else f"{k}={v}" for k, v in summary.items()))
    return 0


def cmd_bench(args) -> int:
    Ns = [int(v) for v in args.N.split(",")]
    report = bench.run_bench(Ns, args.batch, args.reps, args.seed)
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        (Path(args.out) / "bench.json").write_text(report.to_json(), encoding="utf-8")
    if args.json:
        print(report.to_json())
    else:
        print(report.table())
        for N in Ns:
            print(f"N={N}: scalar/oracle time ratio {report.speed_ratio(N):.4f}")
        if len(Ns) >= 2:
            print(f"memory exponent scalar={report.memory_exponent('scalar'):.2f} "
                  f"oracle={report.memory_exponent('oracle'):.2f}")
    return 0


def _positive(value: str) -> int:
    n = int(value)
    if n < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {n}")
    return n


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="xdlm", description="Mixed discrete diffusion toolkit")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("verify", help="scalar vs oracle, reductions, limit and gradient checks")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trials", type=_positive, default=1000)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("train", help="train the toy denoiser from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default="runs/train")
    p.add_argument("--seed", type=int)
    p.add_argument("--steps", type=int)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sample", help="generate from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--mode", choices=("ancestral", "confidence"), default="ancestral")
    p.add_argument("--steps", type=_positive, default=32)
    p.add_argument("--n", type=_positive, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--topk-uniform", type=int, help="refine budget per step (confidence mode)")
    p.add_argument("--out", default="runs/sample")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("bench", help="scalar vs dense oracle throughput and allocation")
    p.add_argument("--N", default="64,256,1024", help="comma-separated vocabulary sizes")
    p.add_argument("--batch", type=_positive, default=32)
    p.add_argument("--reps", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except XDLMError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
