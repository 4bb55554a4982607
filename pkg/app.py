# -*- coding: UTF-8 -*-
# 命令行入口：python app.py <command>

import argparse
import json
import os
import sys
from typing import List, Optional, Sequence

from app_config import AppConfig
from config import BenchConfig, RunConfig, SyntheticSpec, TASKS
from services.ablation import DEFAULT_SWEEPS, AblationRunner
from services.bench import Benchmark
from services.synthetic import SyntheticGenerator
from services.trainer import MetricWriter, Trainer
from services.verifier import Verifier
from utils.errors import ConfigError, GsmtError
from utils.logger import logger

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2


def resolve_config_path(value: str) -> str:
    """
    解析 --config 参数

    既可以是文件路径，也可以是 config/ 下的预设名（如 toy、full）
    """
    if os.path.isfile(value):
        return value
    preset = AppConfig.preset_path(value)
    if os.path.isfile(preset):
        return preset
    raise ConfigError(f"config '{value}' is neither a file nor a preset under {AppConfig.CONFIG_DIR}")


def load_run_config(value: str, **overrides) -> RunConfig:
    config = RunConfig.load_config(resolve_config_path(value))
    extra = {k: v for k, v in overrides.items() if v is not None}
    if extra:
        config.update_config(extra)
    return config


def split_list(text: str) -> List[str]:
    return [item.strip() for item in text.split(",") if item.strip()]


def parse_lengths(text: str) -> List[int]:
    try:
        return [int(item) for item in split_list(text)]
    except ValueError as e:
        raise ConfigError(f"--lengths expects comma-separated integers, got '{text}'") from e


def emit(record: dict) -> None:
    """把命令结果以单行 JSON 写到 stdout"""
    sys.stdout.write(json.dumps(record) + "\n")
    sys.stdout.flush()


def cmd_train(args: argparse.Namespace) -> int:
    config = load_run_config(args.config, steps=args.steps, checkpoint=args.checkpoint,
                             resume_from=args.resume)
    result = Trainer(config, writer=MetricWriter(sys.stdout)).train()
    logger.info(f"训练结束: step={result.step}, train_acc={result.final_train_acc:.4f}")
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    config = load_run_config(args.config)
    report = Trainer(config).evaluate_checkpoint(args.checkpoint)
    emit(report.to_dict())
    return EXIT_OK


def cmd_gen_synthetic(args: argparse.Namespace) -> int:
    spec = SyntheticSpec(task=args.task, T=args.T, N=args.N, I=args.I, vocab=args.vocab,
                         noise_sigma=args.noise_sigma, samples=args.samples, seed=args.seed,
                         d=args.d, words=args.words, window_segments=args.k)
    count = SyntheticGenerator(spec).write(args.out)
    emit({"out": args.out, "files": count, "samples": spec.samples})
    return EXIT_OK


def cmd_verify(args: argparse.Namespace) -> int:
    verifier = Verifier(seeds=args.seeds)
    unknown = [name for name in (args.suite or []) if name not in verifier.suites()]
    if unknown:
        raise ConfigError(f"unknown suites {unknown}, expected a subset of {', '.join(verifier.suites())}")
    results = verifier.run_all(args.suite)
    for result in results:
        sys.stdout.write(result.line() + "\n")
    sys.stdout.flush()
    return EXIT_OK if all(r.passed for r in results) else EXIT_FAILURE


def cmd_bench(args: argparse.Namespace) -> int:
    benchmark = Benchmark(split_list(args.mechanisms), parse_lengths(args.lengths), args.runs)
    text = Benchmark.write(benchmark.run(), args.out)
    if not args.out:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_ablate(args: argparse.Namespace) -> int:
    config = load_run_config(args.config, steps=args.steps)
    values = split_list(args.values) if args.values else None
    runner = AblationRunner(config, args.sweep, values)
    text = AblationRunner.write(runner.run(), args.out)
    if not args.out:
        sys.stdout.write(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gsmt", description="Gated state-space multimodal transformer toolkit")
    commands = parser.add_subparsers(dest="command", required=True)

    train = commands.add_parser("train", help="train a model and stream JSON metrics")
    train.add_argument("--config", required=True, help="config file or preset name")
    train.add_argument("--steps", type=int, default=None, help="override the configured step count")
    train.add_argument("--checkpoint", default=None, help="where to write the final checkpoint")
    train.add_argument("--resume", default=None, help="checkpoint to resume from")
    train.set_defaults(handler=cmd_train)

    evaluate = commands.add_parser("eval", help="noise-free accuracy of a checkpoint on the eval split")
    evaluate.add_argument("--config", required=True)
    evaluate.add_argument("--checkpoint", required=True)
    evaluate.set_defaults(handler=cmd_eval)

    defaults = SyntheticSpec()
    gen = commands.add_parser("gen-synthetic", help="write a planted-rule dataset directory")
    gen.add_argument("--task", required=True, choices=TASKS)
    gen.add_argument("--out", required=True)
    gen.add_argument("--seed", type=int, default=defaults.seed)
    gen.add_argument("--samples", type=int, default=defaults.samples)
    gen.add_argument("--T", type=int, default=defaults.T)
    gen.add_argument("--N", type=int, default=defaults.N)
    gen.add_argument("--I", type=int, default=defaults.I)
    gen.add_argument("--vocab", type=int, default=defaults.vocab)
    gen.add_argument("--noise-sigma", type=float, default=defaults.noise_sigma)
    gen.add_argument("--d", type=int, default=defaults.d)
    gen.add_argument("--words", type=int, default=defaults.words)
    gen.add_argument("--k", type=int, default=defaults.window_segments, help="selection window in segments")
    gen.set_defaults(handler=cmd_gen_synthetic)

    verify = commands.add_parser("verify", help="run the numerical oracle suites")
    verify.add_argument("--suite", action="append", help="run only this suite (repeatable)")
    verify.add_argument("--seeds", type=int, default=100, help="random instances per suite")
    verify.set_defaults(handler=cmd_verify)

    bench = commands.add_parser("bench", help="peak buffer and wall-time scaling per mechanism")
    bench.add_argument("--mechanisms", default=",".join(BenchConfig.MECHANISMS))
    bench.add_argument("--lengths", default=",".join(str(n) for n in BenchConfig.LENGTHS))
    bench.add_argument("--runs", type=int, default=BenchConfig.RUNS)
    bench.add_argument("--out", default=None, help="CSV path (stdout when omitted)")
    bench.set_defaults(handler=cmd_bench)

    ablate = commands.add_parser("ablate", help="train one model per sweep value")
    ablate.add_argument("--sweep", required=True, choices=tuple(DEFAULT_SWEEPS))
    ablate.add_argument("--config", required=True)
    ablate.add_argument("--values", default=None, help="comma-separated sweep values")
    ablate.add_argument("--steps", type=int, default=None)
    ablate.add_argument("--out", default=None, help="CSV path (stdout when omitted)")
    ablate.set_defaults(handler=cmd_ablate)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """
    解析参数并执行子命令

    Returns:
        int: 0 成功；1 校验失败或其他 GsmtError；2 用法或配置错误
    """
    args = build_parser().parse_args(argv)
    AppConfig.initialize()
    try:
        return args.handler(args)
    except ConfigError as e:
        logger.error(f"配置错误: {e}")
        return EXIT_USAGE
    except GsmtError as e:
        logger.error(f"{args.command} 失败: {e}")
        return EXIT_FAILURE


if __name__ == '__main__':
    sys.exit(main())
