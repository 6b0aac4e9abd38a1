"""命令行工具 - 风电功率预测流水线的各个入口

用法示例：
    wind-forecast --config run.yaml train
    wind-forecast --config run.yaml --set train.epochs=1 --seed 7 evaluate
    wind-forecast --show-config
"""

import argparse
import sys
from pathlib import Path

from loguru import logger
from pydantic import ValidationError

from models.errors import ForecastError


def setup_logging(output_dir: Path | str = "outputs", level: str = "INFO"):
    logger.remove()
    logger.add(
        sys.stderr,
        level=level,
        format="<green>{time:HH:mm:ss}</green> | <level>{level: <8}</level> | {message}",
    )
    logger.add(
        Path(output_dir) / "logs" / "pipeline.log",
        level="DEBUG",
        format="{time:YYYY-MM-DD HH:mm:ss} | {level: <8} | {message}",
        rotation="50 MB",
    )


def cmd_inspect(args, config) -> int:
    """数据集概况"""
    from forecaster.pipeline import ForecastPipeline
    from ingestion.loader import summarize_series

    series = ForecastPipeline(config).load_series()
    summary = summarize_series(series)
    print(
        f"{summary['n_turbines']} turbines, {summary['n_days']} days "
        f"({summary['n_steps']} steps)"
    )
    print(f"有效目标步: {summary['valid_target_steps']}, 无效占比: {summary['invalid_pct']:.2f}%")
    print("各角色缺失占比:")
    for role, pct in summary["missing_pct"].items():
        print(f"  {role:<20} {pct:6.2f}%")
    return 0


def cmd_train(args, config) -> int:
    """训练并写出检查点、缩放器、日波动曲线与损失曲线"""
    from forecaster.pipeline import ForecastPipeline

    artifacts = ForecastPipeline(config).train()
    print(f"训练完成，各 epoch 平均损失: {[round(v, 4) for v in artifacts.loss_history]}")
    print(f"产物目录: {config.paths.output_dir}")
    return 0


def cmd_predict(args, config) -> int:
    """对输入 CSV 末尾的历史窗口做 288 步预测"""
    from forecaster.pipeline import ForecastPipeline

    frame = ForecastPipeline(config).predict(args.input)
    out = config.paths.resolve("forecast")
    print(f"预测 {frame['turbine_id'].nunique()} 台风机, 共 {len(frame)} 行 -> {out}")
    return 0


def cmd_evaluate(args, config) -> int:
    """在验证区间上回测模型与持续性基线"""
    from evaluation.backtest import format_table
    from forecaster.pipeline import ForecastPipeline

    result = ForecastPipeline(config).evaluate()
    print(format_table(result))
    print(f"报告: {config.paths.resolve('report')}")
    return 0


def cmd_gradcheck(args, config) -> int:
    """自动微分原语与缩小版整模型的有限差分检查"""
    from contextlib import nullcontext

    from autodiff.gradcheck import primitive_suite, sabotage
    from forecaster.model import model_gradcheck

    guard = sabotage(args.break_op) if args.break_op else nullcontext()
    with guard:
        results = primitive_suite(trials=args.trials, seed=args.check_seed)
        results.append(model_gradcheck(seed=args.check_seed))
    failed = [r.name for r in results if not r.passed]
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"  [{status}] {r.name:<12} {r.max_error:.3e} < {r.tolerance:.0e}")
    if failed:
        print(f"梯度检查未通过: {failed}")
        return 1
    print("全部梯度检查通过")
    return 0


def cmd_synth(args, config) -> int:
    """生成合成 SDWPF 风格数据"""
    from data.synthetic import SynthSpec, write_csv

    spec = SynthSpec(
        n_turbines=args.turbines,
        n_days=args.days,
        seed=args.synth_seed,
        invalid_fraction=args.invalid_fraction,
    )
    path = write_csv(spec, args.out, config.data.columns)
    print(f"合成数据: {spec.n_turbines} 台风机 × {spec.n_days} 天 -> {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="风电功率 BERT 预测工具")
    parser.add_argument("--config", type=Path, default=None, help="YAML 配置文件")
    parser.add_argument("--show-config", action="store_true", help="打印生效配置后退出")
    parser.add_argument("--seed", type=int, default=None, help="统一覆盖所有随机种子")
    parser.add_argument("--output-dir", type=Path, default=None, help="产物目录")
    parser.add_argument(
        "--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
        help="dotted 配置覆盖，可重复，如 --set train.epochs=1",
    )
    subparsers = parser.add_subparsers(dest="command", help="子命令")

    # inspect
    p_inspect = subparsers.add_parser("inspect", help="查看数据集概况")
    p_inspect.set_defaults(func=cmd_inspect)

    # train
    p_train = subparsers.add_parser("train", help="训练模型并写出产物")
    p_train.set_defaults(func=cmd_train)

    # predict
    p_predict = subparsers.add_parser("predict", help="输出未来 288 步预测")
    p_predict.add_argument("--input", type=Path, default=None, help="历史数据 CSV，缺省用 data.path")
    p_predict.set_defaults(func=cmd_predict)

    # evaluate
    p_eval = subparsers.add_parser("evaluate", help="验证区间回测")
    p_eval.set_defaults(func=cmd_evaluate)

    # gradcheck
    p_grad = subparsers.add_parser("gradcheck", help="有限差分梯度检查")
    p_grad.add_argument("--trials", type=int, default=100, help="每个原语的随机用例数")
    p_grad.add_argument("--check-seed", type=int, default=0, help="用例随机种子")
    p_grad.add_argument("--break", dest="break_op", default=None, metavar="OP",
                        help="故意破坏某个原语的反向规则（负对照）")
    p_grad.set_defaults(func=cmd_gradcheck)

    # synth
    p_synth = subparsers.add_parser("synth", help="生成合成数据 CSV")
    p_synth.add_argument("--turbines", type=int, default=2)
    p_synth.add_argument("--days", type=int, default=60)
    p_synth.add_argument("--synth-seed", type=int, default=2022)
    p_synth.add_argument("--invalid-fraction", type=float, default=0.0)
    p_synth.add_argument("--out", type=Path, required=True, help="输出 CSV 路径")
    p_synth.set_defaults(func=cmd_synth)

    return parser


def main(argv: list[str] | None = None) -> int:
    from config.settings import dump_run_config, load_run_config

    parser = build_parser()
    args = parser.parse_args(argv)

    overrides = list(args.overrides)
    if args.output_dir is not None:
        overrides.append(f"paths.output_dir={args.output_dir}")
    try:
        config = load_run_config(args.config, overrides, seed=args.seed)
    except (ValidationError, ValueError, OSError) as e:
        print(f"配置错误: {e}", file=sys.stderr)
        return 1

    if args.show_config:
        print(config.to_yaml(), end="")
        return 0
    if args.command is None:
        parser.print_help()
        return 0

    setup_logging(config.paths.output_dir)
    dump_run_config(config, config.paths.output_dir / "run_config.yaml")
    try:
        return args.func(args, config)
    except (ForecastError, ValidationError) as e:
        logger.error(f"{args.command} 失败: {e}")
        return 1


def run():
    sys.exit(main())


if __name__ == "__main__":
    run()
