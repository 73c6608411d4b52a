# main.py - 命令行入口
"""
python main.py parse FILE            解析并做良构检查
python main.py run FILE              按调度策略运行, 输出轨迹
python main.py graph FILE            探索可达状态图
python main.py teleport-check [FILE] 随机输入上检查隐形传态规约
python main.py fmt FILE              规范化打印
python main.py schema [KIND]         打印 JSON 输出的模式 (run 或 teleport-check)

退出码: 0 正常, 1 解析/校验失败, 2 读文件失败, 3 死锁, 4 步数用尽, 5 引擎错误, 6 隐形传态检查未通过
"""
import argparse
import json
import sys
from pathlib import Path

import numpy as np
from loguru import logger

from config import POLICY_NAMES, Config, ConfigError, setup_logging
from eqp_parser import ParseError, format_ket, parse, pretty_print
from lts_engine import EngineError, LtsEngine, Status, make_policy
from protocol_lib import (MUTATIONS, SpecError, bundled_program, check_spec, mutate,
                          teleport_branches)
from quantum_core import QuantumError, random_ket
from reporter import Reporter
from trace_format import (SCHEMAS, BranchSummary, TeleportCheckDocument, report_document, trace_json,
                          trace_schema)

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_IO = 2
EXIT_DEADLOCK = 3
EXIT_BUDGET = 4
EXIT_ENGINE = 5
EXIT_TELEPORT = 6

STATUS_EXIT = {
    Status.TERMINATED: EXIT_OK,
    Status.DEADLOCKED: EXIT_DEADLOCK,
    Status.BUDGET: EXIT_BUDGET,
    Status.ERROR: EXIT_ENGINE,
}

# 失败的试验最多在 JSON 里列出这么多条
MAX_FAILURE_REPORTS = 10


def build_parser(config: Config) -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--seed', type=int, default=config.SEED, help='随机种子 (u64)')
    common.add_argument('--policy', choices=POLICY_NAMES, default=config.POLICY, help='调度策略')
    common.add_argument('--max-steps', type=int, default=config.MAX_STEPS, help='最多走多少步')
    common.add_argument('--depth', type=int, default=config.GRAPH_DEPTH, help='状态图/穷举的深度上限')
    common.add_argument('--format', choices=('human', 'json'), default='human', help='输出格式')

    parser = argparse.ArgumentParser(prog='eqpalg', description='🧬 eQPAlg 量子进程代数解释器')
    sub = parser.add_subparsers(dest='command', required=True)

    p = sub.add_parser('parse', parents=[common], help='解析并检查 .eqp 文件')
    p.add_argument('path')
    p = sub.add_parser('run', parents=[common], help='运行 main 进程')
    p.add_argument('path')
    p = sub.add_parser('graph', parents=[common], help='可达状态图')
    p.add_argument('path')
    p = sub.add_parser('teleport-check', parents=[common], help='隐形传态规约检查')
    p.add_argument('path', nargs='?', default=None, help='默认使用内置的 teleport.eqp')
    p.add_argument('--trials', type=int, default=config.TRIALS, help='随机输入的个数')
    p.add_argument('--mutate', choices=MUTATIONS, default=None, help='先对协议做变异')
    p = sub.add_parser('fmt', parents=[common], help='规范化打印')
    p.add_argument('path')
    p = sub.add_parser('schema', parents=[common], help='打印 JSON 输出的模式')
    p.add_argument('kind', nargs='?', choices=tuple(SCHEMAS), default='run')
    return parser


def _read(path):
    try:
        return Path(path).read_bytes()
    except OSError as e:
        logger.error(f"❌ 读取失败 {path}: {e.strerror or e}")
        return None


def _load(path):
    """读文件并解析, 失败时返回退出码"""
    data = _read(path)
    if data is None:
        return None, EXIT_IO
    try:
        source = parse(data)
    except ParseError as e:
        print(f"{path}:{e}", file=sys.stderr)
        return None, EXIT_INVALID
    logger.info(f"✅ 解析完成: {path}, {len(source.defs)} 个进程定义")
    return source, EXIT_OK


def cmd_parse(args, reporter):
    source, code = _load(args.path)
    if source is None:
        return code
    if args.format == 'json':
        doc = {
            'path': args.path,
            'main': source.main,
            'defs': [{'name': d.name, 'params': [[p.name, p.vtype.value] for p in d.params]}
                     for d in source.defs],
            'spec': source.spec is not None,
        }
        print(json.dumps(doc, ensure_ascii=False, indent=2))
    else:
        reporter.print_source_summary(args.path, source)
    return EXIT_OK


def _engine_failure(e: EngineError, args):
    logger.error(f"❌ 引擎错误 [{e.rule}]: {e.message}")
    if e.partial_trace is not None and args.format == 'json':
        print(trace_json(e.partial_trace))
    return EXIT_ENGINE


def cmd_run(args, reporter):
    source, code = _load(args.path)
    if source is None:
        return code
    if args.max_steps < 1:
        logger.error(f"❌ --max-steps 必须是正整数, 得到 {args.max_steps}")
        return EXIT_INVALID
    policy = make_policy(args.policy, args.seed, args.depth)
    try:
        trace = LtsEngine(source).run(policy, args.max_steps, args.seed)
    except EngineError as e:
        if e.partial_trace is not None and args.format == 'human':
            reporter.print_trace(e.partial_trace)
        return _engine_failure(e, args)
    if args.format == 'json':
        print(trace_json(trace))
    else:
        reporter.print_trace(trace)
    reporter.log_trace(args.path, trace)
    return STATUS_EXIT[trace.status]


def cmd_graph(args, reporter, config):
    source, code = _load(args.path)
    if source is None:
        return code
    try:
        graph = LtsEngine(source).reachable_graph(args.depth, config.MAX_NODES)
        summary = reporter.graph_summary(graph)
    except EngineError as e:
        return _engine_failure(e, args)
    if args.format == 'json':
        print(json.dumps(summary, ensure_ascii=False, indent=2))
    else:
        reporter.print_graph(summary)
    return EXIT_OK


def _branch_summary(row) -> BranchSummary:
    return BranchSummary(branch=row['branch'], runs=int(row['runs']), min_fidelity=float(row['min_fidelity']),
                         mean_fidelity=float(row['mean_fidelity']), failures=int(row['failures']))


def cmd_teleport_check(args, reporter, config):
    if args.path is None:
        source = bundled_program('teleport')
    else:
        source, code = _load(args.path)
        if source is None:
            return code
    if args.mutate:
        try:
            source = mutate(source, args.mutate)
        except ValueError as e:
            logger.error(f"❌ 变异失败: {e}")
            return EXIT_INVALID
    spec = source.spec or bundled_program('teleport').spec

    if args.trials <= 0:
        logger.warning("⚠️ trials=0, 没有可检查的输入, 视为通过")
        if args.format == 'json':
            doc = TeleportCheckDocument(trials=0, seed=args.seed, mutation=args.mutate, passed=True, branches=[])
            print(doc.model_dump_json(indent=2, exclude_none=True))
        return EXIT_OK

    rng = np.random.default_rng(args.seed)
    rows, failures = [], []
    try:
        for trial in range(args.trials):
            state = random_ket(rng)
            reports = teleport_branches(state, source, args.depth, config.MAX_NODES)
            if not reports:
                logger.error(f"❌ 第 {trial + 1} 次: 输入 {format_ket(state)} 没有正常结束的分支")
                rows.append((trial, '-', 0.0, False))
                continue
            for report in reports:
                verdict = check_spec(spec, report.trace, report, source)
                rows.append((trial, report.branch or '-', report.fidelity, verdict.passed))
                if not verdict.passed:
                    failures.append((report, verdict))
    except SpecError as e:
        logger.error(f"❌ 规约不合法: {e}")
        return EXIT_INVALID
    except EngineError as e:
        return _engine_failure(e, args)

    table = reporter.branch_table(rows)
    passed = all(ok for *_, ok in rows)
    if args.format == 'json':
        doc = TeleportCheckDocument(
            trials=args.trials, seed=args.seed, mutation=args.mutate, passed=passed,
            branches=[_branch_summary(r) for r in table.to_dict('records')],
            failures=[report_document(r, v) for r, v in failures[:MAX_FAILURE_REPORTS]],
        )
        print(doc.model_dump_json(indent=2, exclude_none=True))
    else:
        reporter.print_check(table, args.trials, passed, args.mutate)
        if failures:
            report, verdict = failures[0]
            print(f"\n❌ 第一个失败的输入: {format_ket(report.input_state)}")
            reporter.print_report(report, verdict)
    reporter.save_to_log('teleport-check', trials=args.trials, seed=args.seed, mutation=args.mutate,
                         passed=passed, failures=len(failures))
    return EXIT_OK if passed else EXIT_TELEPORT


def cmd_fmt(args, reporter):
    source, code = _load(args.path)
    if source is None:
        return code
    sys.stdout.write(pretty_print(source))
    return EXIT_OK


def cmd_schema(args):
    print(json.dumps(trace_schema(args.kind), ensure_ascii=False, indent=2))
    return EXIT_OK


def main(argv=None) -> int:
    try:
        config = Config()
    except ConfigError as e:
        print(f"❌ 配置错误: {e}", file=sys.stderr)
        return EXIT_INVALID
    setup_logging(config.LOG_LEVEL)
    args = build_parser(config).parse_args(argv)
    reporter = Reporter(color=config.COLOR and args.format == 'human', log_file=config.TRACE_LOG)
    logger.debug(f"🔧 {args.command}: seed={args.seed} policy={args.policy}")

    try:
        if args.command == 'parse':
            return cmd_parse(args, reporter)
        if args.command == 'run':
            return cmd_run(args, reporter)
        if args.command == 'graph':
            return cmd_graph(args, reporter, config)
        if args.command == 'teleport-check':
            return cmd_teleport_check(args, reporter, config)
        if args.command == 'schema':
            return cmd_schema(args)
        return cmd_fmt(args, reporter)
    except QuantumError as e:
        logger.error(f"❌ 量子运算错误: {e}")
        return EXIT_ENGINE
    except ValueError as e:
        logger.error(f"❌ 参数错误: {e}")
        return EXIT_INVALID


if __name__ == "__main__":
    try:
        sys.exit(main())
    except KeyboardInterrupt:
        print("\n👋 已停止", file=sys.stderr)
        sys.exit(130)
