# reporter.py - 终端彩色输出与 JSON 行日志
import json
import os
from datetime import datetime

import pandas as pd
from colorama import Fore, Style, just_fix_windows_console

from eqp_parser import format_ket
from lts_engine import Meas, Status, Tau, terminal_nodes, trace_to
from quantum_core import purity

STATUS_EMOJI = {
    Status.TERMINATED: '✅',
    Status.DEADLOCKED: '🔒',
    Status.BUDGET: '⏳',
    Status.ERROR: '❌',
}


class Reporter:
    """人类可读输出写到 stdout; 可选地把每次运行的摘要追加到 JSON 行日志"""

    def __init__(self, color=True, log_file=None, stream=None):
        self.color = color
        self.log_file = log_file
        self.stream = stream
        if color:
            just_fix_windows_console()
        if log_file:
            os.makedirs(os.path.dirname(os.path.abspath(log_file)), exist_ok=True)

    def _c(self, code):
        return code if self.color else ''

    def _print(self, text=''):
        print(text, file=self.stream)

    def _rule(self):
        self._print(f"{self._c(Fore.YELLOW)}{'=' * 60}{self._c(Style.RESET_ALL)}")

    def _title(self, text, color=Fore.BLUE):
        self._print(f"{self._c(Style.BRIGHT)}{self._c(color)}{text}{self._c(Style.RESET_ALL)}")

    # ------------------------------------------------------------ 解析

    def print_source_summary(self, path, source):
        self._title(f"📄 {path}")
        for d in source.defs:
            params = ', '.join(f"{p.name}: {p.vtype.value}" for p in d.params)
            marker = ' ← main' if d.name == source.main else ''
            self._print(f"  • {d.name}({params}){marker}")
        if source.spec is not None:
            self._print(f"  • spec: {len(source.spec.groups)} 个变量组, {len(source.spec.states)} 个态, "
                        f"{len(source.spec.resources)} 条资源不等式")

    # ------------------------------------------------------------ 轨迹

    def print_trace(self, trace):
        reset = self._c(Style.RESET_ALL)
        self._rule()
        self._title(f"🔄 轨迹 (policy={trace.policy}, seed={trace.rng_seed})")
        self._rule()
        for i, s in enumerate(trace.steps, 1):
            label = s.label
            if isinstance(label, Tau):
                color = Fore.CYAN
            elif isinstance(label, Meas):
                color = Fore.MAGENTA
            else:
                color = Fore.GREEN
            ctx = s.target.ctx
            self._print(f"  {i:>4}  {self._c(color)}{label}{reset}  "
                        f"[{', '.join(ctx.qreg)}]  f={ctx.f}")
        final = trace.final.ctx
        color = Fore.GREEN if trace.status is Status.TERMINATED else Fore.RED
        self._print()
        self._print(f"{STATUS_EMOJI[trace.status]} {self._c(color)}{trace.status.value}{reset} "
                    f"| {len(trace.steps)} 步 | 寄存器 [{', '.join(final.qreg)}] "
                    f"| 纯度 {purity(final.rho) if final.qreg else 1.0:.6f}")

    # ------------------------------------------------------------ 状态空间

    def graph_summary(self, graph):
        """终止/死锁配置与到达概率"""
        rows = []
        for status in (Status.TERMINATED, Status.DEADLOCKED):
            for key in terminal_nodes(graph, status):
                trace, probability = trace_to(graph, key)
                ctx = trace.final.ctx
                branch = ''.join(lab.bits for lab in trace.labels if isinstance(lab, Meas))
                rows.append(dict(status=status.value, branch=branch, probability=probability,
                                 steps=len(trace.steps), register=list(ctx.qreg), store=ctx.f))
        rows.sort(key=lambda r: (r['status'], r['branch'], r['steps']))
        return dict(nodes=graph.number_of_nodes(), edges=graph.number_of_edges(),
                    truncated=graph.graph['truncated'], depth_limited=graph.graph['depth_limited'],
                    terminals=rows)

    def print_graph(self, summary):
        self._title("🕸️ 可达状态图")
        self._print(f"  • 配置数: {summary['nodes']}")
        self._print(f"  • 迁移数: {summary['edges']}")
        if summary['truncated']:
            self._print(f"  {self._c(Fore.RED)}⚠️ 超过配置上限, 图不完整{self._c(Style.RESET_ALL)}")
        if summary['depth_limited']:
            self._print(f"  {self._c(Fore.YELLOW)}⚠️ 有配置停在深度上限{self._c(Style.RESET_ALL)}")
        if not summary['terminals']:
            self._print("  (没有终止或死锁的配置)")
            return
        df = pd.DataFrame(summary['terminals'])
        df['store'] = df['store'].map(lambda f: ', '.join(f"{k}={v}" for k, v in f.items()))
        df['register'] = df['register'].map(', '.join)
        self._print(df.to_string(index=False, float_format=lambda x: f"{x:.6f}"))
        total = df.loc[df['status'] == Status.TERMINATED.value, 'probability'].sum()
        self._print(f"\n  终止概率合计: {total:.9f}")

    # ------------------------------------------------------------ 隐形传态

    def print_report(self, report, verdict=None):
        reset = self._c(Style.RESET_ALL)
        t = report.tally
        self._print(f"  输入 {format_ket(report.input_state)} | 分支 {report.branch or '-'} "
                    f"| 保真度 {report.fidelity:.12f}")
        self._print(f"  cbit {t.cbits_sent} | ebit {t.ebits_consumed} | 新量子比特 {t.qubits_sent_fresh} "
                    f"| 引用传递 {t.qubit_refs_passed}")
        if verdict is not None:
            for v in verdict.violations:
                self._print(f"  {self._c(Fore.RED)}✗ {v}{reset}")

    @staticmethod
    def branch_table(rows) -> pd.DataFrame:
        """每个测量分支的运行次数、最低/平均保真度、失败次数"""
        df = pd.DataFrame(rows, columns=['trial', 'branch', 'fidelity', 'passed'])
        if df.empty:
            return pd.DataFrame(columns=['branch', 'runs', 'min_fidelity', 'mean_fidelity', 'failures'])
        df['failed'] = ~df['passed'].astype(bool)
        table = df.groupby('branch').agg(runs=('trial', 'count'), min_fidelity=('fidelity', 'min'),
                                         mean_fidelity=('fidelity', 'mean'), failures=('failed', 'sum'))
        return table.reset_index()

    def print_check(self, table, trials, passed, mutation=None):
        reset = self._c(Style.RESET_ALL)
        self._rule()
        title = f"🧪 隐形传态检查: {trials} 个随机输入"
        if mutation:
            title += f" (变异 {mutation})"
        self._title(title)
        self._rule()
        if not table.empty:
            self._print(table.to_string(index=False, float_format=lambda x: f"{x:.12f}"))
        color = Fore.GREEN if passed else Fore.RED
        self._print(f"\n{self._c(color)}{'✅ 通过' if passed else '❌ 未通过'}{reset}")

    # ------------------------------------------------------------ 日志

    def save_to_log(self, kind, **fields):
        """追加一行 JSON"""
        if not self.log_file:
            return
        entry = {'timestamp': datetime.now().isoformat(), 'kind': kind, **fields}
        with open(self.log_file, 'a', encoding='utf-8') as f:
            f.write(json.dumps(entry, ensure_ascii=False, default=str) + '\n')

    def log_trace(self, path, trace):
        self.save_to_log('run', path=str(path), seed=trace.rng_seed, policy=trace.policy,
                         status=trace.status.value, steps=len(trace.steps),
                         register=list(trace.final.ctx.qreg), store=trace.final.ctx.f)
