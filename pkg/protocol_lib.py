# protocol_lib.py - 内置协议程序与隐形传态规约检查
"""
内置的 eQPAlg 程序 (BuildEPR / Alice / Bob / QCOM / Teleport) 以及
对规约 var_Alice ∧ var_Bob ∧ |phi> ∧ |psi> ∧ 1 ebit + 2 cbits >= 1 qubit 的轨迹级检查
"""

from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Tuple

from loguru import logger

from eqp_parser import parse, parse_process
from lts_engine import (Deterministic, Exhaustive, LtsEngine, Meas, QRecvFresh, QSend,
                        SchedulerPolicy, Status, Tau, Trace, terminal_nodes, trace_to)
from process_ast import (RECEIVES, ClassicalRecv, ClassicalSend, DeclBlock, Invoke, Measure, PARALLEL,
                         ParShared, Prefix, ProcDef, ProcessTerm, QuantumRecv, Restrict,
                         SendMeasure, Seq, SourceFile, SpecStatement, Unitary, VType,
                         free_variables, substitute_many)
from quantum_core import (TOLERANCE, DensityOperator, Ket, bell_state, fidelity)

PROGRAMS_DIR = Path(__file__).resolve().parent / 'programs'
BUNDLED = ('teleport', 'buildepr', 'qubit_pass', 'remote_hadamard', 'remote_cnot')

INPUT_QUBIT = 'psi'
OUTPUT_QUBIT = 'b'
EPR_PROCESS = 'BuildEPR'
MUTATIONS = ('drop-x-correction', 'drop-z-correction', 'drop-first-cbit', 'drop-second-cbit',
             'send-qubit-directly')


class SpecError(ValueError):
    """规约本身不合法: 未知的进程、变量、态或资源单位"""


def bundled_program(name: str) -> SourceFile:
    """读取 programs/ 下的内置程序"""
    if name not in BUNDLED:
        raise ValueError(f"没有内置程序 {name}, 可选: {', '.join(BUNDLED)}")
    return parse((PROGRAMS_DIR / f"{name}.eqp").read_text(encoding='utf-8'))


# ---------------------------------------------------------------- 资源统计

@dataclass(frozen=True)
class ResourceTally:
    cbits_sent: int = 0
    qubits_sent_fresh: int = 0
    ebits_consumed: int = 0
    qubit_refs_passed: int = 0

    @property
    def quantum_transfers(self):
        return self.qubits_sent_fresh + self.qubit_refs_passed


def tally_trace(trace: Trace) -> ResourceTally:
    """C-COM 计经典比特, Q-COM 计引用传递, Q-IN1 和开放的量子输出计新量子比特, 调用 BuildEPR 计 ebit"""
    cbits = fresh = ebits = refs = 0
    for label in trace.labels:
        if isinstance(label, Tau):
            if label.rule == 'C-COM':
                cbits += 1
            elif label.rule == 'Q-COM':
                refs += 1
            elif label.rule == 'CALL' and label.detail == EPR_PROCESS:
                ebits += 1
        elif isinstance(label, (QRecvFresh, QSend)):
            fresh += 1
    return ResourceTally(cbits, fresh, ebits, refs)


@dataclass(frozen=True)
class TeleportReport:
    input_state: Ket
    output_state: DensityOperator
    fidelity: float
    tally: ResourceTally
    branch: str
    branch_probability: Optional[float] = None
    trace: Optional[Trace] = field(default=None, repr=False, compare=False)


# ---------------------------------------------------------------- BuildEPR

def build_epr(seed: int = 0) -> Tuple[Trace, DensityOperator]:
    """从 |00> 制备 Bell 态, 返回轨迹和 (a, b) 上的末态"""
    trace = LtsEngine(bundled_program('buildepr')).run(Deterministic(), seed=seed)
    if trace.status is not Status.TERMINATED:
        raise RuntimeError(f"BuildEPR 没有正常结束: {trace.status.value}")
    return trace, trace.final.ctx.reduced(['a', 'b'])


# ---------------------------------------------------------------- 隐形传态

def _replace_init(term: ProcessTerm, name: str, ket: Ket) -> Tuple[ProcessTerm, bool]:
    """把第一个名为 name 的量子比特声明的初值换成 ket"""
    if isinstance(term, DeclBlock):
        for i, d in enumerate(term.decls):
            if d.name == name and d.vtype is VType.QUBIT:
                decls = term.decls[:i] + (replace(d, init=ket),) + term.decls[i + 1:]
                return replace(term, decls=decls), True
        body, done = _replace_init(term.body, name, ket)
        return replace(term, body=body), done
    if isinstance(term, Prefix):
        cont, done = _replace_init(term.continuation, name, ket)
        return replace(term, continuation=cont), done
    if isinstance(term, Seq):
        first, done = _replace_init(term.first, name, ket)
        if done:
            return replace(term, first=first), True
        second, done = _replace_init(term.second, name, ket)
        return replace(term, second=second), done
    if isinstance(term, Restrict):
        body, done = _replace_init(term.body, name, ket)
        return replace(term, body=body), done
    if isinstance(term, PARALLEL):
        left, done = _replace_init(term.left, name, ket)
        if done:
            return replace(term, left=left), True
        right, done = _replace_init(term.right, name, ket)
        return replace(term, right=right), done
    return term, False


def with_input(source: SourceFile, state: Ket) -> SourceFile:
    """main 进程里 psi 的初值换成 state"""
    if state.nqubits != 1:
        raise ValueError(f"输入必须是单量子比特态, 得到 {state.nqubits} 个量子比特")
    main = source.get(source.main)
    if main is None:
        raise ValueError("程序没有 main")
    body, done = _replace_init(main.body, INPUT_QUBIT, state)
    if not done:
        raise ValueError(f"main 进程 {main.name} 没有声明输入量子比特 {INPUT_QUBIT}")
    defs = tuple(replace(d, body=body) if d.name == main.name else d for d in source.defs)
    return replace(source, defs=defs)


def _branch(trace: Trace) -> str:
    outcomes = [label.bits for label in trace.labels if isinstance(label, Meas)]
    return outcomes[-1] if outcomes else ''


def _report(state: Ket, trace: Trace, probability=None) -> TeleportReport:
    ctx = trace.final.ctx
    if OUTPUT_QUBIT not in ctx.qreg:
        raise RuntimeError(f"末态寄存器里没有输出量子比特 {OUTPUT_QUBIT}")
    out = ctx.reduced([OUTPUT_QUBIT])
    return TeleportReport(state, out, fidelity(state, out), tally_trace(trace), _branch(trace),
                          probability, trace)


def teleport_branches(state: Ket, source: Optional[SourceFile] = None, depth: int = 64,
                      max_nodes: int = 50000) -> List[TeleportReport]:
    """穷举所有测量分支, 每个分支一份报告

    Alice 和 Bob 的交错只改变栈里声明的先后, 同一分支的多个终止配置只留保真度最低的
    """
    program = with_input(source or bundled_program('teleport'), state)
    graph = LtsEngine(program).reachable_graph(depth, max_nodes)
    worst: Dict[str, TeleportReport] = {}
    for key in terminal_nodes(graph):
        trace, probability = trace_to(graph, key)
        report = _report(state, trace, probability)
        if report.branch not in worst or report.fidelity < worst[report.branch].fidelity:
            worst[report.branch] = report
    reports = [worst[b] for b in sorted(worst)]
    logger.debug(f"🔍 隐形传态分支: {[(r.branch, round(r.fidelity, 9)) for r in reports]}")
    return reports


def teleport(state: Ket, seed: int = 0, policy: Optional[SchedulerPolicy] = None,
             source: Optional[SourceFile] = None) -> TeleportReport:
    """运行 Teleport; Exhaustive 策略下返回保真度最低的分支"""
    policy = policy or Deterministic()
    if isinstance(policy, Exhaustive):
        reports = teleport_branches(state, source, policy.bound)
        if not reports:
            raise RuntimeError("隐形传态没有正常结束的分支")
        return min(reports, key=lambda r: r.fidelity)
    program = with_input(source or bundled_program('teleport'), state)
    trace = LtsEngine(program).run(policy, seed=seed)
    if trace.status is not Status.TERMINATED:
        raise RuntimeError(f"隐形传态没有正常结束: {trace.status.value}")
    return _report(state, trace)


# ---------------------------------------------------------------- 规约检查

@dataclass
class SpecVerdict:
    passed: bool = True
    violations: List[str] = field(default_factory=list)
    checked: List[str] = field(default_factory=list)

    def fail(self, message):
        self.passed = False
        self.violations.append(message)

    def __bool__(self):
        return self.passed


def declared_variables(d: ProcDef) -> Dict[str, VType]:
    """参数、声明块和接收绑定的全部变量"""
    found = {p.name: p.vtype for p in d.params}

    def walk(t):
        if isinstance(t, DeclBlock):
            for decl in t.decls:
                found.setdefault(decl.name, decl.vtype)
            walk(t.body)
        elif isinstance(t, Prefix):
            a = t.action
            if isinstance(a, ClassicalRecv):
                found.setdefault(a.var, VType.INTEGER)
            elif isinstance(a, QuantumRecv):
                found.setdefault(a.var, VType.QUBIT)
            walk(t.continuation)
        elif isinstance(t, Seq):
            walk(t.first)
            walk(t.second)
        elif isinstance(t, Restrict):
            walk(t.body)
        elif isinstance(t, PARALLEL):
            walk(t.left)
            walk(t.right)

    walk(d.body)
    return found


_UNITS = {'ebit': 'ebits', 'ebits': 'ebits', 'cbit': 'cbits', 'cbits': 'cbits',
          'qubit': 'qubits', 'qubits': 'qubits'}


def _budget(spec: SpecStatement):
    budget = {}
    delivered = 0
    for claim in spec.resources:
        for amount in claim.lhs:
            unit = _UNITS.get(amount.unit)
            if unit is None or unit == 'qubits':
                raise SpecError(f"资源不等式左边不支持的单位: {amount.unit}")
            budget[unit] = budget.get(unit, 0) + amount.count
        if _UNITS.get(claim.rhs.unit) != 'qubits':
            raise SpecError(f"资源不等式右边必须是 qubit, 得到 {claim.rhs.unit}")
        delivered += claim.rhs.count
    return budget, delivered


def _entangled_pair(ctx) -> Optional[Tuple[str, str]]:
    target = bell_state('phi+')
    names = ctx.qreg
    for i, u in enumerate(names):
        for v in names[i + 1:]:
            if fidelity(target, ctx.reduced([u, v])) >= 1 - TOLERANCE:
                return u, v
    return None


def check_spec(spec: SpecStatement, trace: Trace, report: TeleportReport,
               source: Optional[SourceFile] = None) -> SpecVerdict:
    """逐条检查规约的合取项, 不通过时列出违反的项"""
    source = source or bundled_program('teleport')
    verdict = SpecVerdict()

    # (a) 变量组
    for group in spec.groups:
        if not group.name.startswith('var_'):
            raise SpecError(f"变量组名必须形如 var_进程名, 得到 {group.name}")
        proc = source.get(group.name[len('var_'):])
        if proc is None:
            raise SpecError(f"变量组 {group.name} 对应的进程不存在")
        declared = declared_variables(proc)
        for d in group.decls:
            if d.name not in declared:
                raise SpecError(f"{group.name} 中的变量 {d.name} 在进程 {proc.name} 中不存在")
            if declared[d.name] is not d.vtype:
                verdict.fail(f"{group.name}: {d.name} 应为 {d.vtype.value}, 实际是 {declared[d.name].value}")
        verdict.checked.append(group.name)

    # (b) 通信之前已有的态
    configs = trace.configurations
    first_com = next((i for i, label in enumerate(trace.labels, 1)
                      if isinstance(label, Tau) and label.rule in ('C-COM', 'Q-COM')), len(configs))
    before = configs[:first_com]
    for state in spec.states:
        if state == 'phi':
            if not any(_entangled_pair(c.ctx) for c in before):
                verdict.fail("|phi>: 通信之前没有建立最大纠缠对")
        elif state == 'psi':
            if not any(INPUT_QUBIT in c.ctx.qreg for c in before):
                verdict.fail(f"|psi>: 通信之前寄存器里没有输入量子比特 {INPUT_QUBIT}")
        else:
            raise SpecError(f"未知的态 |{state}>")
        verdict.checked.append(f"|{state}>")

    # (c) 资源不等式 + 保真度
    budget, delivered = _budget(spec)
    tally = report.tally
    if 'ebits' in budget and tally.ebits_consumed > budget['ebits']:
        verdict.fail(f"ebit: 用了 {tally.ebits_consumed} 个, 预算 {budget['ebits']}")
    if 'cbits' in budget and tally.cbits_sent > budget['cbits']:
        verdict.fail(f"cbit: 发送了 {tally.cbits_sent} 个, 预算 {budget['cbits']}")
    if tally.quantum_transfers != 0:
        verdict.fail(f"量子态传输必须为 0: 新量子比特 {tally.qubits_sent_fresh}, "
                     f"引用传递 {tally.qubit_refs_passed}")
    if report.fidelity < 1 - TOLERANCE:
        verdict.fail(f"保真度 {report.fidelity:.12f} < 1 - {TOLERANCE:g} (分支 {report.branch or '-'})")
    if spec.resources:
        verdict.checked.append(f"{sum(budget.values())} 资源 >= {delivered} qubit")
    return verdict


# ---------------------------------------------------------------- 变异

def _drop_prefix(term: ProcessTerm, match, count=1) -> ProcessTerm:
    """删掉前 count 个满足 match 的前缀动作"""
    dropped = 0

    def walk(t):
        nonlocal dropped
        if isinstance(t, Prefix):
            if dropped < count and match(t.action):
                dropped += 1
                return walk(t.continuation)
            return replace(t, continuation=walk(t.continuation))
        if isinstance(t, DeclBlock):
            return replace(t, body=walk(t.body))
        if isinstance(t, Seq):
            return replace(t, first=walk(t.first), second=walk(t.second))
        if isinstance(t, Restrict):
            return replace(t, body=walk(t.body))
        if isinstance(t, PARALLEL):
            return replace(t, left=walk(t.left), right=walk(t.right))
        return t

    out = walk(term)
    if dropped < count:
        raise ValueError("没有可删除的动作")
    return out


def _nth_action(term: ProcessTerm, kind, n: int):
    seen = []

    def walk(t):
        if isinstance(t, Prefix):
            if isinstance(t.action, kind):
                seen.append(t.action)
            walk(t.continuation)
        elif isinstance(t, DeclBlock):
            walk(t.body)
        elif isinstance(t, Seq):
            walk(t.first)
            walk(t.second)

    walk(term)
    return seen[n] if n < len(seen) else None


def _drop_cbit(source: SourceFile, n: int) -> SourceFile:
    """Alice 不发第 n 个经典比特, Bob 也不收, 对应变量固定为 0"""
    alice, bob = source.get('Alice'), source.get('Bob')
    send = _nth_action(alice.body, ClassicalSend, n)
    recv = _nth_action(bob.body, ClassicalRecv, n)
    if send is None or recv is None:
        raise ValueError(f"Alice/Bob 没有第 {n + 1} 次经典通信")
    alice_body = _drop_prefix(alice.body, lambda a: a == send)
    bob_body = _drop_prefix(bob.body, lambda a: a == recv)
    if isinstance(bob_body, DeclBlock):
        decls = tuple(replace(d, init=0) if d.name == recv.var and d.init is None else d
                      for d in bob_body.decls)
        bob_body = replace(bob_body, decls=decls)
    return _with_bodies(source, {'Alice': alice_body, 'Bob': bob_body})


def _with_bodies(source: SourceFile, bodies: Dict[str, ProcessTerm]) -> SourceFile:
    return replace(source, defs=tuple(replace(d, body=bodies[d.name]) if d.name in bodies else d
                                      for d in source.defs))


def mutate(source: SourceFile, name: str) -> SourceFile:
    """协议变异, 用来检验 check_spec 的敏感性"""
    if name not in MUTATIONS:
        raise ValueError(f"未知的变异 {name}, 可选: {', '.join(MUTATIONS)}")
    alice, bob = source.get('Alice'), source.get('Bob')
    if alice is None or bob is None:
        raise ValueError("程序里没有 Alice 和 Bob")
    if name == 'drop-x-correction':
        body = _drop_prefix(bob.body, lambda a: isinstance(a, Unitary) and a.gate == 'X')
        return _with_bodies(source, {'Bob': body})
    if name == 'drop-z-correction':
        body = _drop_prefix(bob.body, lambda a: isinstance(a, Unitary) and a.gate == 'Z')
        return _with_bodies(source, {'Bob': body})
    if name == 'drop-first-cbit':
        return _drop_cbit(source, 0)
    if name == 'drop-second-cbit':
        return _drop_cbit(source, 1)
    # send-qubit-directly: Alice 把待传的量子比特直接发给 Bob, 声明块保留
    x, y = (p.name for p in alice.params)
    defs = source.def_map
    alice_body = _keep_decls(alice.body, parse_process(f"c!{y} . end", defs, {x: VType.QUBIT, y: VType.QUBIT}))
    z = bob.params[0].name
    bob_body = _keep_decls(bob.body, parse_process("c?w:Qubit . end", defs, {z: VType.QUBIT}))
    return _with_bodies(source, {'Alice': alice_body, 'Bob': bob_body})


def _keep_decls(old: ProcessTerm, body: ProcessTerm) -> ProcessTerm:
    if isinstance(old, DeclBlock):
        return replace(old, body=_keep_decls(old.body, body))
    return body


# ---------------------------------------------------------------- 分布式所有权

@dataclass
class OwnershipReport:
    passed: bool = True
    violations: List[str] = field(default_factory=list)
    checked: int = 0

    def __bool__(self):
        return self.passed


def _unfold(term: ProcessTerm, defs, depth=0) -> ProcessTerm:
    """把调用展开成定义体 (没有递归, 所以一定终止)"""
    if depth > len(defs) + 1:
        return term
    if isinstance(term, Invoke):
        d = defs.get(term.name)
        if d is None or len(d.params) != len(term.args):
            return term
        body = substitute_many(d.body, {p.name: a for p, a in zip(d.params, term.args)})
        return _unfold(body, defs, depth + 1)
    if isinstance(term, Prefix):
        return replace(term, continuation=_unfold(term.continuation, defs, depth))
    if isinstance(term, DeclBlock):
        return replace(term, body=_unfold(term.body, defs, depth))
    if isinstance(term, Seq):
        return replace(term, first=_unfold(term.first, defs, depth), second=_unfold(term.second, defs, depth))
    if isinstance(term, Restrict):
        return replace(term, body=_unfold(term.body, defs, depth))
    if isinstance(term, PARALLEL):
        return replace(term, left=_unfold(term.left, defs, depth), right=_unfold(term.right, defs, depth))
    return term


def _acted_on(term: ProcessTerm, bound=frozenset()) -> Dict[str, str]:
    """term 中对自由量子变量做的门和测量: 变量名 -> 动作描述"""
    from eqp_parser import format_action
    acted = {}
    if isinstance(term, Prefix):
        a = term.action
        targets = ()
        if isinstance(a, (Unitary, Measure)):
            targets = a.targets
        elif isinstance(a, SendMeasure):
            targets = a.measure.targets
        for t in targets:
            if t not in bound:
                acted.setdefault(t, format_action(a))
        inner = bound | {a.var} if isinstance(a, RECEIVES) else bound
        for k, v in _acted_on(term.continuation, inner).items():
            acted.setdefault(k, v)
    elif isinstance(term, DeclBlock):
        acted = _acted_on(term.body, bound | {d.name for d in term.decls})
    elif isinstance(term, Seq):
        acted = {**_acted_on(term.second, bound), **_acted_on(term.first, bound)}
    elif isinstance(term, Restrict):
        acted = _acted_on(term.body, bound)
    elif isinstance(term, PARALLEL):
        acted = {**_acted_on(term.right, bound), **_acted_on(term.left, bound)}
    return acted


def _shared_compositions(term: ProcessTerm):
    if isinstance(term, ParShared):
        yield term
    if isinstance(term, Prefix):
        yield from _shared_compositions(term.continuation)
    elif isinstance(term, (DeclBlock, Restrict)):
        yield from _shared_compositions(term.body)
    elif isinstance(term, Seq):
        yield from _shared_compositions(term.first)
        yield from _shared_compositions(term.second)
    elif isinstance(term, PARALLEL):
        yield from _shared_compositions(term.left)
        yield from _shared_compositions(term.right)


def distributed_ownership_check(source: SourceFile) -> OwnershipReport:
    """∥_ψ 的每一边只能对自己的量子比特做门和测量: 一边操作的变量不能出现在另一边"""
    defs = source.def_map
    report = OwnershipReport()
    for d in source.defs:
        for par in _shared_compositions(_unfold(d.body, defs)):
            report.checked += 1
            sides = (('左', par.left, par.right), ('右', par.right, par.left))
            for side, mine, other in sides:
                other_names = free_variables(other)
                for var, action in sorted(_acted_on(mine).items()):
                    if var in other_names:
                        report.passed = False
                        report.violations.append(
                            f"{d.name}: ∥_{par.shared} {side}侧的 {action} 操作了另一侧的 {var}")
    if report.checked == 0:
        logger.info("ℹ️ 程序里没有 ∥_ψ 组合, 所有权检查不适用")
    return report
