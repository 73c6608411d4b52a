# lts_engine.py - 带标签迁移系统: 配置、迁移规则、调度、轨迹
"""
eQPAlg 的操作语义

配置 = 进程项 + 全局上下文 ⟨s, q = ρ, f⟩
  s: 已声明变量栈 (名字, 类型, 作用域)
  q: 量子寄存器 (名字的有序列表), ρ 是这些量子比特上的密度算子
  f: 整数变量 -> 自然数

规则:
  C-OUT / C-IN / C-COM    经典通信, 不改变 q 和 ρ
  Q-OUT / Q-IN2 / Q-COM   量子比特以名字传递, 上下文不变
  Q-IN1                   从环境收到新的量子比特, ρ' = ρ ⊗ σ
  U-APP / M-APP           门和计算基测量
  SEQ / DECL / CALL       内部步骤 (τ)

开放的输入只能由 Environment 提供; 封闭程序的 run 不会凭空造值。
"""

import itertools
from collections import deque
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import (Callable, ClassVar, Dict, FrozenSet, List, Mapping, NamedTuple, Optional,
                    Sequence, Tuple, Union)

import networkx as nx
import numpy as np
from loguru import logger

from process_ast import (ClassicalRecv, ClassicalSend, DeclBlock, End, Invoke, Measure, Nil,
                         PARALLEL, Prefix, ProcDef, ProcessTerm, QuantumRecv, QuantumSend,
                         Restrict, SendMeasure, Seq, SourceFile, Unitary, VType, all_names,
                         fresh_name, substitute, substitute_many)
from quantum_core import (KET_0, DensityOperator, QuantumError, apply_unitary, density_from_ket,
                          measurement_outcomes, partial_trace, permute_qubits, standard_gate,
                          tensor)

MAX_NATURAL = 2 ** 64 - 1


class EngineError(RuntimeError):
    """运行期错误: 未绑定变量、类型不符、非法量子运算"""

    def __init__(self, rule, message, variable=None, partial_trace=None):
        self.rule = rule
        self.message = message
        self.variable = variable
        self.partial_trace = partial_trace
        where = f" (变量 {variable})" if variable else ""
        super().__init__(f"[{rule}] {message}{where}")


# ---------------------------------------------------------------- 上下文

@dataclass(frozen=True)
class VarEntry:
    name: str
    vtype: VType
    scope: int = 0


@dataclass(frozen=True)
class Context:
    """⟨s, q = ρ, f⟩, f 存成按名字排序的元组以便比较和哈希"""

    stack: Tuple[VarEntry, ...] = ()
    qreg: Tuple[str, ...] = ()
    rho: DensityOperator = field(default_factory=DensityOperator.empty)
    store: Tuple[Tuple[str, int], ...] = ()

    @classmethod
    def build(cls, qubits: Sequence[str] = (), rho: Optional[DensityOperator] = None,
              integers: Optional[Mapping[str, Optional[int]]] = None) -> 'Context':
        """直接搭一个上下文 (测试和定理场景用), integers 中值为 None 的只声明不赋值"""
        qubits = tuple(qubits)
        if rho is None:
            rho = DensityOperator.empty()
            for _ in qubits:
                rho = tensor(rho, density_from_ket(KET_0))
        integers = dict(integers or {})
        stack = tuple(VarEntry(n, VType.QUBIT) for n in qubits)
        stack += tuple(VarEntry(n, VType.INTEGER) for n in integers)
        store = tuple(sorted((n, v) for n, v in integers.items() if v is not None))
        ctx = cls(stack, qubits, rho, store)
        ctx.check()
        return ctx

    @property
    def names(self) -> FrozenSet[str]:
        return frozenset(e.name for e in self.stack)

    @property
    def scope(self) -> int:
        return max((e.scope for e in self.stack), default=0)

    @property
    def f(self) -> Dict[str, int]:
        return dict(self.store)

    def entry(self, name) -> Optional[VarEntry]:
        for e in reversed(self.stack):
            if e.name == name:
                return e
        return None

    def value(self, name) -> Optional[int]:
        return self.f.get(name)

    def position(self, name) -> int:
        return self.qreg.index(name)

    def push(self, entry: VarEntry) -> 'Context':
        return replace(self, stack=self.stack + (entry,))

    def assign(self, name, value: int) -> 'Context':
        store = dict(self.store)
        store[name] = value
        return replace(self, store=tuple(sorted(store.items())))

    def add_qubit(self, name, sigma: DensityOperator, scope=None) -> 'Context':
        entry = VarEntry(name, VType.QUBIT, self.scope if scope is None else scope)
        return replace(self, stack=self.stack + (entry,), qreg=self.qreg + (name,),
                       rho=tensor(self.rho, sigma))

    def reduced(self, names: Sequence[str]) -> DensityOperator:
        """按 names 的顺序取边缘态"""
        positions = [self.position(n) for n in names]
        rho = partial_trace(self.rho, positions)
        ascending = sorted(positions)
        return permute_qubits(rho, [ascending.index(p) for p in positions])

    def violations(self) -> List[str]:
        problems = []
        entries = {e.name: e for e in self.stack}
        for name in self.qreg:
            if name not in entries or entries[name].vtype is not VType.QUBIT:
                problems.append(f"寄存器中的 {name} 不是已声明的量子变量")
        if len(set(self.qreg)) != len(self.qreg):
            problems.append("寄存器有重复名字")
        if self.rho.nqubits != len(self.qreg):
            problems.append(f"ρ 有 {self.rho.nqubits} 个量子比特, 寄存器有 {len(self.qreg)} 个")
        for name, value in self.store:
            if name not in entries or entries[name].vtype is not VType.INTEGER:
                problems.append(f"f 中的 {name} 不是已声明的整数变量")
            if not 0 <= value <= MAX_NATURAL:
                problems.append(f"f[{name}] = {value} 不是 64 位自然数")
        return problems

    def check(self):
        problems = self.violations()
        if problems:
            raise EngineError('CONTEXT', '; '.join(problems))


@dataclass(frozen=True)
class Configuration:
    term: ProcessTerm
    ctx: Context

    def key(self):
        """状态空间去重用, ρ 按舍入后的字节比较"""
        c = self.ctx
        return (self.term, c.stack, c.qreg, c.store, c.rho.digest())


# ---------------------------------------------------------------- 迁移标签

@dataclass(frozen=True)
class Tau:
    kind: ClassVar[str] = 'tau'
    rule: str
    channel: Optional[str] = None
    value: Optional[Union[int, str]] = None
    detail: Optional[str] = None

    def __str__(self):
        parts = [self.rule]
        if self.channel is not None:
            parts.append(f"{self.channel}:{self.value}")
        if self.detail:
            parts.append(self.detail)
        return f"τ[{' '.join(parts)}]"


@dataclass(frozen=True)
class CSend:
    kind: ClassVar[str] = 'csend'
    channel: str
    value: int

    def __str__(self):
        return f"{self.channel}!{self.value}"


@dataclass(frozen=True)
class CRecv:
    kind: ClassVar[str] = 'crecv'
    channel: str
    value: int

    def __str__(self):
        return f"{self.channel}?{self.value}"


@dataclass(frozen=True)
class QSend:
    kind: ClassVar[str] = 'qsend'
    channel: str
    qvar: str

    def __str__(self):
        return f"{self.channel}!{self.qvar}"


@dataclass(frozen=True)
class QRecvFresh:
    kind: ClassVar[str] = 'qrecv_fresh'
    channel: str
    qvar: str
    sigma: DensityOperator

    def __str__(self):
        return f"{self.channel}?{self.qvar}:σ"


@dataclass(frozen=True)
class QRecvRef:
    kind: ClassVar[str] = 'qrecv_ref'
    channel: str
    qvar: str

    def __str__(self):
        return f"{self.channel}?{self.qvar}"


@dataclass(frozen=True)
class Unit:
    kind: ClassVar[str] = 'unit'
    gate: str
    targets: Tuple[str, ...]
    power: int = 1
    phase: Optional[float] = None

    def __str__(self):
        head = self.gate
        if self.phase is not None:
            head = f"{head}({self.phase:.6g})"
        if self.power != 1:
            head = f"{head}^{self.power}"
        return f"{head}[{','.join(self.targets)}]"


@dataclass(frozen=True)
class Meas:
    kind: ClassVar[str] = 'meas'
    targets: Tuple[str, ...]
    outcome: Tuple[int, ...]
    probability: float

    @property
    def bits(self):
        return ''.join(str(b) for b in self.outcome)

    def __str__(self):
        return f"measure[{{{','.join(self.targets)}}}]={self.bits} (p={self.probability:.4f})"


TransitionLabel = Union[Tau, CSend, CRecv, QSend, QRecvFresh, QRecvRef, Unit, Meas]
CONTEXT_PRESERVING = (CSend, CRecv, QSend, QRecvRef)


class Transition(NamedTuple):
    label: TransitionLabel
    target: Configuration


class Status(str, Enum):
    TERMINATED = 'terminated'
    DEADLOCKED = 'deadlocked'
    BUDGET = 'budget'
    ERROR = 'error'


# ---------------------------------------------------------------- 调度策略

@dataclass(frozen=True)
class Deterministic:
    """总是取第一个可用迁移"""
    name: ClassVar[str] = 'det'


@dataclass(frozen=True)
class RandomPolicy:
    """非确定选择均匀随机, 测量分支按 Born 概率"""
    name: ClassVar[str] = 'random'
    seed: Optional[int] = None


@dataclass(frozen=True)
class Exhaustive:
    """run 中按确定性步进, 深度上限封顶; 完整探索用 reachable_graph"""
    name: ClassVar[str] = 'exhaustive'
    bound: int = 64

    def __post_init__(self):
        if self.bound < 1:
            raise ValueError(f"Exhaustive 的深度上限至少为 1, 得到 {self.bound}")


SchedulerPolicy = Union[Deterministic, RandomPolicy, Exhaustive]


def make_policy(name: str, seed: Optional[int] = None, bound: int = 64) -> SchedulerPolicy:
    if name == 'det':
        return Deterministic()
    if name == 'random':
        return RandomPolicy(seed)
    if name == 'exhaustive':
        return Exhaustive(bound)
    raise ValueError(f"未知的调度策略: {name}")


# ---------------------------------------------------------------- 环境

@dataclass(frozen=True)
class Environment:
    """开放输入的来源: 每个通道上可提供的经典值、新量子态和寄存器内引用"""

    classical: Mapping[str, Tuple[int, ...]] = field(default_factory=dict)
    quantum: Mapping[str, Tuple[DensityOperator, ...]] = field(default_factory=dict)
    references: Mapping[str, Tuple[str, ...]] = field(default_factory=dict)

    def __post_init__(self):
        for channel, values in self.classical.items():
            for v in values:
                if not isinstance(v, int) or not 0 <= v <= MAX_NATURAL:
                    raise ValueError(f"通道 {channel} 的值 {v!r} 不是 64 位自然数")
        for channel, states in self.quantum.items():
            for sigma in states:
                if sigma.nqubits != 1:
                    raise ValueError(f"通道 {channel} 只能输入单量子比特的态")


# ---------------------------------------------------------------- 轨迹

@dataclass(frozen=True)
class TraceStep:
    label: TransitionLabel
    target: Configuration


@dataclass(frozen=True)
class Trace:
    initial: Configuration
    steps: Tuple[TraceStep, ...]
    rng_seed: int
    policy: str
    status: Status
    max_steps: Optional[int] = None

    @property
    def final(self) -> Configuration:
        return self.steps[-1].target if self.steps else self.initial

    @property
    def labels(self) -> List[TransitionLabel]:
        return [s.label for s in self.steps]

    @property
    def configurations(self) -> List[Configuration]:
        return [self.initial] + [s.target for s in self.steps]


# ---------------------------------------------------------------- 规则

class _Half(NamedTuple):
    """等待在 Par 处配对的半个通信"""
    channel: str
    quantum: bool
    payload: Union[int, str]
    rest: ProcessTerm
    rebuild: Callable[[ProcessTerm], ProcessTerm]


class _Move(NamedTuple):
    label: TransitionLabel
    term: ProcessTerm
    ctx: Context
    group: int


def _identity(t):
    return t


@dataclass
class _Moves:
    steps: List[_Move] = field(default_factory=list)
    outputs: List[_Half] = field(default_factory=list)
    inputs: List[_Half] = field(default_factory=list)

    def wrap(self, outer: Callable[[ProcessTerm], ProcessTerm]) -> '_Moves':
        def lift(h):
            return h._replace(rebuild=lambda t, inner=h.rebuild: outer(inner(t)))
        return _Moves([m._replace(term=outer(m.term)) for m in self.steps],
                      [lift(h) for h in self.outputs],
                      [lift(h) for h in self.inputs])


def is_terminated(term: ProcessTerm) -> bool:
    if isinstance(term, End):
        return True
    if isinstance(term, PARALLEL):
        return is_terminated(term.left) and is_terminated(term.right)
    if isinstance(term, Restrict):
        return is_terminated(term.body)
    return False


class _Analyzer:
    """在一个固定上下文里找出某个进程项的全部迁移"""

    def __init__(self, defs: Mapping[str, ProcDef], ctx: Context, reserved: FrozenSet[str]):
        self.defs = defs
        self.ctx = ctx
        self.reserved = reserved
        self._groups = itertools.count()

    def group(self):
        return next(self._groups)

    def fresh(self, base, extra=()):
        return fresh_name(base, self.ctx.names | self.reserved | set(extra))

    # 求值
    def eval(self, expr, rule) -> int:
        if isinstance(expr, int):
            if not 0 <= expr <= MAX_NATURAL:
                raise EngineError(rule, f"{expr} 不是 64 位自然数")
            return expr
        entry = self.ctx.entry(expr)
        if entry is None:
            raise EngineError(rule, "变量未绑定", expr)
        if entry.vtype is VType.QUBIT:
            raise EngineError(rule, "经典运算用到了量子变量", expr)
        value = self.ctx.value(expr)
        if value is None:
            raise EngineError(rule, "整数变量还没有值", expr)
        return value

    def position(self, name, rule) -> int:
        if name in self.ctx.qreg:
            return self.ctx.position(name)
        entry = self.ctx.entry(name)
        if entry is not None and entry.vtype is VType.INTEGER:
            raise EngineError(rule, "这里需要量子变量", name)
        raise EngineError(rule, "量子变量不在寄存器中", name)

    # 绑定
    def bind_value(self, var, value, cont) -> Tuple[Context, ProcessTerm]:
        """C-IN: f ∪ {x -> v}, 接收总是新绑定; 名字已在 s 中时换成新名字"""
        name = var
        if var in self.ctx.names:
            name = self.fresh(var, all_names(cont))
            cont = substitute(cont, var, name)
        return self.ctx.push(VarEntry(name, VType.INTEGER, self.ctx.scope)).assign(name, value), cont

    def bind_fresh_qubit(self, var, sigma, cont) -> Tuple[str, Context, ProcessTerm]:
        """Q-IN1: x.q = ρ ⊗ σ, 名字冲突时换成新名字"""
        name = var
        if var in self.ctx.names:
            name = self.fresh(var, all_names(cont))
            cont = substitute(cont, var, name)
        return name, self.ctx.add_qubit(name, sigma), cont

    # 各种进程项
    def moves(self, term: ProcessTerm) -> _Moves:
        if isinstance(term, (Nil, End)):
            return _Moves()
        if isinstance(term, Prefix):
            return self.prefix(term)
        if isinstance(term, Seq):
            if is_terminated(term.first):
                return _Moves([_Move(Tau('SEQ'), term.second, self.ctx, self.group())])
            return self.moves(term.first).wrap(lambda t: replace(term, first=t))
        if isinstance(term, Restrict):
            inner = self.moves(term.body)
            inner.outputs = [h for h in inner.outputs if h.channel not in term.channels]
            inner.inputs = [h for h in inner.inputs if h.channel not in term.channels]
            return inner.wrap(lambda t: replace(term, body=t))
        if isinstance(term, DeclBlock):
            return self.declare(term)
        if isinstance(term, Invoke):
            return self.call(term)
        if isinstance(term, PARALLEL):
            return self.parallel(term)
        raise TypeError(f"未知进程项: {term!r}")

    def parallel(self, term) -> _Moves:
        left = self.moves(term.left)
        right = self.moves(term.right)
        syncs = []
        for out, inp, out_left in ([(o, i, True) for o in left.outputs for i in right.inputs]
                                   + [(o, i, False) for o in right.outputs for i in left.inputs]):
            if out.channel != inp.channel or out.quantum != inp.quantum:
                continue
            if out.quantum:
                ctx = self.ctx
                cont = substitute(inp.rest, inp.payload, out.payload)
                label = Tau('Q-COM', out.channel, out.payload)
            else:
                ctx, cont = self.bind_value(inp.payload, out.payload, inp.rest)
                label = Tau('C-COM', out.channel, out.payload)
            sent, received = out.rebuild(out.rest), inp.rebuild(cont)
            if out_left:
                successor = replace(term, left=sent, right=received)
            else:
                successor = replace(term, left=received, right=sent)
            syncs.append(_Move(label, successor, ctx, self.group()))
        left = left.wrap(lambda t: replace(term, left=t))
        right = right.wrap(lambda t: replace(term, right=t))
        return _Moves(left.steps + syncs + right.steps,
                      left.outputs + right.outputs,
                      left.inputs + right.inputs)

    def prefix(self, term: Prefix) -> _Moves:
        a, cont = term.action, term.continuation
        if isinstance(a, ClassicalSend):
            return _Moves(outputs=[_Half(a.channel, False, self.eval(a.expr, 'C-OUT'), cont, _identity)])
        if isinstance(a, QuantumSend):
            self.position(a.var, 'Q-OUT')
            return _Moves(outputs=[_Half(a.channel, True, a.var, cont, _identity)])
        if isinstance(a, ClassicalRecv):
            return _Moves(inputs=[_Half(a.channel, False, a.var, cont, _identity)])
        if isinstance(a, QuantumRecv):
            return _Moves(inputs=[_Half(a.channel, True, a.var, cont, _identity)])
        if isinstance(a, Unitary):
            return _Moves([self.unitary(a, cont)])
        if isinstance(a, Measure):
            return _Moves(self.measure(a, cont))
        if isinstance(a, SendMeasure):
            # g!measure[...] = measure[...] . g!r1 . g!r2 ...
            sends = cont
            for r in reversed(a.measure.results):
                sends = Prefix(ClassicalSend(a.channel, r, span=a.span), sends)
            return self.moves(Prefix(a.measure, sends, span=term.span))
        raise TypeError(f"未知动作: {a!r}")

    def unitary(self, a: Unitary, cont) -> _Move:
        positions = [self.position(t, 'U-APP') for t in a.targets]
        power = 1 if a.power is None else self.eval(a.power, 'U-APP')
        try:
            gate = standard_gate(a.gate, a.phase).power(power)
            rho = apply_unitary(self.ctx.rho, gate, positions)
        except QuantumError as e:
            raise EngineError('U-APP', str(e)) from None
        label = Unit(a.gate, tuple(a.targets), power, a.phase)
        return _Move(label, cont, replace(self.ctx, rho=rho), self.group())

    def measure(self, m: Measure, cont) -> List[_Move]:
        positions = [self.position(t, 'M-APP') for t in m.targets]
        ctx = self.ctx
        for r in m.results:
            entry = ctx.entry(r)
            if entry is None:
                ctx = ctx.push(VarEntry(r, VType.INTEGER, ctx.scope))
            elif entry.vtype is VType.QUBIT:
                raise EngineError('M-APP', "测量结果不能写入量子变量", r)
        try:
            outcomes = measurement_outcomes(ctx.rho, positions)
        except QuantumError as e:
            raise EngineError('M-APP', str(e)) from None
        group = self.group()
        moves = []
        for o in outcomes:
            after = replace(ctx, rho=o.post_state)
            for r, bit in zip(m.results, o.outcome):
                after = after.assign(r, bit)
            moves.append(_Move(Meas(tuple(m.targets), tuple(o.outcome), o.probability), cont, after, group))
        return moves

    def declare(self, term: DeclBlock) -> _Moves:
        """DECL: 量子比特追加到寄存器 (默认 |0>), 有初值的整数进入 f"""
        ctx = self.ctx
        scope = ctx.scope + 1
        taken = set(self.reserved) | set(ctx.names) | set(all_names(term.body))
        renames = {}
        for d in term.decls:
            name = d.name
            if name in ctx.names:
                name = fresh_name(d.name, taken)
                renames[d.name] = name
            taken.add(name)
            if d.vtype is VType.QUBIT:
                ctx = ctx.add_qubit(name, density_from_ket(d.init if d.init is not None else KET_0), scope)
            else:
                ctx = ctx.push(VarEntry(name, VType.INTEGER, scope))
                if d.init is not None:
                    ctx = ctx.assign(name, d.init)
        body = substitute_many(term.body, renames)
        declared = ', '.join(renames.get(d.name, d.name) for d in term.decls)
        return _Moves([_Move(Tau('DECL', detail=declared), body, ctx, self.group())])

    def call(self, term: Invoke) -> _Moves:
        d = self.defs.get(term.name)
        if d is None:
            raise EngineError('CALL', f"未定义的进程 {term.name}")
        if len(d.params) != len(term.args):
            raise EngineError('CALL', f"{term.name} 需要 {len(d.params)} 个参数, 给了 {len(term.args)} 个")
        body = substitute_many(d.body, {p.name: arg for p, arg in zip(d.params, term.args)})
        return _Moves([_Move(Tau('CALL', detail=term.name), body, self.ctx, self.group())])


# ---------------------------------------------------------------- 引擎

class LtsEngine:
    """一个引擎驱动一个程序; Configuration 和 Trace 都是不可变快照"""

    def __init__(self, source: Optional[SourceFile] = None,
                 defs: Optional[Mapping[str, ProcDef]] = None,
                 environment: Optional[Environment] = None):
        self.source = source
        self.defs = source.def_map if source is not None else dict(defs or {})
        self.environment = environment or Environment()

    def initial_configuration(self, name: Optional[str] = None) -> Configuration:
        name = name or (self.source.main if self.source is not None else None)
        if name is None:
            raise EngineError('MAIN', "没有指定入口进程 (main)")
        d = self.defs.get(name)
        if d is None:
            raise EngineError('MAIN', f"未定义的进程 {name}")
        if d.params:
            raise EngineError('MAIN', f"入口进程 {name} 不能带参数")
        return Configuration(d.body, Context())

    # 迁移
    def _moves(self, cfg: Configuration) -> List[_Move]:
        analyzer = _Analyzer(self.defs, cfg.ctx, all_names(cfg.term))
        found = analyzer.moves(cfg.term)
        moves = list(found.steps)
        for out in found.outputs:
            if out.quantum:
                label = QSend(out.channel, out.payload)
            else:
                label = CSend(out.channel, out.payload)
            moves.append(_Move(label, out.rebuild(out.rest), cfg.ctx, analyzer.group()))
        env = self.environment
        for inp in found.inputs:
            if not inp.quantum:
                for value in env.classical.get(inp.channel, ()):
                    ctx, cont = analyzer.bind_value(inp.payload, value, inp.rest)
                    moves.append(_Move(CRecv(inp.channel, value), inp.rebuild(cont), ctx, analyzer.group()))
                continue
            for sigma in env.quantum.get(inp.channel, ()):
                name, ctx, cont = analyzer.bind_fresh_qubit(inp.payload, sigma, inp.rest)
                moves.append(_Move(QRecvFresh(inp.channel, name, sigma), inp.rebuild(cont), ctx,
                                   analyzer.group()))
            for ref in env.references.get(inp.channel, ()):
                # Q-IN2: v ∈ q − {y}
                if ref not in cfg.ctx.qreg or ref == inp.payload:
                    continue
                cont = substitute(inp.rest, inp.payload, ref)
                moves.append(_Move(QRecvRef(inp.channel, ref), inp.rebuild(cont), cfg.ctx, analyzer.group()))
        return moves

    def enabled_transitions(self, cfg: Configuration) -> List[Transition]:
        return [Transition(m.label, Configuration(m.term, m.ctx)) for m in self._moves(cfg)]

    def step(self, cfg: Configuration, policy: SchedulerPolicy,
             rng: Optional[np.random.Generator] = None) -> Union[Transition, Status]:
        if is_terminated(cfg.term):
            return Status.TERMINATED
        moves = self._moves(cfg)
        if not moves:
            return Status.DEADLOCKED
        chosen = moves[0]
        if isinstance(policy, RandomPolicy):
            if rng is None:
                raise ValueError("随机调度需要随机数发生器")
            chosen = _choose(moves, rng)
        return Transition(chosen.label, Configuration(chosen.term, chosen.ctx))

    def run(self, policy: Optional[SchedulerPolicy] = None, max_steps: int = 10000, seed: int = 0,
            start: Optional[Configuration] = None) -> Trace:
        policy = policy or Deterministic()
        if max_steps < 1:
            raise ValueError(f"max_steps 必须是正整数, 得到 {max_steps}")
        if isinstance(policy, RandomPolicy) and policy.seed is not None:
            seed = policy.seed
        limit = min(max_steps, policy.bound) if isinstance(policy, Exhaustive) else max_steps
        rng = np.random.default_rng(seed)
        initial = start or self.initial_configuration()
        cfg = initial
        steps: List[TraceStep] = []

        def snapshot(status):
            return Trace(initial, tuple(steps), seed, policy.name, status, max_steps)

        while True:
            try:
                outcome = self.step(cfg, policy, rng)
            except EngineError as e:
                e.partial_trace = snapshot(Status.ERROR)
                logger.error(f"❌ 引擎错误 (第 {len(steps) + 1} 步): {e}")
                raise
            except QuantumError as e:
                logger.error(f"❌ 量子运算错误 (第 {len(steps) + 1} 步): {e}")
                raise EngineError('QUANTUM', str(e), partial_trace=snapshot(Status.ERROR)) from e
            if isinstance(outcome, Status):
                status = outcome
                break
            if len(steps) >= limit:
                status = Status.BUDGET
                break
            steps.append(TraceStep(outcome.label, outcome.target))
            cfg = outcome.target
            logger.debug(f"🔄 第 {len(steps)} 步: {outcome.label} | 寄存器 {len(cfg.ctx.qreg)} 个量子比特")
        logger.info(f"✅ 运行结束: {status.value}, 共 {len(steps)} 步")
        return snapshot(status)

    def replay(self, trace: Trace) -> Trace:
        """按轨迹中的标签逐步重放, 每一步的后继配置必须完全相同"""
        cfg = trace.initial
        rebuilt = []
        for i, recorded in enumerate(trace.steps, 1):
            for t in self.enabled_transitions(cfg):
                if t.label == recorded.label and t.target == recorded.target:
                    break
            else:
                raise EngineError('REPLAY', f"第 {i} 步 {recorded.label} 无法重放")
            rebuilt.append(TraceStep(t.label, t.target))
            cfg = t.target
        if trace.status in (Status.TERMINATED, Status.DEADLOCKED):
            status = self.step(cfg, Deterministic())
            if status != trace.status:
                raise EngineError('REPLAY', f"结束状态不一致: 记录 {trace.status.value}, 重放 {status}")
        return replace(trace, steps=tuple(rebuilt))

    def reachable_graph(self, depth: int = 64, max_nodes: int = 50000,
                        start: Optional[Configuration] = None) -> nx.MultiDiGraph:
        """广度优先探索到深度 depth; 测量的每个分支都展开, 边上记录概率"""
        if depth < 1:
            raise ValueError(f"深度上限至少为 1, 得到 {depth}")
        root = start or self.initial_configuration()
        graph = nx.MultiDiGraph()
        root_key = root.key()
        graph.add_node(root_key, config=root, depth=0)
        queue = deque([root_key])
        truncated = depth_limited = False
        while queue:
            key = queue.popleft()
            node = graph.nodes[key]
            cfg, d = node['config'], node['depth']
            if is_terminated(cfg.term):
                node['status'] = Status.TERMINATED.value
                continue
            transitions = self.enabled_transitions(cfg)
            if not transitions:
                node['status'] = Status.DEADLOCKED.value
                continue
            if d >= depth:
                node['status'] = 'frontier'
                depth_limited = True
                continue
            node['status'] = 'expanded'
            for t in transitions:
                target_key = t.target.key()
                if target_key not in graph:
                    if graph.number_of_nodes() >= max_nodes:
                        truncated = True
                        continue
                    graph.add_node(target_key, config=t.target, depth=d + 1)
                    queue.append(target_key)
                graph.add_edge(key, target_key, label=t.label,
                               probability=t.label.probability if isinstance(t.label, Meas) else 1.0)
        graph.graph.update(root=root_key, depth=depth, truncated=truncated, depth_limited=depth_limited)
        if truncated:
            logger.warning(f"⚠️ 状态空间超过 {max_nodes} 个配置, 图不完整")
        return graph


def _choose(moves: List[_Move], rng: np.random.Generator) -> _Move:
    groups: Dict[int, List[_Move]] = {}
    for m in moves:
        groups.setdefault(m.group, []).append(m)
    members = list(groups.values())[int(rng.integers(len(groups)))]
    if len(members) == 1:
        return members[0]
    weights = np.array([m.label.probability for m in members])
    draw = rng.random() * weights.sum()
    index = int(np.searchsorted(np.cumsum(weights), draw, side='right'))
    return members[min(index, len(members) - 1)]


# ---------------------------------------------------------------- 图上的分析

def terminal_nodes(graph: nx.MultiDiGraph, status: Status = Status.TERMINATED):
    return [k for k, data in graph.nodes(data=True) if data.get('status') == status.value]


def trace_to(graph: nx.MultiDiGraph, key) -> Tuple[Trace, float]:
    """从根到 key 的一条最短路径, 以及沿途测量概率的乘积"""
    path = nx.shortest_path(graph, graph.graph['root'], key)
    steps, probability = [], 1.0
    for u, v in zip(path, path[1:]):
        edge = next(iter(graph.get_edge_data(u, v).values()))
        probability *= edge['probability']
        steps.append(TraceStep(edge['label'], graph.nodes[v]['config']))
    by_value = {s.value: s for s in Status}
    status = by_value.get(graph.nodes[key].get('status'), Status.BUDGET)
    root = graph.nodes[graph.graph['root']]['config']
    return Trace(root, tuple(steps), 0, Exhaustive.name, status, graph.graph['depth']), probability


# ---------------------------------------------------------------- 模块级入口

def enabled_transitions(cfg: Configuration, defs: Optional[Mapping[str, ProcDef]] = None,
                        environment: Optional[Environment] = None) -> List[Transition]:
    return LtsEngine(defs=defs, environment=environment).enabled_transitions(cfg)


def step(cfg: Configuration, policy: SchedulerPolicy, rng: Optional[np.random.Generator] = None,
         defs: Optional[Mapping[str, ProcDef]] = None,
         environment: Optional[Environment] = None) -> Union[Transition, Status]:
    return LtsEngine(defs=defs, environment=environment).step(cfg, policy, rng)


def run(source: SourceFile, policy: Optional[SchedulerPolicy] = None, max_steps: int = 10000,
        seed: int = 0, environment: Optional[Environment] = None) -> Trace:
    return LtsEngine(source, environment=environment).run(policy, max_steps, seed)


def replay(trace: Trace, source: Optional[SourceFile] = None,
           defs: Optional[Mapping[str, ProcDef]] = None,
           environment: Optional[Environment] = None) -> Trace:
    return LtsEngine(source, defs, environment).replay(trace)


def reachable_graph(program: Union[SourceFile, Configuration], depth: int = 64, max_nodes: int = 50000,
                    defs: Optional[Mapping[str, ProcDef]] = None,
                    environment: Optional[Environment] = None) -> nx.MultiDiGraph:
    if isinstance(program, Configuration):
        return LtsEngine(defs=defs, environment=environment).reachable_graph(depth, max_nodes, program)
    return LtsEngine(program, environment=environment).reachable_graph(depth, max_nodes)
