# process_ast.py - eQPAlg 抽象语法树
"""
进程项、动作、声明、规约的不可变数据结构,
以及自由变量、避免捕获的替换和良构检查
"""

from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Dict, FrozenSet, List, Mapping, Optional, Tuple, Union

from quantum_core import COMPUTATIONAL, GATE_ALIASES, GATE_ARITY, Ket


class VType(str, Enum):
    QUBIT = 'Qubit'
    INTEGER = 'Integer'


@dataclass(frozen=True)
class Span:
    line: int
    column: int

    def __str__(self):
        return f"{self.line}:{self.column}"


def _span():
    return field(default=None, compare=False, repr=False, kw_only=True)


# ---------------------------------------------------------------- 动作

Expr = Union[int, str]


@dataclass(frozen=True)
class Action:
    span: Optional[Span] = _span()


@dataclass(frozen=True)
class ClassicalSend(Action):
    channel: str
    expr: Expr


@dataclass(frozen=True)
class ClassicalRecv(Action):
    channel: str
    var: str


@dataclass(frozen=True)
class QuantumSend(Action):
    channel: str
    var: str


@dataclass(frozen=True)
class QuantumRecv(Action):
    channel: str
    var: str


@dataclass(frozen=True)
class Unitary(Action):
    gate: str
    targets: Tuple[str, ...]
    power: Optional[Expr] = None
    phase: Optional[float] = None


@dataclass(frozen=True)
class Measure(Action):
    targets: Tuple[str, ...]
    results: Tuple[str, ...]
    observable: str = COMPUTATIONAL


@dataclass(frozen=True)
class SendMeasure(Action):
    channel: str
    measure: Measure


RECEIVES = (ClassicalRecv, QuantumRecv)


# ---------------------------------------------------------------- 声明

@dataclass(frozen=True)
class VarDecl:
    name: str
    vtype: VType
    init: Optional[Union[Ket, int]] = None
    span: Optional[Span] = _span()


# ---------------------------------------------------------------- 进程项

@dataclass(frozen=True)
class ProcessTerm:
    span: Optional[Span] = _span()


@dataclass(frozen=True)
class Nil(ProcessTerm):
    pass


@dataclass(frozen=True)
class End(ProcessTerm):
    pass


@dataclass(frozen=True)
class Prefix(ProcessTerm):
    action: Action
    continuation: ProcessTerm


@dataclass(frozen=True)
class Seq(ProcessTerm):
    first: ProcessTerm
    second: ProcessTerm


@dataclass(frozen=True)
class Restrict(ProcessTerm):
    body: ProcessTerm
    channels: FrozenSet[str]


@dataclass(frozen=True)
class DeclBlock(ProcessTerm):
    decls: Tuple[VarDecl, ...]
    body: ProcessTerm


@dataclass(frozen=True)
class Invoke(ProcessTerm):
    name: str
    args: Tuple[str, ...]


@dataclass(frozen=True)
class Par(ProcessTerm):
    left: ProcessTerm
    right: ProcessTerm


@dataclass(frozen=True)
class ParShared(ProcessTerm):
    left: ProcessTerm
    right: ProcessTerm
    shared: str


PARALLEL = (Par, ParShared)


@dataclass(frozen=True)
class ProcDef:
    name: str
    params: Tuple[VarDecl, ...]
    body: ProcessTerm
    span: Optional[Span] = _span()


# ---------------------------------------------------------------- 规约

@dataclass(frozen=True)
class VarGroup:
    name: str
    decls: Tuple[VarDecl, ...]


@dataclass(frozen=True)
class ResourceAmount:
    count: int
    unit: str


@dataclass(frozen=True)
class ResourceClaim:
    """lhs[0] + lhs[1] + ... ≥ rhs"""
    lhs: Tuple[ResourceAmount, ...]
    rhs: ResourceAmount


@dataclass(frozen=True)
class SpecStatement:
    groups: Tuple[VarGroup, ...] = ()
    states: Tuple[str, ...] = ()
    resources: Tuple[ResourceClaim, ...] = ()
    ops: Tuple[str, ...] = ()

    @property
    def vars(self):
        return frozenset(d.name for g in self.groups for d in g.decls)

    def group(self, name):
        for g in self.groups:
            if g.name == name:
                return g
        return None


@dataclass(frozen=True)
class SourceFile:
    defs: Tuple[ProcDef, ...] = ()
    spec: Optional[SpecStatement] = None
    main: Optional[str] = None

    @property
    def def_map(self) -> Dict[str, ProcDef]:
        return {d.name: d for d in self.defs}

    def get(self, name):
        return self.def_map.get(name)


# ---------------------------------------------------------------- 变量

def action_names(action: Action) -> FrozenSet[str]:
    """动作中出现的变量名 (接收的绑定变量也算)"""
    if isinstance(action, ClassicalSend):
        return frozenset([action.expr]) if isinstance(action.expr, str) else frozenset()
    if isinstance(action, (QuantumSend, ClassicalRecv, QuantumRecv)):
        return frozenset([action.var])
    if isinstance(action, Unitary):
        names = set(action.targets)
        if isinstance(action.power, str):
            names.add(action.power)
        return frozenset(names)
    if isinstance(action, Measure):
        return frozenset(action.targets) | frozenset(action.results)
    if isinstance(action, SendMeasure):
        return action_names(action.measure)
    raise TypeError(f"未知动作: {action!r}")


def free_variables(term: ProcessTerm) -> FrozenSet[str]:
    """接收和声明块是绑定者; 测量结果变量是自由的"""
    if isinstance(term, (Nil, End)):
        return frozenset()
    if isinstance(term, Prefix):
        rest = free_variables(term.continuation)
        if isinstance(term.action, RECEIVES):
            return rest - {term.action.var}
        return action_names(term.action) | rest
    if isinstance(term, Seq):
        return free_variables(term.first) | free_variables(term.second)
    if isinstance(term, Restrict):
        return free_variables(term.body)
    if isinstance(term, DeclBlock):
        return free_variables(term.body) - {d.name for d in term.decls}
    if isinstance(term, Invoke):
        return frozenset(term.args)
    if isinstance(term, PARALLEL):
        return free_variables(term.left) | free_variables(term.right)
    raise TypeError(f"未知进程项: {term!r}")


def all_names(term: ProcessTerm) -> FrozenSet[str]:
    """自由和约束的全部变量名"""
    if isinstance(term, (Nil, End)):
        return frozenset()
    if isinstance(term, Prefix):
        return action_names(term.action) | all_names(term.continuation)
    if isinstance(term, Seq):
        return all_names(term.first) | all_names(term.second)
    if isinstance(term, Restrict):
        return all_names(term.body)
    if isinstance(term, DeclBlock):
        return all_names(term.body) | {d.name for d in term.decls}
    if isinstance(term, Invoke):
        return frozenset(term.args)
    if isinstance(term, PARALLEL):
        return all_names(term.left) | all_names(term.right)
    raise TypeError(f"未知进程项: {term!r}")


def free_channels(term: ProcessTerm) -> FrozenSet[str]:
    if isinstance(term, (Nil, End, Invoke)):
        return frozenset()
    if isinstance(term, Prefix):
        a = term.action
        own = frozenset([a.channel]) if hasattr(a, 'channel') else frozenset()
        return own | free_channels(term.continuation)
    if isinstance(term, Seq):
        return free_channels(term.first) | free_channels(term.second)
    if isinstance(term, Restrict):
        return free_channels(term.body) - term.channels
    if isinstance(term, DeclBlock):
        return free_channels(term.body)
    if isinstance(term, PARALLEL):
        return free_channels(term.left) | free_channels(term.right)
    raise TypeError(f"未知进程项: {term!r}")


def fresh_name(base: str, avoid) -> str:
    stem = base.rsplit('_', 1)[0] if base.rsplit('_', 1)[-1].isdigit() and '_' in base else base
    i = 1
    while f"{stem}_{i}" in avoid:
        i += 1
    return f"{stem}_{i}"


# ---------------------------------------------------------------- 替换

def _rename(name, mapping):
    return mapping.get(name, name) if isinstance(name, str) else name


def _subst_action(action: Action, mapping: Mapping[str, str]) -> Action:
    if isinstance(action, ClassicalSend):
        return replace(action, expr=_rename(action.expr, mapping))
    if isinstance(action, QuantumSend):
        return replace(action, var=_rename(action.var, mapping))
    if isinstance(action, Unitary):
        return replace(action, targets=tuple(_rename(t, mapping) for t in action.targets),
                       power=_rename(action.power, mapping))
    if isinstance(action, Measure):
        return replace(action, targets=tuple(_rename(t, mapping) for t in action.targets),
                       results=tuple(_rename(r, mapping) for r in action.results))
    if isinstance(action, SendMeasure):
        return replace(action, measure=_subst_action(action.measure, mapping))
    raise TypeError(f"不能对绑定动作直接替换: {action!r}")


def _binder_scope(binders, body, mapping):
    """处理一组绑定名: 去掉被遮蔽的映射, 必要时 alpha 重命名"""
    inner = {k: v for k, v in mapping.items() if k not in binders}
    fv_body = free_variables(body)
    inner = {k: v for k, v in inner.items() if k in fv_body}
    if not inner:
        return {}, {}
    targets = set(inner.values())
    renames = {}
    avoid = set(fv_body) | targets | set(inner) | set(binders) | all_names(body)
    for b in binders:
        if b in targets:
            new = fresh_name(b, avoid)
            avoid.add(new)
            renames[b] = new
    return inner, renames


def substitute_many(term: ProcessTerm, mapping: Mapping[str, str]) -> ProcessTerm:
    """同时替换 mapping 中所有自由变量, 避免捕获"""
    mapping = {k: v for k, v in mapping.items() if k != v}
    if not mapping:
        return term
    if isinstance(term, (Nil, End)):
        return term
    if isinstance(term, Prefix):
        action = term.action
        if isinstance(action, RECEIVES):
            inner, renames = _binder_scope([action.var], term.continuation, mapping)
            if not inner:
                return term
            cont = term.continuation
            if renames:
                cont = substitute_many(cont, renames)
                action = replace(action, var=renames[action.var])
            return replace(term, action=action, continuation=substitute_many(cont, inner))
        return replace(term, action=_subst_action(action, mapping),
                       continuation=substitute_many(term.continuation, mapping))
    if isinstance(term, Seq):
        return replace(term, first=substitute_many(term.first, mapping),
                       second=substitute_many(term.second, mapping))
    if isinstance(term, Restrict):
        return replace(term, body=substitute_many(term.body, mapping))
    if isinstance(term, DeclBlock):
        names = [d.name for d in term.decls]
        inner, renames = _binder_scope(names, term.body, mapping)
        if not inner:
            return term
        body = term.body
        decls = term.decls
        if renames:
            body = substitute_many(body, renames)
            decls = tuple(replace(d, name=renames.get(d.name, d.name)) for d in decls)
        return replace(term, decls=decls, body=substitute_many(body, inner))
    if isinstance(term, Invoke):
        return replace(term, args=tuple(_rename(a, mapping) for a in term.args))
    if isinstance(term, PARALLEL):
        return replace(term, left=substitute_many(term.left, mapping),
                       right=substitute_many(term.right, mapping))
    raise TypeError(f"未知进程项: {term!r}")


def substitute(term: ProcessTerm, old: str, new: str) -> ProcessTerm:
    """term{new/old}"""
    return substitute_many(term, {old: new})


# ---------------------------------------------------------------- 良构检查

@dataclass(frozen=True)
class Violation:
    message: str
    location: str
    span: Optional[Span] = None

    def __str__(self):
        where = f" ({self.span})" if self.span else ""
        return f"{self.location}{where}: {self.message}"


@dataclass
class WellFormedReport:
    violations: List[Violation] = field(default_factory=list)

    @property
    def ok(self):
        return not self.violations

    def add(self, message, location, span=None):
        self.violations.append(Violation(message, location, span))

    def __bool__(self):
        return self.ok


def _describe(action):
    from eqp_parser import format_action
    return format_action(action)


class _Checker:
    def __init__(self, defs: Mapping[str, ProcDef], report: WellFormedReport, where: str):
        self.defs = defs
        self.report = report
        self.where = where

    def flag(self, message, node, action=None):
        loc = self.where if action is None else f"{self.where}: {_describe(action)}"
        self.report.add(message, loc, getattr(node, 'span', None))

    def expect(self, name, vtype, env, node, action):
        if not isinstance(name, str):
            return
        if name not in env:
            self.flag(f"变量 {name} 未绑定", node, action)
        elif env[name] != vtype:
            self.flag(f"变量 {name} 是 {env[name].value}, 这里需要 {vtype.value}", node, action)

    def action(self, a: Action, env):
        if isinstance(a, ClassicalSend):
            self.expect(a.expr, VType.INTEGER, env, a, a)
        elif isinstance(a, QuantumSend):
            self.expect(a.var, VType.QUBIT, env, a, a)
        elif isinstance(a, Unitary):
            gate = GATE_ALIASES.get(a.gate, a.gate)
            if gate not in GATE_ARITY:
                self.flag(f"未知的门 {a.gate}", a, a)
            elif GATE_ARITY[gate] != len(a.targets):
                self.flag(f"{a.gate} 作用于 {GATE_ARITY[gate]} 个量子比特, 给了 {len(a.targets)} 个", a, a)
            elif (gate == 'R') != (a.phase is not None):
                self.flag("只有 R 门带相位参数", a, a)
            if len(set(a.targets)) != len(a.targets):
                self.flag("门的目标重复", a, a)
            if isinstance(a.power, int) and a.power < 0:
                self.flag("门的幂次不能为负", a, a)
            for t in a.targets:
                self.expect(t, VType.QUBIT, env, a, a)
            self.expect(a.power, VType.INTEGER, env, a, a)
        elif isinstance(a, Measure):
            self.measure(a, env, a)
        elif isinstance(a, SendMeasure):
            self.measure(a.measure, env, a)
        elif not isinstance(a, RECEIVES):
            raise TypeError(f"未知动作: {a!r}")

    def measure(self, m: Measure, env, outer):
        if m.observable != COMPUTATIONAL:
            self.flag(f"不支持的可观测量 {m.observable}, 只支持计算基测量", outer, outer)
        if len(m.results) != len(m.targets):
            self.flag(f"测量 {len(m.targets)} 个量子比特需要 {len(m.targets)} 个结果变量, "
                      f"给了 {len(m.results)} 个", outer, outer)
        if len(set(m.targets)) != len(m.targets):
            self.flag("测量目标重复", outer, outer)
        if len(set(m.results)) != len(m.results):
            self.flag("测量结果变量重复", outer, outer)
        for t in m.targets:
            self.expect(t, VType.QUBIT, env, outer, outer)
        for r in m.results:
            self.expect(r, VType.INTEGER, env, outer, outer)

    def term(self, t: ProcessTerm, env: Dict[str, VType]):
        if isinstance(t, (Nil, End)):
            return
        if isinstance(t, Prefix):
            a = t.action
            self.action(a, env)
            if isinstance(a, ClassicalRecv):
                env = {**env, a.var: VType.INTEGER}
            elif isinstance(a, QuantumRecv):
                env = {**env, a.var: VType.QUBIT}
            self.term(t.continuation, env)
        elif isinstance(t, Seq):
            self.term(t.first, env)
            self.term(t.second, env)
        elif isinstance(t, Restrict):
            if not t.channels:
                self.flag("限制的通道集合不能为空", t)
            self.term(t.body, env)
        elif isinstance(t, DeclBlock):
            names = [d.name for d in t.decls]
            for d in t.decls:
                if names.count(d.name) > 1:
                    self.flag(f"声明块重复声明 {d.name}", d)
                self.decl(d)
            self.term(t.body, {**env, **{d.name: d.vtype for d in t.decls}})
        elif isinstance(t, Invoke):
            self.invoke(t, env)
        elif isinstance(t, PARALLEL):
            self.term(t.left, env)
            self.term(t.right, env)
        else:
            raise TypeError(f"未知进程项: {t!r}")

    def decl(self, d: VarDecl):
        if d.init is None:
            return
        if d.vtype is VType.QUBIT and not (isinstance(d.init, Ket) and d.init.nqubits == 1):
            self.flag(f"量子比特 {d.name} 的初值必须是单比特 ket", d)
        if d.vtype is VType.INTEGER and not (isinstance(d.init, int) and d.init >= 0):
            self.flag(f"整数 {d.name} 的初值必须是自然数", d)

    def invoke(self, t: Invoke, env):
        target = self.defs.get(t.name)
        if target is None:
            self.flag(f"未定义的进程 {t.name}", t)
            return
        if len(target.params) != len(t.args):
            self.flag(f"{t.name} 需要 {len(target.params)} 个参数, 给了 {len(t.args)} 个", t)
            return
        if len(set(t.args)) != len(t.args):
            self.flag(f"调用 {t.name} 的实参重复", t)
        for param, arg in zip(target.params, t.args):
            if arg not in env:
                self.flag(f"实参 {arg} 未绑定", t)
            elif env[arg] != param.vtype:
                self.flag(f"实参 {arg} 是 {env[arg].value}, 形参 {param.name} 需要 {param.vtype.value}", t)


def well_formed(term: ProcessTerm, defs: Mapping[str, ProcDef],
                env: Optional[Mapping[str, VType]] = None, where: str = 'main') -> WellFormedReport:
    report = WellFormedReport()
    _Checker(defs, report, where).term(term, dict(env or {}))
    return report


def _call_graph_cycles(defs: Mapping[str, ProcDef]):
    def callees(t):
        if isinstance(t, Invoke):
            return {t.name}
        out = set()
        for child in _children(t):
            out |= callees(child)
        return out

    graph = {name: callees(d.body) for name, d in defs.items()}
    cycles = []
    state = {}

    def visit(n, path):
        state[n] = 'active'
        for m in sorted(graph.get(n, ())):
            if m not in graph:
                continue
            if state.get(m) == 'active':
                cycles.append(path[path.index(m):] + [m])
            elif m not in state:
                visit(m, path + [m])
        state[n] = 'done'

    for name in sorted(graph):
        if name not in state:
            visit(name, [name])
    return cycles


def _children(t):
    if isinstance(t, Prefix):
        return (t.continuation,)
    if isinstance(t, Seq):
        return (t.first, t.second)
    if isinstance(t, (Restrict, DeclBlock)):
        return (t.body,)
    if isinstance(t, PARALLEL):
        return (t.left, t.right)
    return ()


def check_source(source: SourceFile) -> WellFormedReport:
    """整个源文件: 定义不重名、main 存在、无递归调用、每个定义良构且封闭"""
    report = WellFormedReport()
    defs = {}
    for d in source.defs:
        if d.name in defs:
            report.add(f"进程 {d.name} 重复定义", d.name, d.span)
        defs[d.name] = d
    if source.main is not None and source.main not in defs:
        report.add(f"main 指向未定义的进程 {source.main}", 'main')
    for cycle in _call_graph_cycles(defs):
        report.add(f"递归调用: {' -> '.join(cycle)}", cycle[0], defs[cycle[0]].span)
    for d in source.defs:
        names = [p.name for p in d.params]
        for p in d.params:
            if names.count(p.name) > 1:
                report.add(f"形参 {p.name} 重复", d.name, p.span)
            if p.init is not None:
                report.add(f"形参 {p.name} 不能带初值", d.name, p.span)
        env = {p.name: p.vtype for p in d.params}
        report.violations.extend(well_formed(d.body, defs, env, where=d.name).violations)
    if source.spec is not None:
        for g in source.spec.groups:
            names = [x.name for x in g.decls]
            if len(set(names)) != len(names):
                report.add(f"变量组 {g.name} 有重复变量", 'spec')
    return report
