# eqp_parser.py - .eqp 源文件解析与格式化
"""
eQPAlg 的具体语法

  file    := { procdef } [ "spec" specbody ] [ "main" NAME ]
  procdef := NAME [ "(" decls ")" ] ":=" process
  process := seq { "||" [ "_" NAME ] seq }
  seq     := prefix { ";" prefix }
  prefix  := action "." prefix | atom { "\" "{" names "}" }
  atom    := "nil" | "end" | "[" decls "." process "]" | NAME "[" names "]" | "(" process ")"

'.' 比 ';' 结合紧, ';' 比 '||' 结合紧, 限制是原子上的后缀。
注释从 "--" 到行尾。也接受 ≔ ∥ → ∧ ≥ ⟩ 这些 Unicode 写法。
保留字: nil end measure spec main Qubit Integer pi
"""

import math
from dataclasses import dataclass, replace
from typing import Dict, Mapping, Optional, Union

from lark import Lark, Token, Transformer, v_args
from lark.exceptions import (LarkError, UnexpectedCharacters, UnexpectedEOF,
                             UnexpectedInput, UnexpectedToken, VisitError)

from process_ast import (Action, ClassicalRecv, ClassicalSend, DeclBlock, End, Invoke, Measure,
                         Nil, Par, ParShared, Prefix, ProcDef, ProcessTerm, QuantumRecv,
                         QuantumSend, ResourceAmount, ResourceClaim, Restrict, SendMeasure, Seq,
                         SourceFile, Span, SpecStatement, Unitary, VarDecl, VarGroup, VType,
                         check_source)
from quantum_core import NAMED_KETS, Ket, QuantumError

GRAMMAR = r"""
start: procdef* spec_clause? main_clause?

procdef: NAME [param_list] DEFINE process
param_list: "(" decl ("," decl)* ")"

spec_clause: "spec" spec_term (CONJ spec_term)*
?spec_term: NAME "=" "{" (decl ("," decl)*)? "}"   -> spec_group
          | KET_NAME                               -> spec_state
          | resource (PLUS resource)* GEQ resource -> spec_resource
resource: NUMBER NAME
main_clause: "main" NAME

process: seq_chain (par_op seq_chain)*
par_op: PAR ["_" NAME]
seq_chain: prefix_term (";" prefix_term)*
?prefix_term: action "." prefix_term           -> prefix
            | postfix
?postfix: atom
        | postfix "\\" "{" names "}"           -> restrict
?atom: "nil"                                   -> nil
     | "end"                                   -> end
     | "[" decl ("," decl)* "." process "]"    -> declblock
     | NAME "[" [names] "]"                    -> invoke
     | "(" process ")"

?action: NAME "!" expr                         -> send
       | NAME "!" measure                      -> send_measure
       | NAME "?" NAME [":" vtype]             -> recv
       | NAME [power] "[" names "]"            -> unitary
       | NAME "(" phase ")" "[" names "]"      -> phase_unitary
       | measure
measure: "measure" "[" "{" names "}" ARROW names "]"
power: "^" (NAME | NUMBER)
expr: NUMBER | NAME
names: NAME ("," NAME)*

phase: [MINUS] phase_body
?phase_body: NUMBER                            -> phase_num
           | "pi"                              -> phase_pi
           | "pi" "/" NUMBER                   -> phase_pi_div
           | NUMBER "*" "pi"                   -> phase_pi_mul

decl: NAME ":" vtype ["=" init]
?vtype: "Qubit"                                -> qubit_type
      | "Integer"                              -> integer_type
?init: NUMBER                                  -> int_init
     | KET                                     -> ket_init
     | "(" [amp] KET sign [amp] KET ")"        -> pair_init
sign: PLUS | MINUS
amp: [MINUS] amp_value
?amp_value: NUMBER                             -> real_amp
          | IMAG                               -> imag_amp
          | "(" NUMBER sign IMAG ")"           -> complex_amp

DEFINE: ":=" | "≔" | "→^{def}"
PAR: "||" | "∥"
ARROW: "->" | "→"
CONJ: "/\\" | "∧"
GEQ: ">=" | "≥"
PLUS: "+"
MINUS: "-"
KET: /\|[01+\-](>|⟩)/
KET_NAME: /\|[A-Za-z][A-Za-z0-9_]*(>|⟩)/
IMAG.2: /\d+(\.\d+)?([eE][+-]?\d+)?i/
NUMBER: /\d+(\.\d+)?([eE][+-]?\d+)?/
NAME: /[A-Za-z][A-Za-z0-9_]*/
COMMENT: /--[^\n]*/

%import common.WS
%ignore WS
%ignore COMMENT
"""

_LARK = Lark(GRAMMAR, parser='lalr', lexer='contextual', propagate_positions=True,
             maybe_placeholders=True)

_TOKEN_NAMES = {
    'NAME': '名字', 'NUMBER': '数字', 'IMAG': '虚数', 'KET': 'ket', 'KET_NAME': '态名',
    'DEFINE': '":="', 'PAR': '"||"', 'ARROW': '"->"', 'CONJ': '"/\\"', 'GEQ': '">="',
    'PLUS': '"+"', 'MINUS': '"-"', '$END': '输入结束',
}


class ParseError(Exception):
    """解析或良构检查失败, line/column 从 1 开始"""

    def __init__(self, line, column, message, expected=()):
        self.line = line
        self.column = column
        self.message = message
        self.expected = sorted(set(expected))
        detail = f"; 期望: {', '.join(self.expected)}" if self.expected else ""
        super().__init__(f"{line}:{column}: {message}{detail}")


class _Invalid(Exception):
    def __init__(self, message, where=None):
        super().__init__(message)
        self.message = message
        self.where = where


# 解析阶段的中间动作, 由 _Resolver 按变量类型换成经典或量子版本

@dataclass(frozen=True)
class _Send(Action):
    channel: str
    expr: Union[int, str]


@dataclass(frozen=True)
class _Recv(Action):
    channel: str
    var: str
    annotation: Optional[VType] = None


def _span(meta):
    if meta is None or getattr(meta, 'empty', True):
        return None
    return Span(meta.line, meta.column)


def _natural(tok):
    text = str(tok)
    if any(c in text for c in '.eE'):
        raise _Invalid(f"需要自然数, 得到 {text}", tok)
    return int(text)


@v_args(meta=True)
class _ToAst(Transformer):
    """lark 树 -> AST"""

    def start(self, meta, children):
        defs = tuple(c for c in children if isinstance(c, ProcDef))
        spec = next((c for c in children if isinstance(c, SpecStatement)), None)
        main = next((c for c in children if isinstance(c, Token)), None)
        return SourceFile(defs, spec, str(main) if main is not None else None)

    def procdef(self, meta, children):
        name, params, _define, body = children
        return ProcDef(str(name), tuple(params or ()), body, span=_span(meta))

    def param_list(self, meta, children):
        return list(children)

    def main_clause(self, meta, children):
        return children[0]

    # 规约
    def spec_clause(self, meta, children):
        groups, states, resources, ops = [], [], [], set()
        for c in children:
            if isinstance(c, Token):
                ops.add('∧')
            elif isinstance(c, VarGroup):
                groups.append(c)
                ops.add('≔')
            elif isinstance(c, ResourceClaim):
                resources.append(c)
                ops.add('≥')
                if len(c.lhs) > 1:
                    ops.add('+')
            else:
                states.append(c)
        return SpecStatement(tuple(groups), tuple(states), tuple(resources), tuple(sorted(ops)))

    def spec_group(self, meta, children):
        name, *decls = children
        return VarGroup(str(name), tuple(decls))

    def spec_state(self, meta, children):
        return str(children[0])[1:].rstrip('>⟩')

    def spec_resource(self, meta, children):
        amounts = [c for c in children if isinstance(c, ResourceAmount)]
        return ResourceClaim(tuple(amounts[:-1]), amounts[-1])

    def resource(self, meta, children):
        count, unit = children
        return ResourceAmount(_natural(count), str(unit))

    # 进程
    def process(self, meta, children):
        term = children[0]
        for shared, right in zip(children[1::2], children[2::2]):
            if shared is None:
                term = Par(term, right, span=_span(meta))
            else:
                term = ParShared(term, right, shared, span=_span(meta))
        return term

    def par_op(self, meta, children):
        _par, shared = children
        return str(shared) if shared is not None else None

    def seq_chain(self, meta, children):
        term = children[0]
        for right in children[1:]:
            term = Seq(term, right, span=_span(meta))
        return term

    def prefix(self, meta, children):
        action, cont = children
        return Prefix(action, cont, span=_span(meta))

    def restrict(self, meta, children):
        body, channels = children
        return Restrict(body, frozenset(channels), span=_span(meta))

    def nil(self, meta, children):
        return Nil(span=_span(meta))

    def end(self, meta, children):
        return End(span=_span(meta))

    def declblock(self, meta, children):
        *decls, body = children
        return DeclBlock(tuple(decls), body, span=_span(meta))

    def invoke(self, meta, children):
        name, args = children
        return Invoke(str(name), tuple(args or ()), span=_span(meta))

    def names(self, meta, children):
        return [str(c) for c in children]

    # 动作
    def send(self, meta, children):
        channel, expr = children
        return _Send(str(channel), expr, span=_span(meta))

    def send_measure(self, meta, children):
        channel, m = children
        return SendMeasure(str(channel), m, span=_span(meta))

    def recv(self, meta, children):
        channel, var, vtype = children
        return _Recv(str(channel), str(var), vtype, span=_span(meta))

    def unitary(self, meta, children):
        gate, power, targets = children
        return Unitary(str(gate), tuple(targets), power=power, span=_span(meta))

    def phase_unitary(self, meta, children):
        gate, phase, targets = children
        return Unitary(str(gate), tuple(targets), phase=phase, span=_span(meta))

    def measure(self, meta, children):
        targets, _arrow, results = children
        return Measure(tuple(targets), tuple(results), span=_span(meta))

    def power(self, meta, children):
        tok = children[0]
        return _natural(tok) if tok.type == 'NUMBER' else str(tok)

    def expr(self, meta, children):
        tok = children[0]
        return _natural(tok) if tok.type == 'NUMBER' else str(tok)

    def phase(self, meta, children):
        minus, value = children
        return -value if minus is not None else value

    def phase_num(self, meta, children):
        return float(children[0])

    def phase_pi(self, meta, children):
        return math.pi

    def phase_pi_div(self, meta, children):
        d = float(children[0])
        if d == 0:
            raise _Invalid("pi/0", meta)
        return math.pi / d

    def phase_pi_mul(self, meta, children):
        return float(children[0]) * math.pi

    # 声明
    def decl(self, meta, children):
        name, vtype, init = children
        if init is not None:
            if vtype is VType.QUBIT and not isinstance(init, Ket):
                raise _Invalid(f"量子比特 {name} 的初值必须是 ket", meta)
            if vtype is VType.INTEGER and isinstance(init, Ket):
                raise _Invalid(f"整数 {name} 的初值必须是自然数", meta)
        return VarDecl(str(name), vtype, init, span=_span(meta))

    def qubit_type(self, meta, children):
        return VType.QUBIT

    def integer_type(self, meta, children):
        return VType.INTEGER

    def int_init(self, meta, children):
        return _natural(children[0])

    def ket_init(self, meta, children):
        return NAMED_KETS[str(children[0])[1]]

    def pair_init(self, meta, children):
        a, k0, sign, b, k1 = children
        if str(k0)[1] != '0' or str(k1)[1] != '1':
            raise _Invalid("叠加态写作 (a|0> + b|1>)", meta)
        a = 1 if a is None else a
        b = 1 if b is None else b
        if sign == '-':
            b = -b
        try:
            return Ket((a, b))
        except QuantumError as e:
            raise _Invalid(str(e), meta) from None

    def sign(self, meta, children):
        return str(children[0])

    def amp(self, meta, children):
        minus, value = children
        return -value if minus is not None else value

    def real_amp(self, meta, children):
        return complex(float(children[0]), 0.0)

    def imag_amp(self, meta, children):
        return complex(0.0, float(str(children[0])[:-1]))

    def complex_amp(self, meta, children):
        re, sign, im = children
        im = float(str(im)[:-1])
        return complex(float(re), -im if sign == '-' else im)


# ---------------------------------------------------------------- 类型解析

def _used_as_qubit(var, term, defs) -> bool:
    """var 在 term 中 (未被遮蔽时) 是否被当作量子比特使用"""
    if isinstance(term, Prefix):
        a = term.action
        if isinstance(a, (Unitary, Measure)) and var in a.targets:
            return True
        if isinstance(a, SendMeasure) and var in a.measure.targets:
            return True
        if isinstance(a, QuantumSend) and a.var == var:
            return True
        if isinstance(a, (_Recv, ClassicalRecv, QuantumRecv)) and a.var == var:
            return False
        return _used_as_qubit(var, term.continuation, defs)
    if isinstance(term, DeclBlock):
        if any(d.name == var for d in term.decls):
            return False
        return _used_as_qubit(var, term.body, defs)
    if isinstance(term, Invoke):
        target = defs.get(term.name)
        if target is None or len(target.params) != len(term.args):
            return False
        return any(a == var and p.vtype is VType.QUBIT for p, a in zip(target.params, term.args))
    if isinstance(term, Seq):
        return _used_as_qubit(var, term.first, defs) or _used_as_qubit(var, term.second, defs)
    if isinstance(term, Restrict):
        return _used_as_qubit(var, term.body, defs)
    if isinstance(term, (Par, ParShared)):
        return _used_as_qubit(var, term.left, defs) or _used_as_qubit(var, term.right, defs)
    return False


def infer_recv_type(var, continuation, env, defs) -> VType:
    """未标注的接收: 外层已声明就用声明的类型, 否则看后续用法, 默认 Integer"""
    if var in env:
        return env[var]
    return VType.QUBIT if _used_as_qubit(var, continuation, defs) else VType.INTEGER


class _Resolver:
    def __init__(self, defs):
        self.defs = defs

    def term(self, t, env):
        if isinstance(t, Prefix):
            a = t.action
            if isinstance(a, _Send):
                if isinstance(a.expr, str) and env.get(a.expr) is VType.QUBIT:
                    a = QuantumSend(a.channel, a.expr, span=a.span)
                else:
                    a = ClassicalSend(a.channel, a.expr, span=a.span)
            elif isinstance(a, _Recv):
                vtype = a.annotation or infer_recv_type(a.var, t.continuation, env, self.defs)
                kind = QuantumRecv if vtype is VType.QUBIT else ClassicalRecv
                a = kind(a.channel, a.var, span=a.span)
                env = {**env, a.var: vtype}
            return replace(t, action=a, continuation=self.term(t.continuation, env))
        if isinstance(t, DeclBlock):
            return replace(t, body=self.term(t.body, {**env, **{d.name: d.vtype for d in t.decls}}))
        if isinstance(t, Seq):
            return replace(t, first=self.term(t.first, env), second=self.term(t.second, env))
        if isinstance(t, Restrict):
            return replace(t, body=self.term(t.body, env))
        if isinstance(t, (Par, ParShared)):
            return replace(t, left=self.term(t.left, env), right=self.term(t.right, env))
        return t


# ---------------------------------------------------------------- 解析

def _end_position(text):
    lines = text.split('\n')
    return len(lines), len(lines[-1]) + 1


def _clamp(line, column, text):
    lines = text.split('\n')
    line = min(max(line, 1), len(lines))
    column = min(max(column, 1), len(lines[line - 1]) + 1)
    return line, column


def _describe_expected(names):
    out = []
    for n in names:
        if n in _TOKEN_NAMES:
            out.append(_TOKEN_NAMES[n])
            continue
        try:
            pattern = _LARK.get_terminal(n).pattern
        except KeyError:
            out.append(n)
            continue
        out.append(f'"{pattern.value}"' if pattern.type == 'str' else n)
    return out


def _from_unexpected(err: UnexpectedInput, text: str) -> ParseError:
    line, column = getattr(err, 'line', -1), getattr(err, 'column', -1)
    if isinstance(err, UnexpectedCharacters):
        pos = err.pos_in_stream
        ch = text[pos] if 0 <= pos < len(text) else ''
        return ParseError(*_clamp(line, column, text), f"无法识别的字符 {ch!r}",
                          _describe_expected(err.allowed or ()))
    if isinstance(err, UnexpectedToken):
        expected = _describe_expected(err.accepts or err.expected or ())
        if err.token.type == '$END':
            return ParseError(*_end_position(text), "输入意外结束", expected)
        return ParseError(*_clamp(line, column, text), f"意外的记号 {str(err.token)!r}", expected)
    if isinstance(err, UnexpectedEOF):
        return ParseError(*_end_position(text), "输入意外结束", _describe_expected(err.expected or ()))
    return ParseError(*_end_position(text), str(err))


def _from_visit(err: VisitError, text: str) -> ParseError:
    orig = err.orig_exc
    if isinstance(orig, _Invalid):
        where = orig.where
        line = getattr(where, 'line', None) or 1
        column = getattr(where, 'column', None) or 1
        return ParseError(*_clamp(line, column, text), orig.message)
    if isinstance(orig, RecursionError):
        return ParseError(1, 1, "嵌套过深")
    return ParseError(1, 1, f"内部错误: {orig}")


def _to_ast(source: str) -> SourceFile:
    try:
        return _ToAst().transform(_LARK.parse(source))
    except UnexpectedInput as e:
        raise _from_unexpected(e, source) from None
    except VisitError as e:
        raise _from_visit(e, source) from None
    except RecursionError:
        raise ParseError(1, 1, "嵌套过深") from None
    except LarkError as e:
        raise ParseError(1, 1, str(e)) from None


def resolve(raw: SourceFile) -> SourceFile:
    """把中间的发送/接收换成带类型的版本"""
    resolver = _Resolver(raw.def_map)
    return replace(raw, defs=tuple(
        replace(d, body=resolver.term(d.body, {p.name: p.vtype for p in d.params}))
        for d in raw.defs))


def parse(source: Union[str, bytes]) -> SourceFile:
    """解析 .eqp 文本并做良构检查; 失败时抛出 ParseError, 只报告第一个错误"""
    if isinstance(source, bytes):
        source = source.decode('utf-8', errors='replace')
    try:
        resolved = resolve(_to_ast(source))
        report = check_source(resolved)
    except RecursionError:
        raise ParseError(1, 1, "嵌套过深") from None
    if not report.ok:
        first = report.violations[0]
        line, column = (first.span.line, first.span.column) if first.span else (1, 1)
        raise ParseError(*_clamp(line, column, source), str(first))
    return resolved


def parse_process(text: str, defs: Optional[Mapping[str, ProcDef]] = None,
                  env: Optional[Mapping[str, VType]] = None) -> ProcessTerm:
    """解析单个进程项, 不做良构检查"""
    body = _to_ast(f"Top := {text}").defs[0].body
    return _Resolver(dict(defs or {})).term(body, dict(env or {}))


# ---------------------------------------------------------------- 格式化

_PAR, _SEQ, _PREFIX, _ATOM = range(4)


def _fmt_float(x: float) -> str:
    return repr(float(x))


def _amp_text(a: complex) -> str:
    re, im = a.real, a.imag
    if im == 0:
        return _fmt_float(re)
    if re == 0:
        return f"-{_fmt_float(-im)}i" if im < 0 else f"{_fmt_float(im)}i"
    if re > 0:
        sign = '-' if im < 0 else '+'
        return f"({_fmt_float(re)} {sign} {_fmt_float(abs(im))}i)"
    # 负实部写成 -(|re| ∓ |im|i)
    sign = '+' if im < 0 else '-'
    return f"-({_fmt_float(-re)} {sign} {_fmt_float(abs(im))}i)"


def format_ket(ket: Ket) -> str:
    for name, named in NAMED_KETS.items():
        if named.amplitudes == ket.amplitudes:
            return f"|{name}>"
    a, b = ket.amplitudes
    return f"({_amp_text(a)}|0> + {_amp_text(b)}|1>)"


def format_decl(d: VarDecl) -> str:
    text = f"{d.name}: {d.vtype.value}"
    if d.init is None:
        return text
    init = format_ket(d.init) if isinstance(d.init, Ket) else str(d.init)
    return f"{text} = {init}"


def format_action(a: Action, recv_annotation=False) -> str:
    if isinstance(a, (ClassicalSend, _Send)):
        return f"{a.channel}!{a.expr}"
    if isinstance(a, QuantumSend):
        return f"{a.channel}!{a.var}"
    if isinstance(a, ClassicalRecv):
        return f"{a.channel}?{a.var}:Integer" if recv_annotation else f"{a.channel}?{a.var}"
    if isinstance(a, QuantumRecv):
        return f"{a.channel}?{a.var}:Qubit" if recv_annotation else f"{a.channel}?{a.var}"
    if isinstance(a, _Recv):
        return f"{a.channel}?{a.var}"
    if isinstance(a, Unitary):
        if a.phase is not None:
            head = f"{a.gate}({_fmt_float(a.phase)})"
        else:
            head = a.gate if a.power is None else f"{a.gate}^{a.power}"
        return f"{head}[{', '.join(a.targets)}]"
    if isinstance(a, Measure):
        return f"measure[{{{', '.join(a.targets)}}} -> {', '.join(a.results)}]"
    if isinstance(a, SendMeasure):
        return f"{a.channel}!{format_action(a.measure)}"
    raise TypeError(f"未知动作: {a!r}")


class _Printer:
    def __init__(self, defs):
        self.defs = defs

    def term(self, t, env, level=_PAR) -> str:
        text, own = self._term(t, env)
        return f"({text})" if own < level else text

    def _term(self, t, env):
        if isinstance(t, Nil):
            return 'nil', _ATOM
        if isinstance(t, End):
            return 'end', _ATOM
        if isinstance(t, Invoke):
            return f"{t.name}[{', '.join(t.args)}]", _ATOM
        if isinstance(t, DeclBlock):
            inner = {**env, **{d.name: d.vtype for d in t.decls}}
            decls = ', '.join(format_decl(d) for d in t.decls)
            return f"[{decls} . {self.term(t.body, inner)}]", _ATOM
        if isinstance(t, Restrict):
            chans = ', '.join(sorted(t.channels))
            return f"{self.term(t.body, env, _ATOM)} \\{{{chans}}}", _ATOM
        if isinstance(t, Prefix):
            a = t.action
            annotate = False
            if isinstance(a, (ClassicalRecv, QuantumRecv)):
                wanted = VType.QUBIT if isinstance(a, QuantumRecv) else VType.INTEGER
                annotate = infer_recv_type(a.var, t.continuation, env, self.defs) is not wanted
                env = {**env, a.var: wanted}
            return f"{format_action(a, annotate)} . {self.term(t.continuation, env, _PREFIX)}", _PREFIX
        if isinstance(t, Seq):
            return f"{self.term(t.first, env, _SEQ)} ; {self.term(t.second, env, _PREFIX)}", _SEQ
        if isinstance(t, (Par, ParShared)):
            op = f"||_{t.shared}" if isinstance(t, ParShared) else '||'
            return f"{self.term(t.left, env, _PAR)} {op} {self.term(t.right, env, _SEQ)}", _PAR
        raise TypeError(f"未知进程项: {t!r}")


def format_process(term: ProcessTerm, defs: Optional[Mapping[str, ProcDef]] = None,
                   env: Optional[Mapping[str, VType]] = None) -> str:
    return _Printer(dict(defs or {})).term(term, dict(env or {}))


def format_spec(spec: SpecStatement) -> str:
    parts = [f"{g.name} = {{{', '.join(format_decl(d) for d in g.decls)}}}" for g in spec.groups]
    parts += [f"|{s}>" for s in spec.states]
    for r in spec.resources:
        lhs = ' + '.join(f"{a.count} {a.unit}" for a in r.lhs)
        parts.append(f"{lhs} >= {r.rhs.count} {r.rhs.unit}")
    return 'spec ' + '\n  /\\ '.join(parts)


def pretty_print(source: SourceFile) -> str:
    """规范格式; parse(pretty_print(f)) == f (位置信息除外)"""
    printer = _Printer(source.def_map)
    blocks = []
    for d in source.defs:
        params = f"({', '.join(format_decl(p) for p in d.params)})" if d.params else ''
        env: Dict[str, VType] = {p.name: p.vtype for p in d.params}
        blocks.append(f"{d.name}{params} := {printer.term(d.body, env)}")
    spec = source.spec
    if spec is not None and (spec.groups or spec.states or spec.resources):
        blocks.append(format_spec(spec))
    if source.main is not None:
        blocks.append(f"main {source.main}")
    return '\n\n'.join(blocks) + ('\n' if blocks else '')
