# conftest.py - 测试公共夹具与 hypothesis 策略
import numpy as np
import pytest
from hypothesis import strategies as st
from loguru import logger

from config import setup_logging
from eqp_parser import parse
from lts_engine import Environment
from protocol_lib import bundled_program
from quantum_core import NAMED_KETS, Ket, density_from_ket


@pytest.fixture(autouse=True, scope='session')
def quiet_logs():
    setup_logging('WARNING')
    yield
    logger.remove()


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def teleport_source():
    return bundled_program('teleport')


@pytest.fixture
def write_eqp(tmp_path):
    """把源码写进临时 .eqp 文件, 返回路径"""
    def _write(text, name='prog.eqp'):
        path = tmp_path / name
        path.write_text(text, encoding='utf-8')
        return path
    return _write


def program(text):
    return parse(text)


# ---------------------------------------------------------------- 策略

@st.composite
def kets(draw):
    """单量子比特的随机归一化纯态"""
    parts = draw(st.lists(st.floats(-1, 1, allow_nan=False), min_size=4, max_size=4))
    v = np.array([parts[0] + 1j * parts[1], parts[2] + 1j * parts[3]])
    norm = np.linalg.norm(v)
    if norm < 1e-3:
        v, norm = np.array([1.0, 0.0]), 1.0
    return Ket.from_vector(v / norm)




QUBITS = ('x', 'y', 'z', 'w')
INTS = ('m', 'n')
ONE_QUBIT_GATES = ('X', 'Y', 'Z', 'H', 'I')
KET_LITERALS = ('|0>', '|1>', '|+>', '|->')
# 生成的程序都带上这个辅助进程, 用来产生 CALL 和 SEQ
HELPER = "Flip(v: Qubit) := X[v] . end\n"


def _actions(draw, budget, owned):
    parts = []
    for _ in range(budget):
        kind = draw(st.sampled_from(('gate', 'cnot', 'measure', 'power', 'phase')))
        q = draw(st.sampled_from(owned))
        if kind == 'gate':
            parts.append(f"{draw(st.sampled_from(ONE_QUBIT_GATES))}[{q}]")
        elif kind == 'cnot' and len(owned) > 1:
            other = draw(st.sampled_from([o for o in owned if o != q]))
            parts.append(f"CNOT[{q}, {other}]")
        elif kind == 'measure':
            parts.append(f"measure[{{{q}}} -> {draw(st.sampled_from(INTS))}]")
        elif kind == 'power':
            parts.append(f"X^{draw(st.sampled_from(INTS))}[{q}]")
        else:
            parts.append(f"R(pi/{draw(st.integers(1, 8))})[{q}]")
    return parts


def _tail(draw, callable_):
    """可能接在一段前缀链后面的 ; Flip[q]"""
    if callable_ and draw(st.booleans()):
        return f" ; Flip[{draw(st.sampled_from(callable_))}]"
    return ''


@st.composite
def closed_programs(draw, max_qubits=4, max_steps=12):
    """语法上的随机闭合程序: 一个声明块, 内部是一个或两个并行分量, 通道都被限制"""
    nq = draw(st.integers(1, max_qubits))
    qubits = QUBITS[:nq]
    inits = draw(st.lists(st.sampled_from(KET_LITERALS), min_size=nq, max_size=nq))
    decls = [f"{q}: Qubit = {k}" for q, k in zip(qubits, inits)] + [f"{i}: Integer = 0" for i in INTS]

    steps = draw(st.integers(1, max_steps))
    if nq == 1 or not draw(st.booleans()):
        body = ' . '.join(_actions(draw, steps, list(qubits)) + ['end']) + _tail(draw, list(qubits))
        return parse(f"{HELPER}P := [{', '.join(decls)} . {body}]\nmain P")

    # 两个并行分量: 左边把一个量子比特和一个整数发给右边
    split = draw(st.integers(1, nq - 1))
    left_q, right_q = list(qubits[:split]), list(qubits[split:])
    sent = draw(st.sampled_from(left_q))
    left = ' . '.join(_actions(draw, steps // 2, left_q) + ["c!m", f"g!{sent}", "end"])
    left += _tail(draw, [q for q in left_q if q != sent])
    right = ' . '.join(["c?n", "g?u:Qubit"] + _actions(draw, steps - steps // 2, right_q + ['u']) + ['end'])
    right += _tail(draw, right_q)
    body = f"(({left}) || ({right})) \\{{c, g}}"
    return parse(f"{HELPER}P := [{', '.join(decls)} . {body}]\nmain P")


# 开放程序里三段通信, 顺序随机
OPEN_SEGMENTS = ('i?k . o!k', 'g?u:Qubit . H[u] . h!u', 'r?v:Qubit . X[v]')


@st.composite
def open_programs(draw, max_steps=6):
    """带开放通道的程序和对应的 Environment: 经典输入输出, 新量子比特输入, 寄存器内引用输入, 量子输出"""
    init = draw(st.sampled_from(KET_LITERALS))
    segments = draw(st.permutations(OPEN_SEGMENTS))
    parts = []
    for seg in segments:
        parts.extend(_actions(draw, draw(st.integers(0, max_steps // 3)), ['x']))
        parts.append(seg)
    body = ' . '.join(parts + ['end'])
    src = parse(f"P := [x: Qubit = {init}, m: Integer = 0, n: Integer = 0 . {body}]\nmain P")

    values = tuple(draw(st.lists(st.integers(0, 2 ** 64 - 1), min_size=1, max_size=3)))
    sigmas = tuple(density_from_ket(NAMED_KETS[k]) for k in
                   draw(st.lists(st.sampled_from(sorted(NAMED_KETS)), min_size=1, max_size=2)))
    env = Environment(classical={'i': values}, quantum={'g': sigmas}, references={'r': ('x',)})
    return src, env
