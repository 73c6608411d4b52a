# quantum_core.py - 量子态与算子的基础运算
"""
eQPAlg 量子内核
密度算子、门、张量积、偏迹和计算基测量

约定:
  - 比特序: 下标 0 是 |b0 b1 ...> 中最左(最高位)的量子比特
  - 数值容差统一为 TOLERANCE = 1e-9
  - 所有值构造后不可变
"""

import cmath
import math
from dataclasses import dataclass
from itertools import product
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np

TOLERANCE = 1e-9

# 计算基以外的测量不支持，见 process_ast.well_formed
COMPUTATIONAL = 'computational'

GATE_ARITY = {'I': 1, 'X': 1, 'Y': 1, 'Z': 1, 'H': 1, 'R': 1, 'CNOT': 2}
GATE_ALIASES = {'R_phi': 'R', 'Rphi': 'R', 'CNot': 'CNOT'}


class QuantumError(ValueError):
    """量子运算的前置条件不满足"""


ComplexAmplitude = complex


def _check_finite(values, what):
    arr = np.asarray(values)
    if not np.all(np.isfinite(arr)):
        raise QuantumError(f"{what} 含有 NaN/Inf")


@dataclass(frozen=True)
class Ket:
    """归一化的纯态列向量"""

    amplitudes: Tuple[complex, ...]

    def __post_init__(self):
        amps = tuple(complex(a) for a in self.amplitudes)
        object.__setattr__(self, 'amplitudes', amps)
        dim = len(amps)
        if dim == 0 or dim & (dim - 1):
            raise QuantumError(f"ket 维数必须是 2 的幂, 得到 {dim}")
        _check_finite(amps, "ket")
        norm = sum(abs(a) ** 2 for a in amps)
        if abs(norm - 1.0) > TOLERANCE:
            raise QuantumError(f"ket 未归一化: Σ|a|² = {norm:.12f}")

    @property
    def dim(self):
        return len(self.amplitudes)

    @property
    def nqubits(self):
        return self.dim.bit_length() - 1

    @property
    def vector(self):
        return np.array(self.amplitudes, dtype=complex)

    @classmethod
    def from_vector(cls, vec):
        return cls(tuple(complex(a) for a in np.asarray(vec).ravel()))


@dataclass(frozen=True, eq=False)
class Operator:
    """方阵算子"""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.array(self.matrix, dtype=complex)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise QuantumError(f"算子必须是方阵, 得到形状 {m.shape}")
        _check_finite(m, "算子")
        m.setflags(write=False)
        object.__setattr__(self, 'matrix', m)

    @property
    def dim(self):
        return self.matrix.shape[0]

    def dagger(self):
        return Operator(self.matrix.conj().T)

    def is_unitary(self, tol=TOLERANCE):
        return np.allclose(self.matrix @ self.matrix.conj().T, np.eye(self.dim), atol=tol)

    def is_hermitian(self, tol=TOLERANCE):
        return np.allclose(self.matrix, self.matrix.conj().T, atol=tol)

    def __matmul__(self, other):
        return Operator(self.matrix @ other.matrix)

    def power(self, k):
        if k < 0:
            raise QuantumError("门的幂次不能为负")
        return Operator(np.linalg.matrix_power(self.matrix, k))

    def __eq__(self, other):
        if not isinstance(other, Operator):
            return NotImplemented
        return self.matrix.shape == other.matrix.shape and np.array_equal(self.matrix, other.matrix)

    def __hash__(self):
        return hash(self.matrix.tobytes())


@dataclass(frozen=True, eq=False)
class DensityOperator:
    """密度算子: 厄米、半正定、迹为 1"""

    nqubits: int
    matrix: np.ndarray

    def __post_init__(self):
        m = np.array(self.matrix, dtype=complex)
        dim = 2 ** self.nqubits
        if m.shape != (dim, dim):
            raise QuantumError(f"{self.nqubits} 个量子比特需要 {dim}x{dim} 矩阵, 得到 {m.shape}")
        _check_finite(m, "密度算子")
        if not np.allclose(m, m.conj().T, atol=TOLERANCE):
            raise QuantumError("密度算子不是厄米的")
        tr = np.trace(m)
        if abs(tr - 1.0) > TOLERANCE:
            raise QuantumError(f"密度算子的迹为 {tr}, 不是 1")
        if dim > 1 and np.linalg.eigvalsh(m).min() < -TOLERANCE:
            raise QuantumError("密度算子不是半正定的")
        m.setflags(write=False)
        object.__setattr__(self, 'matrix', m)

    @property
    def dim(self):
        return self.matrix.shape[0]

    def digest(self, decimals=9):
        """用于哈希/状态去重的舍入字节串"""
        rounded = np.round(self.matrix, decimals) + 0.0  # +0.0 去掉 -0
        return rounded.tobytes()

    def __eq__(self, other):
        if not isinstance(other, DensityOperator):
            return NotImplemented
        return self.nqubits == other.nqubits and np.array_equal(self.matrix, other.matrix)

    def __hash__(self):
        return hash((self.nqubits, self.digest()))

    def allclose(self, other, tol=TOLERANCE):
        return self.nqubits == other.nqubits and np.allclose(self.matrix, other.matrix, atol=tol)

    @classmethod
    def empty(cls):
        """0 个量子比特的 1 维态, 张量积的单位元"""
        return cls(0, np.ones((1, 1), dtype=complex))


@dataclass(frozen=True)
class MeasurementOutcome:
    outcome: Tuple[int, ...]
    probability: float
    post_state: DensityOperator

    @property
    def bits(self):
        return ''.join(str(b) for b in self.outcome)


# ---------------------------------------------------------------- 构造

def ket_from_bits(bits: Sequence[int]) -> Ket:
    """计算基 |b1...bn>"""
    if not bits:
        raise QuantumError("比特串不能为空")
    index = 0
    for b in bits:
        if b not in (0, 1):
            raise QuantumError(f"比特必须是 0 或 1, 得到 {b!r}")
        index = (index << 1) | b
    vec = np.zeros(2 ** len(bits), dtype=complex)
    vec[index] = 1.0
    return Ket.from_vector(vec)


KET_0 = ket_from_bits([0])
KET_1 = ket_from_bits([1])
KET_PLUS = Ket((1 / math.sqrt(2), 1 / math.sqrt(2)))
KET_MINUS = Ket((1 / math.sqrt(2), -1 / math.sqrt(2)))
NAMED_KETS = {'0': KET_0, '1': KET_1, '+': KET_PLUS, '-': KET_MINUS}


def bell_state(which='phi+') -> Ket:
    s = 1 / math.sqrt(2)
    table = {
        'phi+': (s, 0, 0, s),
        'phi-': (s, 0, 0, -s),
        'psi+': (0, s, s, 0),
        'psi-': (0, s, -s, 0),
    }
    if which not in table:
        raise QuantumError(f"未知 Bell 态: {which}")
    return Ket(table[which])


def density_from_ket(ket: Ket) -> DensityOperator:
    v = ket.vector.reshape(-1, 1)
    return DensityOperator(ket.nqubits, v @ v.conj().T)


def maximally_mixed(nqubits=1) -> DensityOperator:
    dim = 2 ** nqubits
    return DensityOperator(nqubits, np.eye(dim, dtype=complex) / dim)


def random_ket(rng, nqubits=1) -> Ket:
    """Haar 随机纯态"""
    dim = 2 ** nqubits
    v = rng.normal(size=dim) + 1j * rng.normal(size=dim)
    return Ket.from_vector(v / np.linalg.norm(v))


def random_density(rng, nqubits=1) -> DensityOperator:
    """Ginibre 随机混态"""
    dim = 2 ** nqubits
    g = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    m = g @ g.conj().T
    m = (m + m.conj().T) / 2
    return DensityOperator(nqubits, m / np.trace(m).real)


# ---------------------------------------------------------------- 基本运算

def inner_product(u: Ket, v: Ket) -> ComplexAmplitude:
    if u.dim != v.dim:
        raise QuantumError(f"维数不匹配: {u.dim} vs {v.dim}")
    return complex(np.vdot(u.vector, v.vector))


def tensor(a: DensityOperator, b: DensityOperator) -> DensityOperator:
    return DensityOperator(a.nqubits + b.nqubits, np.kron(a.matrix, b.matrix))


def trace(op) -> ComplexAmplitude:
    m = op.matrix if hasattr(op, 'matrix') else np.asarray(op, dtype=complex)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise QuantumError("只能对方阵求迹")
    return complex(np.trace(m))


def _check_targets(targets, nqubits):
    targets = list(targets)
    if len(set(targets)) != len(targets):
        raise QuantumError(f"目标量子比特重复: {targets}")
    for t in targets:
        if not 0 <= t < nqubits:
            raise QuantumError(f"量子比特下标 {t} 越界 (共 {nqubits} 个)")
    return targets


def partial_trace(rho: DensityOperator, keep: Iterable[int]) -> DensityOperator:
    """保留 keep 中的量子比特(按升序), 迹掉其余"""
    n = rho.nqubits
    keep = sorted(_check_targets(sorted(set(keep)), n))
    drop = [i for i in range(n) if i not in keep]
    if not drop:
        return rho
    t = rho.matrix.reshape((2,) * (2 * n))
    order = keep + drop
    t = t.transpose(order + [n + i for i in order])
    dk, dd = 2 ** len(keep), 2 ** len(drop)
    t = t.reshape(dk, dd, dk, dd)
    reduced = np.trace(t, axis1=1, axis2=3)
    return DensityOperator(len(keep), reduced)


def permute_qubits(rho: DensityOperator, order: Sequence[int]) -> DensityOperator:
    """新的第 j 个量子比特是原来的第 order[j] 个"""
    n = rho.nqubits
    order = _check_targets(order, n)
    if len(order) != n:
        raise QuantumError(f"置换需要 {n} 个下标, 得到 {len(order)} 个")
    if order == list(range(n)):
        return rho
    t = rho.matrix.reshape((2,) * (2 * n)).transpose(order + [n + i for i in order])
    return DensityOperator(n, t.reshape(2 ** n, 2 ** n))


def standard_gate(name: str, phase: Optional[float] = None) -> Operator:
    """I, X, Y, Z, H, CNOT 以及相位门 R(φ)"""
    name = GATE_ALIASES.get(name, name)
    if name not in GATE_ARITY:
        raise QuantumError(f"未知的门: {name}")
    if (name == 'R') != (phase is not None):
        raise QuantumError("只有 R 门需要相位参数")
    s = 1 / math.sqrt(2)
    if name == 'I':
        m = [[1, 0], [0, 1]]
    elif name == 'X':
        m = [[0, 1], [1, 0]]
    elif name == 'Y':
        # Y|0> = -i|1>, Y|1> = i|0>
        m = [[0, 1j], [-1j, 0]]
    elif name == 'Z':
        m = [[1, 0], [0, -1]]
    elif name == 'H':
        m = [[s, s], [s, -s]]
    elif name == 'CNOT':
        m = [[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]]
    else:
        m = [[1, 0], [0, cmath.exp(1j * phase)]]
    return Operator(np.array(m, dtype=complex))


def apply_to_ket(ket: Ket, gate: Operator) -> Ket:
    if gate.dim != ket.dim:
        raise QuantumError(f"维数不匹配: 门 {gate.dim}, ket {ket.dim}")
    return Ket.from_vector(gate.matrix @ ket.vector)


def apply_unitary(rho: DensityOperator, gate: Operator, targets: Sequence[int]) -> DensityOperator:
    """ρ' = Ũ ρ Ũ†, Ũ 是 gate 作用在 targets 上、其余位置为单位算子的提升"""
    n = rho.nqubits
    targets = _check_targets(targets, n)
    k = len(targets)
    if gate.dim != 2 ** k:
        raise QuantumError(f"{k} 个目标需要 {2 ** k} 维的门, 得到 {gate.dim}")
    u = gate.matrix.reshape((2,) * (2 * k))
    t = rho.matrix.reshape((2,) * (2 * n))
    # 左乘: 行指标
    t = np.tensordot(u, t, axes=(list(range(k, 2 * k)), targets))
    t = np.moveaxis(t, list(range(k)), targets)
    # 右乘 U†: 列指标
    cols = [n + i for i in targets]
    t = np.tensordot(t, u.conj(), axes=(cols, list(range(k, 2 * k))))
    t = np.moveaxis(t, list(range(2 * n - k, 2 * n)), cols)
    m = t.reshape(2 ** n, 2 ** n)
    return DensityOperator(n, (m + m.conj().T) / 2)


def born_distribution(rho: DensityOperator, targets: Sequence[int]) -> List[Tuple[Tuple[int, ...], float]]:
    """所有测量结果及其概率 (包括概率为 0 的)"""
    n = rho.nqubits
    targets = _check_targets(targets, n)
    diag = np.real(np.diag(rho.matrix)).reshape((2,) * n) if n else np.real(np.diag(rho.matrix))
    others = tuple(i for i in range(n) if i not in targets)
    marginal = diag.sum(axis=others) if others else diag
    # sum 之后剩余轴按升序排列, 调整为 targets 的顺序
    remaining = sorted(targets)
    marginal = np.transpose(marginal, [remaining.index(t) for t in targets]) if targets else marginal
    result = []
    for bits in product((0, 1), repeat=len(targets)):
        p = float(marginal[bits]) if targets else float(marginal)
        result.append((bits, max(p, 0.0)))
    return result


def _project(rho: DensityOperator, targets, bits):
    n = rho.nqubits
    t = rho.matrix.reshape((2,) * (2 * n)).copy()
    for target, bit in zip(targets, bits):
        index = [slice(None)] * (2 * n)
        index[target] = 1 - bit
        t[tuple(index)] = 0
        index = [slice(None)] * (2 * n)
        index[n + target] = 1 - bit
        t[tuple(index)] = 0
    return t.reshape(2 ** n, 2 ** n)


def measurement_outcomes(rho: DensityOperator, targets: Sequence[int],
                         min_probability=1e-12) -> List[MeasurementOutcome]:
    """所有概率非零的投影测量分支, 每个分支带坍缩后的态"""
    outcomes = []
    for bits, p in born_distribution(rho, targets):
        if p <= min_probability:
            continue
        post = _project(rho, list(targets), bits) / p
        post = (post + post.conj().T) / 2
        outcomes.append(MeasurementOutcome(bits, p, DensityOperator(rho.nqubits, post)))
    if not outcomes:
        raise QuantumError("测量概率总和为 0, 态在数值上不合法")
    return outcomes


def measure_computational(rho: DensityOperator, targets: Sequence[int], rng_draw: float) -> MeasurementOutcome:
    """按 Born 规则, 用累计概率落在 rng_draw 的分支"""
    if not 0.0 <= rng_draw < 1.0:
        raise QuantumError(f"rng_draw 必须在 [0,1) 内, 得到 {rng_draw}")
    outcomes = measurement_outcomes(rho, targets)
    total = sum(o.probability for o in outcomes)
    if abs(total - 1.0) > 1e-6:
        raise QuantumError(f"测量概率总和为 {total}")
    cumulative = 0.0
    for o in outcomes:
        cumulative += o.probability / total
        if rng_draw < cumulative:
            return o
    return outcomes[-1]


# ---------------------------------------------------------------- 分析

def fidelity(target: Ket, rho: DensityOperator) -> float:
    """<ψ|ρ|ψ>"""
    if target.dim != rho.dim:
        raise QuantumError(f"维数不匹配: {target.dim} vs {rho.dim}")
    v = target.vector
    return float(np.real(np.vdot(v, rho.matrix @ v)))


def spectrum(rho: DensityOperator) -> np.ndarray:
    return np.sort(np.linalg.eigvalsh(rho.matrix))


def purity(rho: DensityOperator) -> float:
    return float(np.real(np.trace(rho.matrix @ rho.matrix)))


def is_valid_density(matrix, tol=TOLERANCE) -> bool:
    m = np.asarray(matrix, dtype=complex)
    return (np.allclose(m, m.conj().T, atol=tol)
            and abs(np.trace(m) - 1.0) <= tol
            and np.linalg.eigvalsh((m + m.conj().T) / 2).min() >= -tol)
