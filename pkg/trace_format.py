# trace_format.py - 轨迹和隐形传态报告的 JSON 格式
"""
JSON 文档用 pydantic 模型描述, 模式即 model_json_schema()
轨迹里没有时间戳: 同一个种子两次运行输出的字节完全相同
"""

import hashlib
from typing import Dict, List, Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from lts_engine import (CRecv, CSend, Configuration, Meas, QRecvFresh, QRecvRef, QSend, Tau,
                        Trace, TransitionLabel, Unit)
from quantum_core import DensityOperator, Ket, purity

# 寄存器不超过这么多量子比特时输出完整矩阵, 否则输出指纹
FULL_MATRIX_QUBITS = 5

Pair = List[float]
Matrix = List[List[Pair]]


def _clean(x: float) -> float:
    return float(np.round(x, 12)) + 0.0


def complex_pair(z: complex) -> Pair:
    return [_clean(z.real), _clean(z.imag)]


def matrix_pairs(rho: DensityOperator) -> Matrix:
    """按行展开, 每个元素是 [实部, 虚部]"""
    return [[complex_pair(z) for z in row] for row in rho.matrix]


def rho_digest(rho: DensityOperator) -> Union[Matrix, str]:
    if rho.nqubits <= FULL_MATRIX_QUBITS:
        return matrix_pairs(rho)
    digest = hashlib.sha256(rho.digest()).hexdigest()[:16]
    trace_norm = float(np.abs(np.linalg.eigvalsh(rho.matrix)).sum())
    return f"{rho.nqubits}q|trace_norm={trace_norm:.9f}|purity={purity(rho):.9f}|sha256={digest}"


class StepRecord(BaseModel):
    model_config = ConfigDict(extra='forbid')

    index: int = Field(ge=1)
    label: Literal['tau', 'csend', 'crecv', 'qsend', 'qrecv_fresh', 'qrecv_ref', 'unit', 'meas']
    text: str
    rule: Optional[str] = None
    detail: Optional[str] = None
    channel: Optional[str] = None
    value: Optional[Union[int, str]] = None
    qvar: Optional[str] = None
    gate: Optional[str] = None
    targets: Optional[List[str]] = None
    power: Optional[int] = None
    phase: Optional[float] = None
    outcome: Optional[str] = None
    probability: Optional[float] = Field(default=None, gt=0.0, le=1.0 + 1e-9)
    register: List[str]
    rho_digest: Union[Matrix, str]


class TraceDocument(BaseModel):
    model_config = ConfigDict(extra='forbid')

    seed: int
    policy: str
    max_steps: Optional[int] = None
    steps: List[StepRecord]
    final: Literal['terminated', 'deadlocked', 'budget', 'error']
    register: List[str]
    store: Dict[str, int]
    initial_rho_digest: Union[Matrix, str]


def _label_fields(label: TransitionLabel) -> dict:
    if isinstance(label, Tau):
        return dict(rule=label.rule, channel=label.channel, value=label.value, detail=label.detail)
    if isinstance(label, (CSend, CRecv)):
        return dict(channel=label.channel, value=label.value)
    if isinstance(label, (QSend, QRecvRef)):
        return dict(channel=label.channel, qvar=label.qvar)
    if isinstance(label, QRecvFresh):
        return dict(channel=label.channel, qvar=label.qvar)
    if isinstance(label, Unit):
        return dict(gate=label.gate, targets=list(label.targets), power=label.power, phase=label.phase)
    if isinstance(label, Meas):
        return dict(targets=list(label.targets), outcome=label.bits, probability=label.probability)
    raise TypeError(f"未知标签: {label!r}")


def step_record(index: int, label: TransitionLabel, target: Configuration) -> StepRecord:
    return StepRecord(index=index, label=label.kind, text=str(label), **_label_fields(label),
                      register=list(target.ctx.qreg), rho_digest=rho_digest(target.ctx.rho))


def trace_document(trace: Trace) -> TraceDocument:
    final = trace.final.ctx
    return TraceDocument(
        seed=trace.rng_seed,
        policy=trace.policy,
        max_steps=trace.max_steps,
        steps=[step_record(i, s.label, s.target) for i, s in enumerate(trace.steps, 1)],
        final=trace.status.value,
        register=list(final.qreg),
        store=final.f,
        initial_rho_digest=rho_digest(trace.initial.ctx.rho),
    )


def trace_json(trace: Trace) -> str:
    return trace_document(trace).model_dump_json(indent=2, exclude_none=True)


# ---------------------------------------------------------------- 隐形传态报告

class TallyRecord(BaseModel):
    cbits_sent: int = Field(ge=0)
    qubits_sent_fresh: int = Field(ge=0)
    ebits_consumed: int = Field(ge=0)
    qubit_refs_passed: int = Field(ge=0)


class TeleportReportDocument(BaseModel):
    model_config = ConfigDict(extra='forbid')

    input_state: List[Pair]
    output_state: Matrix
    fidelity: float = Field(ge=-1e-9, le=1.0 + 1e-9)
    branch: str
    branch_probability: Optional[float] = None
    tally: TallyRecord
    passed: Optional[bool] = None
    violations: List[str] = Field(default_factory=list)


def ket_pairs(ket: Ket) -> List[Pair]:
    return [complex_pair(a) for a in ket.amplitudes]


def report_document(report, verdict=None) -> TeleportReportDocument:
    tally = report.tally
    return TeleportReportDocument(
        input_state=ket_pairs(report.input_state),
        output_state=matrix_pairs(report.output_state),
        fidelity=report.fidelity,
        branch=report.branch,
        branch_probability=report.branch_probability,
        tally=TallyRecord(cbits_sent=tally.cbits_sent, qubits_sent_fresh=tally.qubits_sent_fresh,
                          ebits_consumed=tally.ebits_consumed, qubit_refs_passed=tally.qubit_refs_passed),
        passed=None if verdict is None else verdict.passed,
        violations=[] if verdict is None else list(verdict.violations),
    )


class BranchSummary(BaseModel):
    branch: str
    runs: int
    min_fidelity: float
    mean_fidelity: float
    failures: int


class TeleportCheckDocument(BaseModel):
    model_config = ConfigDict(extra='forbid')

    trials: int
    seed: int
    mutation: Optional[str] = None
    passed: bool
    branches: List[BranchSummary]
    failures: List[TeleportReportDocument] = Field(default_factory=list)


# main.py schema 打印的模式
SCHEMAS = {'run': TraceDocument, 'teleport-check': TeleportCheckDocument}


def trace_schema(kind: str = 'run') -> dict:
    return SCHEMAS[kind].model_json_schema()
