"""Irrigation network benchmarks.

Channels hold water levels in [0, 1]; regulation devices are discrete action
variables. Mode 0 of a device is idle and every other mode pumps one unit
from one incoming to one outgoing channel. A channel's next level is beta
distributed around its current level shifted by half the net flow:

    h1 = tau * clip(x + 0.5 * flow, margin, 1 - margin),   h2 = tau - h1

The clip is written out exactly as a piecewise-linear expression for every
combination of adjacent device modes, so backprojections stay closed form.
"""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .basis import BasisFunction
from .errors import MisuseError, ParseError
from .expr import PiecewiseLinear, gaussian, linear
from .model import BetaCPF, HybridModel, ScopedFunction, VariableSpec

FEATURE_KNOTS = (0.0, 0.25, 0.5, 0.75, 1.0)
# low ramp, hat and high ramp over FEATURE_KNOTS
FEATURE_SHAPES = (
    ("low", (1.0, 0.0, 0.0, 0.0, 0.0)),
    ("mid", (0.0, 0.0, 1.0, 0.0, 0.0)),
    ("high", (0.0, 0.0, 0.0, 0.0, 1.0)),
)


@dataclass(frozen=True)
class Device:
    name: str
    incoming: tuple[str, ...]
    outgoing: tuple[str, ...]

    @property
    def modes(self) -> list[tuple[str, str] | None]:
        """Mode 0 is idle; the rest are (source, target) channel pairs."""
        return [None] + list(itertools.product(self.incoming, self.outgoing))


@dataclass(frozen=True)
class Topology:
    channels: tuple[str, ...]
    devices: tuple[Device, ...]
    inputs: tuple[str, ...]
    outputs: tuple[str, ...]

    def problems(self) -> list[str]:
        issues = []
        known = set(self.channels)
        if len(known) != len(self.channels):
            issues.append("duplicate channel names")
        for d in self.devices:
            if not d.incoming or not d.outgoing:
                issues.append(f"device {d.name!r} needs incoming and outgoing channels")
            for c in d.incoming + d.outgoing:
                if c not in known:
                    issues.append(f"device {d.name!r} references unknown channel {c!r}")
        for c in self.inputs + self.outputs:
            if c not in known:
                issues.append(f"unknown input/output channel {c!r}")
        names = [d.name for d in self.devices] + list(self.channels)
        if len(set(names)) != len(names):
            issues.append("device and channel names must be distinct")
        return issues


def ring(n: int) -> Topology:
    """Channels c0..c{n-1} in a cycle; device d_i pumps c_i into c_{i+1}."""
    if n < 3:
        raise MisuseError("a ring needs at least 3 channels")
    ch = tuple(f"c{i}" for i in range(n))
    devices = tuple(Device(f"d{i}", (ch[i],), (ch[(i + 1) % n],)) for i in range(n))
    return Topology(ch, devices, (ch[0],), (ch[-1],))


def ring_of_rings(n: int) -> Topology:
    """An outer ring o_i whose hubs each feed a small inner loop a_i -> b_i."""
    if n < 3:
        raise MisuseError("a ring of rings needs at least 3 hubs")
    outer = [f"o{i}" for i in range(n)]
    a = [f"a{i}" for i in range(n)]
    b = [f"b{i}" for i in range(n)]
    devices = []
    for i in range(n):
        devices.append(Device(f"H{i}", (outer[i], b[i]), (outer[(i + 1) % n], a[i])))
        devices.append(Device(f"E{i}", (a[i],), (b[i],)))
    channels = tuple(x for i in range(n) for x in (outer[i], a[i], b[i]))
    return Topology(channels, tuple(devices), (outer[0],), (outer[-1],))


def topology_from_json(text: str, source: str = "<topology>") -> Topology:
    try:
        doc = json.loads(text)
        devices = tuple(Device(d["name"], tuple(d["incoming"]), tuple(d["outgoing"])) for d in doc["devices"])
        topo = Topology(tuple(doc["channels"]), devices, tuple(doc.get("inputs", [])), tuple(doc.get("outputs", [])))
    except json.JSONDecodeError as err:
        raise ParseError(f"{source}:{err.lineno}:{err.colno}: {err.msg}") from None
    except (KeyError, TypeError) as err:
        raise ParseError(f"{source}: malformed topology: {err!r}") from None
    issues = topo.problems()
    if issues:
        raise ParseError(f"{source}: " + "; ".join(issues))
    return topo


@dataclass(frozen=True)
class BenchmarkSpec:
    topology: str = "ring"
    n: int = 6
    custom: str | None = None
    tau: float = 20.0
    margin: float = 0.05
    pump: float = 0.4
    inflow: float = 0.1
    outflow: float = 0.3
    slope: float = 1.0
    reward_mean: float = 0.5
    reward_variance: float = 0.01
    reward_weight: float = 1.0
    discount: float = 0.95
    knots: tuple[float, ...] = FEATURE_KNOTS
    seed: int = 0
    jitter: float = 0.0

    def build_topology(self) -> Topology:
        if self.topology == "ring":
            return ring(self.n)
        if self.topology == "ring_of_rings":
            return ring_of_rings(self.n)
        if self.topology == "custom":
            if self.custom is None:
                raise MisuseError("custom topology needs a file")
            path = Path(self.custom)
            try:
                text = path.read_text()
            except OSError as err:
                raise ParseError(f"{path}: cannot read file: {err.strerror}") from None
            return topology_from_json(text, str(path))
        raise MisuseError(f"unknown topology {self.topology!r}")


def clip_shift(shift: float, margin: float) -> tuple[tuple[float, ...], tuple[float, ...]]:
    """Knots and values of x -> clip(x + shift, margin, 1 - margin) on [0, 1]."""
    inner = sorted({k for k in (margin - shift, 1.0 - margin - shift) if 0.0 < k < 1.0})
    knots = (0.0, *inner, 1.0)
    values = tuple(float(np.clip(k + shift, margin, 1.0 - margin)) for k in knots)
    return knots, values


def _channel_flow(channel: str, devices: Sequence[Device], modes: Sequence[int], pump: float) -> float:
    flow = 0.0
    for d, m in zip(devices, modes):
        pair = d.modes[m]
        if pair is None:
            continue
        src, dst = pair
        if src == channel:
            flow -= pump
        if dst == channel:
            flow += pump
    return flow


@dataclass
class Benchmark:
    model: HybridModel
    basis: list[BasisFunction]
    topology: Topology = field(repr=False)


def generate(spec: BenchmarkSpec) -> Benchmark:
    topo = spec.build_topology()
    issues = topo.problems()
    if issues:
        raise MisuseError("; ".join(issues))
    rng = np.random.default_rng(spec.seed)

    def jittered(x):
        return float(x * (1.0 + spec.jitter * rng.uniform(-1.0, 1.0))) if spec.jitter else float(x)

    state = tuple(VariableSpec.continuous(c) for c in topo.channels)
    actions = tuple(VariableSpec.discrete(d.name, len(d.modes)) for d in topo.devices)
    cpfs = []
    for c in topo.channels:
        adjacent = [d for d in topo.devices if c in d.incoming or c in d.outgoing]
        base = (jittered(spec.inflow) if c in topo.inputs else 0.0) - (jittered(spec.outflow) if c in topo.outputs else 0.0)
        pump = jittered(spec.pump)
        h1, h2 = [], []
        shape = tuple(len(d.modes) for d in adjacent)
        for modes in itertools.product(*(range(s) for s in shape)):
            flow = float(np.clip(base + _channel_flow(c, adjacent, modes, pump), -1.0, 1.0))
            knots, values = clip_shift(0.5 * flow, spec.margin)
            h1.append(PiecewiseLinear(((c, knots, tuple(spec.tau * v for v in values)),)))
            h2.append(PiecewiseLinear(((c, knots, tuple(spec.tau - spec.tau * v for v in values)),)))
        scope = tuple(d.name for d in adjacent)
        cpfs.append(BetaCPF(c, ScopedFunction.tabular(scope, shape, h1), ScopedFunction.tabular(scope, shape, h2)))
    rewards = []
    for c in topo.channels:
        if c in topo.outputs:
            rewards.append(ScopedFunction.of(linear(c, spec.slope)))
        else:
            rewards.append(ScopedFunction.of(gaussian(c, spec.reward_mean, spec.reward_variance, spec.reward_weight)))
    model = HybridModel(state, actions, tuple(cpfs), tuple(rewards), spec.discount)
    return Benchmark(model, default_basis(topo.channels, spec.knots), topo)


def default_basis(channels: Sequence[str], knots: Sequence[float] = FEATURE_KNOTS) -> list[BasisFunction]:
    """One constant, plus per channel a linear term and three piecewise-linear features."""
    basis = [BasisFunction.constant()]
    for c in channels:
        basis.append(BasisFunction.monomial({c: 1}, name=f"{c}:linear"))
        for label, values in FEATURE_SHAPES:
            basis.append(BasisFunction.piecewise(c, knots, values, name=f"{c}:{label}"))
    return basis
