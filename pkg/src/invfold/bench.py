"""Decoding-latency benchmark: one-shot versus autoregressive.

For every length the same synthetic graphs are decoded by both schemes;
featurisation is not timed. Warm-up decodes of each scheme run once on the
shortest length before any timing, which is enough to compile the jitted
kernels and settle allocator caches. If a measurement is too short for the
clock, the decode is repeated ``inner`` times per measurement and the
per-decode mean is recorded; the chosen ``inner`` is reported per length.
"""

from __future__ import annotations

import hashlib
import json
import os
import platform
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import _kernels
from .autodiff import precision, precision_name
from .data import synth_protein
from .decoders import autoregressive_decode, init_decoder, one_shot_decode
from .graph import FeatureConfig, featurize
from .pignn import ModelConfig, init_params

CLOCK = time.perf_counter


@dataclass(frozen=True)
class BenchConfig:
    lengths: tuple = (200, 400, 800, 1600)
    reps: int = 5
    warmup: int = 2
    d: int = 8
    heads: int = 4
    one_shot_layers: int = 5
    encoder_layers: int = 3
    decoder_layers: int = 2
    seed: int = 0
    min_measure: float | None = None  # default: 1000 clock ticks

    def __post_init__(self):
        if not self.lengths or any(L < 2 for L in self.lengths):
            raise ValueError("lengths must be a non-empty list of values >= 2")
        if self.reps < 1 or self.warmup < 0:
            raise ValueError("reps must be >= 1 and warmup >= 0")
        if self.decoder_layers < 1 or self.encoder_layers < 0 or self.one_shot_layers < 1:
            raise ValueError("need >= 1 decoder layer, >= 0 encoder layers, >= 1 one-shot layer")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lengths"] = list(self.lengths)
        return d


def environment_fingerprint() -> dict:
    import numba

    return {
        "python": sys.version.split()[0],
        "numpy": np.__version__,
        "numba": numba.__version__,
        "platform": platform.platform(),
        "machine": platform.machine(),
        "processor": platform.processor(),
        "cpu_count": os.cpu_count(),
        "clock_resolution": time.get_clock_info("perf_counter").resolution,
    }


def config_hash(config: BenchConfig) -> str:
    body = {k: v for k, v in config.to_dict().items() if k not in ("reps", "warmup")}
    return hashlib.sha256(json.dumps(body, sort_keys=True).encode()).hexdigest()[:16]


@dataclass
class SchemeTiming:
    times: list
    median: float
    p95: float
    inner: int


@dataclass
class LengthEntry:
    length: int
    one_shot: SchemeTiming
    autoregressive: SchemeTiming
    ratio: float


@dataclass
class BenchReport:
    config: dict
    config_hash: str
    precision: str
    backend: str
    mode: str
    reps: int
    warmup: dict
    environment: dict
    entries: list = field(default_factory=list)
    notes: list = field(default_factory=list)

    def ratios(self) -> dict:
        return {e.length: e.ratio for e in self.entries}

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def comparable(a: dict, b: dict) -> tuple[bool, list]:
    """Whether two report dicts measure the same thing; reasons when not."""
    reasons = []
    for key in ("config_hash", "precision", "backend", "mode", "reps"):
        if a.get(key) != b.get(key):
            reasons.append(f"{key} differs: {a.get(key)!r} vs {b.get(key)!r}")
    ea, eb = a.get("environment", {}), b.get("environment", {})
    for key in ("numpy", "numba", "machine", "cpu_count"):
        if ea.get(key) != eb.get(key):
            reasons.append(f"environment.{key} differs: {ea.get(key)!r} vs {eb.get(key)!r}")
    return not reasons, reasons


class _Models:
    def __init__(self, config: BenchConfig):
        feats = FeatureConfig()
        base = ModelConfig(d=config.d, heads=config.heads, dropout=0.0, features=feats)
        self.one_shot = init_params(_with_layers(base, config.one_shot_layers), seed=config.seed, requires_grad=False)
        self.encoder = init_params(_with_layers(base, config.encoder_layers), seed=config.seed + 1, requires_grad=False)
        self.decoder = init_decoder(base, config.decoder_layers, seed=config.seed + 2)
        self.features = feats

    def graph(self, seed: int, length: int):
        return featurize(synth_protein(seed, length), self.features, self.one_shot.virtual.value)

    def run(self, scheme: str, graph):
        if scheme == "one_shot":
            return one_shot_decode(graph, self.one_shot)
        return autoregressive_decode(graph, self.encoder, self.decoder)


def _with_layers(config: ModelConfig, layers: int) -> ModelConfig:
    return ModelConfig(d=config.d, layers=layers, heads=config.heads, dropout=0.0, features=config.features)


def _protein_seed(config: BenchConfig, length: int, rep: int) -> int:
    return int(np.random.SeedSequence([config.seed, length, rep]).generate_state(1)[0])


def _measure(models: _Models, scheme: str, graph, inner: int) -> float:
    start = CLOCK()
    for _ in range(inner):
        models.run(scheme, graph)
    return (CLOCK() - start) / inner


def _timing(times, inner) -> SchemeTiming:
    arr = np.asarray(times)
    return SchemeTiming(list(map(float, arr)), float(np.median(arr)), float(np.percentile(arr, 95)), inner)


def _time_length(args):
    config, length, prec = args
    with precision(prec):
        models = _Models(config)
        _warm_up(models, config)
        return _time_length_with(models, config, length)


def _warm_up(models: _Models, config: BenchConfig) -> None:
    shortest = min(config.lengths)
    graph = models.graph(_protein_seed(config, shortest, config.reps), shortest)
    for _ in range(config.warmup):
        for scheme in ("one_shot", "autoregressive"):
            models.run(scheme, graph)


def _time_length_with(models: _Models, config: BenchConfig, length: int):
    floor = config.min_measure
    if floor is None:
        floor = 1000 * time.get_clock_info("perf_counter").resolution
    graphs = [models.graph(_protein_seed(config, length, r), length) for r in range(config.reps)]
    out, notes = {}, []
    for scheme in ("one_shot", "autoregressive"):
        inner = 1
        first = _measure(models, scheme, graphs[0], inner)
        while first * inner < floor and inner < 1 << 20:
            inner *= 2
            first = _measure(models, scheme, graphs[0], inner)
        if inner > 1:
            notes.append(f"L={length} {scheme}: raised inner repetitions to {inner} for clock resolution")
        # the calibrating measurement doubles as the first timed rep
        times = [first] + [_measure(models, scheme, g, inner) for g in graphs[1:]]
        out[scheme] = _timing(times, inner)
    entry = LengthEntry(length, out["one_shot"], out["autoregressive"],
                        out["autoregressive"].median / out["one_shot"].median)
    return entry, notes


def bench_decoding(config: BenchConfig, parallel: bool = False, progress=None) -> BenchReport:
    """Time both decoders over ``config.lengths``; see the module docstring."""
    prec = precision_name()
    models = _Models(config)
    shortest = min(config.lengths)
    _warm_up(models, config)
    report = BenchReport(
        config=config.to_dict(),
        config_hash=config_hash(config),
        precision=prec,
        backend=_kernels.BACKEND,
        mode="parallel" if parallel else "serial",
        reps=config.reps,
        warmup={"count": config.warmup, "length": shortest, "per_scheme": True},
        environment=environment_fingerprint(),
    )
    if parallel:
        with ProcessPoolExecutor() as pool:
            results = list(pool.map(_time_length, [(config, L, prec) for L in config.lengths]))
    else:
        results = []
        for L in config.lengths:
            results.append(_time_length_with(models, config, L))
            if progress is not None:
                progress(results[-1][0])
    for entry, notes in results:
        report.entries.append(entry)
        report.notes.extend(notes)
    return report
