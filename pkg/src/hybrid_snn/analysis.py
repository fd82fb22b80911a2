"""Spike-activity statistics and a first-order energy-delay proxy.

A spike is taken to cost a fixed amount of energy, so the total spike count
times the number of time steps serves as a unitless energy-delay figure.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ComparisonError, ShapeError
from .network import ArchitectureSpec, ForwardRecord, NetworkParams, simulate


@dataclass(frozen=True)
class SpikeReport:
    """Per-population spike totals over ``samples`` inputs and ``timesteps`` steps."""

    arch_name: str
    populations: tuple
    neurons: tuple
    spikes: tuple
    samples: int
    timesteps: int
    thresholds: tuple = field(default=())

    def __post_init__(self):
        if not len(self.populations) == len(self.neurons) == len(self.spikes):
            raise ShapeError("populations, neuron counts and spike totals must align")
        if any(s < 0 for s in self.spikes):
            raise ValueError("spike totals must be non-negative")

    @property
    def average(self) -> dict:
        """Average spikes per neuron per sample over the whole presentation."""
        return {p: s / (n * self.samples) for p, n, s in
                zip(self.populations, self.neurons, self.spikes)}

    @property
    def total_spikes(self) -> int:
        return int(sum(self.spikes))

    @property
    def spikes_per_sample(self) -> float:
        return self.total_spikes / self.samples

    @property
    def energy_delay(self) -> float:
        """Proxy ``total_spikes * T``."""
        return float(self.total_spikes) * self.timesteps

    @classmethod
    def from_counts(cls, counts: dict, arch: ArchitectureSpec, samples: int, timesteps: int,
                    thresholds: dict | None = None) -> "SpikeReport":
        if samples < 1:
            raise ValueError("a spike report needs at least one sample")
        pops = tuple(arch.populations)
        missing = [p for p in pops if p not in counts]
        if missing:
            raise ShapeError(f"no spike counts for populations {missing}")
        thresholds = thresholds or {}
        return cls(arch.name, pops,
                   tuple(int(np.prod(arch.population_shape(p))) for p in pops),
                   tuple(int(counts[p]) for p in pops), int(samples), int(timesteps),
                   tuple(float(thresholds.get(p, math.nan)) for p in pops))


def average_spikes_per_layer(records, arch: ArchitectureSpec, samples: int | None = None,
                             thresholds: dict | None = None) -> SpikeReport:
    """Count every spike in one or more forward records.

    ``records`` may be a single :class:`ForwardRecord` or a sequence of them
    (several batches and/or consecutive segments). Unless ``samples`` is
    given, the sample count is the total batch size of records that start at
    ``t = 1``; T is the last step covered by any record.
    """
    if isinstance(records, ForwardRecord):
        records = [records]
    records = list(records)
    if not records:
        raise ValueError("no forward records to analyse")
    counts = {p: 0 for p in arch.populations}
    for rec in records:
        for p in arch.populations:
            if p not in rec.lif:
                raise ShapeError(f"record lacks spikes for population {p!r}")
            counts[p] += int(np.count_nonzero(rec.lif[p][0]))
    if samples is None:
        samples = sum(rec.inputs.shape[1] for rec in records if rec.t0 == 1)
    timesteps = max(rec.t0 + rec.steps - 1 for rec in records)
    return SpikeReport.from_counts(counts, arch, samples, timesteps, thresholds)


def spike_report(params: NetworkParams, arch: ArchitectureSpec, images, timesteps: int,
                 seed, leak: float = 1.0, batch_size: int = 100, sample_ids=None) -> SpikeReport:
    """Simulate ``images`` and summarise the spikes of every population."""
    images = np.asarray(images)
    _, counts = simulate(params, arch, images, timesteps, seed, leak, sample_ids, batch_size)
    return SpikeReport.from_counts(counts, arch, len(images), timesteps, params.thresholds)


@dataclass(frozen=True)
class EnergyComparison:
    per_layer: dict
    aggregate: float
    energy_delay: float


def _ratio(a: float, b: float) -> float:
    if b == 0:
        return 1.0 if a == 0 else math.inf
    return a / b


def compare_energy(report_a: SpikeReport, report_b: SpikeReport) -> EnergyComparison:
    """Spike ratios ``a / b`` per layer and over all layers.

    Reports must come from the same architecture and the same T. Counts are
    normalised per sample, so the aggregate ratio does not depend on sample
    or layer order.
    """
    if report_a.timesteps != report_b.timesteps:
        raise ComparisonError(f"reports use different T: {report_a.timesteps} vs "
                              f"{report_b.timesteps}")
    if (report_a.populations != report_b.populations or report_a.neurons != report_b.neurons):
        raise ComparisonError(f"reports come from different architectures: "
                              f"{report_a.arch_name} vs {report_b.arch_name}")
    avg_a, avg_b = report_a.average, report_b.average
    per_layer = {p: _ratio(avg_a[p], avg_b[p]) for p in report_a.populations}
    aggregate = _ratio(report_a.spikes_per_sample, report_b.spikes_per_sample)
    return EnergyComparison(per_layer, aggregate, aggregate)


CSV_FIELDS = ("layer", "population", "threshold", "avg_spikes", "neurons", "total_spikes",
              "samples", "timesteps")


def report_rows(report: SpikeReport) -> list:
    avg = report.average
    thresholds = report.thresholds or (math.nan,) * len(report.populations)
    return [{"layer": i, "population": p, "threshold": v, "avg_spikes": avg[p], "neurons": n,
             "total_spikes": s, "samples": report.samples, "timesteps": report.timesteps}
            for i, (p, v, n, s) in enumerate(zip(report.populations, thresholds,
                                                 report.neurons, report.spikes))]


def write_report_csv(path, *reports: SpikeReport, labels=None) -> None:
    """One row per (report, layer): layer index, threshold and average spikes."""
    labels = labels or [str(i) for i in range(len(reports))]
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=("model",) + CSV_FIELDS)
        writer.writeheader()
        for label, report in zip(labels, reports):
            for row in report_rows(report):
                writer.writerow({"model": label, **row})


def plot_reports(path, *reports: SpikeReport, labels=None) -> None:
    """Bar chart of average spikes per layer; needs matplotlib."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    labels = labels or [str(i) for i in range(len(reports))]
    fig, ax = plt.subplots(figsize=(7, 3.5))
    width = 0.8 / max(len(reports), 1)
    for k, (label, report) in enumerate(zip(labels, reports)):
        xs = np.arange(len(report.populations)) + k * width
        ax.bar(xs, list(report.average.values()), width, label=label)
    first = reports[0]
    thresholds = first.thresholds or (math.nan,) * len(first.populations)
    ticks = [p if math.isnan(v) else f"{p}\nv={v:.2f}" for p, v in zip(first.populations, thresholds)]
    ax.set_xticks(np.arange(len(ticks)) + 0.4 - width / 2, ticks)
    ax.set_ylabel(f"avg spikes / neuron over T={first.timesteps}")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
