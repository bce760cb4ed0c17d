"""Timers, byte counters, periodic process-resource sampling, and CSV
emission for experiment runs.

One RoundRecord per training round carries every tracked metric exactly
once; `ROUNDS_COLUMNS` is the frozen schema (a snapshot test guards it).
The resource sampler is best-effort: if process statistics are
unavailable the run continues and the resource fields stay empty.

The simulation is single-process, so each sampler tick emits one sample
per registered role with the same process-wide numbers; roles separate
the accounting, not the address space.
"""

import csv
import threading
import time
from dataclasses import dataclass, fields

import numpy as np

try:
    import psutil
except ImportError:  # pragma: no cover - psutil is a hard dep, but degrade anyway
    psutil = None


@dataclass
class RoundRecord:
    round: int
    trainable_parameters: int
    total_training_time_s: float
    central_round_time_s: float
    client_round_time_s: float
    parameter_aggregation_time_s: float
    encryption_time_s: float | None
    decryption_time_s: float | None
    central_accuracy: float | None
    central_loss: float | None
    aggregated_accuracy: float
    aggregated_recall: float
    aggregated_precision: float
    aggregated_f1: float
    aggregated_loss: float
    central_virtual_memory_mib: float | None
    central_real_memory_mib: float | None
    central_cpu_percent: float | None
    client_virtual_memory_mib: float | None
    client_real_memory_mib: float | None
    client_cpu_percent: float | None
    total_bytes_received: int
    total_bytes_sent: int
    bytes_sent_round: int
    bytes_received_round: int


ROUNDS_COLUMNS = tuple(f.name for f in fields(RoundRecord))

RESOURCES_COLUMNS = ("timestamp_s", "role", "rss_bytes", "virtual_bytes",
                     "cpu_percent_one_core")

SUMMARY_COLUMNS = ("metric", "mean", "std", "min", "25%", "50%", "75%", "max")


@dataclass(frozen=True)
class ResourceSample:
    timestamp_s: float
    role: str
    rss_bytes: int
    virtual_bytes: int
    cpu_percent_one_core: float


class ResourceSampler:
    """Periodic process sampler emitting one sample per role per tick.

    CPU is delta-process-cpu-time / delta-wall-time * 100 over the sample
    window (percent of one core; can exceed 100 on multicore use)."""

    def __init__(self, roles, period=0.5):
        self.roles = tuple(roles)
        self.period = float(period)
        self.samples = []
        self.available = psutil is not None
        self._stop = threading.Event()
        self._thread = None
        if self.available:
            try:
                self._proc = psutil.Process()
                self._proc.memory_info()
            except Exception:
                self.available = False

    def _cpu_seconds(self):
        t = self._proc.cpu_times()
        return t.user + t.system

    def _loop(self):
        last_wall = time.perf_counter()
        last_cpu = self._cpu_seconds()
        while not self._stop.wait(self.period):
            now = time.perf_counter()
            cpu = self._cpu_seconds()
            mem = self._proc.memory_info()
            pct = 100.0 * (cpu - last_cpu) / max(now - last_wall, 1e-9)
            for role in self.roles:
                self.samples.append(ResourceSample(
                    timestamp_s=now, role=role, rss_bytes=mem.rss,
                    virtual_bytes=mem.vms, cpu_percent_one_core=pct))
            last_wall, last_cpu = now, cpu

    def start(self):
        if self.available and self._thread is None:
            self._stop.clear()
            self._thread = threading.Thread(target=self._loop, daemon=True,
                                            name="resource-sampler")
            self._thread.start()
        return self

    def stop(self):
        if self._thread is not None:
            self._stop.set()
            self._thread.join()
            self._thread = None
        return self.samples

    def window(self, t0, t1, role_prefix):
        return [s for s in self.samples
                if t0 <= s.timestamp_s < t1 and s.role.startswith(role_prefix)]


def window_stats(samples):
    """(virtual_mib, rss_mib, cpu_percent) means over a sample window, or
    Nones when the window is empty."""
    if not samples:
        return None, None, None
    mib = 1024.0 * 1024.0
    return (float(np.mean([s.virtual_bytes for s in samples]) / mib),
            float(np.mean([s.rss_bytes for s in samples]) / mib),
            float(np.mean([s.cpu_percent_one_core for s in samples])))


def summarize(values):
    """Descriptive stats: mean/std/min/quartiles/max; quantiles use linear
    interpolation and std is the sample deviation (0 for a single value)."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        raise ValueError("cannot summarize an empty series")
    q25, q50, q75 = np.percentile(arr, [25, 50, 75])
    return {
        "mean": float(arr.mean()),
        "std": float(arr.std(ddof=1)) if arr.size > 1 else 0.0,
        "min": float(arr.min()),
        "25%": float(q25),
        "50%": float(q50),
        "75%": float(q75),
        "max": float(arr.max()),
    }


def _fmt(value):
    if value is None:
        return ""
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return f"{value:.6g}"


def write_rounds_csv(records, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(ROUNDS_COLUMNS)
        for rec in records:
            w.writerow([_fmt(getattr(rec, col)) for col in ROUNDS_COLUMNS])


def write_resources_csv(samples, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(RESOURCES_COLUMNS)
        for s in samples:
            w.writerow([_fmt(s.timestamp_s), s.role, s.rss_bytes, s.virtual_bytes,
                        _fmt(s.cpu_percent_one_core)])


def summary_rows(records):
    """One descriptive-stats row per numeric rounds column with any data."""
    rows = []
    for col in ROUNDS_COLUMNS:
        values = [getattr(r, col) for r in records if getattr(r, col) is not None]
        if not values:
            continue
        stats = summarize(values)
        rows.append([col] + [_fmt(stats[k]) for k in SUMMARY_COLUMNS[1:]])
    return rows


def write_summary_csv(records, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SUMMARY_COLUMNS)
        for row in summary_rows(records):
            w.writerow(row)


def write_csv(run_log, out_dir):
    """Emit rounds.csv, resources.csv, and summary.csv for one run."""
    from pathlib import Path

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_rounds_csv(run_log.records, out / "rounds.csv")
    write_resources_csv(run_log.resources, out / "resources.csv")
    write_summary_csv(run_log.records, out / "summary.csv")
    return [out / "rounds.csv", out / "resources.csv", out / "summary.csv"]
