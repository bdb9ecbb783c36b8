"""Wall-clock forward-pass benchmark and the analytic cost table."""
from __future__ import annotations

import csv
import io
import os
import statistics
import tempfile
import time
from dataclasses import dataclass
from typing import Iterable, Sequence

from .blocks import ALL_VARIANTS, BlockConfig, Variant, build_block
from .conv import workers
from .network import NetSpec, build_eco3dnet
from .tensor import VideoShape, fill_random

CSV_COLUMNS = ("variant", "B", "T", "X", "Y", "C", "params", "flops",
               "reps", "mean_ms", "std_ms", "throughput_fps")
COUNT_COLUMNS = ("variant", "params", "delta_params", "flops", "delta_flops", "flops_ratio")


@dataclass
class BenchRecord:
    variant: str
    shape: VideoShape
    params: int
    flops: int
    reps: int
    warmup: int
    mean_ms: float
    std_ms: float
    throughput_fps: float

    def row(self) -> dict:
        return {"variant": self.variant, **self.shape._asdict(), "params": self.params,
                "flops": self.flops, "reps": self.reps, "mean_ms": self.mean_ms,
                "std_ms": self.std_ms, "throughput_fps": self.throughput_fps}


def bench_block(variant: Variant | str, vs: VideoShape, out_channels: int = 128, stride: int = 1,
                reps: int = 20, warmup: int = 3, seed: int = 0, threads: int = 1) -> BenchRecord:
    """Time ``reps`` forward passes after ``warmup`` untimed ones.

    Throughput counts clip frames: B * T * reps / total timed seconds.
    """
    if reps < 1 or warmup < 0:
        raise ValueError(f"need reps >= 1 and warmup >= 0, got reps={reps}, warmup={warmup}")
    vs = VideoShape(*vs).validate()
    block = build_block(BlockConfig(variant, vs.C, out_channels, stride=stride, seed=seed))
    block.output_shape(vs)
    x = fill_random(vs.frame_fold(), seed)
    times = []
    with workers(threads):
        for _ in range(warmup):
            block.forward(x, vs)
        for _ in range(reps):
            t0 = time.perf_counter()
            block.forward(x, vs)
            times.append(time.perf_counter() - t0)
    total = sum(times)
    std = statistics.stdev(times) if reps > 1 else 0.0
    return BenchRecord(block.variant.value, vs, block.param_count(), block.flops_count(vs),
                       reps, warmup, 1e3 * total / reps, 1e3 * std, vs.B * vs.T * reps / total)


def run_bench(variants: Iterable[Variant | str], vs: VideoShape, **kwargs) -> list[BenchRecord]:
    return [bench_block(v, vs, **kwargs) for v in variants]


def _fmt(value) -> str:
    if isinstance(value, float):
        return f"{value:.6g}"
    return str(value)


def _render(columns: Sequence[str], rows: Sequence[dict], fmt: str) -> str:
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(columns)
        for r in rows:
            writer.writerow([_fmt(r[c]) for c in columns])
        return buf.getvalue()
    if fmt == "md":
        lines = ["| " + " | ".join(columns) + " |", "|" + "---|" * len(columns)]
        lines += ["| " + " | ".join(_fmt(r[c]) for c in columns) + " |" for r in rows]
        return "\n".join(lines) + "\n"
    raise ValueError(f"unknown table format {fmt!r}")


def emit_table(records: Sequence[BenchRecord | dict], fmt: str = "csv") -> str:
    rows = [r.row() if isinstance(r, BenchRecord) else r for r in records]
    return _render(CSV_COLUMNS, rows, fmt)


def read_records(path: str) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if rows and set(CSV_COLUMNS) - set(rows[0]):
        raise ValueError(f"{path} is missing columns {sorted(set(CSV_COLUMNS) - set(rows[0]))}")
    return rows


def count_rows(spec: NetSpec, variants: Iterable[Variant | str] = ALL_VARIANTS,
               batch: int = 1) -> list[dict]:
    """Params and analytic FLOPs of the 3D-Net per variant; deltas are Conv3D minus variant."""
    vs = spec.input_shape(batch)
    nets = {Variant.parse(v): build_eco3dnet(v, spec) for v in variants}
    ref = nets.get(Variant.CONV3D) or build_eco3dnet(Variant.CONV3D, spec)
    ref_params, ref_flops = ref.param_count(), ref.flops_count(vs)
    rows = []
    for variant, net in nets.items():
        p, f = net.param_count(), net.flops_count(vs)
        rows.append({"variant": variant.value, "params": p, "delta_params": ref_params - p,
                     "flops": f, "delta_flops": ref_flops - f, "flops_ratio": f / ref_flops})
    return rows


def emit_count_table(rows: Sequence[dict], fmt: str = "csv") -> str:
    return _render(COUNT_COLUMNS, rows, fmt)


def write_atomic(path: str, text: str) -> None:
    """Write via a temp file in the target directory, then rename over ``path``."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".flatconv-", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
