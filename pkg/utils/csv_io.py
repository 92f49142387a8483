"""
CSV and manifest emission.

Data files carry 17 significant digits and nothing volatile, so identical
runs give byte-identical CSVs. Wall-clock data lives only in manifest.json,
written last.
"""

import json
import logging
import os
import tempfile
import time
from dataclasses import dataclass, field, fields
from datetime import datetime
from enum import Enum
from pathlib import Path
from typing import Dict, List

import numpy as np
import pytz

from features.kernels.kernels import COMPONENTS, KernelFamily, KernelField
from utils.version import get_toolkit_version

logger = logging.getLogger('Backstep.IO')

FLOAT_FORMAT = "%.17g"


def _write_table(path, header: List[str], columns: List[np.ndarray]) -> Path:
    path = Path(path)
    table = np.column_stack([np.asarray(c, dtype=float) for c in columns])
    np.savetxt(path, table, fmt=FLOAT_FORMAT, delimiter=",", header=",".join(header), comments="")
    logger.debug(f"Wrote {path} ({table.shape[0]} rows)")
    return path


def write_kernel_csv(path, kf: KernelField) -> Path:
    """Rows x,y,Kuu,Kuv,Kvu,Kvv per triangle node, in the family's own coordinates."""
    i, j = np.tril_indices(kf.n + 1)
    x, y = i / kf.n, j / kf.n
    if kf.swapped:
        x, y = y, x
    return _write_table(path, ["x", "y", *COMPONENTS],
                        [x, y] + [getattr(kf, name)[i, j] for name in COMPONENTS])


def read_kernel_csv(path, family: KernelFamily, lambda1: float, lambda2: float) -> KernelField:
    """Inverse of write_kernel_csv."""
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    n = int(round((np.sqrt(1 + 8 * data.shape[0]) - 1) / 2)) - 1
    x, y = data[:, 0], data[:, 1]
    if family is KernelFamily.OBSERVER_COLLOCATED:
        x, y = y, x
    i = np.rint(x * n).astype(int)
    j = np.rint(y * n).astype(int)
    comps = {}
    for k, name in enumerate(COMPONENTS):
        arr = np.zeros((n + 1, n + 1))
        arr[i, j] = data[:, 2 + k]
        comps[name] = arr
    return KernelField(n=n, family=family, lambda1=lambda1, lambda2=lambda2, **comps)


def write_gain_csv(path, axis: str, grid: np.ndarray, curves: Dict[str, np.ndarray]) -> Path:
    return _write_table(path, [axis, *curves], [grid, *curves.values()])


def write_snapshot_csv(path, traj) -> Path:
    """Long format t,x,u,v[,uhat,vhat], one row per snapshot and node."""
    x = traj.plant[0].grid
    m = x.size
    t = np.repeat(np.asarray(traj.times), m)
    columns = [t, np.tile(x, len(traj.times)),
               np.concatenate([s.u for s in traj.plant]),
               np.concatenate([s.v for s in traj.plant])]
    header = ["t", "x", "u", "v"]
    if traj.observer is not None:
        columns += [np.concatenate([s.u for s in traj.observer]),
                    np.concatenate([s.v for s in traj.observer])]
        header += ["uhat", "vhat"]
    return _write_table(path, header, columns)


def write_norms_csv(path, series: Dict[str, np.ndarray]) -> Path:
    header = ["t", "l2_u", "l2_v", "l2_w", "l2_err"]
    if "V_lyap" in series:
        header.append("V_lyap")
    return _write_table(path, header, [series[name] for name in header])


def write_controls_csv(path, traj) -> Path:
    controls = np.asarray(traj.controls)
    return _write_table(path, ["t", "U1", "U2", "measurement"],
                        [traj.times, controls[:, 0], controls[:, 1], traj.measurements])


def _echo(value):
    if isinstance(value, Enum):
        return value.value
    if value is None or isinstance(value, (int, float, str, bool)):
        return value
    return str(value)


def utc_now() -> str:
    return datetime.now(pytz.UTC).isoformat()


@dataclass
class RunManifest:
    """Config echo, kernel metadata, outputs and timings of one command run."""

    command: str
    config: Dict[str, object]
    kernel_options: Dict[str, object]
    toolkit_version: str
    started_at: str
    kernels: List[Dict[str, object]] = field(default_factory=list)
    outputs: List[str] = field(default_factory=list)
    timings: Dict[str, float] = field(default_factory=dict)
    _clock: float = field(default_factory=time.perf_counter, repr=False)

    @classmethod
    def start(cls, command: str, cfg, options=None) -> "RunManifest":
        config = {f.name: _echo(getattr(cfg, f.name)) for f in fields(cfg)}
        kernel_options = {f.name: _echo(getattr(options, f.name)) for f in fields(options)} if options else {}
        return cls(command=command, config=config, kernel_options=kernel_options,
                   toolkit_version=get_toolkit_version(), started_at=utc_now())

    def add_output(self, path) -> Path:
        self.outputs.append(Path(path).name)
        return Path(path)

    def add_kernel(self, kf: KernelField):
        self.kernels.append({
            "family": kf.family.value,
            "n": kf.n,
            "iterations": list(kf.metadata.get("iterations", [])),
            "final_increments": list(kf.metadata.get("final_increments", [])),
            "seconds": kf.metadata.get("seconds"),
            "cached": bool(kf.metadata.get("cached", False)),
        })

    def to_dict(self) -> Dict[str, object]:
        self.timings.setdefault("total_seconds", time.perf_counter() - self._clock)
        return {
            "command": self.command,
            "toolkit_version": self.toolkit_version,
            "started_at": self.started_at,
            "finished_at": utc_now(),
            "config": self.config,
            "kernel_options": self.kernel_options,
            "kernels": self.kernels,
            "outputs": sorted(self.outputs),
            "timings": self.timings,
        }


def write_manifest(out_dir, manifest: RunManifest, name: str = "manifest.json") -> Path:
    """Write the manifest atomically; its presence marks a complete run."""
    out_dir = Path(out_dir)
    missing = [o for o in manifest.outputs if not (out_dir / o).exists()]
    if missing:
        raise FileNotFoundError(f"manifest lists files that were not written: {missing}")
    fd, tmp = tempfile.mkstemp(dir=out_dir, prefix=".manifest-", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as f:
            json.dump(manifest.to_dict(), f, indent=2, ensure_ascii=False)
        os.replace(tmp, out_dir / name)
    except Exception:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    logger.info(f"Manifest written to {out_dir / name}")
    return out_dir / name
