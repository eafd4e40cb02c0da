"""Serialization of runs: CSV series, JSON snapshots, checkpoints and manifest."""

import collections.abc
import contextlib
import csv
import dataclasses
import hashlib
import io
import json
import logging
import os
import pathlib
import tempfile
import typing

import numpy as np

from .__version__ import VERSION
from .blowup import Alignment, RescaledFrame
from .flow import FlowTrajectory, RunState, Stepping, StopCriteria, StopReason
from .profile import (
    Boundary,
    ClosenessFlags,
    DiagnosticRecord,
    FloatArray,
    MetricProfile,
    SpatialGrid,
)

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1

FLAG_COLUMNS = tuple(f"flag_{n}" for n in ("a", "b", "c", "d", "e"))

CSV_COLUMNS: tuple[str, ...] = (
    "t",
    "mu",
    "mu_argmin",
    "g_plus",
    "psi_min",
    "psi_max",
    "F_max_abs",
    "fs_min",
    "fs_max",
    "sup_curv",
    "Q_min",
    "threshold",
    *FLAG_COLUMNS,
    "g_minus",
    "dg2_minus",
    "dg2_plus",
    "gs_max_abs",
    "curv_mu2",
    "R_min",
    "fs_pole_drift",
    "step",
    "dt",
)
"""Column order of ``series.csv``. New columns are only ever appended."""

_INT_FIELDS = frozenset({"mu_argmin", "step"})


class OutputError(OSError):
    """Output couldn't be written or read back."""


def encode_float(value: float, hexfloat: bool = False) -> str:
    """Exact text form of a float, shortest decimal or hexadecimal."""
    return float(value).hex() if hexfloat else repr(float(value))


def decode_float(text: str) -> float:
    """Inverse of :func:`encode_float` for both forms."""
    text = text.strip()
    if "0x" in text.lower():
        return float.fromhex(text)
    return float(text)


def _encode_array(values: FloatArray, hexfloat: bool) -> list[str] | list[float]:
    if hexfloat:
        return [float(v).hex() for v in values]
    return [float(v) for v in values]


def _decode_array(values: collections.abc.Sequence[str | float]) -> FloatArray:
    return np.array(
        [decode_float(v) if isinstance(v, str) else float(v) for v in values],
        dtype=np.float64,
    )


def record_row(rec: DiagnosticRecord, hexfloat: bool = False) -> dict[str, str]:
    """CSV row of a diagnostic record."""
    row: dict[str, str] = {}
    for name in CSV_COLUMNS:
        if name in FLAG_COLUMNS:
            row[name] = "1" if getattr(rec.flags, name[-1]) else "0"
        elif name in _INT_FIELDS:
            row[name] = str(getattr(rec, name))
        else:
            row[name] = encode_float(getattr(rec, name), hexfloat)
    return row


def parse_row(row: collections.abc.Mapping[str, str]) -> DiagnosticRecord:
    """Diagnostic record of a CSV row, unknown columns are ignored."""
    kwargs: dict[str, typing.Any] = {}
    for name in CSV_COLUMNS:
        if name in FLAG_COLUMNS or name not in row:
            continue
        kwargs[name] = int(row[name]) if name in _INT_FIELDS else decode_float(row[name])
    kwargs["flags"] = ClosenessFlags(*(row[c] == "1" for c in FLAG_COLUMNS))
    return DiagnosticRecord(**kwargs)


def series_csv(series: collections.abc.Iterable[DiagnosticRecord], hexfloat: bool = False) -> str:
    """Render the diagnostic series, header only for an empty series."""
    out = io.StringIO()
    writer = csv.DictWriter(out, fieldnames=CSV_COLUMNS, lineterminator="\n")
    writer.writeheader()
    writer.writerows(record_row(rec, hexfloat) for rec in series)
    return out.getvalue()


def read_series(path: pathlib.Path) -> list[DiagnosticRecord]:
    """Load ``series.csv``."""
    with path.open(encoding="utf-8", newline="") as f:
        return [parse_row(row) for row in csv.DictReader(f)]


def profile_dump(profile: MetricProfile, hexfloat: bool = False) -> dict[str, typing.Any]:
    """JSON compatible form of a profile."""
    return {
        "schema_version": SCHEMA_VERSION,
        "node_count": profile.grid.node_count,
        "boundary": profile.boundary.value,
        "hexfloat": hexfloat,
        "t": encode_float(profile.t, True) if hexfloat else float(profile.t),
        "f": _encode_array(profile.f, hexfloat),
        "g": _encode_array(profile.g, hexfloat),
        "jac": _encode_array(profile.jac, hexfloat),
    }


def profile_load(data: collections.abc.Mapping[str, typing.Any]) -> MetricProfile:
    """Profile from its JSON form.

    :raise OutputError: for an unsupported schema.
    """
    if data.get("schema_version") != SCHEMA_VERSION:
        raise OutputError(f"Unsupported profile schema: {data.get('schema_version')}")
    t = data["t"]
    return MetricProfile(
        grid=SpatialGrid(int(data["node_count"])),
        f=_decode_array(data["f"]),
        g=_decode_array(data["g"]),
        jac=_decode_array(data["jac"]),
        t=decode_float(t) if isinstance(t, str) else float(t),
        boundary=Boundary(data["boundary"]),
    )


def _record_dump(rec: DiagnosticRecord) -> dict[str, str]:
    return record_row(rec, hexfloat=True)


def trajectory_summary(trajectory: FlowTrajectory) -> dict[str, typing.Any]:
    """Scalar results of a run."""
    type1 = trajectory.type1
    return {
        "schema_version": SCHEMA_VERSION,
        "delta": trajectory.delta,
        "node_count": trajectory.snapshots[0].grid.node_count if trajectory.snapshots else None,
        "records": len(trajectory.series),
        "snapshots": len(trajectory.snapshots),
        "stop_reason": trajectory.stop_reason.value if trajectory.stop_reason else None,
        "T_est": trajectory.T_est,
        "fit": dataclasses.asdict(trajectory.fit) if trajectory.fit is not None else None,
        "type1": None
        if type1 is None
        else {
            "tail_max": type1.tail_max,
            "tail_min": type1.tail_min,
            "mu2_limit": type1.mu2_limit,
            "series": type1.series,
            "mu2_series": type1.mu2_series,
        },
        "e_failed_at": trajectory.e_failed_at,
    }


def alignment_table(
    frames: collections.abc.Sequence[RescaledFrame],
    alignments: collections.abc.Sequence[Alignment],
) -> list[dict[str, float]]:
    """Rows of ``alignments.json``."""
    return [
        {
            "t": frame.t_center,
            "K": frame.K,
            "mu": float(np.min(frame.profile.g) / np.sqrt(frame.K)),
            **dataclasses.asdict(al),
        }
        for frame, al in zip(frames, alignments, strict=True)
    ]


def atomic_write(path: pathlib.Path, data: bytes) -> str:
    """Write the file by rename of a temporary one and return its SHA-256."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(FileNotFoundError):
            os.unlink(tmp)
        raise
    return hashlib.sha256(data).hexdigest()


def json_bytes(data: object) -> bytes:
    """Indented JSON document with trailing newline."""
    return (json.dumps(data, indent=1) + "\n").encode("utf-8")


class ManifestWriter:
    """Writes payload files and keeps their hashes for the manifest."""

    def __init__(self, destination: pathlib.Path) -> None:
        self.destination = destination
        self.files: dict[str, str] = {}
        self.complete = True

    @classmethod
    def open(cls, destination: pathlib.Path) -> "ManifestWriter":
        """Writer extending the manifest already present in the destination."""
        writer = cls(destination)
        path = destination / "manifest.json"
        if path.is_file():
            old = json.loads(path.read_text(encoding="utf-8"))
            writer.files.update(old.get("files", {}))
            writer.complete = bool(old.get("complete", True))
        return writer

    def discard(self, *names: str) -> None:
        """Drop entries by file name, names ending with ``/`` drop a directory."""
        self.files = {
            n: digest
            for n, digest in self.files.items()
            if not any(n == m or (m.endswith("/") and n.startswith(m)) for m in names)
        }

    def write(self, name: str, data: bytes) -> None:
        """Write one payload, failures mark the manifest incomplete."""
        try:
            self.files[name] = atomic_write(self.destination / name, data)
        except OSError as exc:
            logger.error("Failed to write %s: %s", name, exc)
            self.complete = False

    def write_json(self, name: str, data: object) -> None:  # noqa: D102
        self.write(name, json_bytes(data))

    def manifest(self) -> dict[str, typing.Any]:
        """Manifest content, written last."""
        return {
            "schema_version": SCHEMA_VERSION,
            "version": VERSION,
            "complete": self.complete,
            "files": dict(sorted(self.files.items())),
        }

    def close(
        self, extra: collections.abc.Mapping[str, typing.Any] | None = None
    ) -> dict[str, typing.Any]:
        """Write ``manifest.json`` and return its content."""
        manifest = self.manifest()
        if extra:
            manifest.update(extra)
        try:
            atomic_write(self.destination / "manifest.json", json_bytes(manifest))
        except OSError as exc:
            raise OutputError(f"Manifest could not be written: {exc}") from exc
        return manifest


def write_outputs(
    trajectory: FlowTrajectory,
    frames: collections.abc.Sequence[RescaledFrame],
    alignments: collections.abc.Sequence[Alignment],
    destination: pathlib.Path,
    hexfloat: bool = False,
    extra: collections.abc.Mapping[str, bytes] | None = None,
) -> dict[str, typing.Any]:
    """Write every artifact of a run and the manifest listing them.

    Entries of other commands already in the manifest are kept, those of a
    previous run are replaced.

    :param extra: additional payloads by their file name.
    """
    writer = ManifestWriter.open(destination)
    writer.discard("series.csv", "trajectory.json", "alignments.json", "snapshots/")
    writer.write("series.csv", series_csv(trajectory.series, hexfloat).encode("utf-8"))
    for i, snap in enumerate(trajectory.snapshots):
        writer.write_json(f"snapshots/{i:05d}.json", profile_dump(snap, hexfloat))
    writer.write_json("trajectory.json", trajectory_summary(trajectory))
    if frames or alignments:
        writer.write_json("alignments.json", alignment_table(frames, alignments))
    for name, data in (extra or {}).items():
        writer.write(name, data)
    manifest = writer.close()
    logger.info("Wrote %d files to %s", len(manifest["files"]), destination)
    return manifest


def load_trajectory(destination: pathlib.Path) -> FlowTrajectory:
    """Trajectory of a finished run written by :func:`write_outputs`.

    Only the singular time estimate is restored from the summary; fit and
    ratios are left to be recomputed.
    """
    summary = json.loads((destination / "trajectory.json").read_text(encoding="utf-8"))
    manifest = json.loads((destination / "manifest.json").read_text(encoding="utf-8"))
    snapshots = [destination / n for n in sorted(manifest["files"]) if n.startswith("snapshots/")]
    return FlowTrajectory(
        delta=summary["delta"],
        snapshots=[
            profile_load(json.loads(p.read_text(encoding="utf-8"))) for p in snapshots
        ],
        series=read_series(destination / "series.csv"),
        stop_reason=stop_reason(summary["stop_reason"]),
        T_est=summary["T_est"],
        e_failed_at=summary["e_failed_at"],
    )


def verify_manifest(destination: pathlib.Path) -> list[str]:
    """Names of manifest entries whose content doesn't match its hash."""
    manifest = json.loads((destination / "manifest.json").read_text(encoding="utf-8"))
    return [
        name
        for name, digest in manifest["files"].items()
        if not (destination / name).is_file()
        or hashlib.sha256((destination / name).read_bytes()).hexdigest() != digest
    ]


class Checkpoint(typing.NamedTuple):
    """Everything needed to resume a run exactly."""

    state: RunState
    stepping: Stepping
    stop: StopCriteria


def checkpoint_dump(
    state: RunState, stepping: Stepping, stop: StopCriteria
) -> dict[str, typing.Any]:
    """JSON form of the run state, always in hexadecimal floats."""

    def opt(value: float | None) -> str | None:
        return None if value is None else float(value).hex()

    return {
        "schema_version": SCHEMA_VERSION,
        "version": VERSION,
        "delta": float(state.delta).hex(),
        "mu0": float(state.mu0).hex(),
        "step": state.step,
        "e_failed_at": opt(state.e_failed_at),
        "stepping": {
            k: (float(v).hex() if isinstance(v, float) else v)
            for k, v in dataclasses.asdict(stepping).items()
        },
        "stop": {
            "mu_stop_fraction": float(stop.mu_stop_fraction).hex(),
            "mu_stop": opt(stop.mu_stop),
            "dt_floor": float(stop.dt_floor).hex(),
            "t_max": opt(stop.t_max),
            "max_steps": stop.max_steps,
        },
        "profile": profile_dump(state.profile, hexfloat=True),
        "series": [_record_dump(rec) for rec in state.series],
        "snapshots": [profile_dump(p, hexfloat=True) for p in state.snapshots],
    }


def write_checkpoint(
    path: pathlib.Path, state: RunState, stepping: Stepping, stop: StopCriteria
) -> str:
    """Write the checkpoint file and return its SHA-256."""
    digest = atomic_write(path, json_bytes(checkpoint_dump(state, stepping, stop)))
    logger.info("Checkpoint at step %d written to %s", state.step, path)
    return digest


def load_checkpoint(path: pathlib.Path) -> Checkpoint:
    """Read a checkpoint written by :func:`write_checkpoint`.

    :raise OutputError: for an unreadable or incompatible file.
    """
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise OutputError(f"Checkpoint {path} is not readable: {exc}") from exc
    if data.get("schema_version") != SCHEMA_VERSION:
        raise OutputError(f"Unsupported checkpoint schema: {data.get('schema_version')}")

    def opt(value: str | None) -> float | None:
        return None if value is None else float.fromhex(value)

    step_opts = {
        k: (float.fromhex(v) if isinstance(v, str) else v) for k, v in data["stepping"].items()
    }
    stop = data["stop"]
    state = RunState(
        profile=profile_load(data["profile"]),
        delta=float.fromhex(data["delta"]),
        mu0=float.fromhex(data["mu0"]),
        step=int(data["step"]),
        series=[parse_row(row) for row in data["series"]],
        snapshots=[profile_load(p) for p in data["snapshots"]],
        e_failed_at=opt(data["e_failed_at"]),
    )
    return Checkpoint(
        state=state,
        stepping=Stepping(**step_opts),
        stop=StopCriteria(
            mu_stop_fraction=float.fromhex(stop["mu_stop_fraction"]),
            mu_stop=opt(stop["mu_stop"]),
            dt_floor=float.fromhex(stop["dt_floor"]),
            t_max=opt(stop["t_max"]),
            max_steps=stop["max_steps"],
        ),
    )


def stop_reason(name: str | None) -> StopReason | None:
    """Stop reason of its serialized value."""
    return None if name is None else StopReason(name)
