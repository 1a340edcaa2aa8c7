import hashlib
import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Protocol, Type, TypeVar, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ValidationError

from src.data_models import G2Curve, TagStream, TuningCurve
from src.errors import FormatError, PreconditionError
from src.models import FileDigest, RunManifest

logger = logging.getLogger("tagproc")

PathLike = Union[str, Path]
M = TypeVar("M", bound=BaseModel)

TAG_MAGIC = b"TTAG"
TAG_VERSION = 1
HEADER_DTYPE = np.dtype(
    [
        ("magic", "S4"),
        ("version", "<u2"),
        ("channel_count", "<u2"),
        ("resolution_ps", "<u4"),
        ("reserved", "<u4"),
    ]
)
RECORD_DTYPE = np.dtype(
    [("timestamp", "<u8"), ("channel", "<u2"), ("flags", "<u2")]
)

G2_COLUMNS = ["tau_ps", "g2", "sigma", "counts"]
TUNING_COLUMNS = ["voltage_V", "detuning_Hz"]
TUNING_SIGMA_COLUMN = "sigma_Hz"


def manifest_path(path: PathLike) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".manifest.json")


def file_digest(path: PathLike) -> FileDigest:
    sha = hashlib.sha256()
    with open(path, "rb") as handle:
        for block in iter(lambda: handle.read(1 << 20), b""):
            sha.update(block)
    return FileDigest(path=str(path), sha256=sha.hexdigest())


class TagRepository(Protocol):
    def read(self, path: PathLike) -> TagStream: ...

    def write(self, stream: TagStream, path: PathLike) -> None: ...


class CurveRepository(Protocol):
    def read_g2(self, path: PathLike) -> G2Curve: ...

    def write_g2(self, curve: G2Curve, path: PathLike) -> None: ...

    def read_tuning(self, path: PathLike) -> TuningCurve: ...

    def write_tuning(self, curve: TuningCurve, path: PathLike) -> None: ...

    def write_table(
        self, columns: Dict[str, np.ndarray], path: PathLike
    ) -> None: ...

    def columns(self, path: PathLike) -> List[str]: ...


class DocumentRepository(Protocol):
    def load(self, path: PathLike, model: Type[M]) -> M: ...

    def save(self, document: BaseModel, path: PathLike) -> None: ...


class BinaryTagRepository:
    """Little-endian TTAG files: a 16-byte header then 12-byte records."""

    def encode(self, stream: TagStream) -> bytes:
        header = np.zeros(1, dtype=HEADER_DTYPE)
        header["magic"] = TAG_MAGIC
        header["version"] = TAG_VERSION
        header["channel_count"] = stream.channel_count
        header["resolution_ps"] = stream.resolution_ps

        records = np.empty(len(stream), dtype=RECORD_DTYPE)
        records["timestamp"] = stream.timestamps
        records["channel"] = stream.channels
        records["flags"] = stream.flags
        return header.tobytes() + records.tobytes()

    def decode(self, data: bytes) -> TagStream:
        if len(data) < HEADER_DTYPE.itemsize:
            raise FormatError(
                f"file holds {len(data)} bytes, shorter than the "
                f"{HEADER_DTYPE.itemsize}-byte header",
                offset=len(data),
            )

        header = np.frombuffer(data, dtype=HEADER_DTYPE, count=1)[0]
        if bytes(header["magic"]) != TAG_MAGIC:
            raise FormatError(
                f"bad magic {bytes(data[:4])!r}, expected {TAG_MAGIC!r}",
                offset=0,
            )
        if int(header["version"]) != TAG_VERSION:
            raise FormatError(
                f"unsupported version {int(header['version'])}", offset=4
            )

        body = len(data) - HEADER_DTYPE.itemsize
        complete, partial = divmod(body, RECORD_DTYPE.itemsize)
        if partial:
            offset = HEADER_DTYPE.itemsize + complete * RECORD_DTYPE.itemsize
            raise FormatError(
                f"truncated record: {partial} trailing bytes",
                offset=offset,
                record=complete,
            )

        records = np.frombuffer(
            data, dtype=RECORD_DTYPE, offset=HEADER_DTYPE.itemsize
        )
        timestamps = records["timestamp"]
        if timestamps.size and int(timestamps.max()) > np.iinfo(np.int64).max:
            bad = int(np.argmax(timestamps > np.iinfo(np.int64).max))
            raise FormatError(
                "timestamp exceeds the signed 64-bit range",
                offset=self._record_offset(bad),
                record=bad,
            )
        timestamps = timestamps.astype(np.int64)

        backwards = np.flatnonzero(np.diff(timestamps) < 0)
        if backwards.size:
            bad = int(backwards[0]) + 1
            raise FormatError(
                f"timestamp {timestamps[bad]} is earlier than its predecessor "
                f"{timestamps[bad - 1]}",
                offset=self._record_offset(bad),
                record=bad,
            )

        channel_count = int(header["channel_count"])
        channels = records["channel"]
        outside = np.flatnonzero((channels < 1) | (channels > channel_count))
        if outside.size:
            bad = int(outside[0])
            raise FormatError(
                f"channel {int(channels[bad])} outside 1..{channel_count}",
                offset=self._record_offset(bad) + 8,
                record=bad,
            )

        return TagStream(
            timestamps=timestamps,
            channels=channels.astype(np.uint16),
            channel_count=channel_count,
            resolution_ps=int(header["resolution_ps"]),
            flags=records["flags"].astype(np.uint16),
        )

    @staticmethod
    def _record_offset(index: int) -> int:
        return HEADER_DTYPE.itemsize + index * RECORD_DTYPE.itemsize

    def read(self, path: PathLike) -> TagStream:
        stream = self.decode(Path(path).read_bytes())
        stream.duration_ps = self._sidecar_duration(path)
        logger.debug(
            f"Read {len(stream)} tags from {path} "
            f"({stream.channel_count} channels)"
        )
        return stream

    def write(self, stream: TagStream, path: PathLike) -> None:
        if len(stream) and np.any(np.diff(stream.timestamps) < 0):
            raise PreconditionError(
                "refusing to write unsorted timestamps"
            )
        Path(path).write_bytes(self.encode(stream))
        logger.debug(f"Wrote {len(stream)} tags to {path}")

    @staticmethod
    def _sidecar_duration(path: PathLike) -> Optional[int]:
        sidecar = manifest_path(path)
        if not sidecar.exists():
            return None
        try:
            manifest = RunManifest.model_validate_json(sidecar.read_text())
        except ValidationError as e:
            logger.warning(f"Ignoring unreadable manifest {sidecar}: {e}")
            return None
        duration = manifest.metadata.get("duration_ps")
        return None if duration is None else int(duration)


class CsvCurveRepository:
    def columns(self, path: PathLike) -> List[str]:
        return [str(c) for c in pd.read_csv(path, nrows=0).columns]

    def _read(self, path: PathLike, required: List[str]) -> pd.DataFrame:
        try:
            frame = pd.read_csv(path)
        except pd.errors.EmptyDataError:
            raise FormatError(f"{path} is empty", offset=0)
        except pd.errors.ParserError as e:
            raise FormatError(f"cannot parse {path}: {e}", offset=0)

        missing = [c for c in required if c not in frame.columns]
        if missing:
            raise FormatError(
                f"{path} lacks column(s) {', '.join(missing)}", offset=0
            )
        numeric = frame.apply(pd.to_numeric, errors="coerce")
        bad_rows = numeric[required].isna().any(axis=1)
        if bad_rows.any():
            row = int(np.flatnonzero(bad_rows.to_numpy())[0])
            raise FormatError(
                f"non-numeric value in {path}", offset=0, record=row
            )
        return numeric

    def read_g2(self, path: PathLike) -> G2Curve:
        frame = self._read(path, G2_COLUMNS)
        tau = frame["tau_ps"].to_numpy(float)
        width = float(np.median(np.diff(tau))) if tau.size > 1 else 0.0
        return G2Curve(
            tau_ps=tau,
            g2=frame["g2"].to_numpy(float),
            sigma=frame["sigma"].to_numpy(float),
            counts=frame["counts"].to_numpy(np.int64),
            bin_width_ps=width,
        )

    def write_g2(self, curve: G2Curve, path: PathLike) -> None:
        frame = pd.DataFrame(
            {
                "tau_ps": curve.tau_ps,
                "g2": curve.g2,
                "sigma": curve.sigma,
                "counts": curve.counts,
            }
        )
        frame.to_csv(path, index=False, float_format="%.10g")

    def read_tuning(self, path: PathLike) -> TuningCurve:
        frame = self._read(path, TUNING_COLUMNS)
        sigma = None
        if TUNING_SIGMA_COLUMN in frame.columns:
            sigma = frame[TUNING_SIGMA_COLUMN].to_numpy(float)
        try:
            return TuningCurve(
                voltage=frame["voltage_V"].to_numpy(float),
                detuning=frame["detuning_Hz"].to_numpy(float),
                sigma=sigma,
            )
        except ValueError as e:
            raise FormatError(f"{path}: {e}", offset=0)

    def write_tuning(self, curve: TuningCurve, path: PathLike) -> None:
        columns = {"voltage_V": curve.voltage, "detuning_Hz": curve.detuning}
        if curve.sigma is not None:
            columns[TUNING_SIGMA_COLUMN] = curve.sigma
        self.write_table(columns, path)

    def write_table(
        self, columns: Dict[str, np.ndarray], path: PathLike
    ) -> None:
        pd.DataFrame(columns).to_csv(path, index=False, float_format="%.10g")


class JsonDocumentRepository:
    def load(self, path: PathLike, model: Type[M]) -> M:
        return model.model_validate_json(Path(path).read_text())

    def load_dict(self, path: PathLike) -> Dict[str, Any]:
        return json.loads(Path(path).read_text())

    def save(self, document: BaseModel, path: PathLike) -> None:
        Path(path).write_text(document.model_dump_json(indent=2) + "\n")
