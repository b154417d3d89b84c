"""Channel-spec files, distribution arguments and result writers."""

import csv
import io
import json
import math
from pathlib import Path
from typing import Any, List, Optional, Sequence, Union

import numpy as np
from pydantic import BaseModel, ValidationError

from models.distributions import Alphabet, CompoundChannel, Distribution, JointDistribution
from models.errors import InputError, SpecError
from models.schemas import ChannelSpecFile, SweepPoint

PathLike = Union[str, Path]


def channel_from_data(data: Any, source: str = "<data>") -> CompoundChannel:
    """Validate decoded JSON as a channel spec; schema errors carry their dotted location."""

    try:
        spec = ChannelSpecFile.model_validate(data)
    except ValidationError as exc:
        errors = exc.errors()
        location = ".".join(str(part) for part in errors[0]["loc"])
        raise SpecError(f"{source}: {location}: {errors[0]['msg']}",
                        {"source": source, "location": location,
                         "errors": [{"location": ".".join(str(p) for p in e["loc"]), "message": e["msg"]}
                                    for e in errors]})
    except SpecError as exc:
        exc.details.setdefault("source", source)
        exc.message = f"{source}: {exc.message}"
        exc.args = (exc.message,)
        raise
    return spec.to_channel()


def parse_channel_spec(path: PathLike) -> CompoundChannel:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise SpecError(f"cannot read channel spec {path}: {exc.strerror}", {"source": str(path)})
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SpecError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}",
                        {"source": str(path), "line": exc.lineno, "column": exc.colno})
    return channel_from_data(data, str(path))


def serialize_channel(channel: CompoundChannel) -> str:
    return ChannelSpecFile.from_channel(channel).model_dump_json(indent=2, exclude_none=True)


def write_channel_spec(channel: CompoundChannel, path: PathLike) -> None:
    Path(path).write_text(serialize_channel(channel) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# Distribution arguments
# ---------------------------------------------------------------------------

def _load_vectors(value: str) -> List[List[float]]:
    """Vectors from a JSON file or inline text ("0.5,0.5" or "0.5,0.5;0.9,0.1")."""

    candidate = Path(value)
    if candidate.is_file():
        try:
            data = json.loads(candidate.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise InputError(f"{value}:{exc.lineno}:{exc.colno}: {exc.msg}")
        if isinstance(data, dict):
            data = data.get("targets", data.get("probs"))
        if isinstance(data, list) and data and not isinstance(data[0], list):
            data = [data]
        if not isinstance(data, list) or not all(isinstance(row, list) for row in data):
            raise InputError(f"{value} does not hold a vector or a list of vectors")
        return [[float(v) for v in row] for row in data]
    try:
        return [[float(v) for v in part.split(",")] for part in value.split(";") if part.strip()]
    except ValueError:
        raise InputError(f"not a file or an inline vector list: {value!r}")


def parse_distributions(value: str, alphabet: Alphabet) -> List[Distribution]:
    vectors = _load_vectors(value)
    if not vectors:
        raise InputError("no distribution given")
    return [Distribution(probs=v, alphabet=alphabet) for v in vectors]


def parse_distribution(value: str, alphabet: Alphabet) -> Distribution:
    distributions = parse_distributions(value, alphabet)
    if len(distributions) != 1:
        raise InputError("expected exactly one distribution", {"given": len(distributions)})
    return distributions[0]


def parse_state_targets(value: str, alphabet: Alphabet, states: int) -> List[Distribution]:
    """One target per state; a single target is used for every state."""

    targets = parse_distributions(value, alphabet)
    if len(targets) == 1:
        return targets * states
    if len(targets) != states:
        raise InputError("give one target per state", {"targets": len(targets), "states": states})
    return targets


def parse_joint(value: str) -> JointDistribution:
    return JointDistribution(probs=_load_vectors(value))


def parse_float_list(value: str) -> List[float]:
    try:
        return [float(v) for v in value.split(",") if v.strip()]
    except ValueError:
        raise InputError(f"not a comma-separated list of numbers: {value!r}")


def parse_index_list(value: str) -> List[int]:
    try:
        return [int(v) for v in value.split(",") if v.strip()]
    except ValueError:
        raise InputError(f"not a comma-separated list of symbol indices: {value!r}")


def parse_deltas(value: str, states: int) -> List[float]:
    deltas = parse_float_list(value)
    if len(deltas) == 1:
        deltas = deltas * states
    if len(deltas) != states:
        raise InputError("give one delta or one delta per state", {"deltas": len(deltas), "states": states})
    return deltas


def parse_delta_grid(value: str) -> List[float]:
    """start:stop:step, stop included."""

    try:
        start, stop, step = (float(v) for v in value.split(":"))
    except ValueError:
        raise InputError(f"delta grid must read start:stop:step, got {value!r}")
    if not step > 0 or stop < start:
        raise InputError("delta grid needs step > 0 and stop >= start", {"grid": value})
    count = int(math.floor((stop - start) / step + 1e-9)) + 1
    return [round(start + i * step, 12) for i in range(count)]


# ---------------------------------------------------------------------------
# Writers
# ---------------------------------------------------------------------------

def to_json(payload: Union[BaseModel, Any]) -> str:
    """JSON text with every float at full round-trip precision; non-finite floats become null."""

    if isinstance(payload, BaseModel):
        payload = payload.model_dump(mode="json")
    return json.dumps(_finite(payload), indent=2, allow_nan=False)


def _finite(value: Any) -> Any:
    if isinstance(value, dict):
        return {key: _finite(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [_finite(item) for item in value]
    if isinstance(value, np.generic):
        value = value.item()
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value


def sweep_csv(points: Sequence[SweepPoint]) -> str:
    """Header delta_1..delta_S, rate_nats, rate_bits; 6 significant digits; infeasible rates blank."""

    states = len(points[0].deltas) if points else 0
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow([f"delta_{s + 1}" for s in range(states)] + ["rate_nats", "rate_bits"])
    for point in points:
        rates = ["", ""] if point.rate_nats is None else [f"{point.rate_nats:.6g}", f"{point.rate_bits:.6g}"]
        writer.writerow([f"{d:.6g}" for d in point.deltas] + rates)
    return buffer.getvalue()


def emit(text: str, out: Optional[PathLike] = None) -> None:
    if out is None:
        print(text)
    else:
        Path(out).write_text(text if text.endswith("\n") else text + "\n", encoding="utf-8")
