from typing import Any, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_serializer, model_validator

from models.errors import InputError

# Probability vectors may drift this far from 1 and still be renormalized.
PROB_TOL = 1e-9
# Negative entries above this are rounding noise and clipped to zero.
NEG_CLIP = 1e-12


def _readonly(array: np.ndarray) -> np.ndarray:
    array.setflags(write=False)
    return array


def validated_probability_vector(values: Any, what: str = "distribution") -> np.ndarray:
    """Coerce to a float vector, reject invalid entries and renormalize small drift."""

    array = np.array(values, dtype=float)
    if array.ndim != 1 or array.size == 0:
        raise InputError(f"{what} must be a nonempty vector", {"shape": list(array.shape)})
    if not np.all(np.isfinite(array)):
        raise InputError(f"{what} has non-finite entries")
    if np.any(array < -NEG_CLIP):
        raise InputError(f"{what} has negative entries", {"min": float(array.min())})
    array = np.clip(array, 0.0, None)
    total = float(array.sum())
    if abs(total - 1.0) > PROB_TOL:
        raise InputError(f"{what} sums to {total!r}, not 1", {"sum": total})
    return array / total


class Alphabet(BaseModel):
    """Finite symbol set {0, ..., size-1}, optionally labelled."""

    model_config = ConfigDict(frozen=True)

    size: int = Field(..., description="Number of symbols")
    labels: Optional[Tuple[str, ...]] = Field(None, description="Optional symbol names")

    @model_validator(mode="after")
    def _check(self) -> "Alphabet":
        if self.size < 1:
            raise InputError("alphabet size must be at least 1", {"size": self.size})
        if self.labels is not None:
            if len(self.labels) != self.size:
                raise InputError("alphabet labels must match its size",
                                 {"size": self.size, "labels": len(self.labels)})
            if len(set(self.labels)) != self.size:
                raise InputError("alphabet labels must be distinct")
        return self

    def compatible(self, other: "Alphabet") -> bool:
        if self.size != other.size:
            return False
        return self.labels is None or other.labels is None or self.labels == other.labels

    def encode(self, seq: Iterable[Any]) -> np.ndarray:
        """Map a symbol sequence (labels or indices) to an integer index array."""

        if isinstance(seq, np.ndarray) and np.issubdtype(seq.dtype, np.integer):
            encoded = seq.astype(np.int64, copy=False)
        else:
            lookup = {label: i for i, label in enumerate(self.labels)} if self.labels else {}
            encoded_list = []
            for symbol in seq:
                if symbol in lookup:
                    encoded_list.append(lookup[symbol])
                elif isinstance(symbol, (int, np.integer)) and not isinstance(symbol, bool):
                    encoded_list.append(int(symbol))
                else:
                    raise InputError("symbol is not in the alphabet", {"symbol": repr(symbol)})
            encoded = np.asarray(encoded_list, dtype=np.int64)
        if encoded.ndim != 1:
            raise InputError("sequence must be one-dimensional")
        if encoded.size and (encoded.min() < 0 or encoded.max() >= self.size):
            raise InputError("symbol is not in the alphabet",
                             {"size": self.size, "min": int(encoded.min()), "max": int(encoded.max())})
        return encoded


class _ArrayModel(BaseModel):
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    def __eq__(self, other: object) -> bool:
        if type(self) is not type(other):
            return NotImplemented
        for name in type(self).model_fields:
            mine, theirs = getattr(self, name), getattr(other, name)
            if isinstance(mine, np.ndarray):
                if not np.array_equal(mine, theirs, equal_nan=mine.dtype.kind == "f"):
                    return False
            elif mine != theirs:
                return False
        return True


class Distribution(_ArrayModel):
    """A PMF over an alphabet, or a type when `denominator` is set."""

    probs: np.ndarray = Field(..., description="Probability vector indexed by the alphabet")
    denominator: Optional[int] = Field(None, description="n when this is a type with denominator n")
    alphabet: Alphabet = Field(..., description="Alphabet indexing probs")

    @model_validator(mode="before")
    @classmethod
    def _coerce(cls, data: Any) -> Any:
        if isinstance(data, dict):
            data = dict(data)
            data["probs"] = _readonly(validated_probability_vector(data.get("probs"), "distribution"))
            if data.get("alphabet") is None:
                data["alphabet"] = Alphabet(size=data["probs"].size)
        return data

    @model_validator(mode="after")
    def _check(self) -> "Distribution":
        if self.alphabet.size != self.probs.size:
            raise InputError("distribution length does not match its alphabet",
                             {"length": int(self.probs.size), "alphabet": self.alphabet.size})
        if self.denominator is not None:
            if self.denominator < 1:
                raise InputError("type denominator must be positive")
            scaled = self.probs * self.denominator
            if np.max(np.abs(scaled - np.round(scaled))) > PROB_TOL:
                raise InputError("entries are not multiples of 1/denominator",
                                 {"denominator": self.denominator})
        return self

    @field_serializer("probs")
    def _dump_probs(self, probs: np.ndarray) -> List[float]:
        return [float(p) for p in probs]

    @property
    def size(self) -> int:
        return int(self.probs.size)

    def matches(self, other: "Distribution", tol: float = PROB_TOL) -> bool:
        """The matching relation: entrywise equality within `tol`."""
        return self.size == other.size and bool(np.max(np.abs(self.probs - other.probs)) <= tol)

    @classmethod
    def uniform(cls, size: int) -> "Distribution":
        return cls(probs=np.full(size, 1.0 / size))

    @classmethod
    def point(cls, size: int, symbol: int) -> "Distribution":
        probs = np.zeros(size)
        probs[symbol] = 1.0
        return cls(probs=probs)


class Kernel(_ArrayModel):
    """Row-stochastic matrix; rows flagged in `defined` as False are undefined (NaN)."""

    rows: np.ndarray = Field(..., description="Conditional PMF rows indexed by input symbol")
    defined: np.ndarray = Field(..., description="Mask of rows that are defined")
    input_alphabet: Alphabet
    output_alphabet: Alphabet

    @model_validator(mode="before")
    @classmethod
    def _coerce(cls, data: Any) -> Any:
        if not isinstance(data, dict):
            return data
        data = dict(data)
        rows = np.array(data.get("rows"), dtype=float)
        if rows.ndim != 2 or rows.shape[0] == 0 or rows.shape[1] == 0:
            raise InputError("kernel must be a nonempty matrix", {"shape": list(rows.shape)})
        defined = data.get("defined")
        defined = np.ones(rows.shape[0], dtype=bool) if defined is None else np.array(defined, dtype=bool)
        if defined.shape != (rows.shape[0],):
            raise InputError("defined-row mask does not match the kernel")
        clean = np.full_like(rows, np.nan)
        for a in range(rows.shape[0]):
            if defined[a]:
                clean[a] = validated_probability_vector(rows[a], f"kernel row {a}")
        data["rows"] = _readonly(clean)
        data["defined"] = _readonly(defined)
        if data.get("input_alphabet") is None:
            data["input_alphabet"] = Alphabet(size=rows.shape[0])
        if data.get("output_alphabet") is None:
            data["output_alphabet"] = Alphabet(size=rows.shape[1])
        return data

    @model_validator(mode="after")
    def _check(self) -> "Kernel":
        if self.rows.shape != (self.input_alphabet.size, self.output_alphabet.size):
            raise InputError("kernel shape does not match its alphabets",
                             {"shape": list(self.rows.shape)})
        return self

    @field_serializer("rows")
    def _dump_rows(self, rows: np.ndarray) -> List[List[Optional[float]]]:
        return [[None if np.isnan(v) else float(v) for v in row] for row in rows]

    @field_serializer("defined")
    def _dump_defined(self, defined: np.ndarray) -> List[bool]:
        return [bool(d) for d in defined]

    @property
    def is_total(self) -> bool:
        return bool(self.defined.all())

    def row(self, a: int) -> Distribution:
        if not self.defined[a]:
            raise InputError("kernel row is undefined", {"row": a})
        return Distribution(probs=self.rows[a], alphabet=self.output_alphabet)

    @classmethod
    def identity(cls, size: int) -> "Kernel":
        return cls(rows=np.eye(size))

    @classmethod
    def constant(cls, inputs: int, row: Sequence[float]) -> "Kernel":
        return cls(rows=np.tile(np.asarray(row, dtype=float), (inputs, 1)))


class JointDistribution(_ArrayModel):
    """Joint PMF or joint type over X × Y."""

    probs: np.ndarray = Field(..., description="Matrix indexed by (x, y)")
    denominator: Optional[int] = None
    x_alphabet: Alphabet
    y_alphabet: Alphabet

    @model_validator(mode="before")
    @classmethod
    def _coerce(cls, data: Any) -> Any:
        if not isinstance(data, dict):
            return data
        data = dict(data)
        matrix = np.array(data.get("probs"), dtype=float)
        if matrix.ndim != 2 or matrix.size == 0:
            raise InputError("joint distribution must be a nonempty matrix")
        flat = validated_probability_vector(matrix.ravel(), "joint distribution")
        data["probs"] = _readonly(flat.reshape(matrix.shape))
        if data.get("x_alphabet") is None:
            data["x_alphabet"] = Alphabet(size=matrix.shape[0])
        if data.get("y_alphabet") is None:
            data["y_alphabet"] = Alphabet(size=matrix.shape[1])
        return data

    @model_validator(mode="after")
    def _check(self) -> "JointDistribution":
        if self.probs.shape != (self.x_alphabet.size, self.y_alphabet.size):
            raise InputError("joint distribution shape does not match its alphabets")
        if self.denominator is not None:
            scaled = self.probs * self.denominator
            if np.max(np.abs(scaled - np.round(scaled))) > PROB_TOL:
                raise InputError("entries are not multiples of 1/denominator")
        return self

    @field_serializer("probs")
    def _dump_probs(self, probs: np.ndarray) -> List[List[float]]:
        return [[float(v) for v in row] for row in probs]

    @property
    def shape(self) -> Tuple[int, int]:
        return self.probs.shape  # type: ignore[return-value]

    def marginal_x(self) -> Distribution:
        return Distribution(probs=self.probs.sum(axis=1), denominator=self.denominator,
                            alphabet=self.x_alphabet)

    def marginal_y(self) -> Distribution:
        return Distribution(probs=self.probs.sum(axis=0), denominator=self.denominator,
                            alphabet=self.y_alphabet)


class ChannelState(BaseModel):
    """One state's pair of marginal kernels p(y|x,s) and p(z|x,s)."""

    model_config = ConfigDict(frozen=True)

    kernel_y: Kernel
    kernel_z: Kernel


class CompoundChannel(BaseModel):
    """Finite family of DMC pairs sharing the alphabets X, Y, Z."""

    model_config = ConfigDict(frozen=True)

    x_alphabet: Alphabet
    y_alphabet: Alphabet
    z_alphabet: Alphabet
    states: Tuple[ChannelState, ...]
    name: Optional[str] = None
    description: Optional[str] = None

    @model_validator(mode="after")
    def _check(self) -> "CompoundChannel":
        if not self.states:
            raise InputError("compound channel needs at least one state")
        for s, state in enumerate(self.states):
            for label, kernel, out in (("kernel_y", state.kernel_y, self.y_alphabet),
                                       ("kernel_z", state.kernel_z, self.z_alphabet)):
                if not kernel.is_total:
                    raise InputError("channel kernels must define every row", {"state": s, "kernel": label})
                if kernel.rows.shape != (self.x_alphabet.size, out.size):
                    raise InputError("kernel dimensions do not match the channel alphabets",
                                     {"state": s, "kernel": label, "shape": list(kernel.rows.shape)})
        return self

    @property
    def num_states(self) -> int:
        return len(self.states)

    def kernels_y(self) -> List[np.ndarray]:
        return [state.kernel_y.rows for state in self.states]

    def kernels_z(self) -> List[np.ndarray]:
        return [state.kernel_z.rows for state in self.states]

    @classmethod
    def from_matrices(cls, kernels_y: Sequence[Any], kernels_z: Sequence[Any],
                      name: Optional[str] = None) -> "CompoundChannel":
        if len(kernels_y) != len(kernels_z):
            raise InputError("kernel_y and kernel_z lists must have one entry per state")
        states = tuple(ChannelState(kernel_y=Kernel(rows=ky), kernel_z=Kernel(rows=kz))
                       for ky, kz in zip(kernels_y, kernels_z))
        if not states:
            raise InputError("compound channel needs at least one state")
        first = states[0]
        return cls(x_alphabet=first.kernel_y.input_alphabet,
                   y_alphabet=first.kernel_y.output_alphabet,
                   z_alphabet=first.kernel_z.output_alphabet,
                   states=states, name=name)
