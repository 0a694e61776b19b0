"""Domain types, manifest I/O, weather vectorization, city filtering, splitting, fusion.

A manifest is the ingestion boundary: one JSON object per line (UTF-8 JSON
Lines) describing a city-year record with a binary disaster label and up to
three modality vectors (weather 25, text 32, image 46). All types are
immutable after construction and every operation here is a pure function.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

logger = logging.getLogger(__name__)

EARTH_RADIUS_KM = 6371.0
EVENT_YEAR_MIN = 1960
EVENT_YEAR_MAX = 2018

WEATHER_FEATURES = ("temperature", "dew_point", "relative_humidity", "wind_speed", "precipitation")
WEATHER_YEARS = 5
WEATHER_DIM = WEATHER_YEARS * len(WEATHER_FEATURES)  # 25
TEXT_DIM = 32
IMAGE_DIM = 46

_MANIFEST_FIELDS = (
    "sample_id", "city", "country", "lat", "lon",
    "disaster_type", "label", "weather", "text_emb", "image_emb", "synthetic",
)
_REQUIRED_FIELDS = ("sample_id", "city", "country", "lat", "lon", "disaster_type", "label")


class ManifestError(ValueError):
    """Base class for manifest ingestion failures."""


class MalformedLineError(ManifestError):
    """A line is not valid JSON or is missing/mistyping a required field."""


class DuplicateSampleIdError(ManifestError):
    """Two records in the manifest share a sample_id."""


class DimensionError(ManifestError):
    """A modality vector has the wrong number of entries."""


class NonFiniteError(ManifestError):
    """A numeric field contains NaN or infinity."""


class MissingModalityError(ValueError):
    """A fusion mask requests a modality the sample does not carry."""


class DisasterType(str, Enum):
    FLOOD = "flood"
    LANDSLIDE = "landslide"


def _check_lat_lon(lat: float, lon: float) -> None:
    if not (math.isfinite(lat) and -90.0 <= lat <= 90.0):
        raise ValueError(f"latitude {lat!r} outside [-90, 90]")
    if not (math.isfinite(lon) and -180.0 <= lon <= 180.0):
        raise ValueError(f"longitude {lon!r} outside [-180, 180]")


def _readonly(values, dim: int | None = None, name: str = "vector") -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional")
    if dim is not None and arr.shape[0] != dim:
        raise DimensionError(f"{name} has {arr.shape[0]} values, expected {dim}")
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"{name} contains a non-finite value")
    arr = arr.copy()
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class City:
    name: str
    country: str
    lat: float
    lon: float

    def __post_init__(self) -> None:
        if not self.name or not self.country:
            raise ValueError("city name and country must be non-empty")
        _check_lat_lon(self.lat, self.lon)


@dataclass(frozen=True)
class DisasterEvent:
    disaster_type: DisasterType
    lat: float
    lon: float
    year: int

    def __post_init__(self) -> None:
        _check_lat_lon(self.lat, self.lon)


@dataclass(frozen=True)
class WeatherHistory:
    """Five consecutive years of annual weather aggregates.

    ``values[y, f]`` holds feature ``WEATHER_FEATURES[f]`` for ``years[y]``;
    years ascend (2016..2020 in the paper's setting).
    """

    years: tuple[int, ...]
    values: np.ndarray

    def __post_init__(self) -> None:
        if len(self.years) != WEATHER_YEARS:
            raise ValueError(f"expected {WEATHER_YEARS} years, got {len(self.years)}")
        for a, b in zip(self.years, self.years[1:]):
            if b != a + 1:
                raise ValueError(f"years must be consecutive ascending, got {self.years}")
        arr = np.asarray(self.values, dtype=np.float64)
        if arr.shape != (WEATHER_YEARS, len(WEATHER_FEATURES)):
            raise ValueError(f"values must have shape (5, 5), got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError("weather table contains a non-finite value")
        arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)
        object.__setattr__(self, "years", tuple(int(y) for y in self.years))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, WeatherHistory):
            return NotImplemented
        return self.years == other.years and np.array_equal(self.values, other.values)


@dataclass(frozen=True, eq=False)
class Sample:
    """One city-year record: identifiers, label, optional modality vectors."""

    sample_id: str
    city: City
    label: int
    weather: np.ndarray | None = None
    text_emb: np.ndarray | None = None
    image_emb: np.ndarray | None = None
    synthetic: bool = False

    def __post_init__(self) -> None:
        if not self.sample_id:
            raise ValueError("sample_id must be non-empty")
        if self.label not in (0, 1) or isinstance(self.label, bool):
            raise ValueError(f"label must be 0 or 1, got {self.label!r}")
        for name, dim in (("weather", WEATHER_DIM), ("text_emb", TEXT_DIM), ("image_emb", IMAGE_DIM)):
            value = getattr(self, name)
            if value is not None:
                object.__setattr__(self, name, _readonly(value, dim, name))

    def modality(self, name: str) -> np.ndarray | None:
        return getattr(self, {"weather": "weather", "text": "text_emb", "image": "image_emb"}[name])

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Sample):
            return NotImplemented
        vectors_equal = all(
            (a is None and b is None) or (a is not None and b is not None and np.array_equal(a, b))
            for a, b in (
                (self.weather, other.weather),
                (self.text_emb, other.text_emb),
                (self.image_emb, other.image_emb),
            )
        )
        return (
            self.sample_id == other.sample_id
            and self.city == other.city
            and self.label == other.label
            and self.synthetic == other.synthetic
            and vectors_equal
        )


@dataclass(frozen=True, eq=False)
class Dataset:
    samples: tuple[Sample, ...]
    disaster_type: DisasterType

    def __post_init__(self) -> None:
        object.__setattr__(self, "samples", tuple(self.samples))
        seen: set[str] = set()
        for s in self.samples:
            if s.sample_id in seen:
                raise DuplicateSampleIdError(f"duplicate sample_id {s.sample_id!r}")
            seen.add(s.sample_id)

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self) -> Iterator[Sample]:
        return iter(self.samples)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return self.disaster_type == other.disaster_type and self.samples == other.samples

    def label_counts(self) -> tuple[int, int]:
        """Return (positives, negatives)."""
        pos = sum(1 for s in self.samples if s.label == 1)
        return pos, len(self.samples) - pos


@dataclass(frozen=True)
class ModalityMask:
    weather: bool = False
    text: bool = False
    image: bool = False

    def __post_init__(self) -> None:
        if not (self.weather or self.text or self.image):
            raise ValueError("mask must enable at least one modality")

    def enabled(self) -> tuple[str, ...]:
        return tuple(n for n, on in (("weather", self.weather), ("text", self.text), ("image", self.image)) if on)

    def dim(self) -> int:
        return WEATHER_DIM * self.weather + TEXT_DIM * self.text + IMAGE_DIM * self.image

    def label(self) -> str:
        """Column label in the style of the paper's tables, e.g. 'Weather, Text, Image'."""
        return ", ".join(n.capitalize() for n in self.enabled())

    def slug(self) -> str:
        """Machine-friendly label, e.g. 'weather+text+image'."""
        return "+".join(self.enabled())


@dataclass(frozen=True, eq=False)
class FeatureVector:
    """Flat fused vector: enabled modalities concatenated as weather | text | image."""

    values: np.ndarray
    mask: ModalityMask

    def __post_init__(self) -> None:
        arr = _readonly(self.values, None, "feature vector")
        if arr.shape[0] != self.mask.dim():
            raise DimensionError(f"feature vector has {arr.shape[0]} values, mask requires {self.mask.dim()}")
        object.__setattr__(self, "values", arr)

    def __len__(self) -> int:
        return len(self.values)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, FeatureVector):
            return NotImplemented
        return self.mask == other.mask and np.array_equal(self.values, other.values)


def haversine_km(lat1: float, lon1: float, lat2: float, lon2: float) -> float:
    """Great-circle distance on a sphere of mean radius 6371.0 km."""
    phi1, phi2 = math.radians(lat1), math.radians(lat2)
    dphi = math.radians(lat2 - lat1)
    dlam = math.radians(lon2 - lon1)
    a = math.sin(dphi / 2.0) ** 2 + math.cos(phi1) * math.cos(phi2) * math.sin(dlam / 2.0) ** 2
    return 2.0 * EARTH_RADIUS_KM * math.asin(min(1.0, math.sqrt(a)))


def filter_eligible_cities(
    cities: Sequence[City],
    events: Sequence[DisasterEvent],
    radius_km: float = 100.0,
    min_events: int = 2,
) -> list[City]:
    """Keep cities with at least ``min_events`` events within ``radius_km``.

    Distance is haversine on the 6371.0 km sphere; a distance of exactly
    ``radius_km`` counts as inside. Input city order is preserved.
    """
    if not radius_km > 0:
        raise ValueError("radius_km must be positive")
    if min_events < 1:
        raise ValueError("min_events must be at least 1")
    for e in events:
        if not EVENT_YEAR_MIN <= e.year <= EVENT_YEAR_MAX:
            raise ValueError(f"event year {e.year} outside historical window [{EVENT_YEAR_MIN}, {EVENT_YEAR_MAX}]")
    kept = []
    for city in cities:
        hits = sum(1 for e in events if haversine_km(city.lat, city.lon, e.lat, e.lon) <= radius_km)
        if hits >= min_events:
            kept.append(city)
    return kept


def vectorize_weather(history: WeatherHistory) -> np.ndarray:
    """Flatten a weather table into a 25-vector, year-major then feature-minor.

    ``out[5*y + f]`` is feature ``f`` of year ``y`` (years ascending, features
    in temperature, dew point, relative humidity, wind speed, precipitation
    order). Bijective: no aggregation or scaling.
    """
    return history.values.reshape(-1).copy()


def weather_from_vector(values: Sequence[float] | np.ndarray, years: Sequence[int]) -> WeatherHistory:
    """Inverse of :func:`vectorize_weather` for the given year range."""
    arr = _readonly(values, WEATHER_DIM, "weather")
    return WeatherHistory(tuple(int(y) for y in years), arr.reshape(WEATHER_YEARS, len(WEATHER_FEATURES)))


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def stratified_split(ds: Dataset, test_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Split per class with seeded shuffles; test counts use round-half-up.

    Within each class, membership is decided by a deterministic shuffle from
    ``numpy.random.default_rng(seed)`` (class 0 consumed first). The two parts
    partition the dataset and keep its original sample order.
    """
    if not 0.0 < test_fraction < 1.0:
        raise ValueError("test_fraction must be in (0, 1)")
    rng = np.random.default_rng(seed)
    test_positions: set[int] = set()
    for label in (0, 1):
        idx = [i for i, s in enumerate(ds.samples) if s.label == label]
        if not idx:
            raise ValueError(f"class {label} has no samples")
        n_test = _round_half_up(len(idx) * test_fraction)
        perm = rng.permutation(len(idx))
        test_positions.update(idx[int(j)] for j in perm[:n_test])
    train = tuple(s for i, s in enumerate(ds.samples) if i not in test_positions)
    test = tuple(s for i, s in enumerate(ds.samples) if i in test_positions)
    return Dataset(train, ds.disaster_type), Dataset(test, ds.disaster_type)


def fuse_features(sample: Sample, mask: ModalityMask) -> FeatureVector:
    """Concatenate the mask's enabled modalities in fixed weather|text|image order."""
    parts = []
    for name in mask.enabled():
        vec = sample.modality(name)
        if vec is None:
            raise MissingModalityError(f"sample {sample.sample_id!r} lacks modality {name!r} required by mask")
        parts.append(vec)
    return FeatureVector(np.concatenate(parts), mask)


def _vector_field(obj: dict, name: str, dim: int, lineno: int) -> np.ndarray | None:
    if name not in obj or obj[name] is None:
        return None
    raw = obj[name]
    if not isinstance(raw, list):
        raise MalformedLineError(f"line {lineno}: field {name!r} must be an array")
    if len(raw) != dim:
        raise DimensionError(f"line {lineno}: field {name!r} has {len(raw)} values, expected {dim}")
    for v in raw:
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise MalformedLineError(f"line {lineno}: field {name!r} contains a non-numeric entry")
        if not math.isfinite(v):
            raise NonFiniteError(f"line {lineno}: field {name!r} contains a non-finite value")
    return np.asarray(raw, dtype=np.float64)


def _sample_from_record(obj: dict, lineno: int) -> tuple[Sample, DisasterType]:
    for key in _REQUIRED_FIELDS:
        if key not in obj:
            raise MalformedLineError(f"line {lineno}: missing required field {key!r}")
    unknown = sorted(set(obj) - set(_MANIFEST_FIELDS))
    if unknown:
        logger.warning("line %d: ignoring unknown manifest fields: %s", lineno, ", ".join(unknown))
    if not isinstance(obj["sample_id"], str) or not isinstance(obj["city"], str) or not isinstance(obj["country"], str):
        raise MalformedLineError(f"line {lineno}: sample_id, city and country must be strings")
    for key in ("lat", "lon"):
        if isinstance(obj[key], bool) or not isinstance(obj[key], (int, float)):
            raise MalformedLineError(f"line {lineno}: field {key!r} must be a number")
    try:
        dtype = DisasterType(obj["disaster_type"])
    except ValueError:
        raise MalformedLineError(f"line {lineno}: unknown disaster_type {obj['disaster_type']!r}") from None
    label = obj["label"]
    if isinstance(label, bool) or label not in (0, 1):
        raise MalformedLineError(f"line {lineno}: label must be 0 or 1")
    synthetic = obj.get("synthetic", False)
    if not isinstance(synthetic, bool):
        raise MalformedLineError(f"line {lineno}: field 'synthetic' must be a boolean")
    try:
        city = City(obj["city"], obj["country"], float(obj["lat"]), float(obj["lon"]))
        sample = Sample(
            sample_id=obj["sample_id"],
            city=city,
            label=int(label),
            weather=_vector_field(obj, "weather", WEATHER_DIM, lineno),
            text_emb=_vector_field(obj, "text_emb", TEXT_DIM, lineno),
            image_emb=_vector_field(obj, "image_emb", IMAGE_DIM, lineno),
            synthetic=synthetic,
        )
    except ManifestError:
        raise
    except ValueError as exc:
        raise MalformedLineError(f"line {lineno}: {exc}") from exc
    return sample, dtype


def parse_manifest(path: str | Path, *, disaster: DisasterType | str | None = None) -> Dataset:
    """Read a JSON Lines manifest into a Dataset.

    ``disaster`` selects one disaster type from a mixed manifest; without it
    the file must be homogeneous. Record order is preserved. Raises a
    :class:`ManifestError` subclass naming the offending line on bad input.
    """
    path = Path(path)
    wanted = DisasterType(disaster) if disaster is not None else None
    samples: list[Sample] = []
    seen_ids: set[str] = set()
    seen_types: set[DisasterType] = set()
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise MalformedLineError(f"line {lineno}: invalid JSON: {exc.msg}") from exc
            if not isinstance(obj, dict):
                raise MalformedLineError(f"line {lineno}: record must be a JSON object")
            sample, dtype = _sample_from_record(obj, lineno)
            if wanted is not None and dtype != wanted:
                continue
            if sample.sample_id in seen_ids:
                raise DuplicateSampleIdError(f"line {lineno}: duplicate sample_id {sample.sample_id!r}")
            seen_ids.add(sample.sample_id)
            seen_types.add(dtype)
            samples.append(sample)
    if wanted is None and len(seen_types) > 1:
        names = ", ".join(sorted(t.value for t in seen_types))
        raise ManifestError(f"manifest mixes disaster types ({names}); pass disaster= to select one")
    dtype_out = wanted if wanted is not None else (next(iter(seen_types)) if seen_types else DisasterType.FLOOD)
    return Dataset(tuple(samples), dtype_out)


def write_manifest(ds: Dataset, path: str | Path) -> None:
    """Write ``ds`` as JSON Lines with the documented field order.

    ``parse_manifest(write_manifest(ds))`` reproduces ``ds`` exactly; floats
    round-trip via shortest-repr JSON encoding.
    """
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for s in ds.samples:
            record: dict = {
                "sample_id": s.sample_id,
                "city": s.city.name,
                "country": s.city.country,
                "lat": float(s.city.lat),
                "lon": float(s.city.lon),
                "disaster_type": ds.disaster_type.value,
                "label": int(s.label),
            }
            for key, vec in (("weather", s.weather), ("text_emb", s.text_emb), ("image_emb", s.image_emb)):
                if vec is not None:
                    record[key] = [float(v) for v in vec]
            if s.synthetic:
                record["synthetic"] = True
            fh.write(json.dumps(record) + "\n")
