"""Event-log ingestion: parsing, vocabularies, feature encoding, negative
down-sampling and per-day aggregation.

The on-disk format is UTF-8 TSV with columns ``day``, ``banner_id``,
``domain_id``, ``label`` and an optional fifth column of pipe-separated
``name=value`` attribute pairs (a bare ``name`` means presence). Gzipped
files are accepted transparently.
"""

from collections import Counter
from collections.abc import Iterable, Iterator, Sequence
from dataclasses import dataclass
import gzip
import hashlib

import numpy as np

from .core import DyadAggregate, DyadKey, EventRecord, SparseFeatureVector

CROSS_SEP = "×"  # joins attribute key and banner id in cross features
UNKNOWN_INDEX = -1


@dataclass(frozen=True, slots=True)
class RawEvent:
    """One parsed log line, before any vocabulary lookup."""

    day: int
    banner: str
    domain: str
    label: int
    attrs: tuple[tuple[str, str], ...]


class Vocabulary:
    """Injective map from raw string keys to dense indices.

    While unfrozen, unknown keys are assigned the next free index. Once
    frozen, unknown keys map to :data:`UNKNOWN_INDEX` and the caller decides
    whether to drop them.
    """

    def __init__(self, keys: Iterable[str] = ()):
        self._index: dict[str, int] = {}
        self.frozen = False
        for key in keys:
            self.add(key)

    def add(self, key: str) -> int:
        idx = self._index.get(key)
        if idx is None:
            if self.frozen:
                return UNKNOWN_INDEX
            idx = len(self._index)
            self._index[key] = idx
        return idx

    def index(self, key: str) -> int:
        return self._index.get(key, UNKNOWN_INDEX)

    def freeze(self) -> "Vocabulary":
        self.frozen = True
        return self

    def keys(self) -> list[str]:
        """Keys in index order."""
        return sorted(self._index, key=self._index.__getitem__)

    def digest(self) -> str:
        h = hashlib.sha256()
        for key in self.keys():
            h.update(key.encode("utf-8"))
            h.update(b"\n")
        return h.hexdigest()

    def __len__(self) -> int:
        return len(self._index)

    def __contains__(self, key: str) -> bool:
        return key in self._index

    @classmethod
    def from_counts(
        cls, counts: Counter, min_count: int = 1, top_k: int | None = None
    ) -> "Vocabulary":
        """Build from key frequencies, keeping first-seen order among survivors.

        ``min_count`` drops rare keys; ``top_k`` caps the size keeping the
        most frequent keys (ties resolved by first-seen order).
        """
        keys = [k for k in counts if counts[k] >= min_count]
        if top_k is not None and len(keys) > top_k:
            order = {k: i for i, k in enumerate(counts)}
            keys = sorted(keys, key=lambda k: (-counts[k], order[k]))[:top_k]
            keys.sort(key=order.__getitem__)
        return cls(keys)


@dataclass(frozen=True)
class Vocabularies:
    """The three index spaces used by encoding."""

    banners: Vocabulary
    domains: Vocabulary
    features: Vocabulary

    def freeze(self) -> "Vocabularies":
        self.banners.freeze()
        self.domains.freeze()
        self.features.freeze()
        return self


def parse_log(lines: Iterable[str]) -> tuple[list[RawEvent], int]:
    """Parse TSV lines into raw events, skipping and counting malformed lines.

    Returns ``(events, malformed_count)``. A line is malformed when it has
    fewer than 4 columns, a non-integer day, or a label other than 0/1.
    """
    events: list[RawEvent] = []
    malformed = 0
    for line in lines:
        line = line.rstrip("\n").rstrip("\r")
        if not line:
            continue
        cols = line.split("\t")
        if len(cols) < 4:
            malformed += 1
            continue
        try:
            day = int(cols[0])
        except ValueError:
            malformed += 1
            continue
        if cols[3] not in ("0", "1"):
            malformed += 1
            continue
        attrs = []
        if len(cols) >= 5 and cols[4]:
            for item in cols[4].split("|"):
                if not item:
                    continue
                name, sep, value = item.partition("=")
                attrs.append((name, value))
        events.append(RawEvent(day, cols[1], cols[2], int(cols[3]), tuple(attrs)))
    return events, malformed


def read_log(path) -> tuple[list[RawEvent], int]:
    """Parse a log file; ``.gz`` suffixed paths are decompressed on the fly."""
    opener = gzip.open if str(path).endswith(".gz") else open
    with opener(path, "rt", encoding="utf-8") as fh:
        return parse_log(fh)


def _feature_keys(event: RawEvent, crosses: frozenset, indicators: frozenset) -> Iterator[str]:
    for name, value in event.attrs:
        key = f"{name}={value}" if value else name
        yield key
        if name in crosses:
            yield f"{key}{CROSS_SEP}{event.banner}"
    # entity indicators give the side model per-banner/per-domain coefficients
    if "banner" in indicators:
        yield f"banner={event.banner}"
    if "domain" in indicators:
        yield f"domain={event.domain}"


def build_vocabularies(
    events: Sequence[RawEvent],
    crosses: Iterable[str] = (),
    min_count: int = 1,
    top_k: int | None = None,
    indicators: Iterable[str] = (),
) -> Vocabularies:
    """Two-pass vocabulary construction: count, then assign dense indices.

    ``min_count``/``top_k`` truncation applies to the feature vocabulary
    only; every banner and domain id seen gets an index.
    """
    crosses = frozenset(crosses)
    indicators = frozenset(indicators)
    banners = Vocabulary()
    domains = Vocabulary()
    counts: Counter = Counter()
    for ev in events:
        banners.add(ev.banner)
        domains.add(ev.domain)
        counts.update(_feature_keys(ev, crosses, indicators))
    features = Vocabulary.from_counts(counts, min_count=min_count, top_k=top_k)
    return Vocabularies(banners, domains, features)


def encode(
    events: Sequence[RawEvent],
    vocabs: Vocabularies,
    crosses: Iterable[str] = (),
    indicators: Iterable[str] = (),
) -> list[EventRecord]:
    """Turn raw events into indexed records with one-of-K indicator features.

    Every attribute becomes an indicator with value 1.0; attributes listed in
    ``crosses`` additionally emit an indicator keyed by (attribute value x
    banner id). ``indicators`` may name ``"banner"`` and/or ``"domain"`` to
    emit one-of-M/one-of-N entity indicators as ordinary features. Under
    frozen vocabularies unknown features are dropped and unknown
    banners/domains map to :data:`UNKNOWN_INDEX`.
    """
    crosses = frozenset(crosses)
    indicators = frozenset(indicators)
    bad = indicators - {"banner", "domain"}
    if bad:
        raise ValueError(f"unknown indicator names: {sorted(bad)}")
    dim = len(vocabs.features)
    if not vocabs.features.frozen:
        # growing vocabulary: reserve indices first so dim is final
        for ev in events:
            for key in _feature_keys(ev, crosses, indicators):
                vocabs.features.add(key)
        dim = len(vocabs.features)
    records = []
    for ev in events:
        bi = vocabs.banners.add(ev.banner)
        dj = vocabs.domains.add(ev.domain)
        idx = {
            i
            for key in _feature_keys(ev, crosses, indicators)
            if (i := vocabs.features.index(key)) != UNKNOWN_INDEX
        }
        indices = tuple(sorted(idx))
        features = SparseFeatureVector(indices, (1.0,) * len(indices), dim)
        records.append(EventRecord(ev.day, DyadKey(bi, dj), ev.label, features))
    return records


def downsample_negatives(
    events: Sequence[EventRecord], factor: float, seed: int
) -> tuple[list[EventRecord], float]:
    """Keep every positive and each negative with probability 1/factor.

    Returns the surviving events and the achieved negative keep rate (1.0
    when there were no negatives), which feeds the prediction-time intercept
    correction. Deterministic for a given seed.
    """
    if factor < 1:
        raise ValueError(f"down-sampling factor must be >= 1, got {factor}")
    if factor == 1:
        return list(events), 1.0
    rng = np.random.default_rng(seed)
    draws = rng.random(len(events))
    kept = []
    n_neg = n_neg_kept = 0
    for ev, draw in zip(events, draws):
        if ev.label == 1:
            kept.append(ev)
        else:
            n_neg += 1
            if draw < 1.0 / factor:
                kept.append(ev)
                n_neg_kept += 1
    rate = n_neg_kept / n_neg if n_neg else 1.0
    return kept, rate


def aggregate(events: Sequence[EventRecord]) -> list[DyadAggregate]:
    """Collapse events into per-dyad click/view counts, sorted by key."""
    clicks: Counter = Counter()
    views: Counter = Counter()
    for ev in events:
        views[ev.key] += 1
        clicks[ev.key] += ev.label
    return [
        DyadAggregate(key, clicks[key], views[key])
        for key in sorted(views, key=lambda k: (k.banner_index, k.domain_index))
    ]


def group_by_dyad(events: Sequence[EventRecord]) -> dict[DyadKey, list[SparseFeatureVector]]:
    """Group feature vectors per dyad, preserving multiplicity and order."""
    groups: dict[DyadKey, list[SparseFeatureVector]] = {}
    for ev in events:
        groups.setdefault(ev.key, []).append(ev.features)
    return groups


def event_arrays(events: Sequence[EventRecord]):
    """Bulk view of events as (banner, domain, label) integer arrays."""
    n = len(events)
    bi = np.fromiter((ev.key.banner_index for ev in events), dtype=np.int64, count=n)
    dj = np.fromiter((ev.key.domain_index for ev in events), dtype=np.int64, count=n)
    y = np.fromiter((ev.label for ev in events), dtype=np.float64, count=n)
    return bi, dj, y


@dataclass(frozen=True)
class DatasetDay:
    """One day of (possibly down-sampled) events plus their dyad aggregates."""

    day: int
    events: tuple[EventRecord, ...]
    aggregates: tuple[DyadAggregate, ...]
    downsample_factor: float = 1.0
    neg_keep_rate: float = 1.0

    def __post_init__(self):
        if self.downsample_factor < 1:
            raise ValueError("downsample_factor must be >= 1")
        if not 0 < self.neg_keep_rate <= 1:
            raise ValueError("neg_keep_rate must be in (0, 1]")

    @classmethod
    def from_events(
        cls,
        day: int,
        events: Sequence[EventRecord],
        downsample_factor: float = 1.0,
        neg_keep_rate: float = 1.0,
    ) -> "DatasetDay":
        return cls(day, tuple(events), tuple(aggregate(events)), downsample_factor, neg_keep_rate)


def partition_days(events: Sequence[EventRecord]) -> list[DatasetDay]:
    """Split events into one DatasetDay per distinct day index, ascending."""
    by_day: dict[int, list[EventRecord]] = {}
    for ev in events:
        by_day.setdefault(ev.day, []).append(ev)
    return [DatasetDay.from_events(day, by_day[day]) for day in sorted(by_day)]


def merge_days(days: Sequence[DatasetDay]) -> DatasetDay:
    """Pool several days into one training set, combining keep rates by count."""
    if not days:
        raise ValueError("cannot merge an empty list of days")
    events: list[EventRecord] = []
    kept_neg = 0.0
    orig_neg = 0.0
    for day in days:
        events.extend(day.events)
        n_neg = sum(1 for ev in day.events if ev.label == 0)
        kept_neg += n_neg
        orig_neg += n_neg / day.neg_keep_rate
    rate = kept_neg / orig_neg if orig_neg else 1.0
    factor = max(day.downsample_factor for day in days)
    return DatasetDay.from_events(days[-1].day, events, factor, rate)


def downsample_day(day: DatasetDay, factor: float, seed: int) -> DatasetDay:
    """Down-sample one day's negatives and rebuild its aggregates."""
    if factor == 1:
        return day
    kept, achieved = downsample_negatives(day.events, factor, seed)
    combined_rate = day.neg_keep_rate * achieved
    return DatasetDay.from_events(day.day, kept, day.downsample_factor * factor, combined_rate)
