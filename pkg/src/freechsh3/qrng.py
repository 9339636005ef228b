"""Qutrit measurement simulation and the one-party random-trit protocol.

Each round draws an ordered couple of observables from a public randomness
source. Couples inside one commuting block ({1,2} or {3,4}) produce a direct
trit: the first observable is measured on the reference state. Cross-block
couples are test rounds: the second observable of the couple is measured
first, its post-measurement eigenstate is measured again with the first
observable, and both outcomes are logged for certification. The state is
re-prepared every round.

All sampling reduces to a stream of uniform bits so that a seeded generator,
OS entropy, a replayed beacon file and a live beacon endpoint are
interchangeable. The seeded adapter is the counter-based philox4x64
generator, whose stream is stable across platforms; the consumption order is
fixed (4 bits for the couple, then 53 bits per Born sample) so equal seeds
reproduce logs byte for byte.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import urllib.request
import warnings
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence, TextIO

import numpy as np

from . import bell
from .relax import ExtractedConfiguration


class SourceExhaustedError(RuntimeError):
    """A finite randomness source ran out of bits."""


@dataclass(frozen=True)
class TritRecord:
    round: int
    observable: int
    trit: int


@dataclass(frozen=True)
class SequentialRecord:
    round: int
    first_observable: int
    first_outcome: int
    second_observable: int
    second_outcome: int


class MeasurementBasis:
    """Orthonormal eigenbasis of one observable, rows indexed by outcome."""

    def __init__(self, observable: int, vectors):
        self.observable = int(observable)
        self.vectors = np.asarray(vectors, dtype=complex)
        if self.vectors.ndim != 2:
            raise ValueError("basis vectors must form a 2d array")
        gram = self.vectors @ self.vectors.conj().T
        dev = float(np.max(np.abs(gram - np.eye(self.vectors.shape[0]))))
        if dev > 1e-10:
            raise ValueError(
                f"degenerate basis for observable {observable}: "
                f"orthonormality residual {dev:.3e}"
            )
        self._conj = self.vectors.conj()

    def probabilities(self, state: np.ndarray) -> np.ndarray:
        amps = self._conj @ state
        return amps.real**2 + amps.imag**2


class RandomnessSource:
    """Uniform bit stream with helpers for exact integer and float draws."""

    name = "abstract"

    def describe(self) -> str:
        return self.name

    def _next_word(self) -> tuple[int, int]:
        """Return (value, bit_count) of the next raw chunk."""
        raise NotImplementedError

    def __init__(self):
        self._acc = 0
        self._acc_bits = 0

    def next_bits(self, n: int) -> int:
        """The next n bits of the stream as an integer, most significant first."""
        while self._acc_bits < n:
            value, width = self._next_word()
            self._acc = (self._acc << width) | value
            self._acc_bits += width
        shift = self._acc_bits - n
        out = self._acc >> shift
        self._acc &= (1 << shift) - 1
        self._acc_bits = shift
        return out

    def randbelow(self, m: int) -> int:
        """Uniform integer in [0, m) by rejection; exact for powers of two."""
        if m <= 0:
            raise ValueError("m must be positive")
        k = (m - 1).bit_length()
        if m == 1:
            return 0
        while True:
            r = self.next_bits(k)
            if r < m:
                return r

    def uniform(self) -> float:
        """Uniform double in [0, 1) from 53 bits."""
        return self.next_bits(53) * 2.0**-53


class SeededPrng(RandomnessSource):
    """Reproducible stream from the philox4x64 counter-based generator."""

    name = "seeded-prng"
    algorithm = "philox4x64"

    def __init__(self, seed: int, chunk: int = 1024):
        super().__init__()
        self.seed = int(seed)
        self._chunk = int(chunk)
        self._gen = np.random.Generator(np.random.Philox(key=self.seed))
        self._buffer: list[int] = []

    def describe(self) -> str:
        return f"{self.name} algorithm={self.algorithm} seed={self.seed}"

    def _next_word(self) -> tuple[int, int]:
        if not self._buffer:
            words = self._gen.integers(0, 2**64, size=self._chunk, dtype=np.uint64)
            self._buffer = [int(w) for w in words[::-1]]
        return self._buffer.pop(), 64


class OsEntropy(RandomnessSource):
    """Operating-system entropy; not reproducible."""

    name = "os-entropy"

    def _next_word(self) -> tuple[int, int]:
        return int.from_bytes(os.urandom(8), "big"), 64


class BeaconFile(RandomnessSource):
    """Replays beacon pulses stored as hex strings, one pulse per line."""

    name = "beacon-file"

    def __init__(self, path):
        super().__init__()
        self.path = str(path)
        with open(path, "r", encoding="utf-8") as fh:
            self._pulses = [
                ln.strip() for ln in fh if ln.strip() and not ln.startswith("#")
            ]
        self._cursor = 0

    def describe(self) -> str:
        return f"{self.name} path={self.path}"

    def _next_word(self) -> tuple[int, int]:
        if self._cursor >= len(self._pulses):
            raise SourceExhaustedError(
                f"beacon file {self.path} exhausted after {len(self._pulses)} pulses"
            )
        pulse = self._pulses[self._cursor]
        self._cursor += 1
        return int(pulse, 16), 4 * len(pulse)


def parse_pulse_output(payload: str) -> str:
    """Extract the hex randomness field from a beacon pulse JSON document.

    Accepts both the wrapped form {"pulse": {"outputValue": ...}} and a flat
    {"outputValue": ...}; everything else in the pulse is ignored.
    """
    doc = json.loads(payload)
    if isinstance(doc, dict) and "pulse" in doc and isinstance(doc["pulse"], dict):
        doc = doc["pulse"]
    value = doc.get("outputValue") if isinstance(doc, dict) else None
    if not isinstance(value, str) or not value:
        raise ValueError("pulse document lacks an outputValue field")
    int(value, 16)
    return value


class BeaconHttp(RandomnessSource):
    """Fetches beacon pulses over HTTP by index, caching them locally.

    url_template must contain an {index} placeholder. Fetched pulses are
    appended to the cache file; on any network or parse failure the adapter
    warns once and falls back to replaying the cache from its beginning.
    """

    name = "beacon-http"

    def __init__(self, url_template: str, first_index: int = 1,
                 cache_path=None, timeout: float = 10.0):
        super().__init__()
        self.url_template = url_template
        self.cache_path = str(cache_path) if cache_path else None
        self.timeout = timeout
        self._index = int(first_index)
        self._fallback: BeaconFile | None = None

    def describe(self) -> str:
        return f"{self.name} url={self.url_template}"

    def _next_word(self) -> tuple[int, int]:
        if self._fallback is not None:
            return self._fallback._next_word()
        url = self.url_template.format(index=self._index)
        try:
            with urllib.request.urlopen(url, timeout=self.timeout) as resp:
                pulse = parse_pulse_output(resp.read().decode("utf-8"))
        except Exception as exc:  # noqa: BLE001 - any failure falls back
            if self.cache_path and os.path.exists(self.cache_path):
                warnings.warn(
                    f"beacon fetch failed ({exc}); replaying cache {self.cache_path}"
                )
                self._fallback = BeaconFile(self.cache_path)
                return self._fallback._next_word()
            raise SourceExhaustedError(
                f"beacon fetch failed and no cache is available: {exc}"
            ) from exc
        self._index += 1
        if self.cache_path:
            with open(self.cache_path, "a", encoding="utf-8", newline="\n") as fh:
                fh.write(pulse + "\n")
        return int(pulse, 16), 4 * len(pulse)


def make_source(adapter: str, seed: int = 0, path=None, endpoint: str | None = None,
                cache_path=None) -> RandomnessSource:
    if adapter == "seeded-prng":
        return SeededPrng(seed)
    if adapter == "os-entropy":
        return OsEntropy()
    if adapter == "beacon-file":
        if path is None:
            raise ValueError("beacon-file adapter needs a path")
        return BeaconFile(path)
    if adapter == "beacon-http":
        if endpoint is None:
            raise ValueError("beacon-http adapter needs an endpoint template")
        return BeaconHttp(endpoint, cache_path=cache_path)
    raise ValueError(f"unknown randomness adapter {adapter!r}")


def born_sample(
    state: np.ndarray, basis: MeasurementBasis, source: RandomnessSource
) -> tuple[int, np.ndarray]:
    """Projective measurement of a normalized state in the given basis.

    Outcome k is drawn with probability |<x_k|state>|^2 from one uniform
    draw of the source; the post-measurement state is the eigenvector x_k.
    """
    state = np.asarray(state, dtype=complex)
    norm = float(np.linalg.norm(state))
    if abs(norm - 1.0) > 1e-9:
        raise ValueError(f"state norm {norm} is not 1")
    probs = basis.probabilities(state)
    u = source.uniform()
    acc = 0.0
    for k, p in enumerate(probs):
        acc += p
        if u < acc:
            return k, basis.vectors[k].copy()
    return len(probs) - 1, basis.vectors[-1].copy()


def choose_couple(source: RandomnessSource) -> tuple[int, int]:
    """Uniform ordered couple of observable ids; 16 cases, 4 bits, no bias."""
    v = source.randbelow(16)
    return v // 4 + 1, v % 4 + 1


def same_block(i: int, j: int) -> bool:
    return (i in bell.BLOCK_A) == (j in bell.BLOCK_A)


def bases_from_configuration(
    config: ExtractedConfiguration,
) -> dict[int, MeasurementBasis]:
    return {i: MeasurementBasis(i, config.basis_vectors(i)) for i in bell.OBSERVABLES}


def run_protocol(
    config: ExtractedConfiguration,
    rounds: int,
    source: RandomnessSource,
) -> tuple[list[TritRecord], list[SequentialRecord]]:
    """Execute the protocol loop.

    Same-block couples (i = j included) measure the first observable of the
    couple directly and emit a trit; cross-block couples measure the second
    observable first, then the first on the post-measurement state, and emit
    a sequential record. Raises if the configuration's bases fail a quick
    orthonormality check.
    """
    bases = bases_from_configuration(config)
    state = np.asarray(config.state, dtype=complex)
    trits: list[TritRecord] = []
    seqs: list[SequentialRecord] = []
    for r in range(int(rounds)):
        i, j = choose_couple(source)
        if same_block(i, j):
            k, _ = born_sample(state, bases[i], source)
            trits.append(TritRecord(round=r, observable=i, trit=k))
        else:
            k, post = born_sample(state, bases[j], source)
            l, _ = born_sample(post, bases[i], source)
            seqs.append(
                SequentialRecord(
                    round=r,
                    first_observable=j,
                    first_outcome=k,
                    second_observable=i,
                    second_outcome=l,
                )
            )
    return trits, seqs


def min_entropy_empirical(trits: Sequence[int]) -> float:
    """Empirical min-entropy of a trit stream, in trits (base-3 logarithm)."""
    if len(trits) == 0:
        raise ValueError("empty trit stream")
    counts = Counter(trits)
    p_max = max(counts.values()) / len(trits)
    return -math.log(p_max, 3)


def config_fingerprint(config: ExtractedConfiguration) -> str:
    """Stable hash of the state and measurement bases driving a run."""
    digest = hashlib.sha256()
    digest.update(np.ascontiguousarray(config.state).tobytes())
    for i in bell.OBSERVABLES:
        digest.update(np.ascontiguousarray(config.basis_vectors(i)).tobytes())
    return digest.hexdigest()


def pack_trits(trits: Sequence[int]) -> bytes:
    """Pack trits five per byte (base-3 digits, byte value < 243).

    The final group is zero-padded; consumers recover the exact count from
    the log header.
    """
    out = bytearray()
    for start in range(0, len(trits), 5):
        group = list(trits[start : start + 5]) + [0] * (5 - min(5, len(trits) - start))
        value = 0
        for t in reversed(group):
            if not 0 <= t <= 2:
                raise ValueError(f"trit out of range: {t}")
            value = value * 3 + t
        out.append(value)
    return bytes(out)


def unpack_trits(blob: bytes, count: int) -> list[int]:
    trits: list[int] = []
    for byte in blob:
        value = byte
        for _ in range(5):
            trits.append(value % 3)
            value //= 3
    return trits[:count]


LOG_COLUMNS = "round,type,i,j,k,l"


def write_log(
    fh: TextIO,
    trits: Iterable[TritRecord],
    seqs: Iterable[SequentialRecord],
    header: dict[str, str],
) -> None:
    """Line-delimited outcome log.

    Columns: i and l are the final observable and outcome of the round; j and
    k are the first-stage observable and outcome of sequential rounds (empty
    for trit rounds).
    """
    for key, value in header.items():
        fh.write(f"# {key}={value}\n")
    fh.write(f"# columns={LOG_COLUMNS}\n")
    rows = [(t.round, "T", t.observable, "", "", t.trit) for t in trits]
    rows += [
        (s.round, "S", s.second_observable, s.first_observable,
         s.first_outcome, s.second_outcome)
        for s in seqs
    ]
    rows.sort(key=lambda row: row[0])
    for row in rows:
        fh.write(",".join(str(v) for v in row) + "\n")


def read_log(fh: TextIO):
    """Parse a log written by write_log.

    Returns (trit records, sequential records, header dict).
    """
    header: dict[str, str] = {}
    trits: list[TritRecord] = []
    seqs: list[SequentialRecord] = []
    for line in fh:
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            body = line[1:].strip()
            if "=" in body:
                key, value = body.split("=", 1)
                header[key.strip()] = value.strip()
            continue
        parts = line.split(",")
        if len(parts) != 6:
            raise ValueError(f"malformed log line: {line!r}")
        rnd, kind, i, j, k, l = parts
        if kind == "T":
            trits.append(TritRecord(round=int(rnd), observable=int(i), trit=int(l)))
        elif kind == "S":
            seqs.append(
                SequentialRecord(
                    round=int(rnd),
                    first_observable=int(j),
                    first_outcome=int(k),
                    second_observable=int(i),
                    second_outcome=int(l),
                )
            )
        else:
            raise ValueError(f"unknown record type {kind!r}")
    return trits, seqs, header
