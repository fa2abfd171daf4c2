"""Corpus generation, quantization, train/validation splitting, and the
self-describing dataset file.

The full corpus is one sequence per real harmonic with degree below
``max_degree`` (``max_degree**2`` sequences), each normalized per field and
quantized into a ``bins**2``-token vocabulary.  Generation is deterministic
given the manifest; generation per field is independent and could run
concurrently, but results are always assembled in harmonic-index order.
"""

from __future__ import annotations

import struct
from dataclasses import asdict, dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from . import fileio
from .fields import FieldSequence, HamiltonianField, TangentSample, evaluate_on_spiral
from .geometry import HarmonicIndex, SpiralCurve

DATASET_MAGIC = "spiralfield-dataset"
DATASET_VERSION = 1

# tokens are stored as uint16, so the per-component bin count is capped
_MAX_BINS = 256


@dataclass(frozen=True)
class DatasetManifest:
    """Everything needed to regenerate or interpret a dataset file."""

    max_degree: int = 32
    num_fields: int | None = None
    num_points: int = 100
    c: float = 32.0
    t_margin: float = 1e-2
    bins: int = 16
    seed: int = 42
    split_fraction: float = 0.9
    format_version: int = DATASET_VERSION

    def __post_init__(self):
        if not 1 <= self.max_degree <= 32:
            raise ValueError(f"max_degree must lie in [1, 32], got {self.max_degree}")
        if self.num_fields is None:
            object.__setattr__(self, "num_fields", self.max_degree**2)
        elif self.num_fields != self.max_degree**2:
            raise ValueError(
                f"num_fields must equal max_degree**2 = {self.max_degree**2}, got {self.num_fields}"
            )
        if self.num_points < 2:
            raise ValueError(f"num_points must be >= 2, got {self.num_points}")
        if not 2 <= self.bins <= _MAX_BINS:
            raise ValueError(f"bins must lie in [2, {_MAX_BINS}], got {self.bins}")
        if not 0.0 < self.split_fraction < 1.0:
            raise ValueError(f"split_fraction must lie in (0, 1), got {self.split_fraction}")
        if self.format_version != DATASET_VERSION:
            raise ValueError(f"unsupported format_version {self.format_version}")
        SpiralCurve(c=self.c, num_points=self.num_points, t_margin=self.t_margin)

    def curve(self) -> SpiralCurve:
        return SpiralCurve(c=self.c, num_points=self.num_points, t_margin=self.t_margin)

    def vocab_size(self) -> int:
        return self.bins**2

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetManifest":
        return cls(**d)


def harmonic_indices(max_degree: int) -> list[HarmonicIndex]:
    """All (l, m) with 0 <= l < max_degree, -l <= m <= l, in that order."""
    return [HarmonicIndex(l, m) for l in range(max_degree) for m in range(-l, l + 1)]


def generate_corpus(manifest: DatasetManifest) -> list[FieldSequence]:
    """Evaluate every harmonic field along the spiral.  Deterministic."""
    curve = manifest.curve()
    return [evaluate_on_spiral(HamiltonianField(idx), curve) for idx in harmonic_indices(manifest.max_degree)]


def normalize_field(seq: FieldSequence) -> FieldSequence:
    """Scale one sequence so its largest absolute component is 1.

    The zero field passes through unchanged.  Scale information is
    deliberately discarded; component shape is all the model sees.
    """
    peak = max((max(abs(s.v_theta), abs(s.v_phi)) for s in seq.samples), default=0.0)
    if peak == 0.0:
        return seq
    samples = tuple(
        TangentSample(point=s.point, v_theta=s.v_theta / peak, v_phi=s.v_phi / peak)
        for s in seq.samples
    )
    return FieldSequence(field_idx=seq.field_idx, samples=samples)


class TokenQuantizer(TransformerMixin, BaseEstimator):
    """Uniform per-component quantizer between tangent components and tokens.

    Components are clamped to [-v_max, v_max] and binned half-open into
    ``bins_per_component`` bins per component (top edge closed), giving a
    vocabulary of ``bins_per_component**2`` token ids.  Stateless: ``fit``
    only validates parameters.
    """

    def __init__(self, bins_per_component: int = 16, v_max: float = 1.0):
        self.bins_per_component = bins_per_component
        self.v_max = v_max

    def _check_params(self):
        if not 2 <= self.bins_per_component <= _MAX_BINS:
            raise ValueError(
                f"bins_per_component must lie in [2, {_MAX_BINS}], got {self.bins_per_component}"
            )
        if not self.v_max > 0:
            raise ValueError(f"v_max must be positive, got {self.v_max}")

    @property
    def vocab_size(self) -> int:
        return self.bins_per_component**2

    def fit(self, X=None, y=None):
        self._check_params()
        return self

    def encode(self, v_theta: float, v_phi: float) -> int:
        """Token id for one component pair."""
        return int(self.transform(np.array([[v_theta, v_phi]]))[0])

    def decode(self, token: int) -> tuple[float, float]:
        """Bin-center component pair for one token id."""
        out = self.inverse_transform(np.array([token]))
        return float(out[0, 0]), float(out[0, 1])

    def transform(self, X) -> np.ndarray:
        """Map an (n, 2) array of component pairs to (n,) token ids."""
        self._check_params()
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != 2:
            raise ValueError(f"expected an (n, 2) component array, got shape {X.shape}")
        if not np.all(np.isfinite(X)):
            raise ValueError("components must be finite")
        b = self.bins_per_component
        width = 2.0 * self.v_max / b
        u = np.clip(X, -self.v_max, self.v_max)
        bins = np.minimum(np.floor((u + self.v_max) / width).astype(np.int64), b - 1)
        return bins[:, 0] * b + bins[:, 1]

    def inverse_transform(self, tokens) -> np.ndarray:
        """Map (n,) token ids back to (n, 2) bin-center component pairs."""
        self._check_params()
        tokens = np.asarray(tokens, dtype=np.int64)
        b = self.bins_per_component
        if tokens.ndim != 1:
            raise ValueError(f"expected a 1-d token array, got shape {tokens.shape}")
        if tokens.size and (tokens.min() < 0 or tokens.max() >= b * b):
            raise ValueError(f"token ids must lie in [0, {b * b})")
        width = 2.0 * self.v_max / b
        centers = np.stack([tokens // b, tokens % b], axis=1)
        return -self.v_max + (centers + 0.5) * width


@dataclass(frozen=True)
class EncodedField:
    """One normalized, quantized field as stored in the dataset file."""

    idx: HarmonicIndex
    components: np.ndarray  # (num_points, 2) float64, normalized
    tokens: np.ndarray  # (num_points,) uint16


def encode_corpus(corpus: list[FieldSequence], quantizer: TokenQuantizer) -> list[EncodedField]:
    """Normalize each field and quantize its components."""
    out = []
    for seq in corpus:
        comps = np.array(normalize_field(seq).components(), dtype=np.float64)
        tokens = quantizer.transform(comps).astype(np.uint16)
        out.append(EncodedField(idx=seq.field_idx, components=comps, tokens=tokens))
    return out


def build_dataset(manifest: DatasetManifest) -> list[EncodedField]:
    """Full pipeline: generate, normalize, quantize."""
    return encode_corpus(generate_corpus(manifest), TokenQuantizer(manifest.bins, 1.0))


def split_indices(n: int, split_fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Shuffle 0..n-1 with the seeded generator and split with at least one
    element per side.  Deterministic per seed."""
    if not 0.0 < split_fraction < 1.0:
        raise ValueError(f"split_fraction must lie in (0, 1), got {split_fraction}")
    if n < 2:
        raise ValueError(f"need at least 2 items to split, got {n}")
    perm = np.random.default_rng(seed).permutation(n)
    n_train = min(max(int(n * split_fraction), 1), n - 1)
    return perm[:n_train], perm[n_train:]


def split_corpus(items, split_fraction: float, seed: int):
    """Split whole fields into train and validation lists; no field appears
    in both."""
    train_idx, val_idx = split_indices(len(items), split_fraction, seed)
    return [items[i] for i in train_idx], [items[i] for i in val_idx]


def token_matrix(fields: list[EncodedField]) -> np.ndarray:
    """Stack token sequences into an (n_fields, num_points) int64 matrix."""
    return np.stack([f.tokens.astype(np.int64) for f in fields])


def write_dataset(path, manifest: DatasetManifest, fields: list[EncodedField]) -> None:
    """Serialize manifest and per-field records; write(read(x)) is byte-exact."""
    if len(fields) != manifest.num_fields:
        raise ValueError(f"manifest says {manifest.num_fields} fields, got {len(fields)}")
    parts = []
    for f in fields:
        if f.components.shape != (manifest.num_points, 2):
            raise ValueError(f"field {f.idx}: bad components shape {f.components.shape}")
        if f.tokens.shape != (manifest.num_points,):
            raise ValueError(f"field {f.idx}: bad tokens shape {f.tokens.shape}")
        parts.append(struct.pack("<hh", f.idx.l, f.idx.m))
        parts.append(np.ascontiguousarray(f.components, dtype=np.float64).tobytes())
        parts.append(np.ascontiguousarray(f.tokens, dtype=np.uint16).tobytes())
    fileio.write_framed(path, DATASET_MAGIC, manifest.format_version, manifest.to_dict(), b"".join(parts))


def read_dataset(path) -> tuple[DatasetManifest, list[EncodedField]]:
    """Read and verify a dataset file written by ``write_dataset``."""
    header, payload = fileio.read_framed(path, DATASET_MAGIC, DATASET_VERSION)
    try:
        manifest = DatasetManifest.from_dict(header)
    except (TypeError, ValueError) as e:
        raise fileio.FileFormatError(f"{path}: bad manifest: {e}") from None
    n, npts = manifest.num_fields, manifest.num_points
    record = 4 + npts * 16 + npts * 2
    if len(payload) != n * record:
        raise fileio.FileFormatError(
            f"{path}: payload is {len(payload)} bytes, expected {n * record}"
        )
    fields = []
    for i in range(n):
        base = i * record
        l, m = struct.unpack_from("<hh", payload, base)
        comps = np.frombuffer(payload, dtype=np.float64, count=npts * 2, offset=base + 4)
        tokens = np.frombuffer(payload, dtype=np.uint16, count=npts, offset=base + 4 + npts * 16)
        if tokens.size and tokens.max() >= manifest.vocab_size():
            raise fileio.FileFormatError(f"{path}: token id out of range in field ({l}, {m})")
        try:
            idx = HarmonicIndex(l, m)
        except ValueError as e:
            raise fileio.FileFormatError(f"{path}: bad harmonic index: {e}") from None
        fields.append(
            EncodedField(idx=idx, components=comps.reshape(npts, 2).copy(), tokens=tokens.copy())
        )
    return manifest, fields
