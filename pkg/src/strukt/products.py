"""Structural products: partitions, hierarchies, region graphs, scalar fields.

Every product has a canonical byte serialization and a SHA-256
``product_hash`` over it. Partitions are canonical when region ids follow
first occurrence in a row-major scan; only canonical partitions are hashed.

File formats::

    partition      SPRT1 <h> <w> <n_regions> <hash>\\n + uint32 LE labels
    scalar field   SSFD1 <h> <w> <hash>\\n + float64 LE values
    hierarchy      canonical JSON; level partitions stored alongside by hash
    region graph   canonical JSON
"""

from dataclasses import dataclass, field as dc_field
import math
from pathlib import Path
import re

import numpy as np

from ._canon import canonical_json, load_json_bytes, sha256_hex
from .errors import FormatError, IntegrityError

DEFAULT_BOUNDARY_BITS = 2.0
DEFAULT_VARIANCE_FLOOR = 1e-6
MEAN_BITS = 32

_LABEL_DTYPE = np.dtype("<u4")
_SCALAR_DTYPE = np.dtype("<f8")


def _readonly(arr):
    arr = np.ascontiguousarray(arr)
    if arr.flags.writeable:
        arr = arr.copy()
        arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class Partition:
    """Assignment of one region id per pixel of an ``height x width`` grid."""

    labels: np.ndarray
    n_regions: int = dc_field(init=False)

    def __post_init__(self):
        arr = np.asarray(self.labels)
        if arr.ndim != 2 or arr.size == 0:
            raise ValueError(f"partition labels must be a non-empty 2-D array, got {arr.shape}")
        if not np.issubdtype(arr.dtype, np.integer):
            if not np.all(np.equal(np.mod(arr, 1), 0)):
                raise ValueError("partition labels must be integers")
        if arr.min() < 0 or arr.max() > np.iinfo(np.uint32).max:
            raise ValueError("partition labels must fit in uint32")
        arr = _readonly(arr.astype(_LABEL_DTYPE))
        object.__setattr__(self, "labels", arr)
        object.__setattr__(self, "n_regions", int(np.unique(arr).size))

    @property
    def height(self):
        return self.labels.shape[0]

    @property
    def width(self):
        return self.labels.shape[1]

    @property
    def shape(self):
        return self.labels.shape

    @property
    def is_canonical(self) -> bool:
        return np.array_equal(self.labels, _canonical_labels(self.labels))

    def __eq__(self, other):
        if not isinstance(other, Partition):
            return NotImplemented
        return np.array_equal(self.labels, other.labels)

    def __hash__(self):
        return hash((self.shape, self.labels.tobytes()))

    def __repr__(self):
        return f"Partition({self.height}x{self.width}, n_regions={self.n_regions})"

    @classmethod
    def one_cell(cls, height, width):
        return cls(np.zeros((height, width), dtype=_LABEL_DTYPE))

    @classmethod
    def singletons(cls, height, width):
        return cls(np.arange(height * width, dtype=_LABEL_DTYPE).reshape(height, width))


def _canonical_labels(labels):
    flat = labels.ravel()
    uniq, first, inverse = np.unique(flat, return_index=True, return_inverse=True)
    rank = np.empty(uniq.size, dtype=_LABEL_DTYPE)
    rank[np.argsort(first, kind="stable")] = np.arange(uniq.size, dtype=_LABEL_DTYPE)
    return rank[inverse.ravel()].reshape(labels.shape)


def relabel_canonical(p: Partition) -> Partition:
    """Renumber regions by first occurrence in row-major order."""
    if not isinstance(p, Partition):
        p = Partition(p)
    if p.is_canonical:
        return p
    return Partition(_canonical_labels(p.labels))


def _check_same_shape(a, b):
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")


def is_refinement(fine: Partition, coarse: Partition) -> bool:
    """True iff every region of ``fine`` lies inside a single region of ``coarse``."""
    _check_same_shape(fine, coarse)
    pairs = np.unique(np.stack([fine.labels.ravel(), coarse.labels.ravel()]), axis=1)
    return pairs.shape[1] == fine.n_regions


@dataclass(frozen=True, eq=False)
class Hierarchy:
    """Chain of partitions from finest (index 0) to coarsest.

    ``merge_log`` entries are ``(level, (region_a, region_b), energy_delta)``
    where ``level`` is the index of the first recorded level showing the
    merge and the region ids are the smallest raster index of each region.
    """

    levels: tuple
    merge_log: tuple = ()

    def __post_init__(self):
        levels = tuple(relabel_canonical(p) for p in self.levels)
        if not levels:
            raise ValueError("hierarchy needs at least one level")
        for a, b in zip(levels, levels[1:]):
            _check_same_shape(a, b)
            if not b.n_regions < a.n_regions:
                raise ValueError("region counts must strictly decrease along the hierarchy")
            if not is_refinement(a, b):
                raise ValueError("each hierarchy level must refine the next")
        log = tuple((int(lv), (int(pair[0]), int(pair[1])), float(d))
                    for lv, pair, d in self.merge_log)
        object.__setattr__(self, "levels", levels)
        object.__setattr__(self, "merge_log", log)

    @property
    def shape(self):
        return self.levels[0].shape

    def __len__(self):
        return len(self.levels)

    def __repr__(self):
        counts = [p.n_regions for p in self.levels]
        return f"Hierarchy({len(self.levels)} levels, n_regions={counts})"


def coarsen(h: Hierarchy, level: int) -> Partition:
    if not 0 <= level < len(h.levels):
        raise IndexError(f"level {level} out of range for hierarchy with {len(h.levels)} levels")
    return relabel_canonical(h.levels[level])


@dataclass(frozen=True)
class RegionNode:
    region_id: int
    pixel_count: int
    mean: tuple
    bbox: tuple  # (row_min, col_min, row_max, col_max), inclusive


@dataclass(frozen=True, eq=False)
class RegionGraph:
    height: int
    width: int
    channels: int
    nodes: tuple
    edges: dict  # (a, b) with a < b -> shared boundary length in pixel edges

    def __post_init__(self):
        edges = {}
        for (a, b), length in self.edges.items():
            if a == b:
                raise ValueError("region graph cannot contain self loops")
            edges[(min(a, b), max(a, b))] = int(length)
        object.__setattr__(self, "edges", dict(sorted(edges.items())))
        object.__setattr__(self, "nodes", tuple(sorted(self.nodes, key=lambda n: n.region_id)))

    def neighbours(self, region_id):
        out = []
        for a, b in self.edges:
            if a == region_id:
                out.append(b)
            elif b == region_id:
                out.append(a)
        return sorted(out)

    def __eq__(self, other):
        if not isinstance(other, RegionGraph):
            return NotImplemented
        return _graph_doc(self) == _graph_doc(other)

    def __repr__(self):
        return f"RegionGraph({len(self.nodes)} nodes, {len(self.edges)} edges)"


@dataclass(frozen=True, eq=False)
class ScalarStructureField:
    """One value in [0, 1] per pixel."""

    values: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=np.float64)
        if arr.ndim != 2 or arr.size == 0:
            raise ValueError("scalar structure field must be a non-empty 2-D array")
        if not np.all(np.isfinite(arr)) or arr.min() < 0.0 or arr.max() > 1.0:
            raise ValueError("scalar structure field values must lie in [0, 1]")
        object.__setattr__(self, "values", _readonly(arr.astype(_SCALAR_DTYPE)))

    @property
    def shape(self):
        return self.values.shape

    def __eq__(self, other):
        if not isinstance(other, ScalarStructureField):
            return NotImplemented
        return self.shape == other.shape and self.values.tobytes() == other.values.tobytes()

    def __repr__(self):
        return f"ScalarStructureField({self.shape[0]}x{self.shape[1]})"


def pixel_edge_pairs(labels):
    """Label pairs across every horizontal and vertical pixel edge."""
    h_a, h_b = labels[:, :-1].ravel(), labels[:, 1:].ravel()
    v_a, v_b = labels[:-1, :].ravel(), labels[1:, :].ravel()
    return np.concatenate([h_a, v_a]), np.concatenate([h_b, v_b])


def boundary_length(p: Partition) -> int:
    """Number of 4-neighbour pixel edges whose endpoints lie in different regions."""
    a, b = pixel_edge_pairs(p.labels)
    return int(np.count_nonzero(a != b))


def _check_field_partition(field, p):
    if field.shape != p.shape:
        raise ValueError(f"dimension mismatch: field {field.shape} vs partition {p.shape}")


def region_graph(field, p: Partition) -> RegionGraph:
    """Region adjacency graph with exact per-region channel means."""
    _check_field_partition(field, p)
    p = relabel_canonical(p)
    labels = p.labels
    n = p.n_regions
    flat = labels.ravel().astype(np.int64)
    counts = np.bincount(flat, minlength=n)
    values = field.as_float64().reshape(field.channels, -1)
    nodes = []
    rows, cols = np.indices(labels.shape)
    rows, cols = rows.ravel(), cols.ravel()
    rmin = np.full(n, np.iinfo(np.int64).max)
    cmin = rmin.copy()
    rmax = np.full(n, -1)
    cmax = rmax.copy()
    np.minimum.at(rmin, flat, rows)
    np.minimum.at(cmin, flat, cols)
    np.maximum.at(rmax, flat, rows)
    np.maximum.at(cmax, flat, cols)
    order = np.argsort(flat, kind="stable")
    splits = np.cumsum(counts)[:-1]
    for r, idx in enumerate(np.split(order, splits)):
        mean = tuple(math.fsum(values[c, idx]) / counts[r] for c in range(field.channels))
        nodes.append(RegionNode(r, int(counts[r]), mean,
                                (int(rmin[r]), int(cmin[r]), int(rmax[r]), int(cmax[r]))))
    a, b = pixel_edge_pairs(labels)
    cross = a != b
    lo = np.minimum(a[cross], b[cross]).astype(np.int64)
    hi = np.maximum(a[cross], b[cross]).astype(np.int64)
    edges = {}
    if lo.size:
        keys, lengths = np.unique(lo * n + hi, return_counts=True)
        for key, length in zip(keys.tolist(), lengths.tolist()):
            edges[(key // n, key % n)] = length
    return RegionGraph(p.height, p.width, field.channels, tuple(nodes), edges)


def description_length_terms(field, p: Partition, boundary_bits=DEFAULT_BOUNDARY_BITS,
                             variance_floor=DEFAULT_VARIANCE_FLOOR):
    """Return ``(model_bits, data_bits)`` of the two-part code for ``p``.

    The model part pays ``MEAN_BITS`` per region and channel plus
    ``boundary_bits`` per boundary pixel edge; the data part codes residuals
    with a per-region, per-channel Gaussian.
    """
    _check_field_partition(field, p)
    k = field.channels
    model = p.n_regions * MEAN_BITS * k + boundary_length(p) * boundary_bits
    flat = relabel_canonical(p).labels.ravel().astype(np.int64)
    n = int(flat.max()) + 1
    counts = np.bincount(flat, minlength=n).astype(np.float64)
    values = field.as_float64().reshape(k, -1)
    data = 0.0
    for c in range(k):
        v = values[c]
        means = np.bincount(flat, weights=v, minlength=n) / counts
        resid = v - means[flat]
        var = np.bincount(flat, weights=resid * resid, minlength=n) / counts
        per_pixel = 0.5 * np.log2(2 * math.pi * math.e * (var + variance_floor))
        data += math.fsum(counts * per_pixel)
    return float(model), float(data)


def description_length(field, p: Partition, boundary_bits=DEFAULT_BOUNDARY_BITS,
                       variance_floor=DEFAULT_VARIANCE_FLOOR) -> float:
    model, data = description_length_terms(field, p, boundary_bits, variance_floor)
    return model + data


# -- serialization ----------------------------------------------------------

_SPRT_RE = re.compile(rb"^SPRT1 (\d+) (\d+) (\d+) ([0-9a-f]{64})$")
_SSFD_RE = re.compile(rb"^SSFD1 (\d+) (\d+) ([0-9a-f]{64})$")


def _partition_hash(p):
    head = f"SPRT1 {p.height} {p.width} {p.n_regions}\n".encode("ascii")
    return sha256_hex(head + p.labels.tobytes())


def _scalar_hash(s):
    head = f"SSFD1 {s.shape[0]} {s.shape[1]}\n".encode("ascii")
    return sha256_hex(head + s.values.tobytes())


def _hierarchy_doc(h):
    return {
        "type": "hierarchy",
        "height": h.shape[0],
        "width": h.shape[1],
        "levels": [product_hash(p) for p in h.levels],
        "n_regions": [p.n_regions for p in h.levels],
        "merge_log": [[lv, a, b, d] for lv, (a, b), d in h.merge_log],
    }


def _graph_doc(g):
    return {
        "type": "region_graph",
        "height": g.height,
        "width": g.width,
        "channels": g.channels,
        "nodes": [{"id": n.region_id, "count": n.pixel_count, "mean": list(n.mean),
                   "bbox": list(n.bbox)} for n in g.nodes],
        "edges": [[a, b, length] for (a, b), length in sorted(g.edges.items())],
    }


def product_type(s) -> str:
    if isinstance(s, Partition):
        return "partition"
    if isinstance(s, Hierarchy):
        return "hierarchy"
    if isinstance(s, RegionGraph):
        return "region_graph"
    if isinstance(s, ScalarStructureField):
        return "scalar_field"
    raise TypeError(f"not a structural product: {type(s).__name__}")


def product_hash(s) -> str:
    kind = product_type(s)
    if kind == "partition":
        if not s.is_canonical:
            raise ValueError("product_hash requires a canonical partition; call relabel_canonical")
        return _partition_hash(s)
    if kind == "scalar_field":
        return _scalar_hash(s)
    if kind == "hierarchy":
        return sha256_hex(canonical_json(_hierarchy_doc(s)))
    return sha256_hex(canonical_json(_graph_doc(s)))


def product_bytes(s) -> bytes:
    """Main file contents for ``s`` (hierarchy levels are separate attachments)."""
    kind = product_type(s)
    digest = product_hash(s)
    if kind == "partition":
        head = f"SPRT1 {s.height} {s.width} {s.n_regions} {digest}\n"
        return head.encode("ascii") + s.labels.tobytes()
    if kind == "scalar_field":
        head = f"SSFD1 {s.shape[0]} {s.shape[1]} {digest}\n"
        return head.encode("ascii") + s.values.tobytes()
    if kind == "hierarchy":
        return canonical_json(_hierarchy_doc(s))
    return canonical_json(_graph_doc(s))


_SUFFIX = {"partition": ".sprt", "scalar_field": ".ssfd",
           "hierarchy": ".hier.json", "region_graph": ".rgraph.json"}


def attachment_name(s) -> str:
    return product_hash(s) + _SUFFIX[product_type(s)]


def save_product(s, path) -> list:
    """Write ``s`` to ``path``; hierarchy levels go next to it, named by hash.

    Returns every path written.
    """
    path = Path(path)
    written = []
    if isinstance(s, Hierarchy):
        for p in s.levels:
            lp = path.parent / attachment_name(p)
            lp.write_bytes(product_bytes(p))
            written.append(lp)
    path.write_bytes(product_bytes(s))
    written.insert(0, path)
    return written


def _split_header(data):
    nl = data.find(b"\n")
    if nl < 0:
        raise FormatError("product file has no header line")
    return data[:nl], data[nl + 1:]


def partition_from_bytes(data: bytes) -> Partition:
    head, payload = _split_header(data)
    m = _SPRT_RE.match(head)
    if m is None:
        raise FormatError(f"malformed partition header: {head[:80]!r}")
    h, w, n = (int(g) for g in m.group(1, 2, 3))
    stored = m.group(4).decode("ascii")
    if len(payload) != h * w * _LABEL_DTYPE.itemsize or h * w == 0:
        raise FormatError("partition payload size does not match header")
    p = Partition(np.frombuffer(payload, dtype=_LABEL_DTYPE).reshape(h, w))
    if p.n_regions != n:
        raise FormatError(f"header declares {n} regions, payload has {p.n_regions}")
    if not p.is_canonical:
        raise FormatError("stored partition is not in canonical form")
    if _partition_hash(p) != stored:
        raise IntegrityError("partition hash mismatch")
    return p


def scalar_field_from_bytes(data: bytes) -> ScalarStructureField:
    head, payload = _split_header(data)
    m = _SSFD_RE.match(head)
    if m is None:
        raise FormatError(f"malformed scalar field header: {head[:80]!r}")
    h, w = int(m.group(1)), int(m.group(2))
    if len(payload) != h * w * _SCALAR_DTYPE.itemsize or h * w == 0:
        raise FormatError("scalar field payload size does not match header")
    try:
        s = ScalarStructureField(np.frombuffer(payload, dtype=_SCALAR_DTYPE).reshape(h, w))
    except ValueError as exc:
        raise FormatError(str(exc)) from None
    if _scalar_hash(s) != m.group(3).decode("ascii"):
        raise IntegrityError("scalar field hash mismatch")
    return s


def _graph_from_doc(doc):
    nodes = tuple(RegionNode(int(n["id"]), int(n["count"]), tuple(float(v) for v in n["mean"]),
                             tuple(int(v) for v in n["bbox"])) for n in doc["nodes"])
    edges = {(int(a), int(b)): int(length) for a, b, length in doc["edges"]}
    return RegionGraph(int(doc["height"]), int(doc["width"]), int(doc["channels"]), nodes, edges)


def load_product(path, attachments_dir=None):
    """Load and verify a product file written by :func:`save_product`.

    Raises ``FormatError`` for malformed or non-canonical bytes and
    ``IntegrityError`` when a stored hash disagrees with the content.
    """
    path = Path(path)
    data = path.read_bytes()
    if data.startswith(b"SPRT1 "):
        return partition_from_bytes(data)
    if data.startswith(b"SSFD1 "):
        return scalar_field_from_bytes(data)
    try:
        doc = load_json_bytes(data)
    except (UnicodeDecodeError, ValueError):
        raise FormatError(f"unrecognized product file: {path.name}") from None
    if not isinstance(doc, dict) or doc.get("type") not in ("hierarchy", "region_graph"):
        raise FormatError(f"unrecognized product document: {path.name}")
    try:
        if doc["type"] == "region_graph":
            product = _graph_from_doc(doc)
        else:
            base = Path(attachments_dir) if attachments_dir else path.parent
            levels = []
            for digest in doc["levels"]:
                lp = base / (digest + _SUFFIX["partition"])
                if not lp.is_file():
                    raise FormatError(f"missing hierarchy level attachment {lp.name}")
                level = partition_from_bytes(lp.read_bytes())
                if _partition_hash(level) != digest:
                    raise IntegrityError(f"hierarchy level {digest[:12]} hash mismatch")
                levels.append(level)
            log = [(lv, (a, b), d) for lv, a, b, d in doc["merge_log"]]
            product = Hierarchy(tuple(levels), tuple(log))
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, (FormatError, IntegrityError)):
            raise
        raise FormatError(f"malformed {doc.get('type')} document: {exc}") from None
    if product_bytes(product) != data:
        raise IntegrityError(f"{doc['type']} document is not the canonical serialization "
                             "of its content")
    return product
