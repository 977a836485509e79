"""Procedural chair-like dataset with exact point correspondence.

Each part category has a fixed template of ``p`` points laid out on a
grid, plus a bank of smooth displacement fields. A part instance is
``template + fields @ theta`` with ``theta ~ N(0, I)``, so the per-category
shape manifold is an affine subspace of known dimension (the field count).
That gives the downstream linear-model fits an exact oracle: the sample
covariance has rank equal to ``parameter_count`` and full-rank encodings
reconstruct training parts exactly.

Coordinates are quantized to float32 at generation time so the binary
dataset format (float32 storage) round-trips bit-exactly.

On-disk layout (see docs/formats.md): a directory with ``manifest.json``
plus one little-endian binary file per shape:
``[part_count: uint32][per part: category_id uint32, p*3 float32]``.
"""

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import geometry, kernels
from .errors import DataFormatError, ValidationError

MANIFEST_NAME = "manifest.json"
TRUTH_NAME = "truth.json"
DATASET_FORMAT = "partgen-dataset"
DATASET_VERSION = 1


@dataclass(frozen=True)
class PartCategory:
    """One semantic part category of a shape family."""

    id: int
    name: str
    template: np.ndarray  # (p, 3) float64, float32-exact values
    fields: np.ndarray    # (k, p, 3) float64 displacement basis, amplitude included
    presence: float       # probability the part appears in a shape

    @property
    def parameter_count(self):
        return self.fields.shape[0]


@dataclass(frozen=True)
class ShapeFamily:
    name: str
    p: int
    categories: tuple

    @property
    def m(self):
        return len(self.categories)

    def category(self, cid):
        for cat in self.categories:
            if cat.id == cid:
                return cat
        raise ValidationError(f"unknown category id {cid}")


@dataclass(frozen=True)
class SegmentedShape:
    """A shape as a list of (category_id, (p, 3) points), sorted by id."""

    shape_id: str
    parts: tuple  # of (category_id, ndarray)

    def part(self, cid):
        for c, pts in self.parts:
            if c == cid:
                return pts
        raise ValidationError(f"shape {self.shape_id} has no category {cid}")

    @property
    def category_ids(self):
        return tuple(c for c, _ in self.parts)

    def __eq__(self, other):
        if not isinstance(other, SegmentedShape):
            return NotImplemented
        return (
            self.shape_id == other.shape_id
            and self.category_ids == other.category_ids
            and all(np.array_equal(a[1], b[1]) for a, b in zip(self.parts, other.parts))
        )

    def __hash__(self):
        return hash(self.shape_id)


@dataclass
class Dataset:
    name: str
    m: int
    p: int
    category_names: dict  # id -> name
    shapes: list          # of SegmentedShape
    truth: dict | None = None  # shape_id -> {category_id: theta list}

    def __len__(self):
        return len(self.shapes)

    def __iter__(self):
        return iter(self.shapes)


def make_shape(shape_id, parts, m, p):
    """Validate and build a SegmentedShape."""
    if len(parts) > m:
        raise ValidationError(f"shape {shape_id} has more than {m} parts")
    cids = [c for c, _ in parts]
    if len(set(cids)) != len(cids):
        raise ValidationError(f"shape {shape_id} has duplicate category ids")
    checked = []
    for cid, pts in sorted(parts, key=lambda t: t[0]):
        pts = geometry.as_cloud(pts, f"part {cid}")
        if pts.shape[0] != p:
            raise ValidationError(
                f"part {cid} of shape {shape_id} has {pts.shape[0]} points, expected {p}")
        checked.append((int(cid), pts))
    return SegmentedShape(shape_id=shape_id, parts=tuple(checked))


# ---------------------------------------------------------------------------
# Default family: seat / back / leg-group / armrest-group


def _quantize(arr):
    """Round to the nearest float32 so storage round-trips exactly."""
    return arr.astype(np.float32).astype(np.float64)


def _irregular(n, lo, hi, phase=0.0):
    """Deterministic irregularly spaced coordinates in [lo, hi].

    Regular lattices alias under the family's coherent translations (a
    shifted copy re-registers one step over, a stable wrong ICP fixed
    point); uneven gaps break that self-similarity.
    """
    gaps = 1.0 + 0.65 * np.cos(2.399 * np.arange(n - 1) + phase)
    pos = np.concatenate([[0.0], np.cumsum(gaps)])
    return lo + (hi - lo) * pos / pos[-1]


def _grid(nu, nv, phase=0.0):
    u = _irregular(nu, -0.5, 0.5, phase)
    v = _irregular(nv, -0.5, 0.5, phase + 1.1)
    uu, vv = np.meshgrid(u, v, indexing="ij")
    return uu.ravel(), vv.ravel()


def _seat_template():
    # 16x16 grid on a gently domed slab at z ~ 0 (curvature keeps the
    # z-direction deformation fields linearly independent)
    x, y = _grid(16, 16)
    z = 0.04 * np.cos(np.pi * x) * np.cos(np.pi * y)
    return np.column_stack([x, y, z])


def _back_template():
    # 16x16 grid on a slightly curved vertical slab behind the seat
    x, v = _grid(16, 16, phase=0.7)
    z = v + 0.55  # spans [0.05, 1.05]
    y = -0.5 + 0.04 * np.cos(np.pi * x) * np.cos(np.pi * v)
    return np.column_stack([x, y, z])


def _leg_template():
    # four legs, 64 points each: 16 heights x 4 cross offsets; the cross
    # radius is kept comparable to the grid spacing so typical family
    # displacements cannot rotate a ring onto its neighbor
    centers = [(-0.45, -0.45), (0.45, -0.45), (-0.45, 0.45), (0.45, 0.45)]
    pts = []
    heights = _irregular(16, -0.75, -0.02, phase=0.3)
    base = np.array([0.0, 0.5, 1.0, 1.5]) * np.pi
    for li, (cx, cy) in enumerate(centers):
        for k, z in enumerate(heights):
            for a in base + 0.7 * k + 0.4 * li:   # twisted rings, no two alike
                pts.append((cx + 0.055 * np.cos(a), cy + 0.055 * np.sin(a), z))
    return np.array(pts)


def _armrest_template():
    # two rails, 128 points each: 16 along y x 8 cross offsets
    pts = []
    ys = _irregular(16, -0.45, 0.45, phase=1.9)
    base = np.arange(8) * (np.pi / 4.0)
    for si, cx in enumerate((-0.5, 0.5)):
        for k, y in enumerate(ys):
            zc = 0.26 + 0.18 * (y + 0.45) / 0.9   # rails rise toward the back
            for a in base + 0.55 * k + 0.9 * si:  # twisted rings
                pts.append((cx + 0.06 * np.cos(a), y, zc + 0.06 * np.sin(a)))
    return np.array(pts)


def _bump(template, center, radius, direction, amp):
    w = np.exp(-np.sum((template - center) ** 2, axis=1) / (2.0 * radius**2))
    return amp * w[:, None] * np.asarray(direction, dtype=np.float64)[None, :]


def _wave(template, coord_axis, freq, direction):
    """Displacement along ``direction`` modulated by cos(freq*pi*u), with u the
    normalized template coordinate along ``coord_axis``."""
    lo = template[:, coord_axis].min()
    hi = template[:, coord_axis].max()
    u = (template[:, coord_axis] - lo) / (hi - lo)
    f = np.zeros_like(template)
    f[:, direction] = np.cos(freq * np.pi * u)
    return f


# Per-field standard deviations of the flattened 3p displacement, applied to
# the orthonormalized field bank. Kept flat-ish so no family mode falls near
# the default completion ridge, and small enough that per-point displacements
# stay below the template point spacing (keeps nearest-point assignment exact).
_FIELD_STDS = np.array([0.45, 0.42, 0.39, 0.36, 0.33, 0.31, 0.29, 0.27])


def _category_fields(template, amplitude):
    """Eight displacement fields: 3 axis scales, height shift, lean, 3 waves.

    The raw fields are orthonormalized (QR on the flattened field bank) and
    rescaled by ``_FIELD_STDS * amplitude``, so instances are linear in the
    parameter vector, the family rank equals the field count, and the
    population covariance spectrum is exactly ``(_FIELD_STDS * amplitude)^2``.
    The wave fields carry distinct spatial frequencies so the bank stays
    well-conditioned when restricted to a contiguous crop of the part.
    """
    c = template.mean(axis=0)
    rel = template - c
    zeros = np.zeros_like(template)
    fields = []
    for axis in (0, 1, 2):
        f = zeros.copy()
        f[:, axis] = rel[:, axis]
        fields.append(f)
    shift = zeros.copy()
    shift[:, 2] = 1.0
    fields.append(shift)
    lean = zeros.copy()
    lean[:, 0] = rel[:, 2]
    fields.append(lean)
    ext = template.max(axis=0) - template.min(axis=0)
    # modulation coordinates: score each axis by coarse-bin coverage times
    # extent, penalized by its largest value gap. Clustered axes (leg
    # columns, rail pairs) would make a wave piecewise-constant and
    # collinear with the scale fields on single-structure crops.
    scores = np.zeros(3)
    for k in range(3):
        if ext[k] <= 0:
            continue
        vals = np.sort(np.unique(np.round(template[:, k] / (ext[k] / 48.0))))
        max_gap = np.max(np.diff(vals)) / 48.0 if vals.size > 1 else 1.0
        scores[k] = vals.size * ext[k] * max(0.0, 1.0 - max_gap)
    ranked = np.argsort(-scores)
    u_axis = int(ranked[0])
    # second modulation axis only if it is genuinely continuous too
    v_axis = int(ranked[1]) if scores[ranked[1]] > 0.5 * scores[ranked[0]] else u_axis
    thin = int(np.argsort(ext)[0])
    d1 = thin if thin != u_axis else int(np.argsort(ext)[1])
    d2 = next(k for k in range(3) if k not in (u_axis, d1))
    # frequencies start at 3 so every wave keeps over a full period inside
    # any contiguous 40% window (lower frequencies degenerate to near-linear
    # trends there, collinear with the affine fields)
    db = d2 if d2 != v_axis else d1
    fields.append(_wave(template, u_axis, 3, d1))
    fields.append(_wave(template, v_axis, 4, db))
    fields.append(_wave(template, u_axis, 5, u_axis))
    bank = np.stack([f.reshape(-1) for f in fields])       # (8, 3p)
    bank /= np.linalg.norm(bank, axis=1, keepdims=True)
    # symmetric (Loewdin) orthogonalization: keeps each orthonormal field as
    # close as possible to its raw counterpart, preserving their distinct
    # spatial frequencies (sequential QR would concentrate residual patterns)
    gram = bank @ bank.T
    w, v = np.linalg.eigh(gram)
    inv_sqrt = (v / np.sqrt(w)[None, :]) @ v.T
    qmat = (inv_sqrt @ bank).T                              # orthonormal columns
    # orient deterministically: largest-magnitude entry positive
    flip = qmat[np.argmax(np.abs(qmat), axis=0), np.arange(qmat.shape[1])] < 0
    qmat[:, flip] *= -1.0
    scaled = qmat * (_FIELD_STDS * amplitude)[None, :]
    return np.ascontiguousarray(scaled.T.reshape(len(fields), *template.shape))


def default_family(p=256, amplitude=0.5, name="chairs"):
    """The default 4-category family (seat, back, leg-group, armrest-group).

    ``amplitude`` scales every deformation field; 0 collapses the family to
    its templates. Only p=256 is supported by the built-in templates.
    """
    if p != 256:
        raise ValidationError("default family templates are built for p=256")
    specs = [
        ("seat", _seat_template(), 1.0),
        ("back", _back_template(), 0.9),
        ("leg-group", _leg_template(), 1.0),
        ("armrest-group", _armrest_template(), 0.4),
    ]
    cats = []
    for cid, (cname, template, presence) in enumerate(specs):
        template = _quantize(template)
        fields = _category_fields(template, amplitude)
        cats.append(PartCategory(id=cid, name=cname, template=template,
                                 fields=fields, presence=presence))
    return ShapeFamily(name=name, p=p, categories=tuple(cats))


def generate_dataset(family, n, seed, id_prefix="shape"):
    """Draw ``n`` shapes from the family, deterministic per seed.

    Per-shape draw order is fixed: one presence uniform per category, then
    one parameter vector per category (drawn whether or not the part is
    present, so presence never shifts the stream).
    """
    if not isinstance(family, ShapeFamily):
        raise ValidationError("family must be a ShapeFamily")
    if n < 2:
        raise ValidationError("need n >= 2 shapes")
    rng = np.random.default_rng(seed)
    shapes = []
    truth = {}
    for i in range(n):
        sid = f"{id_prefix}_{i:05d}"
        pres = rng.uniform(size=family.m)
        thetas = [rng.standard_normal(cat.parameter_count)
                  for cat in family.categories]
        present = [u < cat.presence for cat, u in zip(family.categories, pres)]
        if sum(present) < 2:
            # shapes hold at least two parts: force the most reliable categories
            for j in np.argsort([-cat.presence for cat in family.categories]):
                present[j] = True
                if sum(present) >= 2:
                    break
        parts = []
        truth[sid] = {}
        for cat, on, theta in zip(family.categories, present, thetas):
            if not on:
                continue
            pts = cat.template + np.tensordot(theta, cat.fields, axes=1)
            parts.append((cat.id, _quantize(pts)))
            truth[sid][cat.id] = theta.tolist()
        shapes.append(make_shape(sid, parts, family.m, family.p))
    names = {cat.id: cat.name for cat in family.categories}
    return Dataset(name=family.name, m=family.m, p=family.p,
                   category_names=names, shapes=shapes, truth=truth)


# ---------------------------------------------------------------------------
# On-disk format


def write_dataset(dataset, path):
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    index = []
    for shape in dataset.shapes:
        fname = f"{shape.shape_id}.bin"
        blob = bytearray(struct.pack("<I", len(shape.parts)))
        for cid, pts in shape.parts:
            blob += struct.pack("<I", cid)
            blob += pts.astype("<f4").tobytes()
        (path / fname).write_bytes(bytes(blob))
        index.append({"id": shape.shape_id, "file": fname})
    manifest = {
        "format": DATASET_FORMAT,
        "version": DATASET_VERSION,
        "name": dataset.name,
        "m": dataset.m,
        "p": dataset.p,
        "categories": [{"id": cid, "name": dataset.category_names[cid]}
                       for cid in sorted(dataset.category_names)],
        "shapes": index,
    }
    (path / MANIFEST_NAME).write_text(json.dumps(manifest, indent=1, sort_keys=True))
    if dataset.truth is not None:
        truth = {sid: {str(c): v for c, v in d.items()}
                 for sid, d in dataset.truth.items()}
        (path / TRUTH_NAME).write_text(json.dumps(truth, sort_keys=True))
    return path


def read_dataset(path):
    path = Path(path)
    mpath = path / MANIFEST_NAME
    if not mpath.is_file():
        raise DataFormatError(f"missing {MANIFEST_NAME} in {path}")
    try:
        manifest = json.loads(mpath.read_text())
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"malformed manifest: {exc}") from exc
    for key in ("format", "m", "p", "categories", "shapes"):
        if key not in manifest:
            raise DataFormatError(f"manifest missing key {key!r}")
    if manifest["format"] != DATASET_FORMAT:
        raise DataFormatError(f"not a {DATASET_FORMAT} manifest")
    m = int(manifest["m"])
    p = int(manifest["p"])
    names = {int(c["id"]): c["name"] for c in manifest["categories"]}
    shapes = []
    for entry in manifest["shapes"]:
        raw = (path / entry["file"])
        if not raw.is_file():
            raise DataFormatError(f"missing shape file {entry['file']}")
        shapes.append(_parse_shape(raw.read_bytes(), entry["id"], m, p, names))
    truth = None
    tpath = path / TRUTH_NAME
    if tpath.is_file():
        truth = {sid: {int(c): v for c, v in d.items()}
                 for sid, d in json.loads(tpath.read_text()).items()}
    return Dataset(name=manifest.get("name", path.name), m=m, p=p,
                   category_names=names, shapes=shapes, truth=truth)


def _parse_shape(blob, shape_id, m, p, names):
    if len(blob) < 4:
        raise DataFormatError(f"shape {shape_id}: truncated file")
    (count,) = struct.unpack_from("<I", blob, 0)
    off = 4
    rec = 4 + p * 3 * 4
    if len(blob) != 4 + count * rec:
        got = (len(blob) - 4 - count * 4) // 12 if count else 0
        raise DataFormatError(
            f"shape {shape_id}: file length does not match {count} parts of "
            f"{p} points (found ~{got} points total)")
    parts = []
    for _ in range(count):
        (cid,) = struct.unpack_from("<I", blob, off)
        if cid not in names:
            raise DataFormatError(f"shape {shape_id}: unknown category id {cid}")
        pts = np.frombuffer(blob, dtype="<f4", count=p * 3, offset=off + 4)
        parts.append((cid, pts.reshape(p, 3).astype(np.float64)))
        off += rec
    return make_shape(shape_id, parts, m, p)


# ---------------------------------------------------------------------------
# Correspondence fallback for external (unordered) part clouds


def correspond_by_template(raw, category):
    """Map an unordered part cloud onto the category's template indexing.

    A single rigid alignment (centroid translation + isotropic scale match)
    brings the raw cloud into the template frame; output point i is then the
    aligned raw point nearest to template point i (raw points may be reused).
    The result lives in the aligned/template frame.
    """
    raw = geometry.as_cloud(raw, "raw")
    r = geometry.rms_radius(raw)
    if r == 0.0:
        raise ValidationError("degenerate raw cloud: zero spread")
    template = category.template
    s = geometry.rms_radius(template) / r
    aligned = template.mean(axis=0) + s * (raw - raw.mean(axis=0))
    idx, _ = kernels.nn_sqdist(template, aligned)
    return aligned[idx]


def crop_halfspace(cloud, fraction, direction):
    """Keep the ``fraction`` of points furthest along ``direction``.

    Used to build spatially contiguous partial observations for the
    completion experiments.
    """
    pts = geometry.as_cloud(cloud)
    d = np.asarray(direction, dtype=np.float64)
    d = d / np.linalg.norm(d)
    k = max(1, int(round(fraction * pts.shape[0])))
    proj = pts @ d
    order = np.argsort(-proj, kind="stable")
    keep = np.sort(order[:k])
    return pts[keep]
