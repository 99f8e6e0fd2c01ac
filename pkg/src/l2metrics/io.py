"""Field files.

Text format (JSON, one document per field)::

    {
      "format": "l2metrics-field",
      "version": 1,
      "n": 2,                        # fiber dimension
      "dims": [64, 64],              # grid shape, axis 0 = x
      "extent": [[-1, 1], [-1, 1]],  # fixed periodic box
      "gref": "identity",            # or one packed tensor per cell
      "data": [[a11, a12, a22], ...],# row-major cells, upper triangle row-major
      "mask": [false, ...]           # optional: deflated cells
    }

Floats are written as shortest round-trip decimals, so reading back a
written file reproduces every entry bit for bit.  The binary variant is an
``.npz`` archive with arrays ``n``, ``dims``, ``data``, optional ``gref`` and
``mask``.

Sequence manifests are JSON documents ``{"terms": [paths], "limit": path}``
with paths relative to the manifest.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from . import _linalg as la
from .field import EXTENT, GridDomain, SemimetricField

FORMAT_TAG = "l2metrics-field"


class FieldFormatError(ValueError):
    pass


def field_to_document(f: SemimetricField) -> dict:
    d = f.domain
    doc = {
        "format": FORMAT_TAG,
        "version": 1,
        "n": d.n,
        "dims": list(d.dims),
        "extent": [list(EXTENT)] * d.dim,
        "gref": "identity" if d.gref is None else la.pack(d.gref).reshape(-1, la.packed_size(d.n)).tolist(),
        "data": la.pack(f.cells).reshape(-1, la.packed_size(d.n)).tolist(),
    }
    if np.any(f.deflated_mask):
        doc["mask"] = f.deflated_mask.ravel().tolist()
    return doc


def _require(doc: dict, key: str):
    if key not in doc:
        raise FieldFormatError(f"missing key {key!r}")
    return doc[key]


def field_from_document(doc: dict) -> SemimetricField:
    if not isinstance(doc, dict):
        raise FieldFormatError("field document must be a JSON object")
    if doc.get("format", FORMAT_TAG) != FORMAT_TAG:
        raise FieldFormatError(f"unknown format tag {doc.get('format')!r}")
    n = int(_require(doc, "n"))
    dims = tuple(int(r) for r in _require(doc, "dims"))
    if n != len(dims):
        raise FieldFormatError(f"fiber dimension {n} does not match grid dimension {len(dims)}")
    extent = doc.get("extent", [list(EXTENT)] * len(dims))
    if [list(map(float, e)) for e in extent] != [list(EXTENT)] * len(dims):
        raise FieldFormatError("only the extent [-1, 1] per axis is supported")
    m = la.packed_size(n)
    cells = int(np.prod(dims))
    data = np.asarray(_require(doc, "data"), dtype=float)
    if data.shape != (cells, m):
        raise FieldFormatError(f"data must hold {cells} cells of {m} entries, got shape {data.shape}")
    gref = doc.get("gref", "identity")
    if isinstance(gref, str):
        if gref != "identity":
            raise FieldFormatError(f"unknown gref {gref!r}")
        domain = GridDomain(dims)
    else:
        g = np.asarray(gref, dtype=float)
        if g.shape != (cells, m):
            raise FieldFormatError(f"gref must hold {cells} cells of {m} entries")
        domain = GridDomain(dims, la.unpack(g, n).reshape(dims + (n, n)))
    tensors = la.unpack(data, n).reshape(dims + (n, n))
    f = SemimetricField(domain, tensors)
    if "mask" in doc:
        mask = np.asarray(doc["mask"], dtype=bool)
        if mask.size != cells:
            raise FieldFormatError("mask length does not match the grid")
        if not np.array_equal(mask.reshape(dims), f.deflated_mask):
            raise FieldFormatError("mask disagrees with the deflated cells of the data")
    return f


def write_field(f: SemimetricField, path, fmt: str | None = None) -> None:
    path = Path(path)
    fmt = fmt or ("binary" if path.suffix == ".npz" else "text")
    if fmt == "text":
        path.write_text(json.dumps(field_to_document(f)) + "\n")
    elif fmt == "binary":
        d = f.domain
        arrays = {"n": np.array(d.n), "dims": np.array(d.dims), "data": la.pack(f.cells).reshape(-1, la.packed_size(d.n))}
        if d.gref is not None:
            arrays["gref"] = la.pack(d.gref).reshape(-1, la.packed_size(d.n))
        if np.any(f.deflated_mask):
            arrays["mask"] = f.deflated_mask.ravel()
        with open(path, "wb") as fh:
            np.savez(fh, **arrays)
    else:
        raise ValueError(f"unknown format {fmt!r}")


def read_field(path) -> SemimetricField:
    path = Path(path)
    raw = path.read_bytes()
    if raw[:2] == b"PK":
        with np.load(path) as z:
            doc = {"n": int(z["n"]), "dims": z["dims"].tolist(), "data": z["data"]}
            if "gref" in z:
                doc["gref"] = z["gref"]
            if "mask" in z:
                doc["mask"] = z["mask"]
        return field_from_document(doc)
    try:
        doc = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FieldFormatError(f"{path}: not a field file ({exc})") from exc
    return field_from_document(doc)


def read_mask(path, dims: tuple[int, ...]) -> np.ndarray:
    """Mask file: JSON ``{"dims": [...], "mask": [row-major booleans]}``."""
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FieldFormatError(f"{path}: not a mask file ({exc})") from exc
    if tuple(doc.get("dims", ())) != tuple(dims):
        raise FieldFormatError(f"mask dims {doc.get('dims')} do not match the grid {list(dims)}")
    mask = np.asarray(_require(doc, "mask"), dtype=bool)
    if mask.size != int(np.prod(dims)):
        raise FieldFormatError("mask length does not match the grid")
    return mask.reshape(dims)


def write_mask(mask: np.ndarray, path) -> None:
    Path(path).write_text(json.dumps({"dims": list(mask.shape), "mask": mask.ravel().tolist()}) + "\n")


def read_manifest(path) -> tuple[list[SemimetricField], SemimetricField | None]:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise FieldFormatError(f"{path}: not a manifest ({exc})") from exc
    terms = [read_field(path.parent / t) for t in _require(doc, "terms")]
    limit = doc.get("limit")
    return terms, (read_field(path.parent / limit) if limit else None)


def write_manifest(path, term_files, limit_file=None) -> None:
    doc = {"terms": [str(t) for t in term_files]}
    if limit_file is not None:
        doc["limit"] = str(limit_file)
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")
