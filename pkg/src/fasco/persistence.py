"""Binary model and lookup-list files, JSON catalogs, line-delimited reports.

Binary layout (little-endian)::

    magic[8] | u32 format_version | u32 header_len | header (UTF-8 JSON)
    | payload | u32 crc32(everything before)

The header lists every array with its dtype, shape and byte offset into the
payload, so files load without any external schema.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
import zlib
from pathlib import Path

import numpy as np

from . import tinynn
from .calibration import LookupList, LookupStore
from .estimator import Dims, ModelParams
from .features import Catalog, Histogram, Vocabs, Vocabulary
from .metrics import ErrorSummary

MODEL_MAGIC = b"FASCOMDL"
LOOKUP_MAGIC = b"FASCOLKP"
FORMAT_VERSION = 1
LOOKUP_SUFFIX = ".lkp"


class ArtifactError(ValueError):
    pass


def _atomic_write(path, data: bytes | str):
    path = Path(path)
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, mode) as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _pack(magic: bytes, header: dict, arrays: list[np.ndarray]) -> bytes:
    payload, entries, off = [], [], 0
    for a in arrays:
        dt = "<f8" if a.dtype.kind == "f" else "<i8"
        raw = np.ascontiguousarray(a, dtype=dt).tobytes()
        entries.append({"dtype": dt, "shape": list(a.shape), "offset": off, "nbytes": len(raw)})
        payload.append(raw)
        off += len(raw)
    header = dict(header, arrays=entries)
    hb = json.dumps(header, sort_keys=True).encode()
    body = magic + struct.pack("<II", FORMAT_VERSION, len(hb)) + hb + b"".join(payload)
    return body + struct.pack("<I", zlib.crc32(body))


def _unpack(magic: bytes, blob: bytes) -> tuple[dict, list[np.ndarray]]:
    if len(blob) < len(magic) + 12:
        raise ArtifactError("file too short / truncated")
    if blob[: len(magic)] != magic:
        raise ArtifactError("bad magic bytes")
    version, hlen = struct.unpack_from("<II", blob, len(magic))
    if version != FORMAT_VERSION:
        raise ArtifactError(f"unsupported version {version}")
    body, (crc,) = blob[:-4], struct.unpack("<I", blob[-4:])
    if zlib.crc32(body) != crc:
        raise ArtifactError("checksum mismatch (corrupt or truncated file)")
    start = len(magic) + 8
    try:
        header = json.loads(body[start:start + hlen])
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ArtifactError(f"unreadable header: {e}") from None
    base = start + hlen
    arrays = []
    for e in header["arrays"]:
        n = int(np.prod(e["shape"])) if e["shape"] else 1
        if n * 8 != e["nbytes"] or base + e["offset"] + e["nbytes"] > len(body):
            raise ArtifactError("declared shape does not match stored array length")
        a = np.frombuffer(body, dtype=e["dtype"], count=n, offset=base + e["offset"])
        arrays.append(a.reshape(e["shape"]).astype(a.dtype.newbyteorder("=")))
    return header, arrays


def _read(path) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as e:
        raise ArtifactError(f"cannot read {path}: {e}") from None


# ---------------------------------------------------------------------------
# model


def _stack_spec(stack: tinynn.DenseStack) -> list[str]:
    return [L.act for L in stack.layers]


def save_model(params: ModelParams, path):
    named = params.named_parameters()
    for name, a in named:
        if not np.all(np.isfinite(a)):
            raise ArtifactError(f"parameter {name} is not finite")
    header = {
        "kind": "model",
        "dims": vars(params.dims),
        "vocabs": {"operators": params.vocabs.operators.entries,
                   "join_keys": params.vocabs.join_keys.entries},
        "normalizer": params.normalizer,
        "config": params.config,
        "names": [n for n, _ in named],
        "activations": {k: _stack_spec(getattr(params, k))
                        for k in ("backbone", "state_head", "cost_head")},
    }
    _atomic_write(path, _pack(MODEL_MAGIC, header, [a for _, a in named]))


def load_model(path) -> ModelParams:
    header, arrays = _unpack(MODEL_MAGIC, _read(path))
    if header.get("kind") != "model":
        raise ArtifactError("not a model artifact")
    named = dict(zip(header["names"], arrays))

    def stack(name):
        acts = header["activations"][name]
        try:
            return tinynn.DenseStack([tinynn.Layer(named[f"{name}.{i}.W"], named[f"{name}.{i}.b"], a)
                                      for i, a in enumerate(acts)])
        except (KeyError, ValueError) as e:
            raise ArtifactError(f"bad {name} tensors: {e}") from None

    v = header["vocabs"]
    vocabs = Vocabs(Vocabulary(v["operators"], 0), Vocabulary(v["join_keys"], 0, 1))
    params = ModelParams(
        op_embedding=tinynn.EmbeddingTable(named["op_embedding"]),
        joinkey_embedding=tinynn.EmbeddingTable(named["joinkey_embedding"]),
        backbone=stack("backbone"), state_head=stack("state_head"), cost_head=stack("cost_head"),
        dims=Dims(**header["dims"]), vocabs=vocabs, normalizer=header["normalizer"],
        config=header["config"],
    )
    if len(params.op_embedding) != len(vocabs.operators) or \
            len(params.joinkey_embedding) != len(vocabs.join_keys):
        raise ArtifactError("embedding rows do not match vocabulary sizes")
    return params


# ---------------------------------------------------------------------------
# lookup lists


def lookup_filename(pair_id) -> str:
    (ta, ka), (tb, kb) = pair_id
    return f"{ka}__{kb}{LOOKUP_SUFFIX}"


def save_lookup_list(ll: LookupList, path):
    header = {"kind": "lookup", "pair_id": [list(x) for x in ll.pair_id], "p": ll.p,
              "version": ll.version, "columns": list(ll.columns)}
    _atomic_write(path, _pack(LOOKUP_MAGIC, header, [ll.rows]))


def load_lookup_list(path) -> LookupList:
    header, (rows,) = _unpack(LOOKUP_MAGIC, _read(path))
    pid = tuple(tuple(x) for x in header["pair_id"])
    return LookupList(pid, tuple(header["columns"]), rows, header["p"], header["version"])


def save_lookup_store(store: LookupStore, directory):
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for ll in store:
        save_lookup_list(ll, d / lookup_filename(ll.pair_id))


def load_lookup_store(directory) -> LookupStore:
    d = Path(directory)
    if not d.is_dir():
        raise ArtifactError(f"lookup store {d} is not a directory")
    return LookupStore(load_lookup_list(p) for p in sorted(d.glob(f"*{LOOKUP_SUFFIX}")))


# ---------------------------------------------------------------------------
# catalog, tables, reports


def catalog_to_dict(cat: Catalog) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "tables": cat.tables,
        "columns": {c: {"edges": h.edges.tolist(), "counts": h.counts.tolist(), "ndv": h.ndv}
                    for c, h in cat.columns.items()},
        "join_pairs": [[a, b, list(k)] for a, b, k in cat.join_pairs],
    }


def catalog_from_dict(d: dict) -> Catalog:
    if d.get("format_version") != FORMAT_VERSION:
        raise ArtifactError(f"unsupported version {d.get('format_version')}")
    cols = {c: Histogram(np.array(h["edges"], dtype=np.int64),
                         np.array(h["counts"], dtype=np.int64), int(h["ndv"]))
            for c, h in d["columns"].items()}
    return Catalog({t: int(n) for t, n in d["tables"].items()}, cols,
                   [(a, b, tuple(k)) for a, b, k in d["join_pairs"]])


def save_catalog(cat: Catalog, path):
    _atomic_write(path, json.dumps(catalog_to_dict(cat), sort_keys=True))


def load_catalog(path) -> Catalog:
    try:
        d = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise ArtifactError(f"cannot load catalog {path}: {e}") from None
    return catalog_from_dict(d)


def save_tables(tables, path):
    arrays = {f"{t}/{c}": v for t in sorted(tables) for c, v in tables[t].items()}
    arrays["__keys__"] = np.array(json.dumps(tables.key))
    with open(path, "wb") as f:
        np.savez(f, **arrays)


def load_tables(path):
    from .synth import SynthTables

    with np.load(path) as z:
        out = SynthTables(key=json.loads(str(z["__keys__"])))
        for name in z.files:
            if name == "__keys__":
                continue
            t, c = name.split("/", 1)
            out.setdefault(t, {})[c] = z[name]
    return out


def write_report(rows, path):
    """rows: iterable of (plan_id, est_ms, actual_ms, q_error)."""
    lines = [json.dumps({"plan_id": pid, "est_ms": e, "actual_ms": a, "q_error": q})
             for pid, e, a, q in rows]
    _atomic_write(path, "\n".join(lines) + ("\n" if lines else ""))


def read_report(path) -> list[dict]:
    return [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]


def summary_record(s: ErrorSummary) -> str:
    return json.dumps(s.as_record(), sort_keys=True)
