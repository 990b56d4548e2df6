"""Model archive: a zip holding a JSON manifest and one raw tensor blob.

``manifest.json`` carries the format version, every config, the vocabulary,
the lexicon table, the phoneme inventory, the POS tag order, a training
fingerprint and a tensor table (name, shape, dtype, offset, nbytes).
``tensors.bin`` is the concatenation of little-endian C-order tensors, and
its sha256 is recorded in the manifest.
"""

from __future__ import annotations

import hashlib
import io
import json
import os
import tempfile
import zipfile
from dataclasses import asdict

import numpy as np

from . import encoder as enc
from . import head as hd
from .data import DataConfig
from .errors import ArchiveError
from .lexicon import POS_TAGS, PhonemeInventory, lexicon_from_text, lexicon_to_text
from .model import PolyphoneModel

FORMAT_VERSION = 1
MANIFEST = "manifest.json"
PAYLOAD = "tensors.bin"
_DTYPES = {"float32": "<f4", "float64": "<f8"}


def config_hash(*configs) -> str:
    """sha256 over the canonical JSON of the given config dicts."""
    text = json.dumps([c if isinstance(c, dict) else asdict(c) for c in configs], sort_keys=True,
                      ensure_ascii=False)
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def fingerprint(model: PolyphoneModel, train_config=None, seed=None) -> dict:
    configs = [model.encoder_config, model.head_config, model.data_config]
    if train_config is not None:
        configs.append(train_config)
    return {"config_hash": config_hash(*configs), "seed": seed}


def _manifest(model: PolyphoneModel, payload_meta, digest, extra):
    data = asdict(model.data_config)
    data["split_ratio"] = list(data["split_ratio"])
    return {
        "format_version": FORMAT_VERSION,
        "encoder_config": model.encoder_config.to_dict(),
        "head_config": model.head_config.to_dict(),
        "data_config": data,
        "vocab": model.vocab.tokens,
        "inventory": list(model.inventory.labels),
        "lexicon": lexicon_to_text(model.lexicon, model.inventory),
        "pos_tags": list(POS_TAGS),
        "frozen": sorted(model.frozen),
        "tensors": payload_meta,
        "payload_sha256": digest,
        **extra,
    }


def _payload(params):
    meta, chunks, offset = [], [], 0
    for name in sorted(params):
        arr = np.asarray(params[name])
        if arr.dtype.name not in _DTYPES:
            raise ArchiveError(f"unsupported dtype {arr.dtype} for tensor {name}")
        raw = np.ascontiguousarray(arr, dtype=np.dtype(_DTYPES[arr.dtype.name])).tobytes()
        meta.append({"name": name, "shape": list(arr.shape), "dtype": arr.dtype.name,
                     "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    return meta, b"".join(chunks)


def archive_bytes(model: PolyphoneModel, train_config=None, seed=None, extra=None) -> bytes:
    meta, blob = _payload(model.params)
    extra = dict(extra or {})
    extra["fingerprint"] = fingerprint(model, train_config, seed)
    if train_config is not None:
        extra["train_config"] = asdict(train_config)
    manifest = _manifest(model, meta, hashlib.sha256(blob).hexdigest(), extra)
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w", zipfile.ZIP_STORED) as zf:
        zf.writestr(MANIFEST, json.dumps(manifest, indent=1, ensure_ascii=False, sort_keys=True))
        zf.writestr(PAYLOAD, blob)
    return buf.getvalue()


def save_archive(model: PolyphoneModel, path, train_config=None, seed=None, extra=None) -> None:
    """Write ``model`` to ``path`` atomically (temp file in the same directory, then rename)."""
    data = archive_bytes(model, train_config, seed, extra)
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(prefix=".tmp-", suffix=".pwa", dir=directory)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_manifest(path) -> dict:
    return _open(path)[0]


def _open(path):
    try:
        with zipfile.ZipFile(path) as zf:
            manifest = json.loads(zf.read(MANIFEST).decode("utf-8"))
            blob = zf.read(PAYLOAD)
    except FileNotFoundError:
        raise ArchiveError(f"archive not found: {path}") from None
    except (zipfile.BadZipFile, KeyError, ValueError, OSError) as exc:
        raise ArchiveError(f"corrupt archive {path}: checksum or structure check failed ({exc})") from None
    version = manifest.get("format_version") if isinstance(manifest, dict) else None
    if version != FORMAT_VERSION:
        raise ArchiveError(f"archive format version {version!r} is not supported (expected {FORMAT_VERSION})")
    if hashlib.sha256(blob).hexdigest() != manifest.get("payload_sha256"):
        raise ArchiveError(f"corrupt archive {path}: tensor payload checksum mismatch")
    return manifest, blob


def load_archive(path) -> PolyphoneModel:
    """Rebuild a model purely from the archive's own manifest and tensors."""
    manifest, blob = _open(path)
    try:
        ecfg = enc.EncoderConfig(**manifest["encoder_config"])
        hcfg = hd.HeadConfig(**manifest["head_config"])
        dcfg = dict(manifest["data_config"])
        dcfg["split_ratio"] = tuple(dcfg["split_ratio"])
        dcfg = DataConfig(**dcfg)
        vocab = enc.Vocab(manifest["vocab"])
        if vocab.tokens != manifest["vocab"]:
            raise ArchiveError("vocabulary order in archive is not canonical")
        inventory = PhonemeInventory(tuple(manifest["inventory"]))
        lexicon = lexicon_from_text(manifest["lexicon"], inventory)
        if tuple(manifest["pos_tags"]) != POS_TAGS:
            raise ArchiveError("archive uses a different POS tag order")
        params = {}
        for t in manifest["tensors"]:
            start, stop = t["offset"], t["offset"] + t["nbytes"]
            if stop > len(blob):
                raise ArchiveError(f"tensor {t['name']} runs past the end of the payload")
            arr = np.frombuffer(blob[start:stop], dtype=np.dtype(_DTYPES[t["dtype"]])).reshape(t["shape"])
            params[t["name"]] = arr.astype(t["dtype"])  # native byte order, writable copy
        frozen = set(manifest.get("frozen", []))
    except ArchiveError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ArchiveError(f"malformed archive manifest: {exc}") from None
    _check_shapes(params, ecfg, hcfg, len(vocab), len(lexicon))
    return PolyphoneModel(ecfg, hcfg, dcfg, vocab, inventory, lexicon, params, frozen)


def _check_shapes(params, ecfg, hcfg, vocab_size, num_chars):
    rng = np.random.default_rng(0)
    expected = enc.init_encoder(ecfg, vocab_size, rng, np.float32)
    expected.update(hd.init_head(hcfg, num_chars, rng, np.float32))
    missing = sorted(set(expected) - set(params))
    unknown = sorted(set(params) - set(expected))
    if missing or unknown:
        raise ArchiveError(f"tensor names do not match the manifest configs (missing {missing}, unexpected {unknown})")
    for name, ref in expected.items():
        if params[name].shape != ref.shape:
            raise ArchiveError(f"tensor {name} has shape {params[name].shape}, expected {ref.shape}")
