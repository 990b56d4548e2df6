import json
import os
import zipfile

import numpy as np
import pytest

from polyweight.archive import FORMAT_VERSION, archive_bytes, load_archive, read_manifest, save_archive
from polyweight.errors import ArchiveError
from polyweight.training import TrainConfig, evaluate
from tests.conftest import TINY_SAMPLES


def _rewrite(path, mutate):
    with zipfile.ZipFile(path) as zf:
        manifest = json.loads(zf.read("manifest.json"))
        blob = zf.read("tensors.bin")
    manifest, blob = mutate(manifest, blob)
    with zipfile.ZipFile(path, "w") as zf:
        zf.writestr("manifest.json", json.dumps(manifest))
        zf.writestr("tensors.bin", blob)


@pytest.mark.parametrize("dtype", [np.float32, np.float64])
def test_round_trip_bit_exact(tiny_model, tmp_path, dtype):
    m = tiny_model(dtype=dtype)
    m.frozen = {"head.bias"}
    path = tmp_path / "m.pwa"
    save_archive(m, path, TrainConfig(), seed=7)
    back = load_archive(path)
    assert set(back.params) == set(m.params)
    for k, v in m.params.items():
        assert back.params[k].dtype == v.dtype and back.params[k].shape == v.shape
        assert back.params[k].tobytes() == v.tobytes()
    assert (back.encoder_config, back.head_config, back.data_config) == (m.encoder_config, m.head_config,
                                                                          m.data_config)
    assert back.vocab == m.vocab and back.inventory == m.inventory and back.lexicon == m.lexicon
    assert back.frozen == m.frozen
    assert archive_bytes(back, TrainConfig(), seed=7) == archive_bytes(m, TrainConfig(), seed=7)


def test_manifest_contents(tiny_model, tmp_path):
    m = tiny_model()
    path = tmp_path / "m.pwa"
    save_archive(m, path, TrainConfig(seed=3), seed=3)
    man = read_manifest(path)
    assert man["format_version"] == FORMAT_VERSION
    assert man["pos_tags"][:3] == ["UNK", "A", "C"] and len(man["pos_tags"]) == 11
    assert man["fingerprint"]["seed"] == 3 and len(man["fingerprint"]["config_hash"]) == 64
    assert man["lexicon"].splitlines()[0].split("\t")[0] in m.lexicon.chars
    names = [t["name"] for t in man["tensors"]]
    assert names == sorted(m.params)
    offsets = [t["offset"] for t in man["tensors"]]
    assert offsets[0] == 0 and all(b > a for a, b in zip(offsets, offsets[1:]))


def test_fingerprint_tracks_config(tiny_model):
    m = tiny_model()
    a = json.loads(zipfile.ZipFile(_bytes_io(archive_bytes(m, TrainConfig(), 0))).read("manifest.json"))
    b = json.loads(zipfile.ZipFile(_bytes_io(archive_bytes(m, TrainConfig(learning_rate=0.5), 0)))
                   .read("manifest.json"))
    assert a["fingerprint"]["config_hash"] != b["fingerprint"]["config_hash"]


def _bytes_io(data):
    import io
    return io.BytesIO(data)


def test_predictions_survive_round_trip(tiny_model, tmp_path):
    m = tiny_model(dtype=np.float32)
    save_archive(m, tmp_path / "m.pwa")
    back = load_archive(tmp_path / "m.pwa")
    assert evaluate(back, TINY_SAMPLES) == evaluate(m, TINY_SAMPLES)
    for s in TINY_SAMPLES:
        a, b = m.predict(s.sentence, s.target_index), back.predict(s.sentence, s.target_index)
        assert a.phoneme == b.phoneme and a.probs == b.probs


def test_manifest_is_authoritative(tiny_model, tmp_path):
    m = tiny_model(alpha_cross=0, alpha_char=1, alpha_pos=1, beta=0.3)
    save_archive(m, tmp_path / "m.pwa")
    back = load_archive(tmp_path / "m.pwa")
    assert back.head_config.alphas == (0, 1, 1) and back.head_config.beta == 0.3
    s = TINY_SAMPLES[3]
    np.testing.assert_array_equal(back.predict(s.sentence, s.target_index).distribution,
                                  m.predict(s.sentence, s.target_index).distribution)


def test_truncated_file(tiny_model, tmp_path):
    path = tmp_path / "m.pwa"
    save_archive(tiny_model(), path)
    data = path.read_bytes()
    for cut in (len(data) // 2, len(data) - 30, 10):
        path.write_bytes(data[:cut])
        with pytest.raises(ArchiveError, match="corrupt|checksum"):
            load_archive(path)


def test_payload_bit_flip(tiny_model, tmp_path):
    path = tmp_path / "m.pwa"
    save_archive(tiny_model(), path)

    def flip(man, blob):
        b = bytearray(blob)
        b[5] ^= 1
        return man, bytes(b)

    _rewrite(path, flip)
    with pytest.raises(ArchiveError, match="checksum"):
        load_archive(path)


def test_version_mismatch(tiny_model, tmp_path):
    path = tmp_path / "m.pwa"
    save_archive(tiny_model(), path)
    _rewrite(path, lambda man, blob: ({**man, "format_version": FORMAT_VERSION + 1}, blob))
    with pytest.raises(ArchiveError, match="version"):
        load_archive(path)


def test_shape_mismatch(tiny_model, tmp_path):
    path = tmp_path / "m.pwa"
    save_archive(tiny_model(), path)

    def reshape(man, blob):
        for t in man["tensors"]:
            if t["name"] == "head.bias":
                t["shape"] = [1, t["shape"][0]]
        return man, blob

    _rewrite(path, reshape)
    with pytest.raises(ArchiveError, match="head.bias"):
        load_archive(path)


def test_missing_and_not_zip(tmp_path):
    with pytest.raises(ArchiveError, match="not found"):
        load_archive(tmp_path / "absent.pwa")
    (tmp_path / "junk.pwa").write_text("hello")
    with pytest.raises(ArchiveError):
        load_archive(tmp_path / "junk.pwa")


def test_atomic_write_leaves_no_partial_file(tiny_model, tmp_path, monkeypatch):
    path = tmp_path / "m.pwa"
    save_archive(tiny_model(seed=1), path)
    before = path.read_bytes()

    def boom(*a, **k):
        raise OSError("disk full")

    monkeypatch.setattr(os, "replace", boom)
    with pytest.raises(OSError):
        save_archive(tiny_model(seed=2), path)
    assert path.read_bytes() == before
    assert os.listdir(tmp_path) == ["m.pwa"]
