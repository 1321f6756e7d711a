import json
import struct

import numpy as np
import pytest

from divrank.checkpoint import load_checkpoint, save_checkpoint
from divrank.config import ExperimentConfig
from divrank.corpus import GeneratorConfig, generate_synthetic
from divrank.errors import CheckpointFormatError
from divrank.pipeline import run_retrieval, train_pipeline


def tiny_checkpoint():
    corpus = generate_synthetic(
        GeneratorConfig(n_queries=4, dim=16, mean_categories=3.0,
                        zipf_s=1.0, sigma=0.15, relevant_per_query=12,
                        irrelevant_per_query=5, n_categories=4), 1)
    cfg = ExperimentConfig(n_tokens=16, layers=2, heads=4, scl_epochs=2,
                           ttc_epochs=2, batch_size=4, seed=1)
    return corpus, train_pipeline(corpus, cfg)


class TestRoundTrip:
    def test_weights_bit_exact(self, tmp_path):
        corpus, ckpt = tiny_checkpoint()
        path = str(tmp_path / "model.ckpt")
        save_checkpoint(ckpt, path)
        back = load_checkpoint(path)

        for name in ckpt.reencoder.store.names():
            assert np.array_equal(back.reencoder.store[name],
                                  ckpt.reencoder.store[name])
        assert np.array_equal(back.bank.prototypes, ckpt.bank.prototypes)
        assert back.bank.category_ids == ckpt.bank.category_ids
        for name in ckpt.classifier.store.names():
            assert np.array_equal(back.classifier.store[name],
                                  ckpt.classifier.store[name])
        assert back.config == ckpt.config
        assert back.scl_steps == ckpt.scl_steps
        assert back.ttc_steps == ckpt.ttc_steps
        assert back.classifier.label_space.category_ids == \
            ckpt.classifier.label_space.category_ids

    def test_retrieval_identical_after_reload(self, tmp_path):
        corpus, ckpt = tiny_checkpoint()
        path = str(tmp_path / "model.ckpt")
        save_checkpoint(ckpt, path)
        back = load_checkpoint(path)
        for strategy in ("colt", "topk", "mmr", "dbscan"):
            a = run_retrieval(strategy, corpus, ckpt, k=10)
            b = run_retrieval(strategy, corpus, back, k=10)
            assert [r.ids() for r in a] == [r.ids() for r in b]

    def test_save_is_deterministic(self, tmp_path):
        _, ckpt = tiny_checkpoint()
        p1 = tmp_path / "a.ckpt"
        p2 = tmp_path / "b.ckpt"
        save_checkpoint(ckpt, str(p1))
        save_checkpoint(ckpt, str(p2))
        assert p1.read_bytes() == p2.read_bytes()


class TestNegativeCases:
    @pytest.fixture()
    def saved(self, tmp_path):
        _, ckpt = tiny_checkpoint()
        path = tmp_path / "model.ckpt"
        save_checkpoint(ckpt, str(path))
        return path

    def test_bad_magic(self, saved):
        data = saved.read_bytes()
        saved.write_bytes(b"XXXXXXXX" + data[8:])
        with pytest.raises(CheckpointFormatError, match="bad magic"):
            load_checkpoint(str(saved))

    def test_truncated_file(self, saved):
        saved.write_bytes(saved.read_bytes()[:40])
        with pytest.raises(CheckpointFormatError, match="truncated"):
            load_checkpoint(str(saved))

    def test_payload_corruption(self, saved):
        data = bytearray(saved.read_bytes())
        data[-100] ^= 0xFF  # flip a payload byte, keep the trailer
        saved.write_bytes(bytes(data))
        with pytest.raises(CheckpointFormatError, match="checksum"):
            load_checkpoint(str(saved))

    def test_unsupported_version(self, saved):
        data = saved.read_bytes()
        (hlen,) = struct.unpack("<Q", data[8:16])
        header = json.loads(data[16:16 + hlen])
        header["version"] = 99
        new_header = json.dumps(header).encode("utf-8")
        saved.write_bytes(data[:8] + struct.pack("<Q", len(new_header))
                          + new_header + data[16 + hlen:])
        with pytest.raises(CheckpointFormatError, match="version"):
            load_checkpoint(str(saved))

    def test_corrupt_header_json(self, saved):
        data = saved.read_bytes()
        (hlen,) = struct.unpack("<Q", data[8:16])
        broken = b"{" * hlen
        saved.write_bytes(data[:16] + broken + data[16 + hlen:])
        with pytest.raises(CheckpointFormatError, match="corrupt header"):
            load_checkpoint(str(saved))
