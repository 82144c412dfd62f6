import numpy as np
import pytest

from docre.checkpoint import MAGIC, CheckpointError, load_checkpoint, read_header, save_checkpoint

from conftest import make_model


@pytest.fixture
def model(small_corpus):
    docs, schema = small_corpus
    return make_model(docs, schema, dim=8, seed=4)


class TestCheckpoint:
    def test_round_trip(self, model, small_corpus, tmp_path):
        save_checkpoint(model, tmp_path / "c.bin", {"best_epoch": 3})
        back, extra = load_checkpoint(tmp_path / "c.bin")
        assert extra == {"best_epoch": 3}
        assert back.vocab.tokens == model.vocab.tokens and back.schema.ids == model.schema.ids
        for a, b in zip(model.parameters(), back.parameters()):
            assert a.name == b.name and np.array_equal(a.data, b.data)
        docs, _ = small_corpus
        prepared = [model.prepare(d) for d in docs[:3]]
        assert np.array_equal(model.score(prepared).logits(), back.score(prepared).logits())

    def test_bytes_depend_only_on_contents(self, model, tmp_path):
        save_checkpoint(model, tmp_path / "a.bin")
        save_checkpoint(model, tmp_path / "b.bin")
        assert (tmp_path / "a.bin").read_bytes() == (tmp_path / "b.bin").read_bytes()

    def test_header(self, model, tmp_path):
        save_checkpoint(model, tmp_path / "c.bin")
        header, data = read_header(tmp_path / "c.bin")
        assert header["vocab_digest"] == model.vocab.digest()
        assert len(data) == 8 * sum(p.data.size for p in model.parameters())

    def test_not_a_checkpoint(self, tmp_path):
        (tmp_path / "c.bin").write_bytes(b"hello world, not a checkpoint")
        with pytest.raises(CheckpointError, match="not a checkpoint"):
            load_checkpoint(tmp_path / "c.bin")

    def test_truncated(self, model, tmp_path):
        save_checkpoint(model, tmp_path / "c.bin")
        raw = (tmp_path / "c.bin").read_bytes()
        (tmp_path / "c.bin").write_bytes(raw[:-8])
        with pytest.raises(CheckpointError, match="bytes"):
            load_checkpoint(tmp_path / "c.bin")

    def test_vocab_tampering(self, model, tmp_path):
        save_checkpoint(model, tmp_path / "c.bin")
        raw = (tmp_path / "c.bin").read_bytes()
        assert raw.startswith(MAGIC)
        (tmp_path / "c.bin").write_bytes(raw.replace(b'"w1"', b'"w!"', 1))
        with pytest.raises(CheckpointError, match="digest"):
            load_checkpoint(tmp_path / "c.bin")
