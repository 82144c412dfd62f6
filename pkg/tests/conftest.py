import numpy as np
import pytest

from docre.autodiff import Parameter, Tape
from docre.corpus import Label, Mention, RawDocument, Relation, RelationSchema
from docre.encoder import EncoderConfig, Vocabulary
from docre.head import HeadConfig
from docre.model import DocREModel
from docre.synthetic import SyntheticConfig, generate_synthetic


def numeric_grad(loss_fn, param: Parameter, h: float = 1e-5, coords=None) -> np.ndarray:
    """Central differences of ``loss_fn()`` (a float) w.r.t. ``param`` entries."""
    flat = param.data.reshape(-1)
    idx = range(flat.size) if coords is None else coords
    out = np.zeros(flat.size)
    for i in idx:
        old = flat[i]
        flat[i] = old + h
        up = loss_fn()
        flat[i] = old - h
        down = loss_fn()
        flat[i] = old
        out[i] = (up - down) / (2 * h)
    return out.reshape(param.shape)


def analytic_grad(build, params):
    for p in params:
        p.zero_grad()
    with Tape() as tape:
        loss = build()
    tape.backward(loss)
    return [p.grad.copy() for p in params]


def rel_err(a, b) -> float:
    a, b = np.asarray(a), np.asarray(b)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-12))


def tiny_schema() -> RelationSchema:
    return RelationSchema([
        Relation("P17", "country", "sovereign state of this item"),
        Relation("P131", "located in", "the item is located in this territorial entity"),
    ])


def tiny_document(title="doc-a") -> RawDocument:
    sents = [["Alice", "lives", "in", "Paris", "."], ["Paris", "is", "in", "France", "."]]
    vertex = [
        [Mention("Alice", 0, (0, 1), "PER")],
        [Mention("Paris", 0, (3, 4), "LOC"), Mention("Paris", 1, (0, 1), "LOC")],
        [Mention("France", 1, (3, 4), "LOC")],
    ]
    labels = [Label(1, 2, "P17", (1,)), Label(0, 1, "P131", (0,))]
    return RawDocument(title, sents, vertex, labels)


@pytest.fixture
def schema():
    return tiny_schema()


@pytest.fixture
def document():
    return tiny_document()


@pytest.fixture(scope="session")
def small_corpus():
    docs, schema = generate_synthetic(SyntheticConfig(docs=24, mean_entities=4, seed=3))
    return docs, schema


def make_model(docs, schema, prism=True, lam=10.0, dim=16, layers=1, hidden=8, dropout=0.0, seed=0):
    vocab = Vocabulary.build([s for d in docs for s in d.sents]
                             + [r.description.split() for r in schema.relations])
    return DocREModel(EncoderConfig(dim=dim, layers=layers, heads=2, ff_dim=2 * dim, dropout=dropout),
                      HeadConfig(hidden=hidden, lam=lam, prism=prism), vocab, schema, seed=seed)


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
