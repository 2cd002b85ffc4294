import pytest

from delicate.chem.tokenizer import build_vocab
from delicate.corpus import gen_corpus
from delicate.model import ModelConfig
from delicate.pretrain import pretrain_run

CORPUS_SEED, CORPUS_SIZE = 7, 2000
TEACHER_SEED, TEACHER_EPOCHS = 7, 20


class Teacher:
    """The shared pretrained 4-layer untied teacher used by the slow tests."""

    def __init__(self, root):
        self.corpus = gen_corpus(CORPUS_SEED, CORPUS_SIZE)
        self.vocab = build_vocab(self.corpus)
        self.config = ModelConfig(vocab_size=len(self.vocab), hidden_size=64, num_layers=4, num_heads=4,
                                  ffn_size=256)
        self.params, self.report = pretrain_run(self.config, self.corpus, TEACHER_EPOCHS, TEACHER_SEED,
                                                self.vocab, run_dir=root)
        self.checkpoint = root / "checkpoints" / "final.ckpt"
        self.vocab_path = root / "vocab.txt"
        self.vocab.save(self.vocab_path)

    @property
    def model(self):
        return self.params, self.config


@pytest.fixture(scope="session")
def teacher(tmp_path_factory):
    return Teacher(tmp_path_factory.mktemp("teacher"))


ACCEPTANCE: list[tuple[str, bool | None, str]] = []


def _status(ok) -> str:
    return "INFO" if ok is None else "PASS" if ok else "FAIL"


@pytest.fixture
def record():
    """Record one acceptance line; the test still asserts on ``ok`` itself."""

    def _record(criterion: str, ok, detail: str):
        ACCEPTANCE.append((criterion, ok, detail))
        print(f"{_status(ok)} {criterion}: {detail}")
        return ok

    return _record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for criterion, ok, detail in ACCEPTANCE:
        terminalreporter.write_line(f"{_status(ok)} {criterion}: {detail}")
