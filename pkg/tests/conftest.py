import json
from pathlib import Path

import pytest

from icldst.corpus import load_corpus

DATA_DIR = Path(__file__).parent / "data"
FIXTURE10 = DATA_DIR / "fixture10.jsonl"


@pytest.fixture(scope="session")
def fixture10_path() -> Path:
    return FIXTURE10


@pytest.fixture(scope="session")
def fixture10_corpus():
    return load_corpus(FIXTURE10, "jsonl-simple")


def write_jsonl_corpus(path: Path, dialogues: list[dict]) -> Path:
    with open(path, "w", encoding="utf-8") as fh:
        for dialogue in dialogues:
            fh.write(json.dumps(dialogue) + "\n")
    return path


@pytest.fixture()
def two_dialogue_path(tmp_path: Path) -> Path:
    return write_jsonl_corpus(tmp_path / "two.jsonl", [
        {"id": "a1", "turns": [
            {"user": "i need a taxi at 14:45 .", "system": "sure .",
             "state": {"taxi-leave": "14:45"}},
            {"user": "to the curry garden please", "system": "done .",
             "state": {"taxi-destination": "curry garden"}},
        ]},
        {"id": "b2", "turns": [
            {"user": "train to cambridge on thursday leaving 14:45", "system": "",
             "state": {"train-destination": "cambridge", "train-day": "thursday",
                       "train-leave": "14:45"}},
        ]},
    ])
