from __future__ import annotations

import json
import re
from pathlib import Path

import pytest

from pnb.corpus import Document, EntityType, GoldEntity, Span

_acceptance: list[tuple[str, str, float]] = []


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.skipped):
        return
    marker = report.user_properties and dict(report.user_properties).get("acceptance")
    if not marker:
        return
    status = "PASS" if report.passed else "SKIP" if report.skipped else "FAIL"
    _acceptance.append((marker, status, report.duration))


@pytest.hookimpl(tryfirst=True)
def pytest_runtest_setup(item):
    m = item.get_closest_marker("acceptance")
    if m is not None:
        item.user_properties.append(("acceptance", m.args[0]))


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for name, status, duration in _acceptance:
        terminalreporter.write_line(f"{status:4}  {name}  ({duration:.2f}s)")


def make_doc(doc_id: str, text: str, ents: list[tuple[EntityType, int, int]] = ()) -> Document:
    entities = tuple(
        GoldEntity(f"T{i}", t, (Span(s, e),), text[s:e]) for i, (t, s, e) in enumerate(ents, start=1)
    )
    return Document(doc_id, text, entities)


def write_corpus(root: Path, docs: dict[str, tuple[str, str]]) -> Path:
    root.mkdir(parents=True, exist_ok=True)
    for stem, (text, ann) in docs.items():
        (root / f"{stem}.txt").write_text(text, encoding="utf-8")
        (root / f"{stem}.ann").write_text(ann, encoding="utf-8")
    return root


# Ten tiny documents; enough for an 8:1:1 split with one test document.
TOY_TEXTS = {
    "doc00": ("Cystic fibrosis causes a chronic cough. Fatigue is common.",
              [("RAREDISEASE", "cystic fibrosis"), ("SIGN", "chronic cough"), ("SYMPTOM", "Fatigue")]),
    "doc01": ("Marfan syndrome affects connective tissue. Patients may have tall stature.",
              [("RAREDISEASE", "Marfan syndrome"), ("SIGN", "tall stature")]),
    "doc02": ("Binder syndrome is rare. A flat nose is typical and cancer is not linked.",
              [("RAREDISEASE", "Binder syndrome"), ("SIGN", "flat nose"), ("DISEASE", "cancer")]),
    "doc03": ("Abetalipoproteinemia causes fat malabsorption. Pain in the abdomen occurs.",
              [("RAREDISEASE", "Abetalipoproteinemia"), ("SIGN", "fat malabsorption"), ("SYMPTOM", "Pain")]),
    "doc04": ("Cat eye syndrome may involve heart defects. Diabetes can follow.",
              [("RAREDISEASE", "Cat eye syndrome"), ("SIGN", "heart defects"), ("DISEASE", "Diabetes")]),
    "doc05": ("Cutaneous anthrax produces a skin ulcer. Fever and headache follow.",
              [("RAREDISEASE", "Cutaneous anthrax"), ("SIGN", "skin ulcer"), ("SIGN", "Fever"),
               ("SYMPTOM", "headache")]),
    "doc06": ("Dravet syndrome begins with seizures in infancy. Sleep problems are frequent.",
              [("RAREDISEASE", "Dravet syndrome"), ("SIGN", "seizures"), ("SYMPTOM", "Sleep problems")]),
    "doc07": ("Calciphylaxis is seen in kidney disease. Painful lesions develop.",
              [("RAREDISEASE", "Calciphylaxis"), ("DISEASE", "kidney disease"), ("SIGN", "Painful lesions")]),
    "doc08": ("Hydronephrosis is swelling of the kidney. Nausea may occur.",
              [("DISEASE", "Hydronephrosis"), ("SIGN", "swelling of the kidney"), ("SYMPTOM", "Nausea")]),
    "doc09": ("CARASIL causes memory loss and stiffness. Hair loss is early.",
              [("RAREDISEASE", "CARASIL"), ("SIGN", "memory loss"), ("SIGN", "stiffness"), ("SIGN", "Hair loss")]),
}


def toy_ann(text: str, ents: list[tuple[str, str]]) -> str:
    lines = []
    cursor = {}
    for i, (label, surface) in enumerate(ents, start=1):
        start = text.lower().find(surface.lower(), cursor.get(surface.lower(), 0))
        assert start >= 0, surface
        cursor[surface.lower()] = start + 1
        lines.append(f"T{i}\t{label} {start} {start + len(surface)}\t{text[start:start + len(surface)]}")
    return "".join(l + "\n" for l in lines)


@pytest.fixture
def toy_corpus(tmp_path: Path) -> Path:
    return write_corpus(
        tmp_path / "corpus",
        {stem: (text, toy_ann(text, ents)) for stem, (text, ents) in TOY_TEXTS.items()},
    )


# Prompt fixtures; the golden files under tests/golden/ were written against these.
EXAMPLE_TEXT = (
    "Binder type nasomaxillary dysplasia is a rare congenital condition that affects males and "
    "females in equal numbers. Binder syndrome occurs in less than 1 per 10,000 live births."
)
TEST_TEXT = (
    "The exact prevalence and incidence of abetalipoproteinemia is unknown. "
    "Symptoms usually become apparent during infancy."
)
GOLDEN_DIR = Path(__file__).parent / "golden"


def example_document() -> Document:
    text = EXAMPLE_TEXT
    spans = [(EntityType.RareDisease, "Binder type nasomaxillary dysplasia"),
             (EntityType.RareDisease, "Binder syndrome"),
             (EntityType.Sign, "congenital condition")]
    ents = []
    for etype, surface in spans:
        s = text.index(surface)
        ents.append((etype, s, s + len(surface)))
    return make_doc("train-binder", text, ents)


# Scripted model replies for the two-document end-to-end fixture (doc08, doc09).
SCRIPT = {
    ("Hydronephrosis is", "rare diseases"): "Hydronephrosis",
    ("Hydronephrosis is", "diseases"): "None",
    ("Hydronephrosis is", "signs"): "1. swelling of the kidney",
    ("Hydronephrosis is", "symptoms"): "nausea, vomiting",
    ("CARASIL causes", "rare diseases"): "CARASIL",
    ("CARASIL causes", "diseases"): "None.",
    ("CARASIL causes", "signs"): "- memory loss\n- hair",
    ("CARASIL causes", "symptoms"): "stiffness",
}


class ScriptedBackend:
    """Answers by looking up the test passage and the requested entity noun in a prompt."""

    def __init__(self, script: dict[tuple[str, str], str] = SCRIPT, default: str = "None"):
        self.script = script
        self.default = default
        self.calls: list[str] = []

    def chat(self, model_id: str, temperature: float, prompt: str) -> str:
        self.calls.append(prompt)
        # The test passage and the last instruction come after any example.
        noun = re.findall(r"exact names of ([a-z ]+?)[,:]? (?:which|from)", prompt)[-1]
        tail = prompt[max(prompt.rfind("Input text:"), prompt.rfind("Passage:"), 0):]
        for (marker, n), reply in self.script.items():
            if n == noun and marker in tail:
                return reply
        return self.default


def two_doc_split(path: Path) -> Path:
    split = {"seed": 0, "train": [f"doc0{i}" for i in range(8)], "validation": [], "test": ["doc08", "doc09"]}
    path.write_text(json.dumps(split), encoding="utf-8")
    return path
