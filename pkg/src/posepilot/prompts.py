"""Prompt sets: the three built-in specificity tiers plus user sets.

Prompt wording is the experimental variable, so serialization preserves
strings byte-exactly and the lint never mutates. The scene/clothing/
identity stop-list is an editable plain-text asset; lint findings are
advisory so deliberately rule-breaking prompts stay testable.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .errors import ValidationError
from .labels import ALL_LABELS, ClassLabel

TIER_DESCRIPTIONS = {
    1: "label-only template",
    2: "label plus a short action cue",
    3: "anatomical pose constraints",
}


@dataclass(frozen=True)
class PromptSet:
    """One tier's per-class prompt lists. tier 0 marks custom sets."""

    set_id: str
    tier: int
    prompts: dict[ClassLabel, tuple[str, ...]]
    description: str = ""

    def __post_init__(self):
        if self.tier not in (0, 1, 2, 3):
            raise ValidationError(f"tier must be 0..3, got {self.tier}")
        missing = [lab.name for lab in ALL_LABELS if lab not in self.prompts]
        if missing:
            raise ValidationError(f"prompt set {self.set_id!r} missing classes {missing}")
        cleaned: dict[ClassLabel, tuple[str, ...]] = {}
        for lab in ALL_LABELS:
            entries = tuple(self.prompts[lab])
            if not entries:
                raise ValidationError(f"{self.set_id}: class {lab.name} has no prompts")
            for p in entries:
                if not p or not p.strip():
                    raise ValidationError(f"{self.set_id}: blank prompt for {lab.name}")
            cleaned[lab] = entries
        object.__setattr__(self, "prompts", cleaned)

    def all_prompts(self) -> list[str]:
        return [p for lab in ALL_LABELS for p in self.prompts[lab]]

    def to_json_obj(self) -> dict:
        return {
            "set_id": self.set_id,
            "tier": self.tier,
            "description": self.description,
            "prompts": {lab.name: list(self.prompts[lab]) for lab in ALL_LABELS},
        }

    @classmethod
    def from_json_obj(cls, obj: dict) -> "PromptSet":
        try:
            prompts = {
                ClassLabel.from_name(name): tuple(entries)
                for name, entries in obj["prompts"].items()
            }
            return cls(
                set_id=str(obj["set_id"]),
                tier=int(obj.get("tier", 0)),
                prompts=prompts,
                description=str(obj.get("description", "")),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"invalid prompt set document: {exc}") from None


def load_prompt_set(path: str | Path) -> PromptSet:
    with Path(path).open("r", encoding="utf-8") as fh:
        return PromptSet.from_json_obj(json.load(fh))


def save_prompt_set(ps: PromptSet, path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        json.dump(ps.to_json_obj(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def builtin_tiers() -> list[PromptSet]:
    """The three built-in specificity tiers, one prompt per class.

    The tier-3 walking/running slot has no canonical phrase the way the
    sitting/standing ones do, so a toolkit-authored geometric cue fills
    it (flagged in the set description). Wording here is frozen: it is
    the experimental variable and comparisons depend on it.
    """
    tier1 = PromptSet(
        set_id="tier1",
        tier=1,
        description=TIER_DESCRIPTIONS[1],
        prompts={
            ClassLabel.sitting: ("a photo of a person sitting",),
            ClassLabel.standing: ("a photo of a person standing",),
            ClassLabel.walking_running: ("a photo of a person walking or running",),
        },
    )
    tier2 = PromptSet(
        set_id="tier2",
        tier=2,
        description=TIER_DESCRIPTIONS[2],
        prompts={
            ClassLabel.sitting: ("a person seated on a chair",),
            ClassLabel.standing: ("a person standing still and upright",),
            ClassLabel.walking_running: ("a person mid-stride with one foot off the ground",),
        },
    )
    tier3 = PromptSet(
        set_id="tier3",
        tier=3,
        description=(
            TIER_DESCRIPTIONS[3]
            + "; walking_running phrase is toolkit-authored, not canonical wording"
        ),
        prompts={
            ClassLabel.sitting: ("hips and knees bent at right angles",),
            ClassLabel.standing: ("legs straight and torso vertical",),
            ClassLabel.walking_running: ("one knee raised and legs scissored mid-stride",),
        },
    )
    return [tier1, tier2, tier3]


def builtin_by_id() -> dict[str, PromptSet]:
    return {ps.set_id: ps for ps in builtin_tiers()}


@dataclass(frozen=True)
class LintFinding:
    term: str
    category: str
    class_label: ClassLabel
    prompt: str
    severity: str = "warning"

    def to_json_obj(self) -> dict:
        return {
            "term": self.term,
            "category": self.category,
            "class": self.class_label.name,
            "prompt": self.prompt,
            "severity": self.severity,
        }


@dataclass
class StopList:
    """term -> category (scene/clothing/identity), lower-cased terms."""

    terms: dict[str, str] = field(default_factory=dict)

    @classmethod
    def load_default(cls) -> "StopList":
        text = (
            resources.files("posepilot").joinpath("data/stoplist.txt").read_text("utf-8")
        )
        return cls.parse(text)

    @classmethod
    def load(cls, path: str | Path) -> "StopList":
        return cls.parse(Path(path).read_text(encoding="utf-8"))

    @classmethod
    def parse(cls, text: str) -> "StopList":
        terms: dict[str, str] = {}
        category = "scene"
        for raw in text.splitlines():
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if line.startswith("[") and line.endswith("]"):
                category = line[1:-1].strip().lower()
                continue
            terms[line.lower()] = category
        return cls(terms)


def validate_prompt_set(
    ps: PromptSet, stoplist: StopList | None = None
) -> list[LintFinding]:
    """Advisory lint: flag scene/clothing/identity terms in prompts.

    Structural problems (missing class, blank prompt) raise at PromptSet
    construction, before lint runs. An empty return means clean.
    """
    stoplist = stoplist or StopList.load_default()
    findings: list[LintFinding] = []
    for lab in ALL_LABELS:
        for prompt in ps.prompts[lab]:
            words = [w.strip(".,;:!?'\"()").lower() for w in prompt.split()]
            for word in words:
                category = stoplist.terms.get(word)
                if category is not None:
                    findings.append(LintFinding(word, category, lab, prompt))
    return findings
