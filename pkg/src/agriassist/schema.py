"""Crop -> intent -> slot registry: loading, validation, lookup.

The registry is a single human-editable YAML file (see
``data/registry.schema.json`` for the formal schema). It is immutable after
load and safe to share across threads.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional

import jsonschema
import yaml

SLOT_COUNT_MIN = 2
SLOT_COUNT_MAX = 5

_VALUE_KINDS = ("free_text", "enumerated")


class ParseError(Exception):
    """The registry file could not be read or is not the expected shape."""


class ValidationError(Exception):
    """The registry parsed but violates its invariants."""

    def __init__(self, violations: list[str]):
        self.violations = list(violations)
        super().__init__(
            "registry validation failed:\n" + "\n".join(f"  - {v}" for v in self.violations)
        )


class NotFoundError(KeyError):
    """Lookup of an unknown crop or intent."""


@dataclass(frozen=True)
class SlotDef:
    id: str
    display_name: str
    question_template: str
    value_kind: str = "free_text"
    allowed_values: tuple[str, ...] = ()
    required: bool = True

    def render_question(self, crop: str, intent: str) -> str:
        """Fill the {crop}/{intent} placeholders of the question template."""
        return self.question_template.format_map(
            _DefaultingMap(crop=crop, intent=intent)
        )


class _DefaultingMap(dict):
    def __missing__(self, key: str) -> str:  # unknown placeholders render as-is
        return "{" + key + "}"


@dataclass(frozen=True)
class IntentDef:
    id: str
    display_name: str
    crop_id: str
    description: str
    slots: tuple[SlotDef, ...]
    synthesized: bool = False

    @property
    def slot_ids(self) -> tuple[str, ...]:
        return tuple(s.id for s in self.slots)

    def slot(self, slot_id: str) -> SlotDef:
        for s in self.slots:
            if s.id == slot_id:
                return s
        raise NotFoundError(f"intent {self.id!r} has no slot {slot_id!r}")

    def required_slots(self) -> tuple[SlotDef, ...]:
        return tuple(s for s in self.slots if s.required)


@dataclass(frozen=True)
class CropProfile:
    id: str
    display_name: str
    intents: tuple[IntentDef, ...]

    def intent(self, intent_id: str) -> IntentDef:
        for it in self.intents:
            if it.id == intent_id:
                return it
        raise NotFoundError(f"crop {self.id!r} has no intent {intent_id!r}")


@dataclass(frozen=True)
class Registry:
    crops: dict[str, CropProfile] = field(default_factory=dict)
    version: str = "0"

    def crop(self, crop_id: str) -> CropProfile:
        try:
            return self.crops[crop_id]
        except KeyError:
            raise NotFoundError(f"unknown crop {crop_id!r}") from None


def default_registry_path() -> Path:
    """Path of the reference registry shipped with the package."""
    return Path(str(resources.files("agriassist").joinpath("data/registry.yaml")))


def _schema() -> dict:
    text = resources.files("agriassist").joinpath("data/registry.schema.json").read_text("utf-8")
    return json.loads(text)


def load_registry(path: str | Path) -> Registry:
    """Load and fully validate a registry file.

    Raises ParseError for unreadable/malformed files and ValidationError
    (carrying the complete violation list) for structural or semantic
    invariant failures. Crop/intent/slot iteration order matches file order.
    """
    path = Path(path)
    try:
        raw_text = path.read_text("utf-8")
    except OSError as exc:
        raise ParseError(f"cannot read registry file {path}: {exc}") from exc
    try:
        doc = yaml.safe_load(raw_text)
    except yaml.YAMLError as exc:
        raise ParseError(f"registry file {path} is not valid YAML: {exc}") from exc
    if doc is None:
        raise ParseError(f"registry file {path} is empty")
    if not isinstance(doc, dict):
        raise ParseError(f"registry file {path} must contain a mapping at top level")

    validator = jsonschema.Draft202012Validator(_schema())
    structural = [
        "/".join(str(p) for p in err.absolute_path) + ": " + err.message
        for err in validator.iter_errors(doc)
    ]
    if structural:
        raise ValidationError(sorted(structural))

    registry = _build(doc)
    violations = validate_registry(registry)
    if violations:
        raise ValidationError(violations)
    return registry


def _build(doc: dict) -> Registry:
    crops: dict[str, CropProfile] = {}
    for crop_node in doc["crops"]:
        intents = []
        for intent_node in crop_node["intents"]:
            slots = tuple(
                SlotDef(
                    id=s["id"],
                    display_name=s["display_name"],
                    question_template=s["question_template"],
                    value_kind=s["value_kind"],
                    allowed_values=tuple(s.get("allowed_values", ())),
                    required=s.get("required", True),
                )
                for s in intent_node["slots"]
            )
            intents.append(
                IntentDef(
                    id=intent_node["id"],
                    display_name=intent_node["display_name"],
                    crop_id=crop_node["id"],
                    description=intent_node["description"],
                    slots=slots,
                    synthesized=intent_node.get("synthesized", False),
                )
            )
        profile = CropProfile(
            id=crop_node["id"],
            display_name=crop_node["display_name"],
            intents=tuple(intents),
        )
        crops[profile.id] = profile
    return Registry(crops=crops, version=str(doc["version"]))


def validate_registry(registry: Registry) -> list[str]:
    """Return the full list of invariant violations (empty when valid).

    Pure: identical input yields the identical, deterministically ordered
    list. Each violation names the offending crop/intent/slot path.
    """
    violations: list[str] = []
    seen_crops: set[str] = set()
    for crop_id, crop in registry.crops.items():
        where = f"crops[{crop.id}]"
        if crop_id != crop.id:
            violations.append(f"{where}: key {crop_id!r} does not match crop id")
        if crop.id in seen_crops:
            violations.append(f"{where}: duplicate crop id")
        seen_crops.add(crop.id)
        if not crop.id:
            violations.append(f"{where}: empty crop id")
        seen_intents: set[str] = set()
        for intent in crop.intents:
            iw = f"{where}.intents[{intent.id}]"
            if not intent.id:
                violations.append(f"{iw}: empty intent id")
            if intent.id in seen_intents:
                violations.append(f"{iw}: duplicate intent id {intent.id!r}")
            seen_intents.add(intent.id)
            if intent.crop_id != crop.id:
                violations.append(
                    f"{iw}: crop_id {intent.crop_id!r} does not refer to its crop"
                )
            n = len(intent.slots)
            if not SLOT_COUNT_MIN <= n <= SLOT_COUNT_MAX:
                violations.append(
                    f"{iw}: slot count out of range "
                    f"[{SLOT_COUNT_MIN},{SLOT_COUNT_MAX}] (got {n})"
                )
            seen_slots: set[str] = set()
            for slot in intent.slots:
                sw = f"{iw}.slots[{slot.id}]"
                if not slot.id:
                    violations.append(f"{sw}: empty slot id")
                if slot.id in seen_slots:
                    violations.append(f"{sw}: duplicate slot id {slot.id!r}")
                seen_slots.add(slot.id)
                if not slot.question_template:
                    violations.append(f"{sw}: empty question_template")
                if slot.value_kind not in _VALUE_KINDS:
                    violations.append(f"{sw}: unknown value_kind {slot.value_kind!r}")
                if slot.value_kind == "enumerated" and not slot.allowed_values:
                    violations.append(
                        f"{sw}: enumerated slot requires nonempty allowed_values"
                    )
    return violations


def lookup_intent(registry: Registry, crop_id: str, intent_id: str) -> IntentDef:
    """Return the unique intent of a crop; NotFoundError for unknown ids."""
    return registry.crop(crop_id).intent(intent_id)


def serialize_registry(registry: Registry) -> str:
    """Render a registry back to its YAML file form (round-trip stable)."""
    doc = {
        "version": registry.version,
        "crops": [
            {
                "id": crop.id,
                "display_name": crop.display_name,
                "intents": [_intent_node(it) for it in crop.intents],
            }
            for crop in registry.crops.values()
        ],
    }
    return yaml.safe_dump(doc, sort_keys=False, allow_unicode=True)


def _intent_node(intent: IntentDef) -> dict:
    node: dict = {
        "id": intent.id,
        "display_name": intent.display_name,
        "description": intent.description,
    }
    if intent.synthesized:
        node["synthesized"] = True
    node["slots"] = []
    for s in intent.slots:
        sn: dict = {
            "id": s.id,
            "display_name": s.display_name,
            "question_template": s.question_template,
            "value_kind": s.value_kind,
        }
        if s.allowed_values:
            sn["allowed_values"] = list(s.allowed_values)
        if not s.required:
            sn["required"] = False
        node["slots"].append(sn)
    return node


def load_default_registry() -> Registry:
    return load_registry(default_registry_path())
