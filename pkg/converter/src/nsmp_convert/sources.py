"""Readers for the upstream archive layouts.

Two layouts are understood. The tuple-structured layout stores queries in
pickles as nested tuples — the key of each bucket is a shape made of the
markers 'e' (entity), 'r' (relation), 'n' (negation), 'u' (union), and each
instance mirrors that shape with integer ids (-2 where the shape says 'n',
-1 where it says 'u'). The string-formula layout stores JSON files mapping a
placeholder formula (relations r1.., constants s1.., existentials e1.., free
variable f) to a list of [placeholder assignment, easy answers, hard answers]
entries. Both use the archive's own integer id space; mapping into engine ids
happens in the conversion step, not here.
"""

from __future__ import annotations

import json
import pickle
from dataclasses import dataclass
from pathlib import Path

from . import ConversionError
from .grammar import match_template, template_slot_counts

# Shape key -> template name. The flattened first-appearance order of the
# 'e' and 'r' markers in each shape equals the template's slot order, which
# is what lets one generic walker extract every layout below.
TUPLE_STRUCTURES: dict[tuple, str] = {
    ("e", ("r",)): "1p",
    ("e", ("r", "r")): "2p",
    ("e", ("r", "r", "r")): "3p",
    (("e", ("r",)), ("e", ("r",))): "2i",
    (("e", ("r",)), ("e", ("r",)), ("e", ("r",))): "3i",
    ((("e", ("r",)), ("e", ("r",))), ("r",)): "ip",
    (("e", ("r", "r")), ("e", ("r",))): "pi",
    (("e", ("r",)), ("e", ("r", "n"))): "2in",
    (("e", ("r",)), ("e", ("r",)), ("e", ("r", "n"))): "3in",
    ((("e", ("r",)), ("e", ("r", "n"))), ("r",)): "inp",
    (("e", ("r", "r")), ("e", ("r", "n"))): "pin",
    (("e", ("r", "r", "n")), ("e", ("r",))): "pni",
    (("e", ("r",)), ("e", ("r",)), ("u",)): "2u",
    ((("e", ("r",)), ("e", ("r",)), ("u",)), ("r",)): "up",
}

_MARKER_VALUES = {"n": -2, "u": -1}


@dataclass(frozen=True)
class SourceQuery:
    """One query in the archive's own id space, slot-ordered."""

    template: str
    relations: tuple[int, ...]
    constants: tuple[int, ...]
    easy: tuple[int, ...]
    hard: tuple[int, ...]


def extract_slots(structure, instance) -> tuple[list[int], list[int]]:
    """Walk shape and instance in lockstep, collecting entity and relation ids
    in first-appearance order and checking the markers line up."""
    entities: list[int] = []
    relations: list[int] = []

    def walk(shape, value):
        if shape == "e":
            if not isinstance(value, int) or value < 0:
                raise ConversionError(f"expected an entity id, got {value!r}")
            entities.append(value)
        elif shape == "r":
            if not isinstance(value, int) or value < 0:
                raise ConversionError(f"expected a relation id, got {value!r}")
            relations.append(value)
        elif shape in _MARKER_VALUES:
            if value != _MARKER_VALUES[shape]:
                raise ConversionError(
                    f"expected marker {_MARKER_VALUES[shape]} for {shape!r}, got {value!r}"
                )
        elif isinstance(shape, tuple):
            if not isinstance(value, tuple) or len(value) != len(shape):
                raise ConversionError(
                    f"instance {value!r} does not mirror shape {shape!r}"
                )
            for s, v in zip(shape, value):
                walk(s, v)
        else:
            raise ConversionError(f"unsupported shape marker {shape!r}")

    walk(structure, instance)
    return relations, entities


def _load_pickle(path: Path):
    try:
        with open(path, "rb") as fh:
            return pickle.load(fh)
    except (pickle.UnpicklingError, EOFError, AttributeError, ValueError) as exc:
        raise ConversionError(f"{path}: not a readable pickle ({exc})") from None


def read_tuple_queries(src: Path, split: str) -> list[SourceQuery]:
    """Read `{split}-queries.pkl` plus its answer pickles into SourceQuery
    rows. Training queries carry plain answers (recorded as easy); validation
    and test queries carry an easy/hard pair."""
    queries_path = src / f"{split}-queries.pkl"
    buckets = _load_pickle(queries_path)
    if not isinstance(buckets, dict):
        raise ConversionError(f"{queries_path}: expected a shape->instances dict")

    if split == "train":
        easy_by_query = _load_pickle(src / f"{split}-answers.pkl")
        hard_by_query = {}
    else:
        easy_by_query = _load_pickle(src / f"{split}-easy-answers.pkl")
        hard_by_query = _load_pickle(src / f"{split}-hard-answers.pkl")

    out: list[SourceQuery] = []
    for structure in sorted(buckets, key=repr):
        template = TUPLE_STRUCTURES.get(structure)
        if template is None:
            raise ConversionError(f"unknown query structure {structure!r}")
        instances = buckets[structure]
        for instance in sorted(instances):
            relations, constants = extract_slots(structure, instance)
            n_rels, n_consts = template_slot_counts(template)
            if len(relations) != n_rels or len(constants) != n_consts:
                raise ConversionError(
                    f"instance {instance!r} fills {len(relations)} relation and "
                    f"{len(constants)} constant slots; template {template!r} "
                    f"needs {n_rels} and {n_consts}"
                )
            easy = easy_by_query.get(instance, set())
            hard = hard_by_query.get(instance, set())
            out.append(
                SourceQuery(
                    template,
                    tuple(relations),
                    tuple(constants),
                    tuple(sorted(easy)),
                    tuple(sorted(hard)),
                )
            )
    return out


def read_formula_queries(path: Path) -> list[SourceQuery]:
    """Read one string-formula JSON file into SourceQuery rows.

    Each key is a placeholder formula; it is matched structurally onto a
    template once, then every entry's assignment is read out in slot order.
    """
    try:
        with open(path, encoding="utf-8") as fh:
            payload = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConversionError(f"{path}: not valid JSON ({exc})") from None
    if not isinstance(payload, dict):
        raise ConversionError(f"{path}: expected a formula->entries object")

    out: list[SourceQuery] = []
    for formula, entries in payload.items():
        template, slot_map = match_template(formula)
        n_rels, n_consts = template_slot_counts(template)
        if not isinstance(entries, list):
            raise ConversionError(f"{path}: entries for {formula!r} must be a list")
        for entry in entries:
            if not (isinstance(entry, list) and len(entry) == 3):
                raise ConversionError(
                    f"{path}: each entry must be [assignment, easy, hard], got {entry!r}"
                )
            assignment, easy, hard = entry
            try:
                relations = tuple(int(assignment[slot_map[f"r{i}"]]) for i in range(n_rels))
                constants = tuple(int(assignment[slot_map[f"c{i}"]]) for i in range(n_consts))
            except (KeyError, TypeError) as exc:
                raise ConversionError(
                    f"{path}: assignment {assignment!r} does not cover formula "
                    f"{formula!r} ({exc})"
                ) from None
            out.append(
                SourceQuery(
                    template,
                    relations,
                    constants,
                    tuple(sorted(int(a) for a in easy)),
                    tuple(sorted(int(a) for a in hard)),
                )
            )
    return out
