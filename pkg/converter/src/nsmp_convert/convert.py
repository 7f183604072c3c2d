"""Conversion steps: knowledge graph, query files, embedding tables.

The output contract is the engine's documented file surface:

* ``{split}.tsv`` — tab-separated ``head relation tail`` label triples.
* ``entities.tsv`` / ``relations.tsv`` — ``label<TAB>id`` rows in ascending
  id order, where ids follow the engine's interning rule: first appearance,
  head then relation then tail, line by line, across train, valid, test in
  that order. Writing them here lets every later step translate archive ids
  without ever importing the engine.
* ``{split}-{template}.jsonl`` — one query record per line with keys
  ``formula``, ``type``, ``easy_answers``, ``hard_answers``.
* ``embeddings.nsmpemb`` — the engine's binary table format (magic
  ``NSMPEMB1``, little-endian u32 version, u64 entity/relation/rank counts,
  then four contiguous float32 row-major blocks: entity real, entity
  imaginary, relation real, relation imaginary).

Every step also updates ``manifest.json`` in the output directory so a
finished dataset documents its own provenance and counts.
"""

from __future__ import annotations

import json
import pickle
import struct
from pathlib import Path

import numpy as np

from . import ConversionError
from .grammar import render_instance, validate_relation_label, validate_tsv_label
from .sources import SourceQuery, read_formula_queries, read_tuple_queries

SPLITS = ("train", "valid", "test")

_EMB_MAGIC = b"NSMPEMB1"
_EMB_HEADER = struct.Struct("<8sIQQQ")
_EMB_VERSION = 1


# ---------------------------------------------------------------------------
# manifest


def _load_manifest(out: Path) -> dict:
    path = out / "manifest.json"
    if path.exists():
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    return {}


def _save_manifest(out: Path, manifest: dict) -> None:
    path = out / "manifest.json"
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# archive id maps


def _load_id_map(path: Path, kind: str) -> dict[int, str]:
    with open(path, "rb") as fh:
        try:
            raw = pickle.load(fh)
        except (pickle.UnpicklingError, EOFError, AttributeError, ValueError) as exc:
            raise ConversionError(f"{path}: not a readable pickle ({exc})") from None
    if not isinstance(raw, dict):
        raise ConversionError(f"{path}: expected an id->{kind} label dict")
    mapping: dict[int, str] = {}
    for key, value in raw.items():
        if not isinstance(key, int) or not isinstance(value, str):
            raise ConversionError(
                f"{path}: expected int ids mapping to string labels, "
                f"got {key!r} -> {value!r}"
            )
        mapping[key] = value
    return mapping


def _require_files(src: Path, names: list[str]) -> None:
    missing = [name for name in names if not (src / name).exists()]
    if missing:
        raise ConversionError(
            f"{src} is missing {', '.join(sorted(missing))} "
            f"(expected files: {', '.join(names)})"
        )


# ---------------------------------------------------------------------------
# engine id maps (reconstructed from the emitted sidecars)


class EngineIds:
    """Label<->engine-id tables read back from entities.tsv / relations.tsv."""

    def __init__(self, entity_labels: list[str], relation_labels: list[str]):
        self.entity_labels = entity_labels
        self.relation_labels = relation_labels
        self.entity_ids = {label: i for i, label in enumerate(entity_labels)}
        self.relation_ids = {label: i for i, label in enumerate(relation_labels)}

    @staticmethod
    def _read_sidecar(path: Path) -> list[str]:
        labels: list[str] = []
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                label, _, ident = line.rstrip("\n").rpartition("\t")
                if int(ident) != len(labels):
                    raise ConversionError(f"{path}: ids are not dense and ascending")
                labels.append(label)
        return labels

    @classmethod
    def load(cls, out: Path) -> "EngineIds":
        for name in ("entities.tsv", "relations.tsv"):
            if not (out / name).exists():
                raise ConversionError(
                    f"{out / name} not found; run the kg step into this "
                    f"directory first"
                )
        return cls(
            cls._read_sidecar(out / "entities.tsv"),
            cls._read_sidecar(out / "relations.tsv"),
        )


# ---------------------------------------------------------------------------
# knowledge graph


def convert_kg(src: Path, out: Path) -> dict:
    """Translate integer triples into label TSVs plus id sidecars."""
    _require_files(
        src,
        ["train.txt", "valid.txt", "test.txt", "id2ent.pkl", "id2rel.pkl"],
    )
    id2ent = _load_id_map(src / "id2ent.pkl", "entity")
    id2rel = _load_id_map(src / "id2rel.pkl", "relation")
    for label in id2ent.values():
        validate_tsv_label(label)
    for label in id2rel.values():
        validate_relation_label(label)

    out.mkdir(parents=True, exist_ok=True)
    entity_order: dict[str, int] = {}
    relation_order: dict[str, int] = {}

    def intern(table: dict[str, int], label: str) -> None:
        if label not in table:
            table[label] = len(table)

    counts: dict[str, int] = {}
    for split in SPLITS:
        n = 0
        with open(src / f"{split}.txt", encoding="utf-8") as fh, open(
            out / f"{split}.tsv", "w", encoding="utf-8"
        ) as dst:
            for line_no, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                parts = line.split()
                if len(parts) != 3:
                    raise ConversionError(
                        f"{src / f'{split}.txt'}:{line_no}: expected "
                        f"'head relation tail', got {line.rstrip()!r}"
                    )
                try:
                    h, r, t = (int(p) for p in parts)
                    head, rel, tail = id2ent[h], id2rel[r], id2ent[t]
                except (ValueError, KeyError):
                    raise ConversionError(
                        f"{src / f'{split}.txt'}:{line_no}: ids {parts!r} are "
                        f"not all present in the id maps"
                    ) from None
                intern(entity_order, head)
                intern(relation_order, rel)
                intern(entity_order, tail)
                dst.write(f"{head}\t{rel}\t{tail}\n")
                n += 1
        counts[split] = n

    for name, table in (("entities.tsv", entity_order), ("relations.tsv", relation_order)):
        with open(out / name, "w", encoding="utf-8") as fh:
            for label, ident in table.items():  # insertion order == id order
                fh.write(f"{label}\t{ident}\n")

    manifest = _load_manifest(out)
    manifest["kg"] = {
        "entities": len(entity_order),
        "relations": len(relation_order),
        "triples": {**counts, "total": sum(counts.values())},
    }
    _save_manifest(out, manifest)
    return manifest["kg"]


# ---------------------------------------------------------------------------
# queries


def _discover_query_sources(src: Path, split: str) -> tuple[bool, list[Path]]:
    """Return (has tuple pickles, formula JSON paths) for the split."""
    has_pickles = (src / f"{split}-queries.pkl").exists()
    json_paths = sorted(src.glob(f"{split}*qaa.json"))
    if not has_pickles and not json_paths:
        raise ConversionError(
            f"{src} has no query sources for split {split!r} (expected "
            f"{split}-queries.pkl or {split}*qaa.json)"
        )
    return has_pickles, json_paths


def convert_queries(src: Path, out: Path, split: str) -> dict:
    """Render archive queries as engine formulas with engine-id answers."""
    if split not in SPLITS:
        raise ConversionError(f"unknown split {split!r} (expected one of {SPLITS})")
    id2ent = _load_id_map(src / "id2ent.pkl", "entity")
    id2rel = _load_id_map(src / "id2rel.pkl", "relation")
    ids = EngineIds.load(out)

    has_pickles, json_paths = _discover_query_sources(src, split)
    source_rows: list[SourceQuery] = []
    if has_pickles:
        source_rows.extend(read_tuple_queries(src, split))
    for path in json_paths:
        source_rows.extend(read_formula_queries(path))

    def engine_entity(source_id: int) -> int:
        label = id2ent.get(source_id)
        if label is None:
            raise ConversionError(f"entity id {source_id} is not in id2ent.pkl")
        engine_id = ids.entity_ids.get(label)
        if engine_id is None:
            raise ConversionError(
                f"entity {label!r} (archive id {source_id}) never appears in "
                f"the converted triples, so it has no engine id"
            )
        return engine_id

    by_template: dict[str, list[str]] = {}
    for row in source_rows:
        relations = []
        for rel_id in row.relations:
            label = id2rel.get(rel_id)
            if label is None:
                raise ConversionError(f"relation id {rel_id} is not in id2rel.pkl")
            if label not in ids.relation_ids:
                raise ConversionError(
                    f"relation {label!r} (archive id {rel_id}) never appears "
                    f"in the converted triples"
                )
            relations.append(label)
        constants = [engine_entity(c) for c in row.constants]
        easy = sorted(engine_entity(a) for a in row.easy)
        hard = sorted(engine_entity(a) for a in row.hard)
        overlap = set(easy) & set(hard)
        if overlap:
            raise ConversionError(
                f"query {row!r}: easy and hard answers overlap on {sorted(overlap)}"
            )
        record = json.dumps(
            {
                "formula": render_instance(row.template, relations, constants),
                "type": row.template,
                "easy_answers": easy,
                "hard_answers": hard,
            },
            sort_keys=True,
        )
        by_template.setdefault(row.template, []).append(record)

    written = 0
    for template, records in sorted(by_template.items()):
        with open(out / f"{split}-{template}.jsonl", "w", encoding="utf-8") as fh:
            for record in records:
                fh.write(record + "\n")
        written += len(records)
    if written != len(source_rows):
        raise ConversionError(
            f"internal accounting error: read {len(source_rows)} queries but "
            f"wrote {written}"
        )

    manifest = _load_manifest(out)
    manifest.setdefault("queries", {})[split] = {
        template: len(records) for template, records in sorted(by_template.items())
    }
    _save_manifest(out, manifest)
    return manifest["queries"][split]


# ---------------------------------------------------------------------------
# embeddings


def _checkpoint_arrays(path: Path) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Return (ent_real, ent_imag, rel_real, rel_imag) from an .npz checkpoint.

    Accepts either four named arrays (entity_real, entity_imag,
    relation_real, relation_imag) or two ("entities", "relations") whose
    columns are the real block followed by the imaginary block.
    """
    try:
        archive = np.load(path)
    except (OSError, ValueError) as exc:
        raise ConversionError(f"{path}: not a readable .npz archive ({exc})") from None
    names = set(archive.files)
    four = {"entity_real", "entity_imag", "relation_real", "relation_imag"}
    if four <= names:
        parts = tuple(archive[name] for name in sorted(four))  # alphabetical
        ent_imag, ent_real, rel_imag, rel_real = parts
        return ent_real, ent_imag, rel_real, rel_imag
    if {"entities", "relations"} <= names:
        out = []
        for name in ("entities", "relations"):
            block = archive[name]
            if block.ndim != 2 or block.shape[1] % 2:
                raise ConversionError(
                    f"{path}: array {name!r} must be 2-D with an even column "
                    f"count (real block then imaginary block), got shape "
                    f"{block.shape}"
                )
            half = block.shape[1] // 2
            out.extend([block[:, :half], block[:, half:]])
        return out[0], out[1], out[2], out[3]
    raise ConversionError(
        f"{path}: expected arrays entity_real/entity_imag/relation_real/"
        f"relation_imag or entities/relations, found {sorted(names)}"
    )


def convert_embeddings(
    src: Path,
    out: Path,
    checkpoint: Path | None = None,
    expect_rank: int | None = None,
) -> dict:
    """Reorder checkpoint rows into engine id order and write the binary table."""
    checkpoint = checkpoint or (src / "checkpoint.npz")
    if not checkpoint.exists():
        raise ConversionError(f"{checkpoint} not found")
    id2ent = _load_id_map(src / "id2ent.pkl", "entity")
    id2rel = _load_id_map(src / "id2rel.pkl", "relation")
    ids = EngineIds.load(out)

    ent_real, ent_imag, rel_real, rel_imag = _checkpoint_arrays(checkpoint)
    for name, block in (
        ("entity", ent_real),
        ("entity", ent_imag),
        ("relation", rel_real),
        ("relation", rel_imag),
    ):
        if block.ndim != 2:
            raise ConversionError(f"{checkpoint}: {name} block must be 2-D")
    rank = ent_real.shape[1]
    if not (ent_imag.shape[1] == rel_real.shape[1] == rel_imag.shape[1] == rank):
        raise ConversionError(f"{checkpoint}: real/imaginary blocks disagree on rank")
    if expect_rank is not None and rank != expect_rank:
        raise ConversionError(f"rank mismatch: checkpoint rank {rank}, expected {expect_rank}")
    if ent_real.shape[0] != len(id2ent) or ent_imag.shape[0] != len(id2ent):
        raise ConversionError(
            f"{checkpoint}: entity rows {ent_real.shape[0]} != id2ent.pkl "
            f"size {len(id2ent)}"
        )
    if rel_real.shape[0] != len(id2rel) or rel_imag.shape[0] != len(id2rel):
        raise ConversionError(
            f"{checkpoint}: relation rows {rel_real.shape[0]} != id2rel.pkl "
            f"size {len(id2rel)}"
        )

    label_to_source_ent = {label: i for i, label in id2ent.items()}
    label_to_source_rel = {label: i for i, label in id2rel.items()}
    try:
        ent_perm = np.array(
            [label_to_source_ent[label] for label in ids.entity_labels], dtype=np.int64
        )
        rel_perm = np.array(
            [label_to_source_rel[label] for label in ids.relation_labels], dtype=np.int64
        )
    except KeyError as exc:
        raise ConversionError(
            f"label {exc.args[0]!r} from the converted dataset is missing "
            f"from the archive id maps"
        ) from None

    path = out / "embeddings.nsmpemb"
    with open(path, "wb") as fh:
        fh.write(
            _EMB_HEADER.pack(
                _EMB_MAGIC, _EMB_VERSION, len(ent_perm), len(rel_perm), rank
            )
        )
        for block, perm in (
            (ent_real, ent_perm),
            (ent_imag, ent_perm),
            (rel_real, rel_perm),
            (rel_imag, rel_perm),
        ):
            fh.write(np.ascontiguousarray(block[perm], dtype="<f4").tobytes())

    manifest = _load_manifest(out)
    manifest["embeddings"] = {
        "file": path.name,
        "entities": int(len(ent_perm)),
        "relations": int(len(rel_perm)),
        "rank": int(rank),
    }
    _save_manifest(out, manifest)
    return manifest["embeddings"]
