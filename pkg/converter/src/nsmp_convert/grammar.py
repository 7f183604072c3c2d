"""The engine-facing query grammar, restated as an output contract.

The engine parses formulas like `rel(e3,x1)&!other(x1,y)`: relation tokens
resolve by label, `e<digits>` is a positional entity reference, `x<digits>`
are existential variables, `y` is the free variable, `!` negates one atom,
`&`/`|` combine atoms, parentheses group. Tokens end at whitespace or any of
`!&|(),`. Everything this module emits must re-parse under those rules, so
constants are always rendered in the positional `e<id>` form (immune to label
collisions) and relation labels are validated against the token charset.
"""

from __future__ import annotations

import itertools
import re
from dataclasses import dataclass

from . import ConversionError

# One canonical skeleton per supported query shape; `{r<i>}` are relation
# slots and `{c<i>}` constant slots. Variable names are fixed by position so
# renderings are byte-stable.
TEMPLATE_SHAPES: dict[str, str] = {
    "1p": "{r0}({c0},y)",
    "2p": "{r0}({c0},x1)&{r1}(x1,y)",
    "3p": "{r0}({c0},x1)&{r1}(x1,x2)&{r2}(x2,y)",
    "2i": "{r0}({c0},y)&{r1}({c1},y)",
    "3i": "{r0}({c0},y)&{r1}({c1},y)&{r2}({c2},y)",
    "pi": "{r0}({c0},x1)&{r1}(x1,y)&{r2}({c1},y)",
    "ip": "{r0}({c0},x1)&{r1}({c1},x1)&{r2}(x1,y)",
    "2u": "{r0}({c0},y)|{r1}({c1},y)",
    "up": "({r0}({c0},x1)|{r1}({c1},x1))&{r2}(x1,y)",
    "2in": "{r0}({c0},y)&!{r1}({c1},y)",
    "3in": "{r0}({c0},y)&{r1}({c1},y)&!{r2}({c2},y)",
    "inp": "{r0}({c0},x1)&!{r1}({c1},x1)&{r2}(x1,y)",
    "pin": "{r0}({c0},x1)&{r1}(x1,y)&!{r2}({c1},y)",
    "pni": "{r0}({c0},x1)&!{r1}(x1,y)&{r2}({c1},y)",
    "2il": "{r0}({c0},y)&{r1}({c1},y)&{r2}(x1,y)",
    "3il": "{r0}({c0},y)&{r1}({c1},y)&{r2}({c2},y)&{r3}(x1,y)",
    "2m": "{r0}({c0},y)&{r1}({c0},y)",
    "2nm": "{r0}({c0},y)&!{r1}({c0},y)",
    "3mp": "{r0}({c0},x1)&{r1}({c0},x1)&{r2}(x1,y)",
    "3pm": "{r0}({c0},x1)&{r1}(x1,y)&{r2}(x1,y)",
    "im": "{r0}({c0},y)&{r1}({c1},y)&{r2}({c1},y)",
    "3c": "{r0}({c0},x1)&{r1}(x1,x2)&{r2}(x2,y)&{r3}(x1,y)",
    "3cm": "{r0}({c0},x1)&{r1}(x1,x2)&{r2}(x2,y)&{r3}(x1,y)&{r4}(x1,y)",
}

_FORBIDDEN_IN_TOKEN = re.compile(r"[\s!&|(),]")


def validate_relation_label(label: str) -> str:
    """A relation label that would not survive the formula tokenizer is a
    conversion error, not something to mangle silently."""
    if not label or _FORBIDDEN_IN_TOKEN.search(label):
        raise ConversionError(
            f"relation label {label!r} cannot appear in a formula "
            "(labels must be non-empty and free of whitespace and !&|(),)"
        )
    return label


def validate_tsv_label(label: str) -> str:
    if not label.strip() or "\t" in label or "\n" in label or "\r" in label:
        raise ConversionError(
            f"label {label!r} cannot be written to a TSV column "
            "(labels must be non-blank and free of tabs and newlines)"
        )
    return label


def template_slot_counts(name: str) -> tuple[int, int]:
    """(relation slots, distinct constant slots) of a template."""
    shape = TEMPLATE_SHAPES[name]
    return (
        len(set(re.findall(r"\{r(\d+)\}", shape))),
        len(set(re.findall(r"\{c(\d+)\}", shape))),
    )


def render_instance(template: str, relation_labels: list[str], constant_ids: list[int]) -> str:
    """Fill a template with relation labels and positional entity references."""
    n_rels, n_consts = template_slot_counts(template)
    if len(relation_labels) != n_rels or len(constant_ids) != n_consts:
        raise ConversionError(
            f"template {template!r} takes {n_rels} relations and {n_consts} "
            f"constants, got {len(relation_labels)} and {len(constant_ids)}"
        )
    values = {f"r{i}": validate_relation_label(label) for i, label in enumerate(relation_labels)}
    values.update({f"c{i}": f"e{ent}" for i, ent in enumerate(constant_ids)})
    return TEMPLATE_SHAPES[template].format(**values)


# --------------------------------------------------------------- shape match
# Matching a source formula string onto a template works on the conjunctive
# atom multiset: a template fits when some bijection between its slots and the
# source placeholders reproduces exactly the same atoms (direction and
# negation included).


@dataclass(frozen=True)
class SourceAtom:
    relation: str
    lhs: str
    rhs: str
    negated: bool


_IDENT = re.compile(r"[^\s!&|(),]+")


class _FormulaScanner:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0

    def skip_ws(self) -> None:
        while self.pos < len(self.text) and self.text[self.pos].isspace():
            self.pos += 1

    def peek(self) -> str:
        self.skip_ws()
        return self.text[self.pos] if self.pos < len(self.text) else ""

    def take(self, char: str) -> None:
        if self.peek() != char:
            raise ConversionError(
                f"formula {self.text!r}: expected {char!r} at offset {self.pos}"
            )
        self.pos += 1

    def ident(self) -> str:
        self.skip_ws()
        m = _IDENT.match(self.text, self.pos)
        if not m:
            raise ConversionError(
                f"formula {self.text!r}: expected a name at offset {self.pos}"
            )
        self.pos = m.end()
        return m.group()


def parse_conjunctive(text: str) -> list[SourceAtom]:
    """Parse a conjunction of possibly negated relational atoms with optional
    parentheses. Disjunction is rejected by name: the archives that use this
    string syntax contain none, and silently guessing a reading would be worse
    than refusing."""
    scanner = _FormulaScanner(text)
    atoms = _parse_group(scanner, text)
    scanner.skip_ws()
    if scanner.pos != len(text):
        raise ConversionError(f"formula {text!r}: trailing input at offset {scanner.pos}")
    return atoms


def _parse_group(scanner: _FormulaScanner, text: str) -> list[SourceAtom]:
    atoms = _parse_element(scanner, text)
    while True:
        nxt = scanner.peek()
        if nxt == "&":
            scanner.take("&")
            atoms.extend(_parse_element(scanner, text))
        elif nxt == "|":
            raise ConversionError(
                f"formula {text!r} uses disjunction, which has no conjunctive template"
            )
        else:
            return atoms


def _parse_element(scanner: _FormulaScanner, text: str) -> list[SourceAtom]:
    if scanner.peek() == "!":
        scanner.take("!")
        if scanner.peek() == "(":
            scanner.take("(")
            inner = _parse_group(scanner, text)
            scanner.take(")")
        else:
            inner = [_parse_atom(scanner)]
        if len(inner) != 1:
            raise ConversionError(f"formula {text!r}: negation must cover a single atom")
        atom = inner[0]
        if atom.negated:
            raise ConversionError(f"formula {text!r}: double negation is not atomic")
        return [SourceAtom(atom.relation, atom.lhs, atom.rhs, negated=True)]
    if scanner.peek() == "(":
        scanner.take("(")
        inner = _parse_group(scanner, text)
        scanner.take(")")
        return inner
    return [_parse_atom(scanner)]


def _parse_atom(scanner: _FormulaScanner) -> SourceAtom:
    relation = scanner.ident()
    scanner.take("(")
    lhs = scanner.ident()
    scanner.take(",")
    rhs = scanner.ident()
    scanner.take(")")
    return SourceAtom(relation, lhs, rhs, negated=False)


def _template_atoms(name: str) -> list[SourceAtom]:
    shape = TEMPLATE_SHAPES[name]
    text = shape.replace("{", "").replace("}", "")
    return parse_conjunctive(text)


_CONJUNCTIVE_TEMPLATE_ATOMS: dict[str, list[SourceAtom]] = {
    name: _template_atoms(name) for name in TEMPLATE_SHAPES if "|" not in TEMPLATE_SHAPES[name]
}


def _classify_terms(atoms: list[SourceAtom], free_names: set[str], existential_prefixes: tuple[str, ...],
                    formula: str) -> tuple[list[str], list[str], list[str]]:
    """Split the term names of a formula into (relations, constants,
    existentials) in first-appearance order; exactly one free-variable term
    must occur."""
    relations: list[str] = []
    constants: list[str] = []
    existentials: list[str] = []
    saw_free = False
    for atom in atoms:
        if atom.relation not in relations:
            relations.append(atom.relation)
        for term in (atom.lhs, atom.rhs):
            if term in free_names:
                saw_free = True
            elif any(re.fullmatch(f"{p}\\d+", term) for p in existential_prefixes):
                if term not in existentials:
                    existentials.append(term)
            else:
                if term not in constants:
                    constants.append(term)
    if not saw_free:
        raise ConversionError(f"formula {formula!r} has no free variable")
    return relations, constants, existentials


def match_template(
    text: str,
    free_names: set[str] = frozenset({"f", "y"}),
    existential_prefixes: tuple[str, ...] = ("e", "x"),
) -> tuple[str, dict[str, str]]:
    """Identify which template a source formula instantiates.

    Returns the template name and a mapping from template slot names
    (r0..,c0..,x1..) to the source's own placeholder names. Raises with the
    offending formula when no template matches.
    """
    atoms = parse_conjunctive(text)
    rels, consts, exts = _classify_terms(atoms, set(free_names), existential_prefixes, text)

    def canonical(atom_list: list[SourceAtom]) -> tuple:
        return tuple(sorted((a.relation, a.lhs, a.rhs, a.negated) for a in atom_list))

    for name, template_atoms in _CONJUNCTIVE_TEMPLATE_ATOMS.items():
        t_rels, t_consts, t_exts = _classify_terms(
            template_atoms, {"y"}, ("x",), TEMPLATE_SHAPES[name]
        )
        if (len(t_rels), len(t_consts), len(t_exts)) != (len(rels), len(consts), len(exts)):
            continue
        if len(template_atoms) != len(atoms):
            continue
        for rel_perm in itertools.permutations(rels):
            for const_perm in itertools.permutations(consts):
                for ext_perm in itertools.permutations(exts):
                    mapping = dict(zip(t_rels, rel_perm))
                    mapping.update(zip(t_consts, const_perm))
                    mapping.update(zip(t_exts, ext_perm))
                    mapping["y"] = "y"
                    substituted = [
                        SourceAtom(
                            mapping[a.relation],
                            mapping.get(a.lhs, a.lhs) if a.lhs != "y" else "y",
                            mapping.get(a.rhs, a.rhs) if a.rhs != "y" else "y",
                            a.negated,
                        )
                        for a in template_atoms
                    ]
                    renamed_source = [
                        SourceAtom(
                            a.relation,
                            "y" if a.lhs in free_names else a.lhs,
                            "y" if a.rhs in free_names else a.rhs,
                            a.negated,
                        )
                        for a in atoms
                    ]
                    if canonical(substituted) == canonical(renamed_source):
                        slot_map = dict(zip(t_rels, rel_perm))
                        slot_map.update(zip(t_consts, const_perm))
                        slot_map.update(zip(t_exts, ext_perm))
                        return name, slot_map
    raise ConversionError(f"no known template matches formula {text!r}")
