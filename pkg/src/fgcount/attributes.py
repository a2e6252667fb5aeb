"""Attribute and class-name tables shared across the toolkit.

Every counted object carries three binary attributes. Each attribute has two
known classes plus an "unknown" response; internally the three are encoded as
codes 0 (first class), 1 (second class), 2 (unknown). Channel triples in
density stacks follow the same order.
"""

from __future__ import annotations

ATTRIBUTES: tuple[str, ...] = ("species", "sex", "age")

CLASS_NAMES: dict[str, tuple[str, str]] = {
    "species": ("elephant", "fur"),
    "sex": ("male", "female"),
    "age": ("adult", "pup"),
}

UNKNOWN = "unknown"

N_ATTRIBUTES = len(ATTRIBUTES)
N_CLASSES = 2  # known classes per attribute
UNKNOWN_CODE = 2

# raw cell value -> code, per attribute; blank cells mean "unknown"
_LABEL_CODE: dict[str, dict[str, int]] = {
    attr: {names[0]: 0, names[1]: 1, UNKNOWN: 2, "": 2}
    for attr, names in CLASS_NAMES.items()
}


def label_code(attribute: str, label: str | None) -> int:
    """Map a raw label cell to its code; raises ValueError on unknown text."""
    table = _LABEL_CODE[attribute]
    if label is None:
        return UNKNOWN_CODE
    code = table.get(label)
    if code is None:
        code = table.get(label.strip().lower())
        if code is None:
            raise ValueError(f"unrecognized {attribute} label {label!r}")
    return code


def code_label(attribute: str, code: int) -> str:
    """Inverse of label_code: 0/1 -> class name, 2 -> 'unknown'."""
    if code == UNKNOWN_CODE:
        return UNKNOWN
    return CLASS_NAMES[attribute][code]


def attribute_channel_names(attribute: str) -> tuple[str, str, str]:
    """Channel names for one attribute's density triple."""
    c0, c1 = CLASS_NAMES[attribute]
    return (c0, c1, UNKNOWN)
