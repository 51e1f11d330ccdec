"""Plain-text ``bst`` tensor files.

Layout::

    bst 1
    N
    I_1 ... I_N
    <prod I_n values, first index fastest>

Values are written with 17 significant digits; unobserved cells are
``nan``. A model file holds several such blocks, each introduced by a
``# core`` or ``# factor n`` comment line (n counts from 1).
"""

from __future__ import annotations

import os
from typing import Optional

import numpy as np

from .tensor_core import ObservationSet, TuckerModel, unvec, vec

MAGIC = "bst"
VERSION = "1"


class BstFormatError(ValueError):
    pass


def format_value(v: float) -> str:
    if np.isnan(v):
        return "nan"
    return format(float(v), ".17g")


def dumps(t: np.ndarray, obs: Optional[ObservationSet] = None) -> str:
    t = np.asarray(t, dtype=float)
    if t.ndim == 0:
        t = t.reshape(1)
    if obs is not None:
        if obs.shape != t.shape:
            raise ValueError(f"observation shape {obs.shape} differs from tensor {t.shape}")
        t = np.where(obs.mask, t, np.nan)
    flat = vec(t)
    width = t.shape[0]
    lines = [f"{MAGIC} {VERSION}", str(t.ndim), " ".join(str(s) for s in t.shape)]
    for start in range(0, flat.size, width):
        lines.append(" ".join(format_value(v) for v in flat[start:start + width]))
    return "\n".join(lines) + "\n"


def _parse_block(lines: list[str], where: str) -> np.ndarray:
    tokens = " ".join(lines).split()
    if len(tokens) < 3 or tokens[0] != MAGIC:
        raise BstFormatError(f"{where}: missing '{MAGIC} {VERSION}' header")
    if tokens[1] != VERSION:
        raise BstFormatError(f"{where}: unsupported version {tokens[1]!r}")
    try:
        ndim = int(tokens[2])
    except ValueError:
        raise BstFormatError(f"{where}: mode count {tokens[2]!r} is not an integer") from None
    if ndim < 1 or len(tokens) < 3 + ndim:
        raise BstFormatError(f"{where}: bad mode count {ndim}")
    try:
        shape = tuple(int(tok) for tok in tokens[3:3 + ndim])
    except ValueError:
        raise BstFormatError(f"{where}: dimensions must be integers") from None
    if any(s <= 0 for s in shape):
        raise BstFormatError(f"{where}: dimensions must be positive, got {shape}")
    payload = tokens[3 + ndim:]
    expected = int(np.prod(shape))
    if len(payload) != expected:
        raise BstFormatError(f"{where}: expected {expected} values, found {len(payload)}")
    try:
        values = np.array([float(tok) for tok in payload])
    except ValueError as exc:
        raise BstFormatError(f"{where}: {exc}") from None
    return unvec(values, shape)


def loads(text: str, where: str = "<string>"):
    """Parse a single tensor; returns ``(tensor, obs)`` with obs = non-nan cells."""
    lines = [ln for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    t = _parse_block(lines, where)
    return t, ObservationSet(t.shape, ~np.isnan(t))


def read_tensor(path):
    with open(path, "r", encoding="ascii") as fh:
        return loads(fh.read(), str(path))


def write_tensor(path, t: np.ndarray, obs: Optional[ObservationSet] = None) -> None:
    write_text(path, dumps(t, obs))


def write_text(path, text: str) -> None:
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "w", encoding="ascii", newline="\n") as fh:
        fh.write(text)
    os.replace(tmp, path)


def dumps_model(model: TuckerModel) -> str:
    parts = ["# core\n" + dumps(model.core)]
    for n, f in enumerate(model.factors, start=1):
        parts.append(f"# factor {n}\n" + dumps(f))
    return "".join(parts)


def write_model(path, model: TuckerModel) -> None:
    write_text(path, dumps_model(model))


def is_model_text(text: str) -> bool:
    for ln in text.splitlines():
        if ln.strip():
            return ln.strip() == "# core"
    return False


def loads_model(text: str, where: str = "<string>") -> TuckerModel:
    sections: list[tuple[str, list[str]]] = []
    for ln in text.splitlines():
        s = ln.strip()
        if s.startswith("#"):
            sections.append((s[1:].strip(), []))
        elif s:
            if not sections:
                raise BstFormatError(f"{where}: data before the first section marker")
            sections[-1][1].append(s)
    if not sections or sections[0][0] != "core":
        raise BstFormatError(f"{where}: model files start with '# core'")
    core = _parse_block(sections[0][1], f"{where} [core]")
    factors = []
    for n, (name, body) in enumerate(sections[1:], start=1):
        if name != f"factor {n}":
            raise BstFormatError(f"{where}: expected '# factor {n}', found '# {name}'")
        f = _parse_block(body, f"{where} [{name}]")
        if f.ndim != 2:
            raise BstFormatError(f"{where}: factor {n} must be a matrix")
        factors.append(f)
    try:
        return TuckerModel(core, tuple(factors))
    except ValueError as exc:
        raise BstFormatError(f"{where}: {exc}") from None


def read_model(path) -> TuckerModel:
    with open(path, "r", encoding="ascii") as fh:
        return loads_model(fh.read(), str(path))
