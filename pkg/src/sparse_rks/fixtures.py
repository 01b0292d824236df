"""Plain-text matrix fixtures.

A fixture file is a sequence of blocks. Each block starts with a header line
``NAME rows cols`` followed by ``rows`` lines of ``cols`` numbers printed
with 17 significant digits. A name may repeat; repeated blocks form a
per-step list (used for time-varying models).
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .model import LdsModel, SparseTrajectory

MODEL_BLOCKS = ("A", "B", "C", "D", "Q", "R")


def write_blocks(path, blocks) -> None:
    """Write ``(name, matrix)`` pairs to ``path``."""
    lines = []
    for name, mat in blocks:
        if not name or any(ch.isspace() for ch in name):
            raise ValueError(f"invalid block name {name!r}")
        mat = np.atleast_2d(np.asarray(mat, dtype=float))
        if mat.ndim != 2:
            raise ValueError(f"block {name} is not a matrix")
        rows, cols = mat.shape
        lines.append(f"{name} {rows} {cols}")
        for row in mat:
            lines.append(" ".join(f"{val:.16e}" for val in row))
    Path(path).write_text("\n".join(lines) + "\n")


def read_blocks(path) -> list[tuple[str, np.ndarray]]:
    """Parse a fixture file into ``(name, matrix)`` pairs, in file order."""
    tokens_by_line = [ln.split() for ln in Path(path).read_text().splitlines() if ln.strip()]
    blocks = []
    i = 0
    while i < len(tokens_by_line):
        header = tokens_by_line[i]
        if len(header) != 3:
            raise ValueError(f"{path}: malformed header {' '.join(header)!r}")
        name, rows, cols = header[0], int(header[1]), int(header[2])
        body = tokens_by_line[i + 1:i + 1 + rows]
        if len(body) != rows or any(len(r) != cols for r in body):
            raise ValueError(f"{path}: block {name} does not have {rows}x{cols} entries")
        mat = np.array([[float(t) for t in r] for r in body]).reshape(rows, cols)
        blocks.append((name, mat))
        i += 1 + rows
    return blocks


def _group(blocks):
    grouped: dict[str, list[np.ndarray]] = {}
    for name, mat in blocks:
        grouped.setdefault(name, []).append(mat)
    return grouped


def save_model(path, model: LdsModel) -> None:
    blocks = [("K", np.array([[model.K]]))]
    for name in MODEL_BLOCKS:
        blocks.extend((name, mat) for mat in getattr(model, name))
    write_blocks(path, blocks)


def load_model(path) -> LdsModel:
    grouped = _group(read_blocks(path))
    missing = [nm for nm in MODEL_BLOCKS if nm not in grouped]
    if missing:
        raise ValueError(f"{path}: missing blocks {missing}")
    if "K" in grouped:
        K = int(grouped["K"][0][0, 0])
    else:
        K = max(len(v) for v in grouped.values())
    mats = {nm: grouped[nm] if len(grouped[nm]) > 1 else grouped[nm][0] for nm in MODEL_BLOCKS}
    return LdsModel(K=K, **mats)


def save_trajectory(path, traj: SparseTrajectory) -> None:
    blocks = [("X", traj.x), ("U", traj.u), ("Y", traj.y), ("V", traj.v)]
    if traj.w.size:
        blocks.append(("W", traj.w))
    blocks.append(("SIGMA", np.array([[traj.sigma_u, traj.sigma_v]])))
    write_blocks(path, blocks)


def load_trajectory(path) -> SparseTrajectory:
    grouped = {k: v[0] for k, v in _group(read_blocks(path)).items()}
    x = grouped["X"]
    w = grouped.get("W", np.zeros((x.shape[0] - 1, x.shape[1])))
    sigma = grouped.get("SIGMA", np.array([[1.0, 1.0]]))
    u = grouped["U"]
    return SparseTrajectory(x=x, u=u, y=grouped["Y"], w=w, v=grouped["V"],
                            supports=tuple(np.flatnonzero(row) for row in u),
                            sigma_u=float(sigma[0, 0]), sigma_v=float(sigma[0, 1]))


def save_measurements(path, y) -> None:
    write_blocks(path, [("Y", np.atleast_2d(y))])


def load_measurements(path) -> np.ndarray:
    grouped = _group(read_blocks(path))
    if "Y" not in grouped:
        raise ValueError(f"{path}: no Y block")
    return grouped["Y"][0]
