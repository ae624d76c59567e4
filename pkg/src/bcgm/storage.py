"""Matrix-directory persistence for libraries, predictors and trajectories.

A directory holds ``manifest.json`` plus one ``<name>.csv`` per matrix. Each
matrix file is row-major, comma-separated, with 17 significant digits, so a
save/load/save cycle is identical at the text level. Shapes live in the
manifest, which keeps empty and single-row matrices unambiguous.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .cgm import CgmPredictor
from .library import TrajectoryLibrary
from .lti import Trajectory

FORMAT_VERSION = 1


def format_number(v: float) -> str:
    return format(float(v), ".17g")


def write_matrix(path: Path, M) -> None:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    lines = [",".join(format_number(v) for v in row) for row in M]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="ascii")


def read_matrix(path: Path, shape) -> np.ndarray:
    rows, cols = shape
    text = Path(path).read_text(encoding="ascii").strip()
    if rows == 0 or cols == 0:
        return np.zeros((rows, cols))
    values = [float(tok) for line in text.splitlines() for tok in line.split(",")]
    if len(values) != rows * cols:
        raise ValueError(f"{path} holds {len(values)} numbers, manifest says {rows}x{cols}")
    return np.asarray(values, dtype=float).reshape(rows, cols)


def _save(directory, kind: str, matrices: dict, fields: dict) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    shapes = {}
    for name, M in matrices.items():
        M = np.atleast_2d(np.asarray(M, dtype=float)) if np.ndim(M) else np.zeros((0, 0))
        write_matrix(directory / f"{name}.csv", M)
        shapes[name] = list(M.shape)
    manifest = {"format": FORMAT_VERSION, "kind": kind, "shapes": shapes, **fields}
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return directory


def load_manifest(directory) -> dict:
    path = Path(directory) / "manifest.json"
    if not path.exists():
        raise FileNotFoundError(f"no manifest.json in {directory}")
    return json.loads(path.read_text())


def _load(directory, kind: str):
    manifest = load_manifest(directory)
    if manifest.get("kind") != kind:
        raise ValueError(f"{directory} holds a {manifest.get('kind')!r}, expected {kind!r}")
    mats = {name: read_matrix(Path(directory) / f"{name}.csv", shape)
            for name, shape in manifest["shapes"].items()}
    return manifest, mats


def save_library(lib: TrajectoryLibrary, directory, **meta) -> Path:
    fields = {"T_ini": lib.T_ini, "T": lib.T, "N": lib.N, "m": lib.m, "p": lib.p,
              "n_ctrl": lib.n_ctrl, "source": lib.source, "meta": {**lib.meta, **meta}}
    return _save(directory, "library", {k: getattr(lib, k) for k in ("Phi", "Up", "Yp", "Uf", "Yf")}, fields)


def load_library(directory) -> TrajectoryLibrary:
    man, mats = _load(directory, "library")
    return TrajectoryLibrary(mats["Phi"], mats["Up"], mats["Yp"], mats["Uf"], mats["Yf"],
                             int(man["T_ini"]), int(man["T"]), man["source"], man.get("meta", {}))


def save_predictor(pred: CgmPredictor, directory, **meta) -> Path:
    mats = {"Theta_f": pred.Theta_f, "Sigma_f": pred.Sigma_f, "Sigma_f_chol": pred.Sigma_f_chol}
    if pred.S is not None:
        mats["S"] = pred.S
    fields = {"T_ini": pred.T_ini, "T": pred.T, "m": pred.m, "p": pred.p, "N": pred.N,
              "xi_rank": pred.xi_rank, "xi_rows": pred.xi_rows, "data_scale": format_number(pred.data_scale),
              "meta": meta}
    return _save(directory, "predictor", mats, fields)


def load_predictor(directory) -> CgmPredictor:
    man, mats = _load(directory, "predictor")
    return CgmPredictor(mats["Theta_f"], mats.get("S"), mats["Sigma_f"], mats["Sigma_f_chol"],
                        int(man["T_ini"]), int(man["T"]), int(man["m"]), int(man["p"]), int(man["N"]),
                        int(man.get("xi_rank", 0)), int(man.get("xi_rows", 0)), float(man.get("data_scale", 0.0)))


def save_trajectory(traj: Trajectory, directory, **meta) -> Path:
    return _save(directory, "trajectory", {"u": traj.u, "y": traj.y, "phi": traj.phi, "x": traj.x},
                 {"length": len(traj), "meta": meta})


def load_trajectory(directory) -> Trajectory:
    _, mats = _load(directory, "trajectory")
    return Trajectory(mats["u"], mats["y"], mats["phi"], mats["x"])
