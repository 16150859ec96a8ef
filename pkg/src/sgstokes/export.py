"""MatrixMarket and JSON export of meshes, FE/SG matrices and input-model summaries."""
import json
import os
import tempfile
from pathlib import Path

import numpy as np
import scipy.io
import scipy.sparse as sp


def atomic_write_text(path, text):
    """Write ``text`` to ``path`` via a temporary file and rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_mtx(path, matrix, comment=""):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if sp.issparse(matrix):
        matrix = sp.coo_matrix(matrix)
    scipy.io.mmwrite(str(path), matrix, comment=comment)
    return path


def export_problem(problem, out_dir, dense=False, a=None):
    """Write mesh, FE and SG matrices, KLE and basis summaries; returns the written paths."""
    out = Path(out_dir)
    fem, mesh = problem.fem, problem.mesh
    written = [
        write_mtx(out / "mesh_vertices.mtx", np.asarray(mesh.vertices, dtype=float)),
        write_mtx(out / "mesh_triangles.mtx", np.asarray(mesh.triangles, dtype=float)),
        write_mtx(out / "A.mtx", fem.A_unweighted, "unit-viscosity vector Laplacian"),
        write_mtx(out / "A0.mtx", fem.A0, "mean-viscosity vector Laplacian"),
        write_mtx(out / "B.mtx", fem.B, "negative divergence"),
        write_mtx(out / "Mp.mtx", fem.M_p, "pressure mass matrix"),
    ]
    for m, Am in enumerate(fem.A_fluct, start=1):
        written.append(write_mtx(out / f"A{m}_fluct.mtx", Am))
    for m, Gm in enumerate(problem.G, start=1):
        written.append(write_mtx(out / f"G{m}.mtx", Gm))
    rhs = problem.b.reshape(-1, 1)
    written.append(write_mtx(out / "rhs.mtx", rhs))
    kle_path = out / "kle.json"
    atomic_write_text(kle_path, problem.kle.to_json(indent=2))
    basis_path = out / "basis.json"
    atomic_write_text(basis_path, problem.basis.to_json())
    written += [kle_path, basis_path]
    if dense:
        from sgstokes.kron import assemble_dense

        system = assemble_dense(problem.op, problem.laplacian, fem.D_p, a=a)
        for name in ("A", "B", "C", "Atilde", "S", "P1", "P2", "H"):
            mat = getattr(system, name)
            if mat is not None:
                written.append(write_mtx(out / f"dense_{name}.mtx", mat))
    return written


def read_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)
