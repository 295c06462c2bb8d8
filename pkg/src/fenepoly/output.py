"""Diagnostics CSV and raw field dumps with JSON sidecars."""
from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

DIAG_HEADER = ("step,t,kinetic,internal,entropy,interaction,dissipation,work,total,residual,pass,"
               "mass_rho_err,mass_psi_err,min_rho,min_psi,picard_iters").split(",")

FIELDS = ("rho", "ux", "uy", "psi", "varrho")


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def diagnostics_row(report, conservation: Mapping, picard_iters: int) -> dict:
    return {
        "step": report.step, "t": report.t, "kinetic": report.kinetic, "internal": report.internal,
        "entropy": report.entropy, "interaction": report.interaction, "dissipation": report.dissipation,
        "work": report.work, "total": report.total, "residual": report.residual,
        "pass": bool(report.passed), "mass_rho_err": conservation["mass_rho_err"],
        "mass_psi_err": conservation["mass_psi_err"], "min_rho": conservation["min_rho"],
        "min_psi": conservation["min_psi"], "picard_iters": int(picard_iters),
    }


class DiagnosticsWriter:
    """Streams rows to diagnostics.csv; floats use the shortest round-trip representation."""

    def __init__(self, path):
        self.path = Path(path)
        self._fh = open(self.path, "w", newline="", encoding="utf-8")
        self._w = csv.writer(self._fh, lineterminator="\n")
        self._w.writerow(DIAG_HEADER)
        self._fh.flush()

    def write(self, row: Mapping):
        self._w.writerow([_fmt(row[k]) for k in DIAG_HEADER])
        self._fh.flush()

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def write_diagnostics(rows: Iterable[Mapping], path) -> Path:
    with DiagnosticsWriter(path) as w:
        for row in rows:
            w.write(row)
    return Path(path)


def read_diagnostics(path) -> list:
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        for rec in csv.DictReader(fh):
            row = {}
            for k, v in rec.items():
                row[k] = int(v) if k in ("step", "pass", "picard_iters") else float(v)
            out.append(row)
    return out


def state_fields(state, omega, cfg) -> dict:
    ux, uy = omega.split_velocity(state.u)
    shape_q = (omega.nx, omega.ny) + cfg.shape
    return {
        "rho": state.rho.reshape(omega.nx, omega.ny),
        "ux": ux,
        "uy": uy,
        # nodes are ordered radius-major then angle, matching (q_r, q_θ)
        "psi": state.psi.reshape(shape_q),
        "varrho": (state.psi @ cfg.W).reshape(omega.nx, omega.ny),
    }


def write_field_dump(state, path, omega, cfg, extra: Mapping = None, extra_fields: Mapping = None) -> list:
    """Write every field as <path>/<name>.f64 plus <name>.json; returns the written paths.

    ``extra`` adds keys to every sidecar, ``extra_fields`` adds further named arrays.
    """
    d = Path(path)
    d.mkdir(parents=True, exist_ok=True)
    written = []
    grid = {**omega.spec(), **cfg.spec()}
    arrays = dict(state_fields(state, omega, cfg))
    arrays.update(extra_fields or {})
    for name, arr in arrays.items():
        a = np.ascontiguousarray(arr, dtype="<f8")
        raw = d / f"{name}.f64"
        raw.write_bytes(a.tobytes(order="C"))
        meta = {"field": name, "shape": list(a.shape), "grid": grid, "t": float(state.t),
                "step": int(state.step), "byte_order": "LE", "dtype": "f64"}
        if extra:
            meta.update(extra)
        (d / f"{name}.json").write_text(json.dumps(meta, indent=1))
        written += [raw, d / f"{name}.json"]
    return written


def read_field_dump(path, name: str):
    """Return (array, sidecar) for one dumped field."""
    d = Path(path)
    meta = json.loads((d / f"{name}.json").read_text())
    if meta.get("byte_order") != "LE" or meta.get("dtype") != "f64":
        raise ValueError("unsupported dump encoding")
    a = np.frombuffer((d / f"{name}.f64").read_bytes(), dtype="<f8").reshape(meta["shape"])
    return a.copy(), meta
