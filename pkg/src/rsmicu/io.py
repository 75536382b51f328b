"""File formats: datasets, truth sidecars, chain CSVs, reports, charts.

All JSON output is canonical — sorted keys, floats at 10 significant
digits, one indentation style — so identical inputs produce identical
bytes and a parse/emit cycle is a fixed point. Missing observations are
encoded as nulls in the y rows; the boolean mask is rebuilt on read.
"""

from __future__ import annotations

import csv
import json
import math
import re

import numpy as np

from .model import EncounterData, InvalidDataError, Label

SCHEMA_VERSION = 1
GRID_MINUTES = 15
DEFAULT_THRESHOLD = 0.0465


# ---------------------------------------------------------------------------
# canonical JSON

def _write_value(out: list, v, indent: int) -> None:
    pad = " " * indent
    if v is None:
        out.append("null")
    elif isinstance(v, bool):
        out.append("true" if v else "false")
    elif isinstance(v, (int, np.integer)):
        out.append(str(int(v)))
    elif isinstance(v, (float, np.floating)):
        f = float(v)
        if math.isnan(f) or math.isinf(f):
            raise InvalidDataError("non-finite number in JSON payload")
        out.append("%.10g" % f)
    elif isinstance(v, str):
        out.append(json.dumps(v))
    elif isinstance(v, np.ndarray):
        _write_value(out, v.tolist(), indent)
    elif isinstance(v, (list, tuple)):
        if not v:
            out.append("[]")
            return
        out.append("[\n")
        for i, item in enumerate(v):
            out.append(pad + " ")
            _write_value(out, item, indent + 1)
            out.append(",\n" if i + 1 < len(v) else "\n")
        out.append(pad + "]")
    elif isinstance(v, dict):
        if not v:
            out.append("{}")
            return
        out.append("{\n")
        keys = sorted(v)
        for i, k in enumerate(keys):
            if not isinstance(k, str):
                raise InvalidDataError(f"non-string key {k!r}")
            out.append(pad + " " + json.dumps(k) + ": ")
            _write_value(out, v[k], indent + 1)
            out.append(",\n" if i + 1 < len(keys) else "\n")
        out.append(pad + "}")
    else:
        raise InvalidDataError(f"unserializable value of type {type(v)}")


def canonical_json(obj) -> str:
    out: list[str] = []
    _write_value(out, obj, 0)
    out.append("\n")
    return "".join(out)


def write_json(path: str, obj) -> None:
    with open(path, "w") as fh:
        fh.write(canonical_json(obj))


def read_json(path: str):
    with open(path) as fh:
        return json.load(fh)


# ---------------------------------------------------------------------------
# datasets

def _med_names(prefix: str, count: int) -> list[str]:
    return [f"{prefix}_{i:02d}" for i in range(count)]


def _encounter_record(enc: EncounterData) -> dict:
    y = enc.y.astype(object)
    y[enc.missing] = None
    rec = {
        "encounter_id": enc.encounter_id,
        "y": y.tolist(),
        "hr_doses": enc.hr_doses.tolist(),
        "map_doses": enc.map_doses.tolist(),
        "rbc_ordered": enc.rbc_ordered.tolist(),
        "rbc_admin_cum": enc.rbc_admin_cum.tolist(),
        "label": {
            "kind": enc.label.kind,
            "windows": [list(w) for w in enc.label.windows],
        },
    }
    return rec


def dataset_document(encounters: list[EncounterData], mode: str) -> dict:
    if not encounters:
        raise InvalidDataError("dataset needs at least one encounter")
    n_hr = encounters[0].hr_doses.shape[0]
    n_map = encounters[0].map_doses.shape[0]
    return {
        "schema_version": SCHEMA_VERSION,
        "grid_minutes": GRID_MINUTES,
        "mode": mode,
        "n_hr": n_hr,
        "n_map": n_map,
        "hr_med_names": _med_names("hr_med", n_hr),
        "map_med_names": _med_names("map_med", n_map),
        "encounters": [_encounter_record(e) for e in encounters],
    }


def write_dataset(path: str, encounters: list[EncounterData],
                  mode: str) -> None:
    write_json(path, dataset_document(encounters, mode))


def _parse_encounter(rec: dict, n_hr: int, n_map: int) -> EncounterData:
    rows = rec["y"]
    if len(rows) != 4:
        raise InvalidDataError(
            f"{rec.get('encounter_id', '?')}: y must have 4 rows")
    n = len(rows[0])
    y = np.full((4, n), np.nan)
    miss = np.zeros((4, n), dtype=bool)
    for r, row in enumerate(rows):
        if len(row) != n:
            raise InvalidDataError("ragged y rows")
        for t, vv in enumerate(row):
            if vv is None:
                miss[r, t] = True
            else:
                y[r, t] = float(vv)
    hr = np.asarray(rec["hr_doses"], dtype=float)
    mp = np.asarray(rec["map_doses"], dtype=float)
    hr = hr.reshape((n_hr, n)) if hr.size else np.zeros((n_hr, n))
    mp = mp.reshape((n_map, n)) if mp.size else np.zeros((n_map, n))
    lab = rec.get("label", {"kind": "unlabeled", "windows": []})
    label = Label(kind=lab["kind"],
                  windows=tuple(tuple(int(x) for x in w)
                                for w in lab["windows"]))
    return EncounterData(
        encounter_id=str(rec["encounter_id"]),
        y=y,
        missing=miss,
        hr_doses=hr,
        map_doses=mp,
        rbc_ordered=np.asarray(rec["rbc_ordered"], dtype=float),
        rbc_admin_cum=np.asarray(rec["rbc_admin_cum"], dtype=float),
        label=label,
    )


def read_dataset(path: str,
                 clinical_bounds: bool = False
                 ) -> tuple[list[EncounterData], dict]:
    """Parse a dataset file. Structure is always validated; pass
    clinical_bounds=True to additionally enforce the cleaning-rule
    plausibility ranges (synthetic trajectories routinely leave them)."""
    doc = read_json(path)
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise InvalidDataError(
            f"{path}: unrecognized schema_version {doc.get('schema_version')}")
    header = {k: doc[k] for k in doc if k != "encounters"}
    encounters = []
    for rec in doc["encounters"]:
        enc = _parse_encounter(rec, int(doc["n_hr"]), int(doc["n_map"]))
        enc.validate(clinical_bounds=clinical_bounds)
        encounters.append(enc)
    return encounters, header


# ---------------------------------------------------------------------------
# chain CSV

def write_chain_csv(path: str, chain: dict) -> None:
    """One row per retained iteration, one column per scalar. Multi-element
    parameters expand to columns named key.i or key.i.j in C order."""
    keys = [k for k in sorted(chain) if k != "iteration"]
    n_rows = len(chain["iteration"])
    header = ["iteration"]
    blocks = []
    for k in keys:
        arr = np.asarray(chain[k], dtype=float).reshape(n_rows, -1) \
            if n_rows else np.zeros((0, 0))
        if n_rows:
            shape = np.asarray(chain[k][0]).shape
        else:
            shape = ()
        idx = [".".join(str(i) for i in np.unravel_index(j, shape))
               if shape else "" for j in range(arr.shape[1])]
        header.extend(k + ("." + s if s else "") for s in idx)
        blocks.append(arr)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in range(n_rows):
            row = [int(chain["iteration"][r])]
            for arr in blocks:
                row.extend("%.17g" % x for x in arr[r])
            w.writerow(row)


def read_chain_csv(path: str) -> dict:
    """Rebuild the chain dict; parameters recover their recorded shapes."""
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        header = next(rd)
        rows = [[float(x) for x in row] for row in rd]
    data = np.asarray(rows, dtype=float) if rows else np.zeros((0, len(header)))
    groups: dict[str, list[tuple[tuple[int, ...], int]]] = {}
    for col, name in enumerate(header):
        if name == "iteration":
            continue
        parts = name.split(".")
        tail = []
        while parts and re.fullmatch(r"\d+", parts[-1]):
            tail.append(int(parts.pop()))
        key = ".".join(parts)
        groups.setdefault(key, []).append((tuple(reversed(tail)), col))
    chain: dict = {"iteration": [int(x) for x in data[:, 0]]} \
        if header and header[0] == "iteration" else {"iteration": []}
    for key, cells in groups.items():
        shape = tuple(max(ix[d] for ix, _ in cells) + 1
                      for d in range(len(cells[0][0])))
        vals = []
        for r in range(data.shape[0]):
            arr = np.zeros(shape) if shape else np.zeros(())
            for ix, col in cells:
                arr[ix] = data[r, col]
            vals.append(arr if shape else float(arr))
        chain[key] = vals
    return chain


# ---------------------------------------------------------------------------
# posteriors and charts

def posterior_document(summaries) -> dict:
    recs = []
    for s in summaries:
        recs.append({
            "encounter_id": s.encounter_id,
            "probs": s.probs.tolist(),
            "impute_cells": s.impute_cells.tolist(),
            "impute_median": s.impute_median.tolist(),
            "impute_lo": s.impute_lo.tolist(),
            "impute_hi": s.impute_hi.tolist(),
        })
    return {"schema_version": SCHEMA_VERSION, "posteriors": recs}


def read_posteriors(path: str) -> dict:
    """Map encounter id -> posterior record with numpy fields."""
    doc = read_json(path)
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise InvalidDataError(f"{path}: unrecognized schema_version")
    out = {}
    for rec in doc["posteriors"]:
        out[rec["encounter_id"]] = {
            "probs": np.asarray(rec["probs"], dtype=float),
            "impute_cells": np.asarray(rec["impute_cells"], dtype=np.int64),
            "impute_median": np.asarray(rec["impute_median"], dtype=float),
            "impute_lo": np.asarray(rec["impute_lo"], dtype=float),
            "impute_hi": np.asarray(rec["impute_hi"], dtype=float),
        }
    return out


def _sparse_rows(n: int, cells: np.ndarray, values: np.ndarray) -> list:
    """(4, n) object grid holding values at flat cell indices, else None."""
    grid = np.full((4, n), None, dtype=object)
    if cells.size:
        grid.ravel()[cells] = values.astype(object)
    return grid.tolist()


def chart_document(enc: EncounterData, posterior: dict,
                   threshold: float = DEFAULT_THRESHOLD) -> dict:
    """Chart payload for one encounter: observations, imputation bands,
    state probabilities, threshold exceedances, and transfusion timing."""
    probs = np.asarray(posterior["probs"], dtype=float)
    n = enc.y.shape[1]
    if probs.shape != (5, n):
        raise InvalidDataError(
            f"{enc.encounter_id}: posterior/encounter length mismatch")
    y = enc.y.astype(object)
    y[enc.missing] = None
    cells = posterior["impute_cells"]
    prob2 = probs[1]
    admin_steps = np.flatnonzero(np.diff(enc.rbc_admin_cum, prepend=0.0) > 0)
    return {
        "schema_version": SCHEMA_VERSION,
        "encounter_id": enc.encounter_id,
        "grid_minutes": GRID_MINUTES,
        "time_index": list(range(n)),
        "observed": y.tolist(),
        "imputed_median": _sparse_rows(n, cells, posterior["impute_median"]),
        "imputed_lo": _sparse_rows(n, cells, posterior["impute_lo"]),
        "imputed_hi": _sparse_rows(n, cells, posterior["impute_hi"]),
        "state_probs": probs.tolist(),
        "prob_state2": prob2.tolist(),
        "threshold": float(threshold),
        "exceeds": (prob2 >= threshold).tolist(),
        "rbc_order_index": np.flatnonzero(enc.rbc_ordered > 0).tolist(),
        "rbc_admin_index": admin_steps.tolist(),
    }
