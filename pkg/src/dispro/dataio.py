"""File formats.

Dataset: one header-bearing CSV with a row per (patient, bin); columns
patient_id, group, t, D, then one column per feature where an empty cell
means missing. A small JSON sidecar (``<dataset>.meta.json``) carries the
time scale and group universe, which the table itself cannot.

Truth sidecar: JSON with generating parameters and per-patient latents under
canonical names. Draws: CSV with chain and draw indices followed by canonical
parameter columns, plus ``fit_meta.json`` and ``diagnostics.json`` sidecars.

Nothing in these files is time-stamped, so identical inputs and seeds produce
byte-identical outputs.
"""

from __future__ import annotations

import csv
import hashlib
import json
from pathlib import Path

import numpy as np

from . import __version__
from .sampler import PosteriorDraws
from .types import DataError, Dataset, GroupId, PatientRecord


def _fmt(x: float) -> str:
    return repr(float(x))


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def sha256_file(path) -> str:
    return sha256_bytes(Path(path).read_bytes())


def dataset_meta_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".meta.json")


def write_dataset(data: Dataset, path) -> None:
    path = Path(path)
    feature_cols = [f"x{j}" for j in range(data.n_features)]
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["patient_id", "group", "t", "D", *feature_cols])
        for p in data.patients:
            for t in range(p.horizon + 1):
                cells = ["" if not np.isfinite(v) else _fmt(v)
                         for v in p.features[t]]
                w.writerow([p.patient_id, p.group.index, t,
                            int(p.visits[t]), *cells])
    meta = {"bin_width": data.bin_width, "n_groups": data.n_groups,
            "n_features": data.n_features, "pinned_group": data.pinned_group}
    dataset_meta_path(path).write_text(canonical_json(meta) + "\n")


def read_dataset(path) -> Dataset:
    path = Path(path)
    meta_path = dataset_meta_path(path)
    if not meta_path.exists():
        raise DataError(f"missing dataset sidecar {meta_path}")
    meta = json.loads(meta_path.read_text())
    pinned = int(meta["pinned_group"])
    n_features = int(meta["n_features"])

    per_patient: dict[str, list] = {}
    order: list[str] = []
    with path.open(newline="") as fh:
        r = csv.reader(fh)
        header = next(r, None)
        if header is None or header[:4] != ["patient_id", "group", "t", "D"]:
            raise DataError(f"{path}: not a dataset table")
        if len(header) != 4 + n_features:
            raise DataError(f"{path}: expected {n_features} feature columns")
        for row in r:
            pid = row[0]
            if pid not in per_patient:
                per_patient[pid] = []
                order.append(pid)
            per_patient[pid].append(row)

    patients = []
    for pid in order:
        rows = sorted(per_patient[pid], key=lambda r: int(r[2]))
        bins = [int(r[2]) for r in rows]
        if bins != list(range(len(bins))):
            raise DataError(f"{pid}: bins must cover 0..horizon")
        group_idx = {int(r[1]) for r in rows}
        if len(group_idx) != 1:
            raise DataError(f"{pid}: inconsistent group labels")
        g = group_idx.pop()
        visits = np.array([int(r[3]) for r in rows], dtype=np.int8)
        features = np.full((len(rows), n_features), np.nan)
        for t, r in enumerate(rows):
            for j in range(n_features):
                cell = r[4 + j]
                if cell != "":
                    features[t, j] = float(cell)
        patients.append(PatientRecord(
            patient_id=pid, group=GroupId(g, is_pinned=(g == pinned)),
            horizon=len(rows) - 1, visits=visits, features=features))
    return Dataset(patients=patients, n_groups=int(meta["n_groups"]),
                   n_features=n_features, bin_width=float(meta["bin_width"]),
                   pinned_group=pinned)


def write_truth(truth, path) -> None:
    doc = {"params": truth.params, "latents": truth.latents, "meta": truth.meta}
    Path(path).write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n")


def read_truth(path):
    from .simulate import TruthSidecar

    doc = json.loads(Path(path).read_text())
    return TruthSidecar(params=doc["params"], latents=doc["latents"],
                        meta=doc.get("meta", {}))


def write_draws(draws: PosteriorDraws, path) -> None:
    path = Path(path)
    per_chain = draws.values.shape[0] // draws.n_chains
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["chain", "draw", *draws.names])
        for i in range(draws.values.shape[0]):
            w.writerow([int(draws.chain_ids[i]), i % per_chain,
                        *[_fmt(v) for v in draws.values[i]]])
    meta_doc = {"meta": draws.meta, "warnings": draws.warnings,
                "n_chains": draws.n_chains,
                "accept_stats": [float(a) for a in draws.accept_stats],
                "divergent": [bool(b) for b in draws.divergent]}
    fit_meta_path(path).write_text(json.dumps(meta_doc, sort_keys=True) + "\n")


def fit_meta_path(path) -> Path:
    return Path(path).with_name("fit_meta.json")


def read_draws(path) -> PosteriorDraws:
    path = Path(path)
    meta_doc = json.loads(fit_meta_path(path).read_text())
    with path.open(newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        if header[:2] != ["chain", "draw"]:
            raise DataError(f"{path}: not a draws table")
        names = header[2:]
        chain_ids, values = [], []
        for row in r:
            chain_ids.append(int(row[0]))
            values.append([float(v) for v in row[2:]])
    values = np.asarray(values, dtype=float)
    return PosteriorDraws(
        names=names, values=values,
        chain_ids=np.asarray(chain_ids, dtype=int),
        accept_stats=np.asarray(meta_doc.get("accept_stats",
                                             [np.nan] * values.shape[0])),
        divergent=np.asarray(meta_doc.get("divergent",
                                          [False] * values.shape[0]), dtype=bool),
        n_chains=int(meta_doc["n_chains"]),
        warnings=list(meta_doc.get("warnings", [])),
        meta=meta_doc.get("meta", {}))


def write_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, sort_keys=True, indent=1,
                                     default=_json_default) + "\n")


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj)}")


def write_table(path, header, rows) -> None:
    """Delimited-text report: tab-separated with one header line."""
    with Path(path).open("w") as fh:
        fh.write("\t".join(str(h) for h in header) + "\n")
        for row in rows:
            fh.write("\t".join(_cell(v) for v in row) + "\n")


def _cell(v) -> str:
    if v is None:
        return "NA"
    if isinstance(v, float):
        return _fmt(v)
    return str(v)


def write_manifest(out_dir, command: str, args: dict, seed,
                   inputs: dict | None = None, config_text: str | None = None,
                   outputs=None) -> None:
    """Record everything needed to re-run a command: tool version, arguments,
    seed, a hash of the config content, and input-file hashes."""
    doc = {
        "tool": "dispro",
        "version": __version__,
        "command": command,
        "seed": seed,
        "args": args,
        "config_sha256": (sha256_bytes(config_text.encode())
                          if config_text is not None else None),
        "inputs": {str(k): sha256_file(v) for k, v in (inputs or {}).items()},
        "outputs": sorted(str(o) for o in (outputs or [])),
    }
    write_json(doc, Path(out_dir) / "manifest.json")
