"""File formats: response CSVs, plain-text model specs, tagged parameter
JSON, study configs, and run manifests.

Parameter files carry an explicit constraint-regime tag, a fingerprint of
the measurement design, and the fixed-entry mask; untagged files are
refused so a file fitted under one regime cannot silently be interpreted
under another. Manifests hash inputs and outputs and carry no timestamps,
so repeated runs with identical inputs produce identical bytes.
"""

from __future__ import annotations

import configparser
import csv
import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from . import model, simulate
from .likelihood import ResponseMatrix


class DataError(ValueError):
    """Malformed input file; message carries a line number when known."""


# ---------------------------------------------------------------- model spec

def parse_model_spec(text):
    """Parse the plain-text measurement design.

    One factor per line: ``FactorName: item1=4 item2 item3=5``. The ``=K``
    suffix gives the item's category count and is required the first time
    an item appears. ``#`` starts a comment.
    """
    items = {}
    pattern = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if ":" not in line:
            raise DataError("line %d: expected 'factor: item=K ...'" % lineno)
        fname, rest = line.split(":", 1)
        fname = fname.strip()
        if not fname:
            raise DataError("line %d: empty factor name" % lineno)
        if fname in pattern:
            raise DataError("line %d: duplicate factor %r" % (lineno, fname))
        members = []
        for tok in rest.split():
            if "=" in tok:
                name, _, ks = tok.partition("=")
                try:
                    k = int(ks)
                except ValueError:
                    raise DataError(
                        "line %d: bad category count %r" % (lineno, ks)
                    ) from None
                if k < 2:
                    raise DataError(
                        "line %d: item %r needs at least 2 categories"
                        % (lineno, name)
                    )
                if name in items and items[name] != k:
                    raise DataError(
                        "line %d: item %r redeclared with %d categories"
                        % (lineno, name, k)
                    )
                items[name] = k
            else:
                name = tok
                if name not in items:
                    raise DataError(
                        "line %d: item %r needs '=K' on first mention"
                        % (lineno, name)
                    )
            members.append(name)
        if not members:
            raise DataError("line %d: factor %r has no items" % (lineno, fname))
        pattern[fname] = members
    if not pattern:
        raise DataError("model spec file defines no factors")
    try:
        return model.build_model_spec(items, pattern)
    except model.SpecError as e:
        raise DataError(str(e)) from None


def read_model_spec(path):
    with open(path, encoding="utf-8") as fh:
        return parse_model_spec(fh.read())


# ----------------------------------------------------------------- responses

@dataclass
class IngestReport:
    n_rows_read: int
    n_rows_kept: int
    n_dropped_missing: int
    recode_maps: dict = field(default_factory=dict)  # item -> {label: code}
    notes: tuple = ()

    def lines(self):
        out = [
            "rows read: %d, kept: %d, dropped for missing values: %d"
            % (self.n_rows_read, self.n_rows_kept, self.n_dropped_missing)
        ]
        for item, mp in self.recode_maps.items():
            pairs = ", ".join("%r->%d" % (k, v) for k, v in mp.items())
            out.append("recoded %s: %s" % (item, pairs))
        out.extend(self.notes)
        return out


def _order_labels(labels):
    try:
        return sorted(labels, key=float)
    except ValueError:
        return sorted(labels)


def load_responses(path, spec, *, recode=False):
    """Read a response CSV into a ResponseMatrix for the given design.

    Header row required; columns are matched to spec item names (extra
    columns are ignored). Empty cells are missing values; rows with any
    missing response are listwise-deleted and counted. Codes must be
    integers 1..K_j unless recode=True, which maps each item's distinct
    labels onto 1..n in numeric order when every label parses as a number
    and in lexicographic order otherwise.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError("line 1: empty file, header row required") from None
        header = [h.strip() for h in header]
        missing_items = [nm for nm in spec.item_names if nm not in header]
        if missing_items:
            raise DataError(
                "line 1: data file lacks columns %s" % ", ".join(missing_items)
            )
        cols = [header.index(nm) for nm in spec.item_names]
        raw_rows = []
        n_read = 0
        n_dropped = 0
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            n_read += 1
            if len(row) != len(header):
                raise DataError(
                    "line %d: expected %d fields, got %d"
                    % (lineno, len(header), len(row))
                )
            vals = [row[c].strip() for c in cols]
            if any(v == "" for v in vals):
                n_dropped += 1
                continue
            raw_rows.append((lineno, vals))
    if not raw_rows:
        raise DataError("no complete response rows in %s" % path)

    recode_maps = {}
    y = np.empty((len(raw_rows), spec.p), dtype=int)
    if recode:
        for j, nm in enumerate(spec.item_names):
            labels = _order_labels({vals[j] for _, vals in raw_rows})
            if len(labels) > spec.K[j]:
                raise DataError(
                    "item %s: %d distinct labels exceed %d categories"
                    % (nm, len(labels), spec.K[j])
                )
            recode_maps[nm] = {lab: c + 1 for c, lab in enumerate(labels)}
        for i, (_, vals) in enumerate(raw_rows):
            for j, nm in enumerate(spec.item_names):
                y[i, j] = recode_maps[nm][vals[j]]
    else:
        for i, (lineno, vals) in enumerate(raw_rows):
            for j, nm in enumerate(spec.item_names):
                try:
                    code = int(vals[j])
                except ValueError:
                    raise DataError(
                        "line %d: item %s: %r is not an integer code"
                        " (use --recode for labeled data)"
                        % (lineno, nm, vals[j])
                    ) from None
                if not 1 <= code <= spec.K[j]:
                    raise DataError(
                        "line %d: item %s: code %d outside 1..%d"
                        % (lineno, nm, code, spec.K[j])
                    )
                y[i, j] = code

    notes = []
    for j, nm in enumerate(spec.item_names):
        seen = np.bincount(y[:, j], minlength=spec.K[j] + 1)[1:]
        gone = np.flatnonzero(seen == 0) + 1
        if gone.size:
            notes.append(
                "item %s: categories %s unobserved"
                % (nm, ",".join(map(str, gone)))
            )
    report = IngestReport(
        n_rows_read=n_read,
        n_rows_kept=y.shape[0],
        n_dropped_missing=n_dropped,
        recode_maps=recode_maps,
        notes=tuple(notes),
    )
    return ResponseMatrix(y), report


# ------------------------------------------------------------ parameter JSON

PARAMS_FORMAT = "ordcfa-params-v1"


def _spec_payload(spec):
    return {
        "items": [[nm, int(k)] for nm, k in zip(spec.item_names, spec.K)],
        "factors": {
            fn: [spec.item_names[j] for j in members]
            for fn, members in zip(spec.factor_names, spec.pattern)
        },
    }


def spec_fingerprint(spec):
    blob = json.dumps(_spec_payload(spec), sort_keys=True,
                      separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def params_payload(params, spec, regime, extra=None):
    payload = {
        "format": PARAMS_FORMAT,
        "regime": str(regime),
        "spec": _spec_payload(spec),
        "spec_fingerprint": spec_fingerprint(spec),
        "parameters": {
            "nu": params.nu.tolist(),
            "lam": params.lam.tolist(),
            "tau": [t.tolist() for t in params.tau],
            "theta": params.theta.tolist(),
            "kappa": params.kappa.tolist(),
            "phi": params.phi.tolist(),
        },
        "fixed": {
            "nu": params.fixed.nu.tolist(),
            "lam": params.fixed.lam.tolist(),
            "tau": [t.tolist() for t in params.fixed.tau],
            "theta": params.fixed.theta.tolist(),
            "kappa": params.fixed.kappa.tolist(),
            "phi": params.fixed.phi.tolist(),
        },
    }
    if extra:
        payload["fit"] = extra
    return payload


def save_params(path, params, spec, regime, extra=None):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(params_payload(params, spec, regime, extra), fh, indent=1)
        fh.write("\n")


def load_params(path):
    """Read a tagged parameter file: (params, spec, regime, payload)."""
    with open(path, encoding="utf-8") as fh:
        try:
            payload = json.load(fh)
        except json.JSONDecodeError as e:
            raise DataError("%s: not valid JSON (%s)" % (path, e)) from None
    if not isinstance(payload, dict) or payload.get("format") != PARAMS_FORMAT:
        raise DataError(
            "%s: not a %s file" % (path, PARAMS_FORMAT)
        )
    regime = payload.get("regime")
    if not regime:
        raise DataError(
            "%s: refusing parameter file without a constraint-regime tag"
            % path
        )
    try:
        spec_info = payload["spec"]
        spec = model.build_model_spec(
            {nm: k for nm, k in spec_info["items"]}, spec_info["factors"]
        )
        stored_fp = payload.get("spec_fingerprint")
        if stored_fp and stored_fp != spec_fingerprint(spec):
            raise DataError(
                "%s: spec fingerprint does not match the stored design" % path
            )
        prm = payload["parameters"]
        fx = payload["fixed"]
        fixed = model.FixedMask(
            np.asarray(fx["nu"], bool),
            np.asarray(fx["lam"], bool),
            tuple(np.asarray(t, bool) for t in fx["tau"]),
            np.asarray(fx["theta"], bool),
            np.asarray(fx["kappa"], bool),
            np.asarray(fx["phi"], bool),
        )
        params = model.ParameterSet(
            nu=np.asarray(prm["nu"], float),
            lam=np.asarray(prm["lam"], float),
            tau=tuple(np.asarray(t, float) for t in prm["tau"]),
            theta=np.asarray(prm["theta"], float),
            kappa=np.asarray(prm["kappa"], float),
            phi=np.asarray(prm["phi"], float),
            fixed=fixed,
        )
        model.check_parameter_set(params, spec)
    except DataError:
        raise
    except (KeyError, TypeError, ValueError, model.SpecError) as e:
        raise DataError("%s: malformed parameter file (%s)" % (path, e)) from None
    return params, spec, str(regime), payload


# ------------------------------------------------------------------ CSV out

def write_rows_csv(path, rows):
    """Write rows of mixed values; floats use repr so re-parsing with
    float() reproduces them exactly."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        for row in rows:
            w.writerow([
                repr(v) if isinstance(v, float) else v for v in row
            ])


# ---------------------------------------------------------------- study cfg

# configparser lowercases option names, so "K" in a file arrives as "k"
_CELL_KEYS = {
    "indicators_per_factor", "loading", "k", "distribution",
    "prop_sparse", "n", "seed",
}


def parse_study_config(text):
    """Study configuration: a [study] section with run options and one
    section per cell.

    [study] keys: reps, master_seed, n, nodes, eval_nodes (all optional).
    Cell keys: indicators_per_factor, loading, K, distribution,
    prop_sparse, n, seed.
    """
    cp = configparser.ConfigParser()
    try:
        cp.read_string(text)
    except configparser.Error as e:
        raise DataError("bad study config: %s" % e) from None
    options = {}
    if cp.has_section("study"):
        sec = cp["study"]
        for key, cast in (
            ("reps", int), ("master_seed", int), ("nodes", int),
            ("eval_nodes", int), ("n", int),
        ):
            if key in sec:
                try:
                    options[key] = cast(sec[key])
                except ValueError:
                    raise DataError(
                        "bad study config: %s = %r" % (key, sec[key])
                    ) from None
    conditions = []
    for name in cp.sections():
        if name == "study":
            continue
        sec = cp[name]
        unknown = set(sec) - _CELL_KEYS
        if unknown:
            raise DataError(
                "cell [%s]: unknown keys %s" % (name, ", ".join(sorted(unknown)))
            )
        for key in ("indicators_per_factor", "loading", "k", "distribution"):
            if key not in sec:
                raise DataError("cell [%s]: missing %s" % (name, key))
        try:
            cond = simulate.PopulationCondition(
                indicators_per_factor=sec.getint("indicators_per_factor"),
                loading=sec.getfloat("loading"),
                K=sec.getint("k"),
                response_distribution=sec.get("distribution"),
                prop_sparse=sec.getfloat("prop_sparse", 1.0),
                n=sec.getint("n", options.get("n", 500)),
                seed=sec.getint("seed") if "seed" in sec else None,
            )
            simulate.response_probabilities(
                cond.response_distribution, cond.K
            )
        except (TypeError, ValueError) as e:
            raise DataError("cell [%s]: %s" % (name, e)) from None
        conditions.append(cond)
    if not conditions:
        raise DataError("study config defines no cells")
    return conditions, options


# ----------------------------------------------------------------- manifest

def file_sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(65536), b""):
            h.update(block)
    return h.hexdigest()


def write_manifest(path, *, command, inputs=(), outputs=(), seeds=None,
                   settings=None):
    """Hash-stamped record of a run; no timestamps, so identical runs
    produce identical manifests."""
    import scipy

    payload = {
        "command": list(command),
        "inputs": {str(p): file_sha256(p) for p in inputs},
        "outputs": {str(p): file_sha256(p) for p in outputs},
        "versions": {"numpy": np.__version__, "scipy": scipy.__version__},
    }
    if seeds is not None:
        payload["seeds"] = seeds
    if settings:
        payload["settings"] = settings
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
        fh.write("\n")
