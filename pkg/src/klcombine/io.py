"""CSV and JSON readers and writers for the command-line tools."""
from __future__ import annotations

import csv
import io
import json
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .distributions import BernoulliProduct, FiniteDistribution
from .ebayes import ExpressionMatrix, PipelineResult

GENE_COLUMNS = ("gene_id", "lfdr_theoretical", "lfdr_empirical", "qvalue", "lower_bound", "combined")


class InputError(ValueError):
    """Malformed input file; the message carries the location."""


def fmt(x) -> str:
    """12 significant digits, the fixed CSV number format."""
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".12g")
    return str(x)


def write_csv(rows: Iterable[Sequence], header: Sequence[str]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([fmt(v) for v in row])
    return buf.getvalue()


def dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n"


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(f"cannot serialize {type(o).__name__}")


def read_probabilities(path: Path) -> list[float]:
    """One probability per line; blank lines and ``#`` comments are skipped."""
    probs = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        text = line.split("#", 1)[0].strip()
        if not text:
            continue
        try:
            value = float(text)
        except ValueError:
            raise InputError(f"{path}:{lineno}: not a number: {text!r}") from None
        if not 0.0 <= value <= 1.0:
            raise InputError(f"{path}:{lineno}: probability {value} outside [0, 1]")
        probs.append(value)
    if not probs:
        raise InputError(f"{path}: no probabilities found")
    return probs


def read_family(path: Path):
    """Read ``{"kind": "finite" | "bernoulli-product", "distributions": [[...], ...]}``.

    A bare list of probability vectors is read as finite distributions.
    """
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: malformed JSON: {exc}") from None
    if isinstance(doc, list):
        doc = {"kind": "finite", "distributions": doc}
    if not isinstance(doc, dict) or "distributions" not in doc:
        raise InputError(f"{path}: expected an object with a 'distributions' list")
    kind = doc.get("kind", "finite")
    cls = {"finite": FiniteDistribution, "bernoulli-product": BernoulliProduct}.get(kind)
    if cls is None:
        raise InputError(f"{path}: unknown kind {kind!r}")
    family = []
    for i, probs in enumerate(doc["distributions"]):
        try:
            family.append(cls(probs))
        except (ValueError, TypeError) as exc:
            raise InputError(f"{path}: distribution {i}: {exc}") from None
    if not family:
        raise InputError(f"{path}: empty family")
    return family


def read_expression_csv(path: Path) -> ExpressionMatrix:
    """Header row of replicate names, then ``gene_id, value, value, ...`` rows."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2:
        raise InputError(f"{path}: need a header row and at least one gene")
    width = len(rows[0])
    ids, values = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != width:
            raise InputError(f"{path}:{lineno}: expected {width} fields, found {len(row)}")
        try:
            values.append([float(v) for v in row[1:]])
        except ValueError:
            raise InputError(f"{path}:{lineno}: non-numeric or missing value") from None
        ids.append(row[0])
    try:
        return ExpressionMatrix(np.array(values), tuple(ids))
    except ValueError as exc:
        raise InputError(f"{path}: {exc}") from None


def expression_csv(x: ExpressionMatrix) -> str:
    header = ["gene_id"] + [f"rep{k + 1}" for k in range(x.n_replicates)]
    return write_csv(([g, *row] for g, row in zip(x.gene_ids, x.values)), header)


def gene_rows(result: PipelineResult):
    theo, emp, q = (e.values for e in result.estimates)
    combined = result.combination.combined.values
    for j, gid in enumerate(result.gene_ids):
        yield gid, theo[j], emp[j], q[j], result.bound.values[j], combined[j]


def pipeline_summary(result: PipelineResult, config: dict) -> dict:
    comb = result.combination
    return {
        "weights": comb.weights,
        "excluded_methods": list(comb.excluded),
        "surviving_methods": [comb.methods[i] for i in comb.combination.surviving],
        "extreme_methods": [comb.methods[i] for i in comb.combination.extreme],
        "minimax_divergence_nats": comb.combination.value,
        "binding_counts": result.binding_counts(),
        "n_genes": len(result.gene_ids),
        "configuration": config,
    }


def pipeline_json(result: PipelineResult, config: dict) -> str:
    genes = [dict(zip(GENE_COLUMNS, row)) for row in gene_rows(result)]
    return dump_json({"metadata": pipeline_summary(result, config), "genes": genes})
