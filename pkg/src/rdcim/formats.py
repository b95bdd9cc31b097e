"""File formats: weight CSV, scales/config JSON, image CSV, atomic writes.

Weight CSV columns are ``layer,filter,index,value`` with integer quantized
values; ``index`` is the flattened fan-in position in (kh, kw, in_ch) order.
Scales JSON: ``{"scheme": "2A4W", "layers": {name: {"requant": "3/89",
"bias": [...]}}}``. Image CSV: a ``# shape H W C`` line, then one flattened
HWC image per row.
"""

from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import __version__
from .cell import DeviceParams
from .macro import MacroConfig
from .perf import CostConstants

WEIGHT_FIELDS = ("layer", "filter", "index", "value")


class FormatError(ValueError):
    pass


def _default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, Fraction):
        return f"{o.numerator}/{o.denominator}"
    if hasattr(o, "value") and hasattr(o, "name"):   # enums
        return o.value
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def dumps(obj) -> str:
    return json.dumps(obj, indent=2, default=_default, sort_keys=False) + "\n"


def atomic_write_text(path, text: str):
    """Write via a temporary file in the same directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_json(path, obj):
    atomic_write_text(path, dumps(obj))


def csv_text(rows: list, fieldnames=None) -> str:
    fieldnames = list(fieldnames or (rows[0].keys() if rows else []))
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=fieldnames, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow(r)
    return buf.getvalue()


def write_csv(path, rows: list, fieldnames=None):
    atomic_write_text(path, csv_text(rows, fieldnames))


def manifest(command: str, args: dict, seed: int | None = None, out_dir=None) -> dict:
    """Reproducibility record embedded in every JSON report (no timestamps)."""
    return {"tool": "rdcim", "version": __version__, "command": command, "seed": seed,
            "output_dir": str(out_dir) if out_dir is not None else None,
            "args": {k: (str(v) if isinstance(v, Path) else v) for k, v in sorted(args.items())}}


# --- weights ---------------------------------------------------------------------

def write_weights_csv(path, weights: dict):
    lines = [",".join(WEIGHT_FIELDS)]
    for name, w in weights.items():
        w = np.asarray(w)
        for f in range(w.shape[0]):
            lines.extend(f"{name},{f},{i},{int(v)}" for i, v in enumerate(w[f]))
    atomic_write_text(path, "\n".join(lines) + "\n")


def load_weights_csv(path, network) -> dict:
    """Read integer weights into ``(filters, fan_in)`` arrays per layer."""
    shapes = {l.name: (l.filters, l.fan_in) for l in network.weighted}
    out = {name: np.zeros(shape, dtype=np.int64) for name, shape in shapes.items()}
    seen = set()
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != list(WEIGHT_FIELDS):
            raise FormatError(f"{path}:1: expected header {','.join(WEIGHT_FIELDS)}")
        for lineno, row in enumerate(reader, start=2):
            if not row or not "".join(row).strip():
                continue
            if len(row) != 4:
                raise FormatError(f"{path}:{lineno}: expected 4 columns, got {len(row)}")
            layer = row[0].strip()
            try:
                f, i, v = int(row[1]), int(row[2]), int(row[3])
            except ValueError:
                raise FormatError(f"{path}:{lineno}: non-integer field in {row}") from None
            if layer not in shapes:
                raise FormatError(f"{path}:{lineno}: unknown layer {layer!r}")
            nf, nk = shapes[layer]
            if not (0 <= f < nf and 0 <= i < nk):
                raise FormatError(f"{path}:{lineno}: position ({f}, {i}) outside {layer} {shapes[layer]}")
            out[layer][f, i] = v
            seen.add(layer)
    missing = sorted(set(shapes) - seen)
    if missing:
        raise FormatError(f"{path}: no weights for layer(s) {', '.join(missing)}")
    return out


# --- scales -------------------------------------------------------------------------

def write_scales_json(path, quant, biases: dict):
    layers = {}
    for name in sorted(set(quant.scales) | set(biases), key=str):
        entry = {}
        if name in quant.scales:
            s = quant.scales[name]
            entry["requant"] = f"{s.numerator}/{s.denominator}"
        if name in biases:
            entry["bias"] = [int(b) for b in biases[name]]
        layers[name] = entry
    atomic_write_json(path, {"scheme": quant.scheme_label, "layers": layers})


def load_scales_json(path) -> tuple[str | None, dict, dict]:
    """Returns (scheme label, requant scales, biases)."""
    with open(path) as fh:
        raw = json.load(fh)
    scales, biases = {}, {}
    for name, entry in raw.get("layers", {}).items():
        if "requant" in entry:
            scales[name] = Fraction(str(entry["requant"]))
        if "bias" in entry:
            biases[name] = np.asarray(entry["bias"], dtype=np.int64)
    return raw.get("scheme"), scales, biases


# --- images -------------------------------------------------------------------------

def write_images_csv(path, images):
    images = np.asarray(images, dtype=float)
    lines = ["# shape " + " ".join(str(s) for s in images.shape[1:])]
    lines.extend(",".join(f"{v:.6g}" for v in img.ravel()) for img in images)
    atomic_write_text(path, "\n".join(lines) + "\n")


def load_images_csv(path) -> np.ndarray:
    with open(path) as fh:
        first = fh.readline()
        if not first.startswith("# shape"):
            raise FormatError(f"{path}:1: expected '# shape H W C'")
        shape = tuple(int(s) for s in first.split()[2:])
        rows = []
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            try:
                vals = [float(v) for v in line.split(",")]
            except ValueError:
                raise FormatError(f"{path}:{lineno}: non-numeric pixel") from None
            if len(vals) != int(np.prod(shape)):
                raise FormatError(f"{path}:{lineno}: expected {int(np.prod(shape))} values")
            rows.append(vals)
    return np.asarray(rows).reshape((len(rows),) + shape)


# --- config -------------------------------------------------------------------------

def load_config(path=None) -> dict:
    """``{"macro": {...}, "device": {...}, "cost": {...}}``; absent keys use defaults."""
    raw = {}
    if path is not None:
        with open(path) as fh:
            raw = json.load(fh)
    unknown = set(raw) - {"macro", "device", "cost"}
    if unknown:
        raise FormatError(f"{path}: unknown config section(s) {sorted(unknown)}")
    return {
        "macro": MacroConfig.from_dict(raw.get("macro", {})),
        "device": DeviceParams(**raw.get("device", {})),
        "cost": CostConstants.from_dict(raw.get("cost", {})),
    }
