"""JSON configuration files, dB conversions and dotted-path overrides.

File layout (all keys lower-case)::

    {
      "tiers": [
        {"name": "macro", "mean_cell_radius_m": 500, "tx_power_w": 40, "bias_db": 0},
        {"name": "small", "bs_density_ratio": 2, "tx_power_w": 1, "bias_db": 0}
      ],
      "bands": [
        {"name": "800MHz", "bandwidth_hz": 9e6, "path_loss_exponent": 3, "wavelength_m": 0.375}
      ],
      "deployment": "[1;1]",
      "ue_density_ratio": 12, "ue_density_reference_tier": 2,
      "ue_bandwidth_share": 1.8e6,
      "noise_psd_dbm_hz": -174, "noise_figure_db": 6,
      "interference_limited": false
    }

Tier density is given by exactly one of ``bs_density`` (per m^2),
``mean_cell_radius_m`` (density ``1 / (pi R^2)``) or ``bs_density_ratio``
(multiple of tier 1's density; not allowed on tier 1). UE density is either
``ue_density`` (per m^2) or ``ue_density_ratio`` times the density of
``ue_density_reference_tier`` (1-based, default 1). Bands take either
``wavelength_m`` or a linear ``reference_gain``. ``deployment`` is the bracket
shorthand (one ``;``-separated row per tier) or a band-major nested list
``x[band][tier]``. ``ue_bandwidth_share`` is a scalar or a band-major matrix in Hz.
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
import re
from importlib import resources
from pathlib import Path
from typing import Any

from .model import Band, DeploymentMatrix, NetworkConfig, Tier


class ConfigSchemaError(ValueError):
    """The document does not follow the file layout."""


def db_to_linear(db: float) -> float:
    return 10.0 ** (db / 10.0)


def linear_to_db(x: float) -> float:
    return 10.0 * math.log10(x)


def dbm_per_hz_to_w_per_hz(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


def w_per_hz_to_dbm_per_hz(w: float) -> float:
    return 10.0 * math.log10(w) + 30.0


# keys that are mutually exclusive; setting one through an override drops the others
_ALTERNATIVES = (
    ("bs_density", "bs_density_ratio", "mean_cell_radius_m"),
    ("ue_density", "ue_density_ratio"),
    ("wavelength_m", "reference_gain"),
)
DENSITY_KEYS = _ALTERNATIVES[0]


def load_document(path: str | Path) -> dict:
    """Read a config file. ``OSError`` propagates for missing/unreadable paths."""
    text = Path(path).read_text(encoding="utf-8")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigSchemaError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(doc, dict):
        raise ConfigSchemaError(f"{path}: top level must be an object")
    return doc


def default_document(name: str = "tableI.json") -> dict:
    """One of the configs shipped in ``cahetnet/data``."""
    return json.loads(resources.files("cahetnet").joinpath("data", name).read_text(encoding="utf-8"))


def document_hash(doc: dict) -> str:
    canonical = json.dumps(doc, sort_keys=True, separators=(",", ":"), allow_nan=False)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


_STEP_RE = re.compile(r"^(\w+)(?:\[(\d+)\])?$")
_LIST_KEYS = {"tier": "tiers", "tiers": "tiers", "band": "bands", "bands": "bands"}


def parse_value(text: str) -> Any:
    """JSON literal if it parses, otherwise the raw string (e.g. deployment shorthand)."""
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def set_path(doc: dict, path: str, value: Any) -> dict:
    """Return a copy of ``doc`` with ``path`` (e.g. ``tier[2].bias_db``) set to ``value``.

    List indices are 1-based to match band/tier numbering in messages.
    """
    out = copy.deepcopy(doc)
    node: Any = out
    steps = path.split(".")
    for pos, step in enumerate(steps):
        m = _STEP_RE.match(step)
        if not m:
            raise ConfigSchemaError(f"bad override path {path!r}")
        key, index = m.group(1), m.group(2)
        last = pos == len(steps) - 1
        if index is not None:
            key = _LIST_KEYS.get(key, key)
            seq = node.get(key) if isinstance(node, dict) else None
            if not isinstance(seq, list) or not 1 <= int(index) <= len(seq):
                raise ConfigSchemaError(f"override path {path!r} does not resolve ({key}[{index}])")
            if last:
                seq[int(index) - 1] = value
                return out
            node = seq[int(index) - 1]
            continue
        if not isinstance(node, dict):
            raise ConfigSchemaError(f"override path {path!r} does not resolve at {step!r}")
        if last:
            for group in _ALTERNATIVES:
                if key in group:
                    for other in group:
                        node.pop(other, None)
            node[key] = value
            return out
        if key not in node:
            raise ConfigSchemaError(f"override path {path!r} does not resolve at {step!r}")
        node = node[key]
    return out


def apply_overrides(doc: dict, overrides) -> dict:
    """Apply ``key=value`` strings in order."""
    for item in overrides or ():
        if "=" not in item:
            raise ConfigSchemaError(f"override must be key=value, got {item!r}")
        key, raw = item.split("=", 1)
        doc = set_path(doc, key.strip(), parse_value(raw.strip()))
    return doc


def _number(obj: dict, key: str, where: str) -> float:
    if key not in obj:
        raise ConfigSchemaError(f"{where}: missing {key!r}")
    v = obj[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigSchemaError(f"{where}: {key!r} must be a number, got {v!r}")
    return float(v)


def _one_of(obj: dict, keys: tuple[str, ...], where: str) -> str:
    present = [k for k in keys if k in obj]
    if len(present) != 1:
        raise ConfigSchemaError(f"{where}: give exactly one of {', '.join(keys)}")
    return present[0]


def config_from_document(doc: dict) -> NetworkConfig:
    """Build a :class:`NetworkConfig`. Schema problems raise :class:`ConfigSchemaError`;
    modelling constraints are left to :func:`cahetnet.model.validate`."""
    for key in ("tiers", "bands", "deployment", "ue_bandwidth_share"):
        if key not in doc:
            raise ConfigSchemaError(f"missing top-level key {key!r}")
    if not isinstance(doc["tiers"], list) or not doc["tiers"]:
        raise ConfigSchemaError("'tiers' must be a non-empty list")
    if not isinstance(doc["bands"], list) or not doc["bands"]:
        raise ConfigSchemaError("'bands' must be a non-empty list")

    densities: list[float] = []
    tiers = []
    for k, t in enumerate(doc["tiers"], 1):
        where = f"tier {k}"
        kind = _one_of(t, _ALTERNATIVES[0], where)
        if kind == "bs_density":
            lam = _number(t, kind, where)
        elif kind == "mean_cell_radius_m":
            lam = 1.0 / (math.pi * _number(t, kind, where) ** 2)
        else:
            if k == 1:
                raise ConfigSchemaError("tier 1: bs_density_ratio is relative to tier 1 and cannot be used there")
            lam = _number(t, kind, where) * densities[0]
        densities.append(lam)
        tiers.append(
            Tier(
                bs_density=lam,
                tx_power=_number(t, "tx_power_w", where),
                bias=db_to_linear(float(t.get("bias_db", 0.0))),
                name=str(t.get("name", "")),
            )
        )

    bands = []
    for i, b in enumerate(doc["bands"], 1):
        where = f"band {i}"
        kind = _one_of(b, _ALTERNATIVES[2], where)
        common = (_number(b, "bandwidth_hz", where), _number(b, "path_loss_exponent", where))
        name = str(b.get("name", ""))
        if kind == "wavelength_m":
            bands.append(Band.from_wavelength(*common, _number(b, kind, where), name))
        else:
            bands.append(Band(*common, _number(b, kind, where), name))

    kind = _one_of(doc, _ALTERNATIVES[1], "top level")
    if kind == "ue_density":
        lam_u = _number(doc, kind, "top level")
    else:
        ref = int(doc.get("ue_density_reference_tier", 1))
        if not 1 <= ref <= len(densities):
            raise ConfigSchemaError(f"ue_density_reference_tier {ref} out of range")
        lam_u = _number(doc, kind, "top level") * densities[ref - 1]

    dep = doc["deployment"]
    try:
        deployment = DeploymentMatrix.parse(dep) if isinstance(dep, str) else DeploymentMatrix.from_array(dep)
    except (ValueError, TypeError) as exc:
        raise ConfigSchemaError(f"deployment: {exc}") from exc

    noise_psd = 0.0
    if doc.get("noise_psd_dbm_hz") is not None:
        noise_psd = dbm_per_hz_to_w_per_hz(_number(doc, "noise_psd_dbm_hz", "top level"))
    noise_figure = db_to_linear(float(doc.get("noise_figure_db", 0.0)))

    share = doc["ue_bandwidth_share"]
    try:
        return NetworkConfig.build(
            tiers,
            bands,
            deployment,
            lam_u,
            share,
            noise_psd=noise_psd,
            noise_figure=noise_figure,
            interference_limited=bool(doc.get("interference_limited", False)),
        )
    except (ValueError, TypeError) as exc:
        raise ConfigSchemaError(f"ue_bandwidth_share: {exc}") from exc


def load_config(path: str | Path | None = None, overrides=()) -> tuple[NetworkConfig, dict]:
    """Load (or take the shipped default), apply overrides, and build the config."""
    doc = default_document() if path is None else load_document(path)
    doc = apply_overrides(doc, overrides)
    return config_from_document(doc), doc
