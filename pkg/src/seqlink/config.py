"""Pipeline configuration: one JSON document validated against a schema with defaults."""
from __future__ import annotations

import copy
import hashlib
import json

import jsonschema

from seqlink import sequential as sq
from seqlink.errors import ConfigError
from seqlink.phaselink import similarity_radius_px


def _num(default, minimum=None, maximum=None, exclusive_min=None):
    s = {"type": "number", "default": default}
    if minimum is not None:
        s["minimum"] = minimum
    if maximum is not None:
        s["maximum"] = maximum
    if exclusive_min is not None:
        s["exclusiveMinimum"] = exclusive_min
    return s


def _int(default, minimum=None):
    s = {"type": "integer", "default": default}
    if minimum is not None:
        s["minimum"] = minimum
    return s


def _section(props):
    return {"type": "object", "additionalProperties": False, "default": {}, "properties": props}


_PAIR = {"type": "array", "items": {"type": "integer", "minimum": 0}, "minItems": 2, "maxItems": 2}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "sim": _section({
            "rho0": _num(1.0, 0.0, 1.0),
            "rhoInf": _num(0.0, 0.0, 1.0),
            "tauDays": _num(60.0, exclusive_min=0.0),
            "bowlRateRadYr": _num(5.0),
            "tropoStd": _num(0.3, 0.0),
            "tropoCorrLen": {"type": ["number", "null"], "exclusiveMinimum": 0, "default": None},
            "bowlSigma": {"type": ["number", "null"], "exclusiveMinimum": 0, "default": None},
            "seed": _int(0, 0),
            "shape": dict(_PAIR, items={"type": "integer", "minimum": 1}, default=[200, 200]),
            "dates": {
                "type": "object",
                "additionalProperties": False,
                "default": {},
                "properties": {
                    "count": _int(60, 2),
                    "spacingDays": _num(12.0, exclusive_min=0.0),
                    "start": _num(0.0),
                },
            },
        }),
        "ps": _section({"threshold": _num(0.2, exclusive_min=0.0), "enabled": {"type": "boolean", "default": True}}),
        "shp": _section({
            "method": {"enum": ["glrt", "rect"], "default": "glrt"},
            "window": dict(_PAIR, default=[5, 7]),
            "alpha": _num(0.05, exclusive_min=0.0, maximum=1.0),
        }),
        "stats": _section({
            "weighting": {"enum": ["equal", "exponential"], "default": "equal"},
            "decay": _num(0.5, exclusive_min=0.0, maximum=1.0),
        }),
        "phaselink": _section({
            "maxIter": _int(100, 1),
            "shift0": _num(0.99),
            "condLimit": _num(1e12, exclusive_min=0.0),
            "beta": _num(0.0, 0.0),
            "decimation": dict(_PAIR, items={"type": "integer", "minimum": 1}, default=[1, 1]),
        }),
        "similarity": _section({"radiusMeters": _num(200.0, exclusive_min=0.0)}),
        "grid": _section({"spacingMeters": _num(30.0, exclusive_min=0.0)}),
        "sequential": _section({
            "miniStackSize": _int(15, 2),
            "maxCompressed": _int(6, 1),
            "scheme": {"enum": list(sq.SCHEMES), "default": sq.FIRST_DATE},
            "stateDir": {"type": ["string", "null"], "default": None},
        }),
        "unwrap": _section({
            "method": {"enum": ["oracle", "spatial"], "default": "oracle"},
            "errorFraction": _num(0.0, 0.0, 0.99),
            "regionSize": _int(10, 1),
            "seed": _int(0, 0),
            "qualityThreshold": _num(0.0),
        }),
        "inv": _section({
            "rho": _num(1.0, exclusive_min=0.0),
            "maxIter": _int(1000, 1),
            "tolAbs": _num(1e-6, exclusive_min=0.0),
            "tolRel": _num(1e-4, 0.0),
            "maskTol": _num(0.5, exclusive_min=0.0),
            "method": {"enum": ["l1", "lsq"], "default": "l1"},
        }),
        "reference": _section({"threshold": _num(0.95, 0.0, 1.0)}),
        "forward": _section({"outputOption": {"enum": [1, 2], "default": 1}, "newestCount": _int(4, 2)}),
        "validate": _section({
            "wavelengthMm": _num(55.47, exclusive_min=0.0),
            "va2Samples": _int(100_000, 1),
            "maxDistanceKm": _num(50.0, exclusive_min=0.0),
            "thresholdMmYr": _num(5.0, exclusive_min=0.0),
            "binKm": _num(5.0, exclusive_min=0.0),
            "seed": _int(0, 0),
        }),
        "runtime": _section({"threads": _int(1, 1)}),
    },
}


def _fill_defaults(schema, value):
    if schema.get("type") == "object" and isinstance(value, dict):
        for key, sub in schema.get("properties", {}).items():
            if key not in value and "default" in sub:
                value[key] = copy.deepcopy(sub["default"])
            if key in value:
                value[key] = _fill_defaults(sub, value[key])
    return value


def validate_config(doc: dict | None) -> dict:
    """Validate ``doc`` and return a new dict with every default filled in."""
    cfg = copy.deepcopy(doc or {})
    try:
        jsonschema.validate(cfg, SCHEMA)
    except jsonschema.ValidationError as exc:
        loc = ".".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config error at {loc}: {exc.message}") from None
    return _fill_defaults(SCHEMA, cfg)


def load_config(path=None) -> dict:
    if path is None:
        return validate_config({})
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
    return validate_config(doc)


def config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def link_params(cfg: dict) -> sq.LinkParams:
    spacing = cfg["grid"]["spacingMeters"]
    dec = tuple(cfg["phaselink"]["decimation"])
    out_spacing = spacing * max(dec)
    return sq.LinkParams(
        ps_threshold=cfg["ps"]["threshold"],
        use_ps=cfg["ps"]["enabled"],
        shp_method=cfg["shp"]["method"],
        shp_half_extent=tuple(cfg["shp"]["window"]),
        shp_alpha=cfg["shp"]["alpha"],
        weighting=cfg["stats"]["weighting"],
        decay=cfg["stats"]["decay"],
        shift0=cfg["phaselink"]["shift0"],
        max_iter=cfg["phaselink"]["maxIter"],
        cond_limit=cfg["phaselink"]["condLimit"],
        beta=cfg["phaselink"]["beta"],
        decimation=dec,
        similarity_radius_px=similarity_radius_px(cfg["similarity"]["radiusMeters"], out_spacing),
        threads=cfg["runtime"]["threads"],
    )
