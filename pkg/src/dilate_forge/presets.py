"""Named systems for configuration files, with their master-equation conventions."""
from typing import Any, Dict

import numpy as np

from . import generators as gen
from .generators import LindbladSpec, TimeProfile


def decode_matrix(pairs) -> np.ndarray:
    """Nested ``[[[re, im], ...], ...]`` -> complex matrix."""
    arr = np.asarray(pairs, dtype=float)
    if arr.ndim != 3 or arr.shape[-1] != 2 or arr.shape[0] != arr.shape[1]:
        raise ValueError("matrices are square nested arrays of [re, im] pairs")
    return arr[..., 0] + 1j * arr[..., 1]


def encode_matrix(m: np.ndarray) -> list:
    m = np.asarray(m, dtype=complex)
    return np.stack([m.real, m.imag], axis=-1).tolist()


_NUMBER = {"type": "number"}
_POSITIVE = {"type": "number", "exclusiveMinimum": 0}
_PROFILE = {
    "type": "object",
    "properties": {
        "kind": {"enum": ["constant", "exponential", "sinusoidal", "polynomial", "tabulated"]},
        "params": {"type": "object"},
    },
    "required": ["kind"],
    "additionalProperties": False,
}
_MATRIX = {
    "type": "array",
    "items": {"type": "array", "items": {"type": "array", "items": _NUMBER,
                                         "minItems": 2, "maxItems": 2}},
}
_TERM = {
    "type": "object",
    "properties": {"operator": _MATRIX, "profile": _PROFILE},
    "required": ["operator", "profile"],
    "additionalProperties": False,
}


def _custom(params: Dict[str, Any]) -> LindbladSpec:
    def terms(key):
        return tuple((decode_matrix(t["operator"]), TimeProfile.from_dict(t["profile"]))
                     for t in params.get(key, []))

    return LindbladSpec(int(params["dim"]), terms("hamiltonian_terms"), terms("jump_terms"),
                        name="custom", convention=params.get(
                            "convention",
                            "drho/dt = -i[sum c(t) H, rho] + sum g(t)(L rho L^dag - {L^dag L, rho}/2)"))


def _unitary_only(params):
    h = decode_matrix(params["hamiltonian"])
    profile = TimeProfile.from_dict(params["profile"]) if "profile" in params else None
    return gen.unitary_only(h, profile)


PRESETS: Dict[str, dict] = {
    "spin_boson": {
        "build": lambda p: gen.spin_boson(TimeProfile.from_dict(p["rate"])),
        "params": {"rate": _PROFILE},
        "required": ["rate"],
        "example": {"rate": {"kind": "exponential",
                             "params": {"amplitude": 1.0, "power": 1, "rate": 1.0}}},
        "convention": "drho/dt = -gamma(t)[sz,[sz,rho]]; closed-form dilation h(t) sz kron sy",
    },
    "dephasing": {
        "build": lambda p: gen.dephasing(p["gamma"]),
        "params": {"gamma": _POSITIVE},
        "required": ["gamma"],
        "example": {"gamma": 1.0},
        "convention": "drho/dt = -gamma[sz,[sz,rho]]; coherences decay as exp(-4 gamma t)",
    },
    "amplitude_damping": {
        "build": lambda p: gen.amplitude_damping(p["gamma"], p.get("omega0", 0.0)),
        "params": {"gamma": _POSITIVE, "omega0": _NUMBER},
        "required": ["gamma"],
        "example": {"gamma": 1.0, "omega0": 0.0},
        "convention": "drho/dt = -gamma({s+s-,rho} - 2 s- rho s+) - i[omega0/2 sz, rho]",
    },
    "driven_damping": {
        "build": lambda p: gen.driven_damping(p["gamma"], p["omega"], p.get("omega0", 0.0)),
        "params": {"gamma": _POSITIVE, "omega": _NUMBER, "omega0": _NUMBER},
        "required": ["gamma", "omega"],
        "example": {"gamma": 1.0, "omega": 0.05},
        "convention": "amplitude damping - i Omega [sx, rho]",
    },
    "rwa_driving": {
        "build": lambda p: gen.rwa_driving(p["gamma"], p["omega0"], p["omega"],
                                           p.get("frequency")),
        "params": {"gamma": _POSITIVE, "omega0": _NUMBER, "omega": _NUMBER,
                   "frequency": _NUMBER},
        "required": ["gamma", "omega0", "omega"],
        "example": {"gamma": 1.0, "omega0": 2.0, "omega": 0.05},
        "convention": ("amplitude damping - i[(Omega/2)(cos(wt) sx + sin(wt) sy), rho]; "
                       "rotating-wave form of -i Omega cos(wt)[sx, rho], resonant by default"),
    },
    "unitary_only": {
        "build": _unitary_only,
        "params": {"hamiltonian": _MATRIX, "profile": _PROFILE},
        "required": ["hamiltonian"],
        "example": {"hamiltonian": encode_matrix([[0, 1], [1, 0]])},
        "convention": "drho/dt = -i c(t)[H, rho]; no dissipation",
    },
    "custom": {
        "build": _custom,
        "params": {"dim": {"type": "integer", "minimum": 1},
                   "hamiltonian_terms": {"type": "array", "items": _TERM},
                   "jump_terms": {"type": "array", "items": _TERM},
                   "convention": {"type": "string"}},
        "required": ["dim"],
        "example": {"dim": 2, "jump_terms": [
            {"operator": encode_matrix([[1, 0], [0, -1]]),
             "profile": {"kind": "constant", "params": {"value": 2.0}}}]},
        "convention": ("drho/dt = -i[sum c(t) H, rho] + sum g(t)(L rho L^dag - {L^dag L, rho}/2); "
                       "jump rates multiply the full dissipator"),
    },
}


def preset_schema(name: str) -> dict:
    entry = PRESETS[name]
    return {"type": "object", "properties": entry["params"], "required": entry["required"],
            "additionalProperties": False}


def build_system(name: str, params: Dict[str, Any]) -> LindbladSpec:
    if name not in PRESETS:
        raise KeyError(f"unknown preset {name!r}")
    return PRESETS[name]["build"](params)


def catalog() -> Dict[str, dict]:
    """Preset names, parameter schemas, examples and convention strings."""
    return {name: {"params": preset_schema(name), "example": e["example"],
                   "convention": e["convention"]}
            for name, e in PRESETS.items()}
