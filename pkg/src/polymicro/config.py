"""Line-oriented run-configuration files.

Format: one `key value...` pair per line; `[section]` or `[section name]`
headers group keys; `include PATH` splices another file (relative to the
including file); `#` starts a comment.  Runs carry dozens of physical
constants, so a readable key-value file beats positional flags.

``parse_config`` validates the whole file and reports every error at once
rather than failing fast.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

from polymicro import materials as mat


ANALYSES = ("patch-test", "solve", "homogenize", "damage", "crack", "mesh-gen")


class ConfigError(Exception):
    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(str(e) for e in self.errors))


@dataclass
class RunConfig:
    analysis: str
    materials: dict                 # name -> ReducedElasticity
    damage: dict                    # material name -> DamageParams
    sections: dict                  # section key -> {key: raw string}
    path: str = ""

    def section(self, name, default=None):
        return self.sections.get(name, default if default is not None else {})

    def get(self, section, key, cast=str, default=None, errors=None):
        raw = self.sections.get(section, {}).get(key)
        if raw is None:
            return default
        try:
            if cast is bool:
                return raw.lower() in ("1", "true", "yes", "on")
            return cast(raw)
        except ValueError:
            if errors is not None:
                errors.append(f"[{section}] {key}: cannot parse {raw!r}")
            return default


def _read_lines(path, seen=None):
    """Lines with include expansion: list of (filename, lineno, text)."""
    seen = seen or set()
    real = os.path.realpath(path)
    if real in seen:
        raise ConfigError([f"{path}: circular include"])
    seen.add(real)
    out = []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            text = raw.split("#", 1)[0].strip()
            if not text:
                continue
            if text.startswith("include "):
                sub = text.split(None, 1)[1]
                sub_path = os.path.join(os.path.dirname(path), sub)
                if not os.path.exists(sub_path):
                    out.append((path, lineno, None))
                    continue
                out.extend(_read_lines(sub_path, seen))
                continue
            out.append((path, lineno, text))
    return out


def parse_config(path):
    """Parse and validate; raises ConfigError carrying every problem found."""
    errors = []
    if not os.path.exists(path):
        raise ConfigError([f"{path}: no such file"])
    try:
        lines = _read_lines(path)
    except OSError as exc:
        raise ConfigError([str(exc)]) from exc
    if not lines:
        raise ConfigError([f"{path}:1: empty file"])

    sections = {"": {}}
    current = ""
    for fname, lineno, text in lines:
        if text is None:
            errors.append(f"{fname}:{lineno}: include target not found")
            continue
        if text.startswith("["):
            if not text.endswith("]"):
                errors.append(f"{fname}:{lineno}: unterminated section header")
                continue
            current = text[1:-1].strip()
            sections.setdefault(current, {})
            continue
        parts = text.split(None, 1)
        if len(parts) == 1:
            errors.append(f"{fname}:{lineno}: key {parts[0]!r} has no value")
            continue
        sections[current][parts[0]] = parts[1].strip()

    analysis = sections[""].get("analysis")
    if analysis is None:
        errors.append("missing top-level 'analysis' key")
    elif analysis not in ANALYSES:
        errors.append(f"unknown analysis kind {analysis!r} "
                      f"(choose from {', '.join(ANALYSES)})")

    materials = {}
    damage = {}
    for key, body in sections.items():
        if key.startswith("material "):
            name = key.split(None, 1)[1]
            materials[name] = _parse_material(name, body, errors)
        elif key.startswith("damage "):
            name = key.split(None, 1)[1]
            damage[name] = _parse_damage(name, body, errors)

    for name in damage:
        if name not in materials:
            errors.append(f"[damage {name}] refers to an undefined material")

    for key, body in sections.items():
        for ref_key in ("material", "matrix-material", "fiber-material"):
            ref = body.get(ref_key)
            if ref is not None and ref not in materials:
                errors.append(f"[{key}] {ref_key} {ref!r} is not defined")

    if errors:
        raise ConfigError(errors)
    return RunConfig(analysis=analysis, materials=materials, damage=damage,
                     sections=sections, path=path)


def _parse_material(name, body, errors):
    kind = body.get("kind", "isotropic")
    mode = body.get("mode", "plane-strain").replace("-", "_")
    try:
        if kind == "isotropic":
            return mat.isotropic_matrix(float(body["E"]), float(body["nu"]), mode)
        if kind == "cubic":
            return mat.cubic_plane_strain(float(body["C11"]), float(body["C12"]),
                                          float(body["C44"]))
        if kind == "transverse":
            return mat.isotropic_from_transverse(float(body["E22"]),
                                                 float(body["G23"]), mode)
        errors.append(f"[material {name}] unknown kind {kind!r}")
    except KeyError as exc:
        errors.append(f"[material {name}] missing constant {exc}")
    except (ValueError, mat.MaterialError) as exc:
        errors.append(f"[material {name}] {exc}")
    return None


def _parse_damage(name, body, errors):
    try:
        return mat.DamageParams(
            threshold=body.get("threshold", "mazars"),
            law=body.get("law", "linear"),
            r0=float(body["r0"]),
            rf=float(body["rf"]),
            f_t=float(body["f_t"]) if "f_t" in body else None,
            f_c=float(body["f_c"]) if "f_c" in body else None,
            X_t=float(body["X_t"]) if "X_t" in body else None,
            X_c=float(body["X_c"]) if "X_c" in body else None,
        )
    except KeyError as exc:
        errors.append(f"[damage {name}] missing parameter {exc}")
    except (ValueError, mat.MaterialError) as exc:
        errors.append(f"[damage {name}] {exc}")
    return None
