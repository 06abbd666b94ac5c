"""Plain-text ``key = value`` run configuration.

One key per line, ``#`` starts a comment, sections are dotted prefixes
(``grid.n``, ``blob.1.kappa``).  A file whose first non-blank character is
``{`` is read as JSON and flattened to the same dotted keys.
"""
from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass

from ..dynamics import EvolutionConfig
from ..geometry import DomainSpec
from ..pointvortex import VortexConfiguration
from ..steady import Blob, ProblemSpec


class ConfigError(ValueError):
    """Invalid or incomplete configuration (exit code 2)."""


def _floats(text: str) -> tuple:
    parts = [p for p in re.split(r"[,\sx]+", text.strip()) if p]
    if not parts:
        raise ValueError("empty list")
    return tuple(float(p) for p in parts)


def _opt_int(text: str):
    return None if text.lower() == "none" else int(text)


# key -> (parser, default); a default of None means "unset"
SCHEMA = {
    "domain.kind": (str, None),
    "domain.size": (_floats, None),
    "grid.n": (int, 128),
    "eps": (float, None),
    "rbar": (float, None),
    "solver.backend": (str, "auto"),
    "solver.tol": (float, 1e-10),
    "solver.max_iter": (_opt_int, None),
    "kr.tol": (float, 1e-8),
    "kr.max_iter": (int, 20000),
    "pv.dt": (float, 0.01),
    "pv.T": (float, 10.0),
    "evolve.dt": (float, 0.01),
    "evolve.T": (float, 1.0),
    "evolve.interp": (str, "cubic"),
    "evolve.stride": (int, 10),
    "evolve.cfl": (float, 0.8),
    "evolve.init": (str, "steady"),
    "evolve.backend": (str, "fd"),
    "perturb.kind": (str, "shift"),
    "perturb.amp": (float, 0.01),
    "perturb.seed": (int, 0),
    "stability.p": (float, 2.0),
    "stability.turnovers": (float, None),
    "profile.q": (float, 1.0),
    "profile.lambda": (float, 100.0),
    "sweep.eps": (_floats, None),
    "output.dir": (str, "out"),
}
BLOB_KEY = re.compile(r"^blob\.(\d+)\.(x|y|kappa|profile)$")
BLOB_FIELDS = {"x": float, "y": float, "kappa": float, "profile": str}
# keys that do not change any computed number
UNHASHED = {"output.dir"}


def _canonical(value) -> str:
    if isinstance(value, tuple):
        return ",".join(_canonical(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def parse_text(text: str) -> dict[str, str]:
    """Raw ``key -> value`` strings from config text (JSON or key=value)."""
    stripped = text.lstrip()
    if stripped.startswith("{"):
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON config: {exc}") from None
        out = {}

        def walk(prefix, obj):
            if isinstance(obj, dict):
                for k, v in obj.items():
                    walk(f"{prefix}.{k}" if prefix else str(k), v)
            elif isinstance(obj, list):
                out[prefix] = ",".join(str(v) for v in obj)
            else:
                out[prefix] = str(obj)

        walk("", data)
        return out
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key '{key}'")
        out[key] = value
    return out


@dataclass(frozen=True)
class RunConfig:
    """Validated configuration: resolved scalar keys plus the blob table."""

    values: dict
    blobs: tuple

    @classmethod
    def from_mapping(cls, raw: dict[str, str]) -> "RunConfig":
        values = {k: d for k, (_, d) in SCHEMA.items()}
        blob_raw: dict[int, dict] = {}
        for key, text in raw.items():
            m = BLOB_KEY.match(key)
            if m:
                idx, fld = int(m.group(1)), m.group(2)
                try:
                    blob_raw.setdefault(idx, {})[fld] = BLOB_FIELDS[fld](text)
                except ValueError:
                    raise ConfigError(f"bad value for '{key}': {text!r}") from None
                continue
            if key not in SCHEMA:
                raise ConfigError(f"unknown key '{key}'")
            try:
                values[key] = SCHEMA[key][0](text)
            except ValueError:
                raise ConfigError(f"bad value for '{key}': {text!r}") from None
        blobs = []
        for idx in sorted(blob_raw):
            b = blob_raw[idx]
            for fld in ("x", "y", "kappa"):
                if fld not in b:
                    raise ConfigError(f"missing required key 'blob.{idx}.{fld}'")
            blobs.append((idx, b["x"], b["y"], b["kappa"], b.get("profile", "patch")))
        return cls(values, tuple(blobs))

    @classmethod
    def load(cls, path=None, overrides=()) -> "RunConfig":
        raw = {}
        if path is not None:
            try:
                with open(path) as fh:
                    raw = parse_text(fh.read())
            except OSError as exc:
                raise ConfigError(f"cannot read config: {exc}") from None
        for item in overrides:
            if "=" not in item:
                raise ConfigError(f"--set expects key=value, got {item!r}")
            k, v = (s.strip() for s in item.split("=", 1))
            raw[k] = v
        return cls.from_mapping(raw)

    def __getitem__(self, key):
        return self.values[key]

    def canonical_lines(self) -> list[str]:
        lines = [f"{k}={_canonical(v)}" for k, v in sorted(self.values.items())
                 if k not in UNHASHED and v is not None]
        for idx, x, y, kappa, prof in self.blobs:
            lines += [f"blob.{idx}.kappa={kappa!r}", f"blob.{idx}.profile={prof}",
                      f"blob.{idx}.x={x!r}", f"blob.{idx}.y={y!r}"]
        return lines

    @property
    def hash(self) -> str:
        return hashlib.sha256("\n".join(self.canonical_lines()).encode()).hexdigest()[:16]

    # -- typed views, each raising ConfigError on invalid input ------------

    def require(self, *keys) -> None:
        for k in keys:
            if self.values.get(k) is None:
                raise ConfigError(f"missing required key '{k}'")

    def domain(self) -> DomainSpec:
        self.require("domain.kind")
        kind, size = self["domain.kind"], self["domain.size"]
        if kind == "disk":
            if size is not None and size != (1.0,):
                raise ConfigError("domain.size for a disk is its radius and must be 1")
            return DomainSpec.unit_disk()
        if kind == "rectangle":
            self.require("domain.size")
            if len(size) != 2:
                raise ConfigError("domain.size for a rectangle needs two side lengths, e.g. 2x1")
            try:
                return DomainSpec.rectangle(*size)
            except ValueError as exc:
                raise ConfigError(f"domain.size: {exc}") from None
        raise ConfigError(f"domain.kind must be 'disk' or 'rectangle', got {kind!r}")

    def backend(self):
        b = self["solver.backend"]
        if b not in ("auto", "fd", "kernel"):
            raise ConfigError(f"solver.backend must be auto, fd or kernel, got {b!r}")
        return None if b == "auto" else b

    def problem_spec(self, eps: float | None = None) -> ProblemSpec:
        dom = self.domain()
        if not self.blobs:
            raise ConfigError("missing required key 'blob.1.x' (at least one blob)")
        if eps is None:
            self.require("eps")
            eps = self["eps"]
        backend = self.backend()
        if backend == "kernel" and dom.kind != "disk":
            raise ConfigError("solver.backend=kernel is only available on the disk")
        for b in self.blobs:
            if b[4] not in ("patch", "cap"):
                raise ConfigError(f"blob.{b[0]}.profile must be patch or cap")
        kw = {} if self["solver.max_iter"] is None else {"max_iter": self["solver.max_iter"]}
        spec = ProblemSpec([Blob((x, y), kappa, prof) for _, x, y, kappa, prof in self.blobs], float(eps),
                           dom, self["grid.n"], self["rbar"], backend, **kw)
        try:
            spec.validate()
        except ValueError as exc:
            raise ConfigError(f"problem rejected: {exc}") from None
        return spec

    def vortices(self) -> VortexConfiguration:
        dom = self.domain()
        if not self.blobs:
            raise ConfigError("missing required key 'blob.1.x' (at least one vortex)")
        try:
            c = VortexConfiguration([(b[1], b[2]) for b in self.blobs], [b[3] for b in self.blobs], dom)
            c.check()
        except ValueError as exc:
            raise ConfigError(f"vortex configuration rejected: {exc}") from None
        return c

    def evolution(self, T: float | None = None) -> EvolutionConfig:
        backend = self["evolve.backend"]
        if backend not in ("fd", "hybrid"):
            raise ConfigError(f"evolve.backend must be fd or hybrid, got {backend!r}")
        if backend == "hybrid" and self.domain().kind != "disk":
            raise ConfigError("evolve.backend=hybrid is only available on the disk")
        try:
            return EvolutionConfig(self["evolve.dt"], self["evolve.T"] if T is None else T,
                                   self["evolve.interp"], self["evolve.cfl"], self["evolve.stride"],
                                   backend)
        except ValueError as exc:
            raise ConfigError(f"evolve: {exc}") from None
