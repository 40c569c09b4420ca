"""Run configuration: strict JSON schema with canonical (byte-stable)
emission.

Unknown fields are rejected with their path; vectors are normalized at parse
time with an explicit report so silent typos cannot redefine the physics.
All floats are emitted with 17 significant digits, which makes
emit -> parse -> emit byte-identical.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

_SHAPES = ("sphere", "ellipsoid", "box", "none")


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return f"{v:.17g}"
    if isinstance(v, int):
        return str(v)
    if isinstance(v, str):
        return json.dumps(v)
    if v is None:
        return "null"
    raise ConfigError(f"cannot serialize {type(v)}")


def canonical_dumps(obj, indent=0):
    """Canonical JSON: sorted keys, two-space indent, %.17g floats."""
    pad = "  " * indent
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = []
        for k in sorted(obj):
            items.append(f'{pad}  {json.dumps(k)}: '
                         f'{canonical_dumps(obj[k], indent + 1)}')
        return "{\n" + ",\n".join(items) + f"\n{pad}}}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        items = [f"{pad}  {canonical_dumps(v, indent + 1)}" for v in obj]
        return "[\n" + ",\n".join(items) + f"\n{pad}]"
    return _fmt(obj)


def _expect_keys(d, path, required, optional=()):
    if not isinstance(d, dict):
        raise ConfigError(f"{path}: expected an object")
    for k in d:
        if k not in required and k not in optional:
            raise ConfigError(f"{path}.{k}: unknown field")
    for k in required:
        if k not in d:
            raise ConfigError(f"{path}.{k}: missing required field")


def _vec3(v, path):
    try:
        arr = [float(x) for x in v]
    except (TypeError, ValueError):
        raise ConfigError(f"{path}: expected a 3-vector")
    if len(arr) != 3:
        raise ConfigError(f"{path}: expected exactly 3 components")
    return arr


@dataclass
class ShapeSpec:
    shape: str
    size: list
    center: list

    @classmethod
    def parse(cls, d, path):
        _expect_keys(d, path, ("shape",), ("size", "center"))
        shape = d["shape"]
        if shape not in _SHAPES:
            raise ConfigError(f"{path}.shape: unknown shape {shape!r}")
        if shape == "none":
            return cls("none", [], [0.0, 0.0, 0.0])
        size = d.get("size")
        if size is None:
            raise ConfigError(f"{path}.size: required for shape {shape!r}")
        if isinstance(size, (int, float)):
            size = [float(size)]
        else:
            size = [float(x) for x in size]
        if any(s <= 0 for s in size):
            raise ConfigError(f"{path}.size: must be positive")
        center = _vec3(d.get("center", [0.0, 0.0, 0.0]), f"{path}.center")
        return cls(shape, size, center)

    def to_dict(self):
        if self.shape == "none":
            return {"shape": "none"}
        return {"shape": self.shape, "size": list(self.size),
                "center": list(self.center)}

    def build(self, refinement):
        from .geometry import generate_surface_mesh
        if self.shape == "none":
            return None
        return generate_surface_mesh(self.shape, self.size, self.center,
                                     refinement)


@dataclass
class RunConfig:
    obstacle: ShapeSpec
    domain: ShapeSpec
    eps0: float
    mu0: float
    eps_spec: dict
    direction: list
    polarization: list
    frequencies: list
    obstacle_refinement: int
    domain_refinement: int
    cell_size: float
    solver_tol: float
    farfield_n_theta: int
    compare: dict = None
    recovery: dict = None
    normalization_report: list = field(default_factory=list)

    @classmethod
    def parse(cls, text_or_dict):
        if isinstance(text_or_dict, str):
            try:
                raw = json.loads(text_or_dict)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"JSON parse error: line {exc.lineno},"
                                  f" column {exc.colno}: {exc.msg}")
        else:
            raw = text_or_dict
        _expect_keys(raw, "config",
                     ("geometry", "material", "incidence", "frequency",
                      "discretization"),
                     ("compare", "recovery"))
        geo = raw["geometry"]
        _expect_keys(geo, "geometry", ("obstacle", "domain"))
        obstacle = ShapeSpec.parse(geo["obstacle"], "geometry.obstacle")
        domain = ShapeSpec.parse(geo["domain"], "geometry.domain")

        mat = raw["material"]
        _expect_keys(mat, "material", ("eps0", "mu0", "eps"))
        eps0 = float(mat["eps0"])
        mu0 = float(mat["mu0"])
        if eps0 <= 0 or mu0 <= 0:
            raise ConfigError("material.eps0/mu0: must be positive")
        eps = mat["eps"]
        _expect_keys(eps, "material.eps", ("type",),
                     ("value", "radii", "values"))
        if eps["type"] == "constant":
            if "value" not in eps or float(eps["value"]) <= 0:
                raise ConfigError("material.eps.value: positive value required")
            eps_spec = {"type": "constant", "value": float(eps["value"])}
        elif eps["type"] == "radial":
            radii = [float(x) for x in eps.get("radii", [])]
            values = [float(x) for x in eps.get("values", [])]
            if len(radii) < 2 or len(radii) != len(values):
                raise ConfigError("material.eps: radial table needs matching"
                                  " radii/values lists (>= 2 entries)")
            if any(v <= 0 for v in values):
                raise ConfigError("material.eps.values: must be positive")
            if any(b <= a for a, b in zip(radii, radii[1:])):
                raise ConfigError("material.eps.radii: strictly increasing")
            eps_spec = {"type": "radial", "radii": radii, "values": values}
        else:
            raise ConfigError(f"material.eps.type: unknown {eps['type']!r}")

        inc = raw["incidence"]
        _expect_keys(inc, "incidence", ("direction", "polarization"))
        report = []
        d = np.array(_vec3(inc["direction"], "incidence.direction"))
        nd = np.linalg.norm(d)
        if nd == 0:
            raise ConfigError("incidence.direction: zero vector")
        if abs(nd - 1.0) > 1e-12:
            report.append(f"direction normalized by factor {1.0 / nd:.17g}")
        d = d / nd
        p = np.array(_vec3(inc["polarization"], "incidence.polarization"))
        if np.linalg.norm(p) == 0:
            raise ConfigError("incidence.polarization: zero vector")
        dp = d @ p
        if abs(dp) > 1e-12 * np.linalg.norm(p):
            report.append(f"polarization orthogonalized (removed {dp:.17g}"
                          " along the direction)")
            p = p - dp * d
        if np.linalg.norm(p) == 0:
            raise ConfigError("incidence.polarization: parallel to direction")

        freq = raw["frequency"]
        _expect_keys(freq, "frequency", (), ("list", "linspace"))
        if ("list" in freq) == ("linspace" in freq):
            raise ConfigError("frequency: exactly one of list/linspace")
        if "list" in freq:
            freqs = [float(x) for x in freq["list"]]
        else:
            lo, hi, n = freq["linspace"]
            freqs = list(np.linspace(float(lo), float(hi), int(n)))
        if any(f <= 0 for f in freqs) or any(
                b <= a for a, b in zip(freqs, freqs[1:])):
            raise ConfigError("frequency: positive, strictly increasing")

        disc = raw["discretization"]
        _expect_keys(disc, "discretization", (),
                     ("obstacle_refinement", "domain_refinement", "cell_size",
                      "solver_tol", "farfield_n_theta"))
        cfg = cls(
            obstacle=obstacle, domain=domain, eps0=eps0, mu0=mu0,
            eps_spec=eps_spec, direction=[float(x) for x in d],
            polarization=[float(x) for x in p], frequencies=freqs,
            obstacle_refinement=int(disc.get("obstacle_refinement", 2)),
            domain_refinement=int(disc.get("domain_refinement", 2)),
            cell_size=float(disc.get("cell_size", 0.5)),
            solver_tol=float(disc.get("solver_tol", 1e-10)),
            farfield_n_theta=int(disc.get("farfield_n_theta", 9)),
            compare=raw.get("compare"), recovery=raw.get("recovery"),
            normalization_report=report,
        )
        if cfg.compare is not None:
            _expect_keys(cfg.compare, "compare", (),
                         ("obstacle", "domain", "eps"))
        if cfg.recovery is not None:
            _expect_keys(cfg.recovery, "recovery", ("eps_grid",), ("noise",))
        return cfg

    def to_dict(self):
        out = {
            "geometry": {"obstacle": self.obstacle.to_dict(),
                         "domain": self.domain.to_dict()},
            "material": {"eps0": self.eps0, "mu0": self.mu0,
                         "eps": dict(self.eps_spec)},
            "incidence": {"direction": list(self.direction),
                          "polarization": list(self.polarization)},
            "frequency": {"list": list(self.frequencies)},
            "discretization": {
                "obstacle_refinement": self.obstacle_refinement,
                "domain_refinement": self.domain_refinement,
                "cell_size": self.cell_size,
                "solver_tol": self.solver_tol,
                "farfield_n_theta": self.farfield_n_theta,
            },
        }
        if self.compare is not None:
            out["compare"] = self.compare
        if self.recovery is not None:
            out["recovery"] = self.recovery
        return out

    def emit(self):
        return canonical_dumps(self.to_dict()) + "\n"

    # -- scene construction -------------------------------------------------------

    def build_meshes(self, obstacle_refinement=None, domain_refinement=None):
        from .geometry import generate_shell_volume_mesh
        oref = self.obstacle_refinement if obstacle_refinement is None \
            else obstacle_refinement
        dref = self.domain_refinement if domain_refinement is None \
            else domain_refinement
        obstacle = self.obstacle.build(oref)
        domain = self.domain.build(dref)
        shell = None
        if domain is not None:
            shell = generate_shell_volume_mesh(domain, obstacle,
                                               self.cell_size)
        return obstacle, domain, shell

    def build_material(self, shell, obstacle):
        from .forward import MaterialMap
        if shell is None:
            return MaterialMap.constant(None, self.eps0, self.eps0, self.mu0)
        if self.eps_spec["type"] == "constant":
            m = MaterialMap.constant(shell, self.eps_spec["value"],
                                     self.eps0, self.mu0)
        else:
            m = MaterialMap.radial_profile(
                shell, self.eps_spec["radii"], self.eps_spec["values"],
                center=self.domain.center, eps0=self.eps0, mu0=self.mu0,
                obstacle=obstacle)
        return m
