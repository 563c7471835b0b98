"""JSON/CSV file formats: meshes, RVE definitions, run configurations, results."""
import hashlib
import json
import os

import jsonschema
import numpy as np

from .errors import ConfigError
from .fe2 import LoadSchedule, MacroProblem
from .fem import Mesh
from .rve import RveProblem
from .tensors import MaterialParams


def mesh_to_dict(mesh):
    d = {
        "nodes": [[i, float(x), float(y)] for i, (x, y) in enumerate(mesh.nodes)],
        "elements": mesh.elements.tolist(),
        "boundary_nodes": mesh.boundary_nodes.tolist(),
    }
    if mesh.element_materials is not None:
        d["element_materials"] = mesh.element_materials.tolist()
    return d


def mesh_from_dict(d):
    rows = sorted(d["nodes"], key=lambda r: r[0])
    ids = [int(r[0]) for r in rows]
    if ids != list(range(len(ids))):
        raise ValueError("node ids must be unique and contiguous from 0")
    return Mesh(nodes=[[r[1], r[2]] for r in rows], elements=d["elements"],
                boundary_nodes=d["boundary_nodes"], element_materials=d.get("element_materials"))


def save_json(obj, path):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=1)
        fh.write("\n")


def load_json(path):
    with open(path) as fh:
        return json.load(fh)


def save_mesh(mesh, path, materials=None):
    d = mesh_to_dict(mesh)
    if materials is not None:
        d["materials"] = {str(k): m.to_dict() for k, m in materials.items()}
    save_json(d, path)


def load_mesh(path):
    return mesh_from_dict(load_json(path))


def load_rve(mesh_path, material_path=None, bc_mode="periodic"):
    """RVE from a mesh file, with phases from the file itself or one material file."""
    d = load_json(mesh_path)
    mesh = mesh_from_dict(d)
    if "materials" in d and mesh.element_materials is not None:
        mat = {int(k): MaterialParams.from_dict(v) for k, v in d["materials"].items()}
    elif material_path is not None:
        mat = MaterialParams.load(material_path)
        mesh.element_materials = None
    else:
        raise ConfigError(f"{mesh_path} defines no materials and no material file was given")
    return RveProblem(mesh=mesh, mat=mat, bc_mode=bc_mode)


def _node_dof_value():
    return {"type": "array", "prefixItems": [{"type": "integer", "minimum": 0}, {"enum": [1, 2]}, {"type": "number"}],
            "minItems": 3, "maxItems": 3}


RUN_SCHEMA = {
    "type": "object",
    "properties": {
        "macro_mesh": {"type": "string"},
        "rve_mesh": {"type": "string"},
        "rve_bc": {"enum": ["periodic", "affine"]},
        "material": {"type": "string"},
        "mode": {"enum": ["direct", "surrogate"]},
        "model": {"type": "string"},
        "tangent_policy": {"enum": ["initial", "per_iteration"]},
        "load": {
            "type": "object",
            "properties": {
                "kind": {"enum": ["displacement", "force"]},
                "targets": {"type": "array", "items": _node_dof_value()},
                "supports": {"type": "array", "items": {
                    "type": "array", "prefixItems": [{"type": "integer", "minimum": 0}, {"enum": [1, 2]}],
                    "minItems": 2, "maxItems": 2}},
            },
            "required": ["kind", "targets"],
            "additionalProperties": False,
        },
        "increments": {"type": "integer", "minimum": 1},
        "tol": {"type": "number", "exclusiveMinimum": 0},
        "max_iter": {"type": "integer", "minimum": 1},
        "rve_tol": {"type": "number", "exclusiveMinimum": 0},
        "out": {"type": "string"},
    },
    "required": ["macro_mesh", "mode", "load", "increments", "tol", "out"],
    "additionalProperties": False,
    "allOf": [
        {"if": {"properties": {"mode": {"const": "surrogate"}}}, "then": {"required": ["model"]}},
        {"if": {"properties": {"mode": {"const": "direct"}}}, "then": {"required": ["rve_mesh"]}},
    ],
}


def validate_run_config(cfg):
    errors = sorted(jsonschema.Draft202012Validator(RUN_SCHEMA).iter_errors(cfg), key=lambda e: list(e.path))
    if errors:
        msgs = []
        for e in errors:
            where = "/".join(str(p) for p in e.absolute_path) or "<root>"
            msgs.append(f"{where}: {e.message}")
        raise ConfigError("invalid run configuration:\n  " + "\n  ".join(msgs))


def load_run_config(path):
    """Parse and validate a run configuration; relative paths resolve against its folder."""
    try:
        cfg = load_json(path)
    except json.JSONDecodeError as err:
        raise ConfigError(f"{path}: {err}") from None
    validate_run_config(cfg)
    base = os.path.dirname(os.path.abspath(path))
    for key in ("macro_mesh", "rve_mesh", "material", "model", "out"):
        if key in cfg and not os.path.isabs(cfg[key]):
            cfg[key] = os.path.join(base, cfg[key])
    return cfg


def config_digest(cfg):
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()


def macro_problem_from_config(cfg):
    mesh = load_mesh(cfg["macro_mesh"])
    load = cfg["load"]
    schedule = LoadSchedule(load["kind"], load["targets"], int(cfg["increments"]))
    supports = [(int(n), int(k)) for n, k in load.get("supports", [])]
    for n, _, _ in schedule.targets:
        if n >= mesh.n_nodes:
            raise ConfigError(f"load/targets: node {n} does not exist in the macro mesh")
    return MacroProblem(mesh=mesh, load=schedule, supports=supports)


def results_csv_path(out):
    root, _ = os.path.splitext(out)
    return root + ".csv"


def save_results(result, out):
    save_json(result.to_dict(), out)
    with open(results_csv_path(out), "w", newline="\n") as fh:
        fh.write(result.displacement_csv())


def array_equal_payload(a, b):
    """Structural equality of two JSON-like payloads (numpy arrays compared exactly)."""
    if isinstance(a, dict):
        return isinstance(b, dict) and a.keys() == b.keys() and all(array_equal_payload(a[k], b[k]) for k in a)
    if isinstance(a, (list, tuple)):
        return isinstance(b, (list, tuple)) and len(a) == len(b) and all(map(array_equal_payload, a, b))
    if isinstance(a, np.ndarray) or isinstance(b, np.ndarray):
        return np.array_equal(a, b)
    return a == b
