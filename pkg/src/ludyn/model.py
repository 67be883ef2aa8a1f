"""Kinematic trees, the plain-text model format, and the velocity pass.

Model file grammar (UTF-8, one statement per line, ``#`` starts a comment)::

    link <name> parent=<name|world> joint=<revolute|prismatic> axis=<x,y,z>
         xyz=<x,y,z> rpy=<r,p,y> mass=<kg> com=<x,y,z>
         inertia=<ixx,iyy,izz,ixy,ixz,iyz>
    gravity <x,y,z>

``xyz``/``rpy`` place the joint frame in the parent frame (fixed-axis
roll-pitch-yaw).  The joint transform is ``^iX_λ(q) = XJ(q) · X_offset``
where ``XJ`` rotates about (or translates along) ``axis`` by ``q``.
``com`` and ``inertia`` are expressed in the link frame, the inertia about
the centre of mass.  Omitted keys default to zero; links may appear in any
order and are renumbered so that every parent precedes its children.
"""
from __future__ import annotations

import heapq
import re
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import DimensionMismatch, ParseError, TopologyError
from .spatial import (SpatialInertia, SpatialTransform, cross_force, cross_motion,
                      rotation_about, rpy_matrix, skew)

DEFAULT_GRAVITY = (0.0, 0.0, -9.81)
JOINT_TYPES = ("revolute", "prismatic")


@dataclass(frozen=True)
class Joint:
    kind: str
    axis: tuple
    xyz: tuple = (0.0, 0.0, 0.0)
    rpy: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if self.kind not in JOINT_TYPES:
            raise ValueError(f"unsupported joint type {self.kind!r}")
        a = np.asarray(self.axis, dtype=float)
        n = np.linalg.norm(a)
        if n == 0:
            raise ValueError("joint axis must be non-zero")
        object.__setattr__(self, "axis", tuple(float(x) for x in a / n))
        object.__setattr__(self, "xyz", tuple(float(x) for x in self.xyz))
        object.__setattr__(self, "rpy", tuple(float(x) for x in self.rpy))

    @property
    def offset(self):
        """Fixed transform from the parent frame to the joint frame."""
        return SpatialTransform(rpy_matrix(self.rpy).T, self.xyz)

    def motion_subspace(self):
        s = np.zeros(6)
        if self.kind == "revolute":
            s[:3] = self.axis
        else:
            s[3:] = self.axis
        return s

    def joint_transform(self, q):
        if self.kind == "revolute":
            return SpatialTransform(rotation_about(self.axis, q).T, np.zeros(3))
        return SpatialTransform(np.eye(3), q * np.asarray(self.axis))

    def transform(self, q):
        """``^iX_{λ_i}(q)``."""
        return self.joint_transform(q) @ self.offset

    def canonical_axis(self):
        """Index (0-2) of the coordinate axis the joint axis lies on, or None."""
        a = np.asarray(self.axis)
        nz = np.flatnonzero(a)
        return int(nz[0]) if len(nz) == 1 else None


@dataclass(frozen=True)
class KinematicTree:
    """A fixed-base kinematic tree with links numbered ``1..n_links``.

    ``parents[i-1]`` is λ_i (0 denotes the fixed base).
    """

    names: tuple
    parents: tuple
    joints: tuple
    inertias: tuple
    gravity: tuple = DEFAULT_GRAVITY
    _children: tuple = field(default=(), repr=False, compare=False)

    def __post_init__(self):
        n = len(self.names)
        if not (len(self.parents) == len(self.joints) == len(self.inertias) == n):
            raise DimensionMismatch("names, parents, joints and inertias must have equal length")
        if n == 0:
            raise TopologyError("a tree needs at least one link")
        if len(set(self.names)) != n:
            raise TopologyError("duplicate link names")
        for i, p in enumerate(self.parents, start=1):
            if not 0 <= p < i:
                raise TopologyError(f"link {i} has parent {p}; numbering must satisfy λ_i < i")
        roots = [i for i, p in enumerate(self.parents, start=1) if p == 0]
        if roots != [1]:
            raise TopologyError("exactly one link (link 1) may be attached to the fixed base")
        children = [[] for _ in range(n + 1)]
        for i, p in enumerate(self.parents, start=1):
            children[p].append(i)
        object.__setattr__(self, "names", tuple(self.names))
        object.__setattr__(self, "parents", tuple(int(p) for p in self.parents))
        object.__setattr__(self, "joints", tuple(self.joints))
        object.__setattr__(self, "inertias", tuple(self.inertias))
        object.__setattr__(self, "gravity", tuple(float(g) for g in self.gravity))
        object.__setattr__(self, "_children", tuple(tuple(c) for c in children))

    @property
    def n_links(self):
        return len(self.names)

    def parent(self, i):
        return self.parents[i - 1]

    def children(self, i):
        """μ_i; ``children(0)`` lists the links attached to the base."""
        return self._children[i]

    def joint(self, i):
        return self.joints[i - 1]

    def inertia(self, i):
        return self.inertias[i - 1]

    def index(self, name):
        try:
            return self.names.index(name) + 1
        except ValueError:
            raise KeyError(f"no link named {name!r}") from None

    def links(self):
        return range(1, self.n_links + 1)

    def base_acceleration(self):
        """``a_0 = -a_g``."""
        return np.concatenate([np.zeros(3), -np.asarray(self.gravity)])


@dataclass(frozen=True)
class KinematicState:
    """Velocity-level quantities; arrays are indexed by link number (row 0 is the base)."""

    q: np.ndarray
    qd: np.ndarray
    X_lambda: tuple
    S: np.ndarray
    v: np.ndarray
    c: np.ndarray
    nu: np.ndarray


def kinematics(tree, q, qd):
    n = tree.n_links
    q = np.asarray(q, dtype=float).reshape(-1)
    qd = np.asarray(qd, dtype=float).reshape(-1)
    if q.shape != (n,) or qd.shape != (n,):
        raise DimensionMismatch(f"expected {n} joint positions and velocities")
    X = [SpatialTransform.identity()]
    S = np.zeros((n + 1, 6))
    v = np.zeros((n + 1, 6))
    c = np.zeros((n + 1, 6))
    nu = np.zeros((n + 1, 6))
    for i in tree.links():
        joint = tree.joint(i)
        Xi = joint.transform(q[i - 1])
        X.append(Xi)
        S[i] = joint.motion_subspace()
        vj = S[i] * qd[i - 1]
        v[i] = Xi.apply_motion(v[tree.parent(i)]) + vj
        c[i] = cross_motion(v[i]) @ vj
        nu[i] = cross_force(v[i]) @ (tree.inertia(i).matrix() @ v[i])
    for arr in (q, qd, S, v, c, nu):
        arr.setflags(write=False)
    return KinematicState(q, qd, tuple(X), S, v, c, nu)


def transform_to_base(tree, kin, i):
    """``^iX_0`` composed along the path from the base."""
    X = SpatialTransform.identity()
    path = []
    while i != 0:
        path.append(i)
        i = tree.parent(i)
    for j in reversed(path):
        X = kin.X_lambda[j] @ X
    return X


# ----------------------------------------------------------------------------
# model-file parsing

_FLOAT = r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?"
_LINK_KEYS = {"parent", "joint", "axis", "xyz", "rpy", "mass", "com", "inertia"}
_VECTOR_LEN = {"axis": 3, "xyz": 3, "rpy": 3, "com": 3, "inertia": 6, "mass": 1}


def _parse_numbers(text, count, lineno, col):
    parts = text.split(",")
    if len(parts) != count or not all(re.fullmatch(_FLOAT, p.strip()) for p in parts):
        raise ParseError(lineno, col, f"expected {count} comma-separated decimal numbers, got {text!r}")
    return tuple(float(p) for p in parts)


def _tokens(line):
    """Yield ``(token, 1-based column)`` pairs of whitespace-separated tokens."""
    for m in re.finditer(r"\S+", line):
        yield m.group(0), m.start() + 1


def parse_model(text):
    """Parse a model file into a :class:`KinematicTree`."""
    entries = []
    seen = {}
    gravity = DEFAULT_GRAVITY
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0]
        toks = list(_tokens(line))
        if not toks:
            continue
        head, hcol = toks[0]
        if head == "gravity":
            if len(toks) != 2:
                raise ParseError(lineno, hcol, "gravity takes exactly one x,y,z argument")
            gravity = _parse_numbers(toks[1][0], 3, lineno, toks[1][1])
            continue
        if head != "link":
            raise ParseError(lineno, hcol, f"unknown statement {head!r}")
        if len(toks) < 2 or "=" in toks[1][0]:
            raise ParseError(lineno, hcol, "link statement needs a name")
        name, ncol = toks[1]
        if name == "world":
            raise ParseError(lineno, ncol, "'world' is reserved for the fixed base")
        fields = {}
        for tok, col in toks[2:]:
            key, sep, value = tok.partition("=")
            if not sep or key not in _LINK_KEYS:
                raise ParseError(lineno, col, f"unexpected token {tok!r}")
            if key in fields:
                raise ParseError(lineno, col, f"duplicate key {key!r}")
            if key == "parent":
                fields[key] = value
            elif key == "joint":
                if value not in JOINT_TYPES:
                    raise ParseError(lineno, col, f"joint must be one of {JOINT_TYPES}, got {value!r}")
                fields[key] = value
            else:
                nums = _parse_numbers(value, _VECTOR_LEN[key], lineno, col + len(key) + 1)
                fields[key] = nums[0] if key == "mass" else nums
        for required in ("parent", "joint", "axis"):
            if required not in fields:
                raise ParseError(lineno, hcol, f"link {name!r} is missing {required}=")
        if not any(fields["axis"]):
            raise ParseError(lineno, hcol, f"link {name!r} has a zero joint axis")
        if name in seen:
            raise TopologyError(f"link {name!r} defined twice (lines {seen[name]} and {lineno}); "
                                "a link cannot have multiple parents")
        seen[name] = lineno
        entries.append((name, fields))
    if not entries:
        raise ParseError(1, 1, "model defines no links")
    return _build_tree(entries, gravity)


def _inertia_from_fields(fields):
    ixx, iyy, izz, ixy, ixz, iyz = fields.get("inertia", (0.0,) * 6)
    Ic = np.array([[ixx, ixy, ixz], [ixy, iyy, iyz], [ixz, iyz, izz]])
    return SpatialInertia.from_com(fields.get("mass", 0.0), fields.get("com", (0.0, 0.0, 0.0)), Ic)


def _build_tree(entries, gravity):
    index = {name: k for k, (name, _) in enumerate(entries)}
    kids = [[] for _ in entries]
    roots = []
    for k, (name, fields) in enumerate(entries):
        parent = fields["parent"]
        if parent == "world":
            roots.append(k)
        elif parent not in index:
            raise TopologyError(f"link {name!r} has unknown parent {parent!r} (orphan link)")
        else:
            kids[index[parent]].append(k)
    if not roots:
        raise TopologyError("no link is attached to world (cycle or missing root)")
    if len(roots) > 1:
        names = ", ".join(entries[k][0] for k in roots)
        raise TopologyError(f"exactly one link may be attached to world, found: {names}")
    # Kahn's algorithm, ties broken by file order; reproduces any valid file order.
    order = []
    heap = list(roots)
    while heap:
        k = heapq.heappop(heap)
        order.append(k)
        for child in kids[k]:
            heapq.heappush(heap, child)
    if len(order) != len(entries):
        stuck = sorted(set(range(len(entries))) - set(order))
        raise TopologyError("cycle among links: " + ", ".join(entries[k][0] for k in stuck))
    number = {k: i for i, k in enumerate(order, start=1)}
    names, parents, joints, inertias = [], [], [], []
    for k in order:
        name, fields = entries[k]
        names.append(name)
        parents.append(0 if fields["parent"] == "world" else number[index[fields["parent"]]])
        joints.append(Joint(fields["joint"], fields["axis"], fields.get("xyz", (0.0, 0.0, 0.0)),
                            fields.get("rpy", (0.0, 0.0, 0.0))))
        inertias.append(_inertia_from_fields(fields))
    return KinematicTree(tuple(names), tuple(parents), tuple(joints), tuple(inertias), gravity)


def _fmt(values):
    return ",".join(repr(float(x)) for x in values)


def format_model(tree):
    """Serialize a tree back to the model-file format."""
    lines = [f"gravity {_fmt(tree.gravity)}"]
    for i in tree.links():
        j, I = tree.joint(i), tree.inertia(i)
        c = I.com
        Ic = I.rotational - I.mass * skew(c) @ skew(c).T
        parent = "world" if tree.parent(i) == 0 else tree.names[tree.parent(i) - 1]
        lines.append(
            f"link {tree.names[i - 1]} parent={parent} joint={j.kind} axis={_fmt(j.axis)} "
            f"xyz={_fmt(j.xyz)} rpy={_fmt(j.rpy)} mass={I.mass!r} com={_fmt(c)} "
            f"inertia={_fmt((Ic[0, 0], Ic[1, 1], Ic[2, 2], Ic[0, 1], Ic[0, 2], Ic[1, 2]))}")
    return "\n".join(lines) + "\n"


def load_model(path):
    with open(path, encoding="utf-8") as fh:
        return parse_model(fh.read())


# ----------------------------------------------------------------------------
# generators used by tests and benchmarks

def serial_chain(n, twist=np.pi / 2, gravity=DEFAULT_GRAVITY):
    """Unit-mass, unit-length revolute-z links.

    Each joint frame sits one unit along the parent's x axis and is rolled
    by ``twist`` about it, so consecutive joint axes are not parallel unless
    ``twist`` is zero.
    """
    names, parents, joints, inertias = [], [], [], []
    rod = np.diag([0.0, 1.0, 1.0]) / 12.0
    for i in range(1, n + 1):
        names.append(f"link{i}")
        parents.append(i - 1)
        joints.append(Joint("revolute", (0, 0, 1), (0.0 if i == 1 else 1.0, 0, 0),
                            (0.0 if i == 1 else twist, 0, 0)))
        inertias.append(SpatialInertia.from_com(1.0, (0.5, 0, 0), rod))
    return KinematicTree(tuple(names), tuple(parents), tuple(joints), tuple(inertias), gravity)


def _random_inertia(rng):
    mass = rng.uniform(0.5, 2.0)
    com = rng.uniform(-0.3, 0.3, 3)
    d = rng.uniform(0.01, 0.1, 3)
    # principal moments must satisfy the triangle inequality
    moments = np.array([d[1] + d[2], d[0] + d[2], d[0] + d[1]])
    R = Rotation.random(random_state=rng).as_matrix()
    return SpatialInertia.from_com(mass, com, R @ np.diag(moments) @ R.T)


def random_tree(n, rng, branching=0.3, canonical=0.5, prismatic=0.2):
    """Random valid tree: link 1 on the base, later links on earlier ones."""
    names, parents, joints, inertias = [], [], [], []
    for i in range(1, n + 1):
        names.append(f"l{i}")
        if i == 1:
            parents.append(0)
        elif rng.random() < branching:
            parents.append(int(rng.integers(1, i)))
        else:
            parents.append(i - 1)
        if rng.random() < canonical:
            axis = np.zeros(3)
            axis[rng.integers(3)] = rng.choice([-1.0, 1.0])
        else:
            axis = rng.normal(size=3)
        kind = "prismatic" if rng.random() < prismatic else "revolute"
        joints.append(Joint(kind, tuple(axis), tuple(rng.uniform(-0.5, 0.5, 3)),
                            tuple(rng.uniform(-np.pi, np.pi, 3))))
        inertias.append(_random_inertia(rng))
    return KinematicTree(tuple(names), tuple(parents), tuple(joints), tuple(inertias))
