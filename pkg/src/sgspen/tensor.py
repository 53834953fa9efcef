"""Dense float64 computation graphs with reverse-mode differentiation.

A :class:`Graph` is recorded once from a small set of primitives (affine,
relu, softplus, softmax, elementwise mul/add, dot, sum, concat, mean-pool)
and ends in a single scalar node. ``forward`` binds concrete parameter and
input arrays and caches intermediates; ``backward`` then returns exact
gradients for every parameter and input. Everything is float64.

A graph instance holds per-call state and must not be shared between
threads; distinct instances are independent.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

_PSET_MAGIC = b"PSET"
_PSET_VERSION = 1


class GraphError(ValueError):
    """Structural misuse of a graph: bad shapes, missing bindings, and so on."""


def softmax(v: np.ndarray) -> np.ndarray:
    """Stable softmax of a 1-D array (max-subtracted); output sums to 1."""
    v = np.asarray(v, dtype=np.float64)
    z = np.exp(v - v.max())
    return z / z.sum()


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


class ParamSet:
    """Named, insertion-ordered collection of float64 arrays.

    Shapes are fixed once a name is added; assignment afterwards must match.
    """

    def __init__(self) -> None:
        self._arrays: dict[str, np.ndarray] = {}

    def add(self, name: str, shape: tuple[int, ...], rng: np.random.Generator | None = None) -> np.ndarray:
        """Register a parameter. With a generator, init uniform in [-a, a],
        a = sqrt(6/(fan_in+fan_out)) (both fans = length for 1-D); else zeros."""
        if name in self._arrays:
            raise GraphError(f"duplicate parameter {name!r}")
        shape = tuple(int(s) for s in shape)
        if rng is None:
            value = np.zeros(shape)
        else:
            if len(shape) == 2:
                fan_in, fan_out = shape[1], shape[0]
            else:
                fan_in = fan_out = max(1, int(np.prod(shape)))
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            value = rng.uniform(-bound, bound, size=shape)
        self._arrays[name] = np.ascontiguousarray(value, dtype=np.float64)
        return self._arrays[name]

    def names(self) -> tuple[str, ...]:
        return tuple(self._arrays)

    def items(self):
        return self._arrays.items()

    def __contains__(self, name: str) -> bool:
        return name in self._arrays

    def __len__(self) -> int:
        return len(self._arrays)

    def __getitem__(self, name: str) -> np.ndarray:
        return self._arrays[name]

    def __setitem__(self, name: str, value) -> None:
        value = np.asarray(value, dtype=np.float64)
        if name not in self._arrays:
            raise GraphError(f"unknown parameter {name!r}")
        if value.shape != self._arrays[name].shape:
            raise GraphError(
                f"shape mismatch for parameter {name!r}: "
                f"{value.shape} != {self._arrays[name].shape}"
            )
        self._arrays[name] = np.ascontiguousarray(value)

    def copy(self) -> "ParamSet":
        out = ParamSet()
        for name, arr in self._arrays.items():
            out._arrays[name] = arr.copy()
        return out

    def zeros_like(self) -> "ParamSet":
        out = ParamSet()
        for name, arr in self._arrays.items():
            out._arrays[name] = np.zeros_like(arr)
        return out

    def fill(self, value: float) -> None:
        for arr in self._arrays.values():
            arr.fill(value)

    def squared_norm(self) -> float:
        return float(sum(float(np.dot(a.ravel(), a.ravel())) for a in self._arrays.values()))

    def iadd_scaled(self, other: "ParamSet", factor: float = 1.0) -> None:
        """self += factor * other, name by name."""
        for name, arr in other.items():
            self._arrays[name] += factor * arr

    def save(self, path) -> None:
        """Versioned binary container: magic, name table, shapes, LE float64."""
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    def to_bytes(self) -> bytes:
        chunks = [_PSET_MAGIC, struct.pack("<II", _PSET_VERSION, len(self._arrays))]
        for name, arr in self._arrays.items():
            raw = name.encode("utf-8")
            chunks.append(struct.pack("<H", len(raw)))
            chunks.append(raw)
            chunks.append(struct.pack("<B", arr.ndim))
            chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
            chunks.append(arr.astype("<f8").tobytes())
        return b"".join(chunks)

    @classmethod
    def load(cls, path) -> "ParamSet":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())

    @classmethod
    def from_bytes(cls, blob: bytes) -> "ParamSet":
        if blob[:4] != _PSET_MAGIC:
            raise GraphError("not a parameter container (bad magic)")
        version, count = struct.unpack_from("<II", blob, 4)
        if version != _PSET_VERSION:
            raise GraphError(f"unsupported parameter container version {version}")
        out = cls()
        off = 12
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", blob, off)
            off += 2
            name = blob[off : off + nlen].decode("utf-8")
            off += nlen
            (ndim,) = struct.unpack_from("<B", blob, off)
            off += 1
            shape = struct.unpack_from(f"<{ndim}I", blob, off)
            off += 4 * ndim
            size = int(np.prod(shape)) if ndim else 1
            arr = np.frombuffer(blob, dtype="<f8", count=size, offset=off).reshape(shape)
            off += 8 * size
            out._arrays[name] = arr.astype(np.float64)
        return out


@dataclass(frozen=True)
class _Node:
    kind: str
    args: tuple[int, ...]
    shape: tuple[int, ...]
    label: str = ""
    window: int = 0
    factor: float = 1.0


class Graph:
    """Recorded feed-forward computation ending in one scalar output."""

    def __init__(self) -> None:
        self._nodes: list[_Node] = []
        self._inputs: dict[str, int] = {}
        self._params: dict[str, int] = {}
        self._out: int | None = None
        self._values: list[np.ndarray] | None = None
        self._deps: list[int] = []  # per-node bitmask of inputs it depends on

    # -- construction -------------------------------------------------

    def _push(self, node: _Node) -> int:
        self._nodes.append(node)
        if node.kind == "input":
            mask = 1 << len(self._inputs)
        elif node.kind == "param":
            mask = 0
        else:
            mask = 0
            for a in node.args:
                mask |= self._deps[a]
        self._deps.append(mask)
        return len(self._nodes) - 1

    def _shape(self, i: int) -> tuple[int, ...]:
        return self._nodes[i].shape

    def inp(self, name: str, shape) -> int:
        if name in self._inputs:
            raise GraphError(f"duplicate input {name!r}")
        i = self._push(_Node("input", (), tuple(shape), label=name))
        self._inputs[name] = i
        return i

    def param(self, name: str, shape) -> int:
        if name in self._params:
            raise GraphError(f"duplicate param node {name!r}")
        i = self._push(_Node("param", (), tuple(shape), label=name))
        self._params[name] = i
        return i

    def affine(self, w: int, x: int, b: int | None = None) -> int:
        ws, xs = self._shape(w), self._shape(x)
        if len(ws) != 2 or len(xs) != 1 or ws[1] != xs[0]:
            raise GraphError(f"affine shapes incompatible: {ws} @ {xs}")
        if b is not None and self._shape(b) != (ws[0],):
            raise GraphError(f"affine bias shape {self._shape(b)} != ({ws[0]},)")
        args = (w, x) if b is None else (w, x, b)
        return self._push(_Node("affine", args, (ws[0],)))

    def relu(self, x: int) -> int:
        return self._push(_Node("relu", (x,), self._shape(x)))

    def softplus(self, x: int) -> int:
        return self._push(_Node("softplus", (x,), self._shape(x)))

    def softmax(self, x: int) -> int:
        if len(self._shape(x)) != 1:
            raise GraphError("softmax expects a vector")
        return self._push(_Node("softmax", (x,), self._shape(x)))

    def mul(self, a: int, b: int) -> int:
        if self._shape(a) != self._shape(b):
            raise GraphError(f"mul shapes differ: {self._shape(a)} vs {self._shape(b)}")
        return self._push(_Node("mul", (a, b), self._shape(a)))

    def add(self, a: int, b: int) -> int:
        if self._shape(a) != self._shape(b):
            raise GraphError(f"add shapes differ: {self._shape(a)} vs {self._shape(b)}")
        return self._push(_Node("add", (a, b), self._shape(a)))

    def dot(self, a: int, b: int) -> int:
        if self._shape(a) != self._shape(b) or len(self._shape(a)) != 1:
            raise GraphError(f"dot expects equal-length vectors, got {self._shape(a)} and {self._shape(b)}")
        return self._push(_Node("dot", (a, b), ()))

    def sum(self, x: int) -> int:
        return self._push(_Node("sum", (x,), ()))

    def concat(self, *xs: int) -> int:
        if not xs:
            raise GraphError("concat of nothing")
        for x in xs:
            if len(self._shape(x)) != 1:
                raise GraphError("concat expects vectors")
        total = sum(self._shape(x)[0] for x in xs)
        return self._push(_Node("concat", tuple(xs), (total,)))

    def mean_pool(self, x: int, window: int) -> int:
        """Average-pool a (H, W) array with a square window; output is flat."""
        h, w = self._shape(x)
        if h % window or w % window:
            raise GraphError(f"mean_pool window {window} does not divide {h}x{w}")
        return self._push(_Node("mean_pool", (x,), ((h // window) * (w // window),), window=window))

    def scale(self, x: int, factor: float) -> int:
        return self._push(_Node("scale", (x,), self._shape(x), factor=float(factor)))

    def output(self, x: int) -> int:
        if self._shape(x) != ():
            raise GraphError(f"output node must be scalar, got shape {self._shape(x)}")
        self._out = x
        return x

    # -- execution ----------------------------------------------------

    def forward(self, params: ParamSet, inputs: dict[str, np.ndarray]) -> float:
        """Evaluate to the scalar output, caching intermediates for backward."""
        if self._out is None:
            raise GraphError("graph has no output node")
        values: list[np.ndarray] = [None] * len(self._nodes)  # type: ignore[list-item]
        for i, node in enumerate(self._nodes):
            if node.kind == "input":
                if node.label not in inputs:
                    raise GraphError(f"missing input {node.label!r}")
                v = np.asarray(inputs[node.label], dtype=np.float64)
                if v.shape != node.shape:
                    raise GraphError(
                        f"input {node.label!r} shape {v.shape} != declared {node.shape}"
                    )
            elif node.kind == "param":
                if node.label not in params:
                    raise GraphError(f"missing parameter {node.label!r}")
                v = params[node.label]
                if v.shape != node.shape:
                    raise GraphError(
                        f"parameter {node.label!r} shape {v.shape} != declared {node.shape}"
                    )
            elif node.kind == "affine":
                w, x = values[node.args[0]], values[node.args[1]]
                v = w @ x
                if len(node.args) == 3:
                    v = v + values[node.args[2]]
            elif node.kind == "relu":
                v = np.maximum(values[node.args[0]], 0.0)
            elif node.kind == "softplus":
                v = np.logaddexp(0.0, values[node.args[0]])
            elif node.kind == "softmax":
                v = softmax(values[node.args[0]])
            elif node.kind == "mul":
                v = values[node.args[0]] * values[node.args[1]]
            elif node.kind == "add":
                v = values[node.args[0]] + values[node.args[1]]
            elif node.kind == "dot":
                v = np.asarray(np.dot(values[node.args[0]], values[node.args[1]]))
            elif node.kind == "sum":
                v = np.asarray(values[node.args[0]].sum())
            elif node.kind == "concat":
                v = np.concatenate([values[a] for a in node.args])
            elif node.kind == "mean_pool":
                x = values[node.args[0]]
                h, w = x.shape
                k = node.window
                v = x.reshape(h // k, k, w // k, k).mean(axis=(1, 3)).ravel()
            elif node.kind == "scale":
                v = node.factor * values[node.args[0]]
            else:  # pragma: no cover
                raise GraphError(f"unknown node kind {node.kind!r} at node {i}")
            values[i] = v
        self._values = values
        return float(values[self._out])

    def backward(
        self,
        inputs_only: bool = False,
        needed_inputs=None,
    ) -> tuple[ParamSet, dict[str, np.ndarray]]:
        """Exact reverse-mode gradients of the scalar output.

        Returns (param gradients, input gradients). Requires a prior forward.
        ReLU uses the one-sided convention: gradient 0 at exactly 0.

        inputs_only=True skips all parameter adjoints (an empty ParamSet is
        returned); adding needed_inputs (a collection of input names) also
        prunes adjoint propagation to subgraphs that cannot reach those
        inputs. The inference loop uses both to avoid the weight-gradient
        outer products and the x-only pathways it never reads.
        """
        if self._values is None:
            raise GraphError("backward() called before forward()")
        values = self._values
        nodes = self._nodes
        param_ids = set(self._params.values()) if inputs_only else ()
        needed_mask = None
        if needed_inputs is not None:
            if not inputs_only:
                raise GraphError("needed_inputs requires inputs_only=True")
            order = list(self._inputs)
            needed_mask = 0
            for name in needed_inputs:
                needed_mask |= 1 << order.index(name)
        deps = self._deps
        adj: list[np.ndarray | None] = [None] * len(nodes)
        adj[self._out] = np.asarray(1.0)

        def bump(i: int, g: np.ndarray) -> None:
            if i in param_ids:
                return
            if needed_mask is not None and not deps[i] & needed_mask:
                return
            if adj[i] is None:
                adj[i] = np.array(g, dtype=np.float64, copy=True)
            else:
                adj[i] = adj[i] + g

        for i in range(len(nodes) - 1, -1, -1):
            node, a = nodes[i], adj[i]
            if a is None or node.kind in ("input", "param"):
                continue
            if node.kind == "affine":
                w, x = values[node.args[0]], values[node.args[1]]
                if node.args[0] not in param_ids:
                    bump(node.args[0], np.outer(a, x))
                bump(node.args[1], w.T @ a)
                if len(node.args) == 3:
                    bump(node.args[2], a)
            elif node.kind == "relu":
                bump(node.args[0], a * (values[node.args[0]] > 0.0))
            elif node.kind == "softplus":
                bump(node.args[0], a * _sigmoid(values[node.args[0]]))
            elif node.kind == "softmax":
                y = values[i]
                bump(node.args[0], y * (a - float(np.dot(y, a))))
            elif node.kind == "mul":
                bump(node.args[0], a * values[node.args[1]])
                bump(node.args[1], a * values[node.args[0]])
            elif node.kind == "add":
                bump(node.args[0], a)
                bump(node.args[1], a)
            elif node.kind == "dot":
                bump(node.args[0], float(a) * values[node.args[1]])
                bump(node.args[1], float(a) * values[node.args[0]])
            elif node.kind == "sum":
                bump(node.args[0], float(a) * np.ones_like(values[node.args[0]]))
            elif node.kind == "concat":
                off = 0
                for src in node.args:
                    n = values[src].shape[0]
                    bump(src, a[off : off + n])
                    off += n
            elif node.kind == "mean_pool":
                x = values[node.args[0]]
                h, w = x.shape
                k = node.window
                g = a.reshape(h // k, w // k) / (k * k)
                bump(node.args[0], np.kron(g, np.ones((k, k))))
            elif node.kind == "scale":
                bump(node.args[0], node.factor * a)

        grad_params = ParamSet()
        if not inputs_only:
            for name, i in self._params.items():
                g = adj[i]
                grad_params._arrays[name] = (
                    np.zeros(self._nodes[i].shape) if g is None else np.asarray(g, dtype=np.float64)
                )
        grad_inputs = {}
        for name, i in self._inputs.items():
            if needed_mask is not None and not deps[i] & needed_mask:
                continue
            g = adj[i]
            grad_inputs[name] = (
                np.zeros(self._nodes[i].shape) if g is None else np.asarray(g, dtype=np.float64)
            )
        return grad_params, grad_inputs

    def min_kink_distance(self) -> float:
        """Smallest |pre-activation| over all ReLU nodes in the last forward.

        Finite-difference checks should be skipped when this is tiny, since
        a central-difference stencil straddling the kink is meaningless.
        """
        if self._values is None:
            raise GraphError("no forward pass recorded")
        dist = np.inf
        for node in self._nodes:
            if node.kind == "relu":
                x = self._values[node.args[0]]
                if x.size:
                    dist = min(dist, float(np.min(np.abs(x))))
        return dist


def finite_diff_check(
    graph: Graph,
    params: ParamSet,
    inputs: dict[str, np.ndarray],
    eps: float = 1e-5,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    Error per coordinate is |a - n| / max(1, |a|, |n|); the maximum over all
    parameter and input coordinates is returned.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    graph.forward(params, inputs)
    grad_p, grad_i = graph.backward()

    worst = 0.0

    def probe(read, write, analytic) -> None:
        nonlocal worst
        flat = read().ravel()
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + eps
            write(flat)
            hi = graph.forward(params, inputs)
            flat[j] = orig - eps
            write(flat)
            lo = graph.forward(params, inputs)
            flat[j] = orig
            write(flat)
            numeric = (hi - lo) / (2.0 * eps)
            a = analytic.ravel()[j]
            worst = max(worst, abs(a - numeric) / max(1.0, abs(a), abs(numeric)))

    for name in params.names():
        shape = params[name].shape

        def read(n=name):
            return params[n].copy()

        def write(flat, n=name, s=shape):
            params[n] = flat.reshape(s)

        probe(read, write, grad_p[name])

    mutable_inputs = {k: np.array(v, dtype=np.float64) for k, v in inputs.items()}
    inputs = mutable_inputs
    for name in list(inputs):
        shape = inputs[name].shape

        def read(n=name):
            return inputs[n].copy()

        def write(flat, n=name, s=shape):
            inputs[n] = flat.reshape(s)

        probe(read, write, grad_i[name])

    # restore cached intermediates at the unperturbed point
    graph.forward(params, inputs)
    return worst
