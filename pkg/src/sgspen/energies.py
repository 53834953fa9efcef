"""Energy architectures E_w(x, y) over relaxed structured outputs.

All three follow the local/global decomposition: a local term couples the
input to each output variable, a global term scores the output configuration
as a whole. Energies consume probabilities (state-1 mass for binary label
variables, full distributions otherwise), never raw logits.

Checkpoint format: magic, JSON text header (architecture tag, descriptor,
config echo), then the parameter container.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .outputs import OutputSpace, RelaxedOutput
from .tensor import Graph, ParamSet

_CKPT_MAGIC = b"ENCK"
_CKPT_VERSION = 1


class EnergyModel:
    """Shared surface: energy value plus gradients w.r.t. y and w.

    Read-only during inference/search and shareable; parameter updates are
    a single-writer affair.
    """

    arch = ""

    def __init__(self) -> None:
        self.graph = Graph()
        self.params = ParamSet()
        self.space: OutputSpace
        self._y_inputs: tuple[str, ...] = ()

    def _new_param(self, name: str, shape, rng) -> int:
        """Register an array in the ParamSet and mirror it as a graph node."""
        self.params.add(name, shape, rng)
        return self.graph.param(name, shape)

    # subclasses implement _bind (x, y -> graph inputs) and _grad_y

    def _bind(self, x, y: RelaxedOutput | None) -> dict[str, np.ndarray]:
        raise NotImplementedError

    def _grad_y(self, grad_inputs: dict[str, np.ndarray]) -> list[np.ndarray]:
        raise NotImplementedError

    def energy(self, x, y: RelaxedOutput) -> float:
        return self.graph.forward(self.params, self._bind(x, y))

    def energy_and_grad_y(self, x, y: RelaxedOutput) -> tuple[float, list[np.ndarray]]:
        value = self.graph.forward(self.params, self._bind(x, y))
        _, grad_inputs = self.graph.backward(inputs_only=True, needed_inputs=self._y_inputs)
        return value, self._grad_y(grad_inputs)

    def grad_y(self, x, y: RelaxedOutput) -> list[np.ndarray]:
        return self.energy_and_grad_y(x, y)[1]

    def grad_w(self, terms) -> ParamSet:
        """Gradient of sum_j coeff_j * E(x_j, y_j) w.r.t. all parameters."""
        if not terms:
            raise ValueError("grad_w needs at least one (x, y, coeff) term")
        total = self.params.zeros_like()
        for x, y, coeff in terms:
            self.graph.forward(self.params, self._bind(x, y))
            gp, _ = self.graph.backward()
            total.iadd_scaled(gp, float(coeff))
        return total

    def descriptor(self) -> dict:
        raise NotImplementedError

    def save(self, path) -> None:
        header = json.dumps({"arch": self.arch, "descriptor": self.descriptor()}).encode("utf-8")
        with open(path, "wb") as fh:
            fh.write(_CKPT_MAGIC + struct.pack("<II", _CKPT_VERSION, len(header)))
            fh.write(header)
            fh.write(self.params.to_bytes())

    @staticmethod
    def load(path) -> "EnergyModel":
        blob = Path(path).read_bytes()
        if blob[:4] != _CKPT_MAGIC:
            raise ValueError("not a model checkpoint (bad magic)")
        version, hlen = struct.unpack_from("<II", blob, 4)
        if version != _CKPT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        header = json.loads(blob[12 : 12 + hlen].decode("utf-8"))
        cls = _ARCHS[header["arch"]]
        model = cls(rng=None, **header["descriptor"])
        loaded = ParamSet.from_bytes(blob[12 + hlen :])
        for name, arr in loaded.items():
            model.params[name] = arr
        return model


def _features(x) -> np.ndarray:
    return np.asarray(getattr(x, "features", x), dtype=np.float64)


def _tokens(x) -> np.ndarray:
    return np.asarray(getattr(x, "tokens", x))


def _image(x) -> np.ndarray:
    return np.asarray(getattr(x, "image", x), dtype=np.float64)


class MultiLabelEnergy(EnergyModel):
    """Binary label variables over a dense feature vector.

    Local term: per-label scores from a 2-layer ReLU feature net, dotted
    with the state-1 masses p. Global term: v . softplus(W p + c).
    """

    arch = "multi_label"

    def __init__(self, num_features, num_labels, feature_hidden=64, global_hidden=15, rng=None):
        super().__init__()
        self.num_features = int(num_features)
        self.num_labels = int(num_labels)
        self.feature_hidden = int(feature_hidden)
        self.global_hidden = int(global_hidden)
        self.space = OutputSpace.uniform(self.num_labels, 2)
        self._y_inputs = ("p",)

        g = self.graph
        x = g.inp("x", (self.num_features,))
        pr = g.inp("p", (self.num_labels,))
        w1 = self._new_param("W1", (self.feature_hidden, self.num_features), rng)
        b1 = self._new_param("b1", (self.feature_hidden,), rng)
        w2 = self._new_param("W2", (self.num_labels, self.feature_hidden), rng)
        b2 = self._new_param("b2", (self.num_labels,), rng)
        wg = self._new_param("Wg", (self.global_hidden, self.num_labels), rng)
        cg = self._new_param("cg", (self.global_hidden,), rng)
        v = self._new_param("v", (self.global_hidden,), rng)

        h = g.relu(g.affine(w1, x, b1))
        scores = g.affine(w2, h, b2)
        local = g.dot(pr, scores)
        hidden = g.softplus(g.affine(wg, pr, cg))
        glob = g.dot(v, hidden)
        g.output(g.add(local, glob))

    def _bind(self, x, y):
        return {
            "x": _features(x),
            "p": np.array([d[1] for d in y.dists]),
        }

    def _grad_y(self, grad_inputs):
        dp = grad_inputs["p"]
        return [np.array([0.0, dp[i]]) for i in range(self.num_labels)]

    def descriptor(self):
        return {
            "num_features": self.num_features,
            "num_labels": self.num_labels,
            "feature_hidden": self.feature_hidden,
            "global_hidden": self.global_hidden,
        }


class SequenceEnergy(EnergyModel):
    """Tag distributions over a fixed-length token sequence.

    Local term: per-position tag scores from learned token embeddings.
    Global term: position-shared pairwise net over adjacent distributions.
    """

    arch = "sequence"

    def __init__(self, vocab_size, num_tags, length, embed_dim=16, pair_hidden=32, rng=None):
        super().__init__()
        self.vocab_size = int(vocab_size)
        self.num_tags = int(num_tags)
        self.length = int(length)
        self.embed_dim = int(embed_dim)
        self.pair_hidden = int(pair_hidden)
        self.space = OutputSpace.uniform(self.length, self.num_tags)
        self._y_inputs = tuple(f"y{i}" for i in range(self.length))

        g = self.graph
        emb = self._new_param("Emb", (self.embed_dim, self.vocab_size), rng)
        wl = self._new_param("Wl", (self.num_tags, self.embed_dim), rng)
        bl = self._new_param("bl", (self.num_tags,), rng)
        u = self._new_param("U", (self.pair_hidden, 2 * self.num_tags), rng)
        cu = self._new_param("cu", (self.pair_hidden,), rng)
        v = self._new_param("v", (self.pair_hidden,), rng)

        ys = [g.inp(f"y{i}", (self.num_tags,)) for i in range(self.length)]
        toks = [g.inp(f"tok{i}", (self.vocab_size,)) for i in range(self.length)]

        total = None
        for i in range(self.length):
            scores = g.affine(wl, g.affine(emb, toks[i]), bl)
            term = g.dot(ys[i], scores)
            total = term if total is None else g.add(total, term)
        for i in range(self.length - 1):
            hidden = g.softplus(g.affine(u, g.concat(ys[i], ys[i + 1]), cu))
            total = g.add(total, g.dot(v, hidden))
        g.output(total)

    def _bind(self, x, y):
        tokens = _tokens(x)
        inputs = {}
        for i in range(self.length):
            onehot = np.zeros(self.vocab_size)
            onehot[int(tokens[i])] = 1.0
            inputs[f"tok{i}"] = onehot
            inputs[f"y{i}"] = y.dists[i]
        return inputs

    def _grad_y(self, grad_inputs):
        return [grad_inputs[f"y{i}"] for i in range(self.length)]

    def descriptor(self):
        return {
            "vocab_size": self.vocab_size,
            "num_tags": self.num_tags,
            "length": self.length,
            "embed_dim": self.embed_dim,
            "pair_hidden": self.pair_hidden,
        }


class ProgramEnergy(EnergyModel):
    """Token distributions for a fixed-length shape program against a bitmap.

    Expected token embeddings (distribution x embedding table) are
    concatenated and mapped to a program embedding; the image is 4x4
    average-pooled, flattened, and mapped through a 2-layer MLP to an image
    embedding; the joint MLP on their concatenation yields the energy.
    """

    arch = "program"

    def __init__(
        self,
        vocab_size,
        length=5,
        image_size=64,
        pool=4,
        token_dim=32,
        prog_embed=64,
        image_hidden=128,
        image_embed=64,
        joint_hidden=128,
        output_scale=1.0,
        rng=None,
    ):
        super().__init__()
        self.vocab_size = int(vocab_size)
        self.length = int(length)
        self.image_size = int(image_size)
        self.pool = int(pool)
        self.token_dim = int(token_dim)
        self.prog_embed = int(prog_embed)
        self.image_hidden = int(image_hidden)
        self.image_embed = int(image_embed)
        self.joint_hidden = int(joint_hidden)
        # fixed multiplier on the scalar output: reward-scaled margins can be
        # tens of units, far beyond a freshly initialized net's range
        self.output_scale = float(output_scale)
        self.space = OutputSpace.uniform(self.length, self.vocab_size)
        self._y_inputs = tuple(f"y{i}" for i in range(self.length))

        pooled = (self.image_size // self.pool) ** 2
        g = self.graph
        emb = self._new_param("Emb", (self.token_dim, self.vocab_size), rng)
        wp = self._new_param("Wp", (self.prog_embed, self.length * self.token_dim), rng)
        bp = self._new_param("bp", (self.prog_embed,), rng)
        wi1 = self._new_param("Wi1", (self.image_hidden, pooled), rng)
        bi1 = self._new_param("bi1", (self.image_hidden,), rng)
        wi2 = self._new_param("Wi2", (self.image_embed, self.image_hidden), rng)
        bi2 = self._new_param("bi2", (self.image_embed,), rng)
        wj = self._new_param("Wj", (self.joint_hidden, self.prog_embed + self.image_embed), rng)
        bj = self._new_param("bj", (self.joint_hidden,), rng)
        vj = self._new_param("vj", (self.joint_hidden,), rng)

        # softplus on the program/joint paths keeps the y-gradients that drive
        # inference alive; the image path (fixed input) can use relu
        ys = [g.inp(f"y{i}", (self.vocab_size,)) for i in range(self.length)]
        expected = [g.affine(emb, ys[i]) for i in range(self.length)]
        prog = g.softplus(g.affine(wp, g.concat(*expected), bp))

        img = g.inp("image", (self.image_size, self.image_size))
        flat = g.mean_pool(img, self.pool)
        h1 = g.relu(g.affine(wi1, flat, bi1))
        img_emb = g.relu(g.affine(wi2, h1, bi2))

        joint = g.softplus(g.affine(wj, g.concat(prog, img_emb), bj))
        raw = g.dot(vj, joint)
        g.output(raw if self.output_scale == 1.0 else g.scale(raw, self.output_scale))

    def _bind(self, x, y):
        inputs = {"image": _image(x)}
        for i in range(self.length):
            inputs[f"y{i}"] = y.dists[i]
        return inputs

    def _grad_y(self, grad_inputs):
        return [grad_inputs[f"y{i}"] for i in range(self.length)]

    def descriptor(self):
        return {
            "vocab_size": self.vocab_size,
            "length": self.length,
            "image_size": self.image_size,
            "pool": self.pool,
            "token_dim": self.token_dim,
            "prog_embed": self.prog_embed,
            "image_hidden": self.image_hidden,
            "image_embed": self.image_embed,
            "joint_hidden": self.joint_hidden,
            "output_scale": self.output_scale,
        }


_ARCHS = {
    MultiLabelEnergy.arch: MultiLabelEnergy,
    SequenceEnergy.arch: SequenceEnergy,
    ProgramEnergy.arch: ProgramEnergy,
}
