"""Neural field bundle: track-conditioned deformation, canonical SDF, radiance.

The deformation net maps (encoded reference point, pixel-normalized dense
track sample, encoded time) to a 3D displacement toward canonical space.
The SDF and radiance nets live in canonical space. All nets are softplus
MLPs on the autodiff tape.

Two derivative paths exist on purpose:

* plain reverse mode (``deform_jacobian``, ``sdf_gradient``) for point
  queries - exact values, not themselves differentiable;
* explicit chain-rule graphs (``MLP.input_gradient`` / ``MLP.input_jvp``
  plus the encoding chain) whose outputs are tape tensors, so the trainer
  can differentiate eikonal terms and the view transport w.r.t. parameters
  with a single first-order reverse pass.

The two are cross-checked against each other and against finite differences
in the test suite.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import ParamStore, Tensor
from .camera import SceneNormalization

ARCH_FORMAT_VERSION = 1

# displacements beyond this fraction of the unit-sphere scene are nonphysical;
# the fixed-point posing/eval solvers reject iterates wandering past it
MAX_EXCURSION = 0.5


# ---------------------------------------------------------------------------
# positional encoding
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PositionalEncoding:
    """[x, sin(2^k pi x), cos(2^k pi x)]_{k<L}, elementwise, concatenated."""

    num_freqs: int
    include_input: bool = True

    def out_dim(self, n: int) -> int:
        return n * ((1 if self.include_input else 0) + 2 * self.num_freqs)

    def frequencies(self) -> np.ndarray:
        return np.pi * (2.0 ** np.arange(self.num_freqs))

    def apply_np(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        parts = [x] if self.include_input else []
        for w in self.frequencies():
            parts.append(np.sin(w * x))
            parts.append(np.cos(w * x))
        return np.concatenate(parts, axis=1)

    def apply(self, x: Tensor):
        """Graph encoding; returns (encoded, cache) with the trig tensors kept
        for the input-gradient chain."""
        parts = [x] if self.include_input else []
        cache = []
        for w in self.frequencies():
            s = ad.sin(ad.mul(x, w))
            c = ad.cos(ad.mul(x, w))
            cache.append((w, s, c))
            parts.append(s)
            parts.append(c)
        return ad.concat(parts, axis=1), cache

    def input_backprop(self, g_enc: Tensor, cache, n: int) -> Tensor:
        """Chain an encoded-input gradient back to the raw input, as graph ops.

        d enc / d x is block diagonal: identity for the passthrough block,
        w cos(w x) for sine blocks, -w sin(w x) for cosine blocks.
        """
        col = 0
        if self.include_input:
            g_x = ad.slice_axis1(g_enc, 0, n)
            col = n
        else:
            g_x = None
        for w, s, c in cache:
            g_sin = ad.slice_axis1(g_enc, col, col + n)
            g_cos = ad.slice_axis1(g_enc, col + n, col + 2 * n)
            col += 2 * n
            term = ad.mul(ad.add(ad.mul(g_sin, c), ad.mul(ad.mul(g_cos, s), -1.0)), w)
            g_x = term if g_x is None else ad.add(g_x, term)
        return g_x

    def tangent_np(self, x: np.ndarray, v: np.ndarray) -> np.ndarray:
        """(d enc(x) / d x) . v for constant x, v; feeds the deform-net JVP."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        v = np.broadcast_to(np.asarray(v, dtype=np.float64), x.shape)
        parts = [v] if self.include_input else []
        for w in self.frequencies():
            parts.append(w * np.cos(w * x) * v)
            parts.append(-w * np.sin(w * x) * v)
        return np.concatenate(parts, axis=1)


def encode(x, enc: PositionalEncoding) -> np.ndarray:
    """Plain-array encoding of an n-vector or a batch of them."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    out = enc.apply_np(x)
    return out[0] if single else out


# ---------------------------------------------------------------------------
# MLP with explicit derivative graphs
# ---------------------------------------------------------------------------

_INV_SQRT2 = 1.0 / np.sqrt(2.0)


class MLPCache:
    """Per-forward intermediates reused by the derivative chains."""

    def __init__(self, u: Tensor, beta: float):
        self.u = u
        self.zs: list[Tensor] = []
        self._beta = beta
        self._sig: dict[int, Tensor] = {}

    def sig(self, i: int) -> Tensor:
        # softplus_beta'(z) = sigmoid(beta z)
        if i not in self._sig:
            self._sig[i] = ad.sigmoid(ad.mul(self.zs[i], self._beta))
        return self._sig[i]


def fibonacci_directions(n: int) -> np.ndarray:
    """n well-spread unit vectors (Fibonacci sphere)."""
    i = np.arange(n) + 0.5
    phi = np.arccos(1.0 - 2.0 * i / n)
    theta = np.pi * (1.0 + np.sqrt(5.0)) * i
    return np.stack(
        [np.sin(phi) * np.cos(theta), np.sin(phi) * np.sin(theta), np.cos(phi)],
        axis=1,
    )


class MLP:
    """Softplus MLP over the tape; optional mid-network input re-injection."""

    def __init__(self, store: ParamStore, prefix: str, in_dim: int, hidden: int,
                 n_hidden: int, out_dim: int, *, beta: float = 1.0,
                 skip_at: tuple[int, ...] = (), rng: np.random.Generator,
                 init: str = "standard", geometric_radius: float = 0.5,
                 raw_dim: int = 3, zero_init_output: bool = False,
                 output_scale: float = 1.0):
        self.in_dim = in_dim
        self.hidden = hidden
        self.n_hidden = n_hidden
        self.out_dim = out_dim
        self.beta = beta
        self.skip_at = tuple(skip_at)
        if 0 in self.skip_at:
            raise ValueError("MLP: skip at the first layer is meaningless")
        if init == "geometric":
            layers = self._geometric_sphere_layers(rng, geometric_radius, raw_dim)
        else:
            layers = self._standard_layers(rng, zero_init_output, output_scale)
        self.weights: list[Tensor] = []
        self.biases: list[Tensor] = []
        for i, (w, b) in enumerate(layers):
            self.weights.append(store.parameter(f"{prefix}.w{i}", w))
            self.biases.append(store.parameter(f"{prefix}.b{i}", b))

    def _fan_in(self, i: int) -> int:
        fan = self.in_dim if i == 0 else self.hidden
        if i in self.skip_at:
            fan = self.hidden + self.in_dim
        return fan

    def _standard_layers(self, rng, zero_init_output, output_scale):
        layers = []
        for i in range(self.n_maps):
            fan_in = self._fan_in(i)
            fan_out = self.out_dim if i == self.n_maps - 1 else self.hidden
            if i == self.n_maps - 1:
                if zero_init_output:
                    w = np.zeros((fan_in, fan_out))
                else:
                    w = rng.normal(0.0, output_scale / np.sqrt(fan_in), size=(fan_in, fan_out))
            else:
                w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out))
            layers.append((w, np.zeros(fan_out)))
        return layers

    def _geometric_sphere_layers(self, rng, radius, raw_dim):
        """Construct parameters so the distance output starts as ~ ||x|| - r.

        softplus_b(a) + softplus_b(-a) = |a| + O(1/b) and
        softplus_b(a) - softplus_b(-a) = a exactly, so the first layer holds
        +-d_i direction pairs, ||x|| ~ 2 mean_i |d_i . x| (E|cos| = 1/2), and
        deeper layers carry the value through exact softplus pairs. Spare
        units get small random weights feeding only the feature outputs, so
        the distance pathway stays exact while training can recruit them.
        """
        if self.hidden % 2 != 0 or self.n_hidden < 2:
            raise ValueError("geometric init needs an even hidden width and >= 2 layers")
        if self.out_dim < 1:
            raise ValueError("geometric init needs a distance output")
        n_dirs = self.hidden // 2
        dirs = fibonacci_directions(n_dirs)
        spare_scale = 0.01
        layers = []
        # layer 0: +-direction pairs on the raw coordinate rows
        w0 = np.zeros((self.in_dim, self.hidden))
        w0[:raw_dim, 0::2] = dirs.T
        w0[:raw_dim, 1::2] = -dirs.T
        layers.append((w0, np.zeros(self.hidden)))
        # layer 1: live pair (s, -s) with s = 2 mean_i |d_i . x|
        w1 = rng.normal(0.0, spare_scale, size=(self.hidden, self.hidden))
        w1[:, 0] = 2.0 / n_dirs
        w1[:, 1] = -2.0 / n_dirs
        layers.append((w1, np.zeros(self.hidden)))
        # pass-through layers (+ sqrt(2) compensation at the skip concat)
        for i in range(2, self.n_maps - 1):
            fan_in = self._fan_in(i)
            w = rng.normal(0.0, spare_scale, size=(fan_in, self.hidden))
            if i in self.skip_at:
                w[self.hidden + raw_dim:, :] = 0.0
            w[:, 0] = 0.0
            w[:, 1] = 0.0
            gain = np.sqrt(2.0) if i in self.skip_at else 1.0
            w[0, 0] = gain
            w[1, 0] = -gain
            w[0, 1] = -gain
            w[1, 1] = gain
            layers.append((w, np.zeros(self.hidden)))
        # output: distance = s - r from the live pair; features small random
        fan_in = self._fan_in(self.n_maps - 1)
        w_out = np.zeros((fan_in, self.out_dim))
        gain = np.sqrt(2.0) if (self.n_maps - 1) in self.skip_at else 1.0
        w_out[0, 0] = gain
        w_out[1, 0] = -gain
        if self.out_dim > 1:
            w_out[: self.hidden, 1:] = rng.normal(0.0, 0.1, size=(self.hidden, self.out_dim - 1))
        b_out = np.zeros(self.out_dim)
        b_out[0] = -radius
        layers.append((w_out, b_out))
        return layers

    @property
    def n_maps(self) -> int:
        return self.n_hidden + 1

    def forward(self, x: Tensor):
        """Run the net; returns (out, cache). `x` is (N, in_dim)."""
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ad.ShapeError("mlp forward", (None, self.in_dim), x.shape)
        cache = MLPCache(x, self.beta)
        h = x
        for i in range(self.n_maps):
            if i in self.skip_at:
                h = ad.mul(ad.concat([h, cache.u], axis=1), _INV_SQRT2)
            z = ad.add(ad.matmul(h, self.weights[i]), reshape_bias(self.biases[i]))
            cache.zs.append(z)
            if i < self.n_maps - 1:
                h = ad.softplus(z, self.beta, slope=cache.sig(i))
        return cache.zs[-1], cache

    def input_gradient(self, cache: MLPCache, output_index: int) -> Tensor:
        """d out[output_index] / d input as a graph tensor (N, in_dim).

        Built from tape ops (transposed matmuls times activation slopes), so
        it stays differentiable w.r.t. the parameters.
        """
        seed = np.zeros((1, self.out_dim))
        seed[0, output_index] = 1.0
        g = Tensor(seed)
        g_u = None
        for i in reversed(range(self.n_maps)):
            g = ad.matmul(g, ad.transpose2d(self.weights[i]))
            if i in self.skip_at:
                g_skip = ad.mul(ad.slice_axis1(g, self.hidden, self.hidden + self.in_dim),
                                _INV_SQRT2)
                g_u = g_skip if g_u is None else ad.add(g_u, g_skip)
                g = ad.mul(ad.slice_axis1(g, 0, self.hidden), _INV_SQRT2)
            if i > 0:
                g = ad.mul(g, cache.sig(i - 1))
        return g if g_u is None else ad.add(g, g_u)

    def input_jvp(self, cache: MLPCache, tangent: Tensor) -> Tensor:
        """Directional derivative (d out / d input) . tangent, (N, out_dim).

        Forward-mode tangent propagation as graph ops; one pass for any
        direction, used for the view transport (I + J) v.
        """
        t = tangent
        t_u = tangent
        for i in range(self.n_maps):
            if i in self.skip_at:
                t = ad.mul(ad.concat([t, t_u], axis=1), _INV_SQRT2)
            t = ad.matmul(t, self.weights[i])
            if i < self.n_maps - 1:
                t = ad.mul(t, cache.sig(i))
        return t


def reshape_bias(b: Tensor) -> Tensor:
    return ad.reshape(b, (1, b.shape[0]))


@dataclass
class DeformContext:
    """Forward intermediates of the deformation net, for the JVP path."""

    cache: MLPCache
    enc_cache: list
    x_np: np.ndarray
    gate: Tensor


# ---------------------------------------------------------------------------
# bundle
# ---------------------------------------------------------------------------

@dataclass
class FieldConfig:
    pos_freqs: int = 6
    time_freqs: int = 4
    deform_hidden: int = 64
    deform_layers: int = 4
    sdf_hidden: int = 64
    sdf_layers: int = 4
    sdf_skip: int = 2
    feature_dim: int = 32
    radiance_hidden: int = 64
    radiance_layers: int = 3
    sdf_beta: float = 100.0
    act_beta: float = 1.0
    geometric_radius: float = 0.5
    init_sharpness: float = 20.0
    image_height: int = 64
    image_width: int = 64
    seed: int = 0
    normalization: dict | None = None
    # trained with the track conditioning forced to zero (baseline mode);
    # evaluation must feed the same zeros the deform net saw during training
    zero_track_conditioning: bool = False


@dataclass(frozen=True)
class DeformationQuery:
    """Reference-space point, dense-track sample at its projection, time."""

    x: np.ndarray
    p_hat: np.ndarray
    t: float

    def __post_init__(self):
        object.__setattr__(self, "x", np.asarray(self.x, dtype=np.float64).reshape(3))
        object.__setattr__(self, "p_hat", np.asarray(self.p_hat, dtype=np.float64).reshape(2))
        if not (np.all(np.isfinite(self.x)) and np.all(np.isfinite(self.p_hat)) and np.isfinite(self.t)):
            raise ValueError("DeformationQuery: non-finite input")
        if not (0.0 <= self.t <= 1.0):
            raise ValueError(f"DeformationQuery: t={self.t} outside [0, 1]")


class FieldBundle:
    """Parameters and encodings of the deformation/SDF/radiance fields."""

    def __init__(self, cfg: FieldConfig):
        self.cfg = cfg
        self.pos_enc = PositionalEncoding(cfg.pos_freqs)
        self.time_enc = PositionalEncoding(cfg.time_freqs)
        self.store = ParamStore()
        rng = np.random.default_rng(cfg.seed)
        pos_dim = self.pos_enc.out_dim(3)
        time_dim = self.time_enc.out_dim(1)
        self.deform_in = pos_dim + 2 + time_dim
        self.deform = MLP(self.store, "deform", self.deform_in, cfg.deform_hidden,
                          cfg.deform_layers, 3, beta=cfg.act_beta, rng=rng,
                          zero_init_output=True)
        self.sdf_net = MLP(self.store, "sdf", pos_dim, cfg.sdf_hidden, cfg.sdf_layers,
                           1 + cfg.feature_dim, beta=cfg.sdf_beta,
                           skip_at=(cfg.sdf_skip,), rng=rng, init="geometric",
                           geometric_radius=cfg.geometric_radius)
        rad_in = pos_dim + 3 + 3 + cfg.feature_dim
        self.radiance_net = MLP(self.store, "radiance", rad_in, cfg.radiance_hidden,
                                cfg.radiance_layers, 3, beta=cfg.act_beta, rng=rng,
                                output_scale=1.0)
        self.log_sharpness = self.store.parameter(
            "log_sharpness", np.array(np.log(cfg.init_sharpness)))

    # -- bookkeeping ---------------------------------------------------------

    @property
    def sharpness(self) -> float:
        return float(np.exp(self.log_sharpness.data))

    @property
    def px_scale(self) -> float:
        return 1.0 / max(self.cfg.image_height, self.cfg.image_width)

    @property
    def normalization(self) -> SceneNormalization | None:
        if self.cfg.normalization is None:
            return None
        return SceneNormalization.from_dict(self.cfg.normalization)

    def set_normalization(self, norm: SceneNormalization):
        self.cfg.normalization = norm.to_dict()

    def save(self, ckpt_dir):
        ckpt_dir = Path(ckpt_dir)
        ckpt_dir.mkdir(parents=True, exist_ok=True)
        arch = {"format_version": ARCH_FORMAT_VERSION, **asdict(self.cfg)}
        with open(ckpt_dir / "arch.json", "w") as f:
            json.dump(arch, f, indent=2, sort_keys=True)
        self.store.save(ckpt_dir / "params.json")

    @classmethod
    def load(cls, ckpt_dir) -> "FieldBundle":
        ckpt_dir = Path(ckpt_dir)
        with open(ckpt_dir / "arch.json") as f:
            arch = json.load(f)
        if arch.pop("format_version", None) != ARCH_FORMAT_VERSION:
            raise ValueError(f"{ckpt_dir}: unsupported arch format_version")
        bundle = cls(FieldConfig(**arch))
        bundle.store.load(ckpt_dir / "params.json")
        return bundle

    # -- graph builders (shared by point ops and the renderer) ---------------

    def deform_forward(self, x: Tensor, p_hat: np.ndarray, ts: np.ndarray):
        """Displacement of reference points; returns (delta, DeformContext).

        `x` is an (N, 3) tensor (constant or differentiable), `p_hat` raw
        pixel displacements (N, 2) scaled here by 1/max(H, W), `ts` (N,) times.
        The raw net output is gated by t, pinning the t=0 reference frame to
        canonical space (zero displacement there by construction).
        """
        enc_x, enc_cache = self.pos_enc.apply(x)
        n = x.shape[0]
        ts = np.asarray(ts, dtype=np.float64).reshape(n)
        p = Tensor(np.asarray(p_hat, dtype=np.float64).reshape(n, 2) * self.px_scale)
        enc_t = Tensor(self.time_enc.apply_np(ts.reshape(n, 1)))
        u = ad.concat([enc_x, p, enc_t], axis=1)
        raw, cache = self.deform.forward(u)
        gate = Tensor(ts.reshape(n, 1))
        delta = ad.mul(raw, gate)
        return delta, DeformContext(cache, enc_cache, x.data, gate)

    def deform_jvp(self, ctx: "DeformContext", v_np: np.ndarray) -> Tensor:
        """(d deform / d x) . v as a graph tensor, holding p_hat and t fixed."""
        n = ctx.x_np.shape[0]
        tan = np.zeros((n, self.deform_in))
        tan[:, : self.pos_enc.out_dim(3)] = self.pos_enc.tangent_np(ctx.x_np, v_np)
        raw = self.deform.input_jvp(ctx.cache, Tensor(tan))
        return ad.mul(raw, ctx.gate)

    def sdf_forward(self, x_c: Tensor):
        """Canonical SDF; returns (distance (N,1), feature (N,F), caches)."""
        enc_x, enc_cache = self.pos_enc.apply(x_c)
        out, cache = self.sdf_net.forward(enc_x)
        dist = ad.slice_axis1(out, 0, 1)
        feat = ad.slice_axis1(out, 1, 1 + self.cfg.feature_dim)
        return dist, feat, cache, enc_cache, enc_x

    def sdf_input_gradient(self, cache: MLPCache, enc_cache) -> Tensor:
        """d distance / d x_c as a graph tensor (N, 3); eikonal/normal source."""
        g_enc = self.sdf_net.input_gradient(cache, 0)
        return self.pos_enc.input_backprop(g_enc, enc_cache, 3)

    def radiance_forward(self, enc_xc: Tensor, v_c: Tensor, normal: Tensor,
                         feature: Tensor) -> Tensor:
        u = ad.concat([enc_xc, v_c, normal, feature], axis=1)
        out, _ = self.radiance_net.forward(u)
        return ad.sigmoid(out)


def make_bundle(cfg: FieldConfig | None = None) -> FieldBundle:
    return FieldBundle(cfg if cfg is not None else FieldConfig())


# ---------------------------------------------------------------------------
# point-query operations
# ---------------------------------------------------------------------------

def deform_points(bundle: FieldBundle, xs: np.ndarray, p_hats: np.ndarray,
                  ts: np.ndarray) -> np.ndarray:
    """Batched displacement evaluation, plain arrays in and out."""
    xs = np.asarray(xs, dtype=np.float64).reshape(-1, 3)
    delta, _ = bundle.deform_forward(Tensor(xs), p_hats, ts)
    return delta.data


def deform(bundle: FieldBundle, q: DeformationQuery) -> np.ndarray:
    return deform_points(bundle, q.x[None], q.p_hat[None], np.array([q.t]))[0]


def deform_jacobian(bundle: FieldBundle, q: DeformationQuery) -> np.ndarray:
    """d deform / d x at the query, holding p_hat and t fixed; exact 3x3."""

    def f(xt: Tensor) -> Tensor:
        delta, _ = bundle.deform_forward(
            ad.reshape(xt, (1, 3)), q.p_hat[None], np.array([q.t]))
        return ad.reshape(delta, (3,))

    return ad.jacobian(f, q.x)


class DegenerateJacobianError(ValueError):
    pass


def canonical_view(v_o: np.ndarray, jac: np.ndarray) -> np.ndarray:
    """Transport a unit view direction through the deformation: (I + J) v, renormalized."""
    v_o = np.asarray(v_o, dtype=np.float64).reshape(3)
    jac = np.asarray(jac, dtype=np.float64).reshape(3, 3)
    if abs(np.linalg.norm(v_o) - 1.0) > 1e-6:
        raise ValueError("canonical_view: view direction must be unit length")
    v = (np.eye(3) + jac) @ v_o
    n = np.linalg.norm(v)
    if n == 0.0:
        raise DegenerateJacobianError("canonical_view: (I + J) v vanished")
    return v / n


def sdf_points(bundle: FieldBundle, xs: np.ndarray):
    xs = np.asarray(xs, dtype=np.float64).reshape(-1, 3)
    dist, feat, _, _, _ = bundle.sdf_forward(Tensor(xs))
    return dist.data[:, 0], feat.data


def sdf(bundle: FieldBundle, x: np.ndarray):
    """Signed distance (negative inside) and geometric feature at one point."""
    d, f = sdf_points(bundle, np.asarray(x, dtype=np.float64)[None])
    return float(d[0]), f[0]


def sdf_gradient_points(bundle: FieldBundle, xs: np.ndarray) -> np.ndarray:
    xs = np.asarray(xs, dtype=np.float64).reshape(-1, 3)
    dist, _, cache, enc_cache, _ = bundle.sdf_forward(Tensor(xs))
    return bundle.sdf_input_gradient(cache, enc_cache).data


def sdf_gradient(bundle: FieldBundle, x: np.ndarray) -> np.ndarray:
    return sdf_gradient_points(bundle, np.asarray(x, dtype=np.float64)[None])[0]


def radiance(bundle: FieldBundle, x_c, v_c, normal, feature) -> np.ndarray:
    """Sigmoid-bounded color at one canonical point."""
    enc_xc, _ = bundle.pos_enc.apply(Tensor(np.asarray(x_c, dtype=np.float64).reshape(1, 3)))
    rgb = bundle.radiance_forward(
        enc_xc,
        Tensor(np.asarray(v_c, dtype=np.float64).reshape(1, 3)),
        Tensor(np.asarray(normal, dtype=np.float64).reshape(1, 3)),
        Tensor(np.asarray(feature, dtype=np.float64).reshape(1, -1)),
    )
    return rgb.data[0]
