"""\
Copyright (c) 2026, blurba developers
All rights reserved.

The learnable radiance field: Fourier positional encoding of position and view direction, and a small MLP
producing (color, density), with exact reverse-mode gradients w.r.t. all parameters and inputs.

"""
import json
import logging
import struct
from collections import OrderedDict, namedtuple

import numpy as np
from scipy.special import expit

from blurba import NonFiniteParamsError, VersionError, ConfigError, ShapeMismatchError, assert_finite, \
    assert_range

LOGGER = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"BLURBAFP"
CHECKPOINT_VERSION = 1
FREQUENCY_CONVENTION = "2^k*pi"

FieldOutput = namedtuple("FieldOutput", ["color", "sigma"])


class EncodingConfig:
    """\
    Configuration of the Fourier positional encoding.

    """
    def __init__(self, l_pos=10, l_dir=4, include_identity=True):
        """\

        :param l_pos: number of frequency bands for positions
        :param l_dir: number of frequency bands for view directions
        :param include_identity: whether to include the raw input in the encoding
        """
        self.l_pos = l_pos
        self.l_dir = l_dir
        self.include_identity = include_identity

    def validate(self):
        """Checks field ranges, raising ConfigError on failure"""
        assert_range("l_pos", self.l_pos, min_val=0)
        assert_range("l_dir", self.l_dir, min_val=0)
        return self

    def pos_dim(self):
        """Dimension of the encoded position"""
        return encoded_dim(self.l_pos, self.include_identity)

    def dir_dim(self):
        """Dimension of the encoded direction"""
        return encoded_dim(self.l_dir, self.include_identity)

    def to_json(self):
        """Serializes this config to JSON primitives"""
        return {'l_pos': self.l_pos, 'l_dir': self.l_dir, 'include_identity': self.include_identity,
                'frequency_convention': FREQUENCY_CONVENTION}

    @staticmethod
    def from_json(obj):
        """Parses an EncodingConfig from JSON primitives"""
        convention = obj.get('frequency_convention', FREQUENCY_CONVENTION)
        if convention != FREQUENCY_CONVENTION:
            raise ConfigError(f"Unsupported encoding frequency convention: {convention}")
        return EncodingConfig(l_pos=obj.get('l_pos', 10), l_dir=obj.get('l_dir', 4),
                              include_identity=obj.get('include_identity', True))


class FieldConfig:
    """\
    Architecture of the radiance field MLP.

    """
    # pylint: disable=too-many-arguments
    def __init__(self, depth=4, width=64, skips=(), hidden_activation="relu", color_width=None,
                 encoding=None, seed=0):
        """\

        :param depth: number of hidden trunk layers
        :param width: width of the trunk layers
        :param skips: indices of trunk layers which additionally receive the encoded position
        :param hidden_activation: "relu" or "softplus"
        :param color_width: width of the view-dependent color layer. Defaults to width // 2.
        :param encoding: EncodingConfig. Defaults to L_pos=10, L_dir=4 with identity.
        :param seed: RNG seed for weight initialization
        """
        self.depth = depth
        self.width = width
        self.skips = tuple(skips)
        self.hidden_activation = hidden_activation
        self.color_width = color_width if color_width is not None else max(width // 2, 1)
        self.encoding = encoding if encoding is not None else EncodingConfig()
        self.seed = seed

    @staticmethod
    def full_size(**kwargs):
        """The 8x256 architecture with a skip connection at layer 4"""
        return FieldConfig(depth=8, width=256, skips=(4,), **kwargs)

    def validate(self):
        """Checks field ranges, raising ConfigError on failure"""
        assert_range("depth", self.depth, min_val=1)
        assert_range("width", self.width, min_val=1)
        assert_range("color_width", self.color_width, min_val=1)
        if self.hidden_activation not in ("relu", "softplus"):
            raise ConfigError(f"hidden_activation must be relu or softplus, got {self.hidden_activation}")
        for skip in self.skips:
            assert_range("skip", skip, min_val=1, max_val=self.depth - 1)
        self.encoding.validate()
        return self

    def to_json(self):
        """Serializes this config to JSON primitives"""
        return {'depth': self.depth, 'width': self.width, 'skips': list(self.skips),
                'hidden_activation': self.hidden_activation, 'color_width': self.color_width,
                'encoding': self.encoding.to_json(), 'seed': self.seed}

    @staticmethod
    def from_json(obj):
        """Parses a FieldConfig from JSON primitives"""
        return FieldConfig(depth=obj.get('depth', 4), width=obj.get('width', 64), skips=obj.get('skips', ()),
                           hidden_activation=obj.get('hidden_activation', 'relu'),
                           color_width=obj.get('color_width'),
                           encoding=EncodingConfig.from_json(obj.get('encoding', {})),
                           seed=obj.get('seed', 0))


def encoded_dim(n_bands, include_identity=True, input_dim=3):
    """Dimension of the Fourier encoding of an input_dim-vector"""
    return input_dim * (int(include_identity) + 2 * n_bands)


def encode(x, n_bands, include_identity=True):
    """\
    Fourier encoding: ``[x, sin(2^0 pi x), cos(2^0 pi x), ..., sin(2^(L-1) pi x), cos(2^(L-1) pi x)]``,
    each term applied componentwise.

    :param x: array (..., 3)
    :param n_bands: number of frequency bands L
    :param include_identity: whether to include x itself
    :return: array (..., 3 * (include_identity + 2L))

    """
    x = np.asarray(x, dtype=np.float64)
    parts = [x] if include_identity else []
    for k in range(n_bands):
        scaled = (2.0 ** k) * np.pi * x
        parts.append(np.sin(scaled))
        parts.append(np.cos(scaled))

    if not parts:
        return np.zeros(x.shape[:-1] + (0,))
    return np.concatenate(parts, axis=-1)


def encode_backward(x, n_bands, include_identity, grad_out):
    """\
    Back-propagates a gradient through encode().

    :param x: array (..., 3), the encoded input
    :param n_bands: number of frequency bands L
    :param include_identity: whether the identity term was included
    :param grad_out: gradient w.r.t. the encoding, array (..., encoded_dim)
    :return: gradient w.r.t. x, array (..., 3)

    """
    x = np.asarray(x, dtype=np.float64)
    dim = x.shape[-1]
    grad_x = np.zeros_like(x)
    offset = 0
    if include_identity:
        grad_x += grad_out[..., :dim]
        offset = dim

    for k in range(n_bands):
        freq = (2.0 ** k) * np.pi
        scaled = freq * x
        grad_sin = grad_out[..., offset:offset + dim]
        grad_cos = grad_out[..., offset + dim:offset + 2 * dim]
        grad_x += freq * (grad_sin * np.cos(scaled) - grad_cos * np.sin(scaled))
        offset += 2 * dim

    return grad_x


def _activate(name, z):
    if name == "relu":
        return np.maximum(z, 0.0)
    elif name == "softplus":
        return np.logaddexp(0.0, z)
    elif name == "sigmoid":
        return expit(z)
    elif name == "linear":
        return z
    else:
        raise ValueError(name)


def _activation_derivative(name, z, out):
    if name == "relu":
        return (z > 0).astype(z.dtype)
    elif name == "softplus":
        return expit(z)
    elif name == "sigmoid":
        return out * (1.0 - out)
    elif name == "linear":
        return np.ones_like(z)
    else:
        raise ValueError(name)


def dense_forward(weight, bias, activation, x):
    """\
    Forward pass of a dense layer: ``activation(x @ weight + bias)``.

    :return: tuple of (output, pre-activation)

    """
    z = x @ weight + bias
    return _activate(activation, z), z


def dense_backward(weight, activation, x, z, out, grad_out):
    """\
    Backward pass of a dense layer.

    :return: tuple of (grad_weight, grad_bias, grad_x)

    """
    grad_z = grad_out * _activation_derivative(activation, z, out)
    grad_x2d = grad_z.reshape(-1, grad_z.shape[-1])
    x2d = x.reshape(-1, x.shape[-1])
    return x2d.T @ grad_x2d, grad_x2d.sum(axis=0), grad_z @ weight.T


class FieldParams:
    """\
    All learnable MLP weights of a radiance field, plus the architecture they belong to. Layers are stored
    in declared order; weights have shape (inputs, outputs).

    """
    def __init__(self, config, layers, activations):
        """\

        :param config: FieldConfig
        :param layers: OrderedDict of layer name -> (weight, bias)
        :param activations: dict of layer name -> activation name
        """
        self.config = config
        self.layers = OrderedDict(layers)
        self.activations = dict(activations)

    @staticmethod
    def layer_specs(config):
        """\
        Lists (name, inputs, outputs, activation) for every layer of an architecture, in declared order.

        :param config: FieldConfig
        :return: list of tuples

        """
        pos_dim, dir_dim = config.encoding.pos_dim(), config.encoding.dir_dim()
        specs = []
        for idx in range(config.depth):
            n_in = pos_dim if idx == 0 else config.width
            if idx in config.skips:
                n_in += pos_dim
            specs.append((f"trunk_{idx}", n_in, config.width, config.hidden_activation))

        specs.append(("sigma", config.width, 1, "softplus"))
        specs.append(("feature", config.width, config.width, "linear"))
        specs.append(("color_0", config.width + dir_dim, config.color_width, config.hidden_activation))
        specs.append(("rgb", config.color_width, 3, "sigmoid"))
        return specs

    @staticmethod
    def initialize(config, seed=None):
        """\
        Creates randomly initialized parameters (Glorot-uniform weights, zero biases).

        :param config: FieldConfig
        :param seed: RNG seed. Defaults to config.seed.
        :return: FieldParams instance

        """
        config.validate()
        rng = np.random.default_rng(config.seed if seed is None else seed)
        layers, activations = OrderedDict(), {}
        for name, n_in, n_out, activation in FieldParams.layer_specs(config):
            limit = np.sqrt(6.0 / (n_in + n_out))
            layers[name] = (rng.uniform(-limit, limit, size=(n_in, n_out)), np.zeros(n_out))
            activations[name] = activation
        return FieldParams(config, layers, activations)

    def zeros_like(self):
        """Returns parameters with the same structure and all values set to zero"""
        return FieldParams(self.config,
                           OrderedDict((name, (np.zeros_like(w), np.zeros_like(b)))
                                       for name, (w, b) in self.layers.items()),
                           self.activations)

    def size(self):
        """Total number of scalar parameters"""
        return sum(w.size + b.size for w, b in self.layers.values())

    def as_vector(self):
        """Flattens all parameters into a single vector, in declared layer order (weight, then bias)"""
        return np.concatenate([part.ravel() for w, b in self.layers.values() for part in (w, b)])

    def with_vector(self, vector):
        """\
        Creates new parameters with the same structure, taking values from a flat vector.

        :param vector: flat vector, see as_vector()
        :return: FieldParams instance

        """
        vector = np.asarray(vector, dtype=np.float64)
        if vector.ndim != 1 or vector.size != self.size():
            raise ShapeMismatchError(f"Expected a flat vector of size {self.size()}, got shape {vector.shape}")

        layers, offset = OrderedDict(), 0
        for name, (w, b) in self.layers.items():
            new_w = vector[offset:offset + w.size].reshape(w.shape)
            offset += w.size
            new_b = vector[offset:offset + b.size].reshape(b.shape)
            offset += b.size
            layers[name] = (new_w, new_b)

        return FieldParams(self.config, layers, self.activations)

    def is_finite(self):
        """True iff all parameters are finite"""
        return all(np.all(np.isfinite(w)) and np.all(np.isfinite(b)) for w, b in self.layers.values())

    def forward(self, x_world, dir_world):
        """Batched forward pass. See field_forward()."""
        return field_forward(self, x_world, dir_world)

    def backward(self, cache, grad_color, grad_sigma):
        """Batched backward pass. See field_backward()."""
        return field_backward(self, cache, grad_color, grad_sigma)


def field_forward(params, x_world, dir_world):
    """\
    Batched forward pass of the radiance field. Density depends only on position; the encoded direction
    enters after the density head.

    :param params: FieldParams
    :param x_world: array (..., 3) of world positions
    :param dir_world: array (..., 3) of unit world directions
    :return: tuple of (color (..., 3), sigma (...), cache for field_backward)

    """
    if not params.is_finite():
        raise NonFiniteParamsError("Radiance field parameters contain NaN or Inf")

    enc = params.config.encoding
    x_world = np.asarray(x_world, dtype=np.float64)
    dir_world = np.asarray(dir_world, dtype=np.float64)
    enc_pos = encode(x_world, enc.l_pos, enc.include_identity)
    enc_dir = encode(dir_world, enc.l_dir, enc.include_identity)

    cache = {'x': x_world, 'd': dir_world, 'layers': {}}
    hidden = enc_pos
    for idx in range(params.config.depth):
        name = f"trunk_{idx}"
        layer_in = np.concatenate([hidden, enc_pos], axis=-1) if idx in params.config.skips else hidden
        hidden, z = dense_forward(*params.layers[name], params.activations[name], layer_in)
        cache['layers'][name] = (layer_in, z, hidden)

    sigma, z = dense_forward(*params.layers["sigma"], "softplus", hidden)
    cache['layers']["sigma"] = (hidden, z, sigma)

    feature, z = dense_forward(*params.layers["feature"], "linear", hidden)
    cache['layers']["feature"] = (hidden, z, feature)

    color_in = np.concatenate([feature, enc_dir], axis=-1)
    color_hidden, z = dense_forward(*params.layers["color_0"], params.activations["color_0"], color_in)
    cache['layers']["color_0"] = (color_in, z, color_hidden)

    color, z = dense_forward(*params.layers["rgb"], "sigmoid", color_hidden)
    cache['layers']["rgb"] = (color_hidden, z, color)

    return color, sigma[..., 0], cache


def field_backward(params, cache, grad_color, grad_sigma):
    """\
    Exact reverse-mode gradients of field_forward().

    :param params: FieldParams used in the forward pass
    :param cache: cache returned by field_forward()
    :param grad_color: gradient w.r.t. color, array (..., 3)
    :param grad_sigma: gradient w.r.t. sigma, array (...)
    :return: tuple of (grad_params as FieldParams, grad_x (..., 3), grad_dir (..., 3))

    """
    enc = params.config.encoding
    layers = cache['layers']
    grads = OrderedDict()
    width = params.config.width

    def _back(name, grad_out):
        layer_in, z, out = layers[name]
        weight, _ = params.layers[name]
        grad_w, grad_b, grad_in = dense_backward(weight, params.activations[name], layer_in, z, out, grad_out)
        grads[name] = (grad_w, grad_b)
        return grad_in

    grad_color_hidden = _back("rgb", np.asarray(grad_color, dtype=np.float64))
    grad_color_in = _back("color_0", grad_color_hidden)
    grad_feature, grad_enc_dir = grad_color_in[..., :width], grad_color_in[..., width:]

    grad_hidden = _back("feature", grad_feature)
    grad_hidden = grad_hidden + _back("sigma", np.asarray(grad_sigma, dtype=np.float64)[..., None])

    pos_dim = enc.pos_dim()
    grad_enc_pos = 0.0
    for idx in reversed(range(params.config.depth)):
        name = f"trunk_{idx}"
        grad_in = _back(name, grad_hidden)
        if idx in params.config.skips:
            grad_enc_pos = grad_enc_pos + grad_in[..., -pos_dim:]
            grad_in = grad_in[..., :-pos_dim]
        grad_hidden = grad_in
    grad_enc_pos = grad_enc_pos + grad_hidden

    grad_x = encode_backward(cache['x'], enc.l_pos, enc.include_identity, grad_enc_pos)
    grad_d = encode_backward(cache['d'], enc.l_dir, enc.include_identity, grad_enc_dir)

    ordered = OrderedDict((name, grads[name]) for name in params.layers)
    return FieldParams(params.config, ordered, params.activations), grad_x, grad_d


def query(params, x_world, dir_world):
    """\
    Queries the radiance field at one or more points.

    :param params: FieldParams
    :param x_world: world position(s), array (..., 3)
    :param dir_world: unit view direction(s), array (..., 3)
    :return: FieldOutput(color, sigma)

    """
    color, sigma, _ = field_forward(params, x_world, dir_world)
    return FieldOutput(color, sigma)


def query_backward(params, x_world, dir_world, upstream):
    """\
    Gradients of a scalar loss w.r.t. field parameters and inputs, given the gradient w.r.t. the query output.

    :param params: FieldParams
    :param x_world: world position(s), array (..., 3)
    :param dir_world: unit view direction(s), array (..., 3)
    :param upstream: FieldOutput holding the gradients w.r.t. color and sigma
    :return: tuple of (grad_params, grad_x_world, grad_dir_world)

    """
    _, _, cache = field_forward(params, x_world, dir_world)
    return field_backward(params, cache, upstream.color, upstream.sigma)


def save_checkpoint(params, path, extra=None):
    """\
    Writes field parameters to a binary checkpoint: magic, little-endian uint64 header length, a JSON header
    (layer shapes, encoding config, seed) and little-endian float64 values in declared layer order.

    :param params: FieldParams
    :param path: output path
    :param extra: optional JSON-serializable dictionary stored in the header
    :return: None

    """
    header = {'schema_version': CHECKPOINT_VERSION,
              'config': params.config.to_json(),
              'seed': params.config.seed,
              'dtype': '<f8',
              'layers': [{'name': name,
                          'weight_shape': list(w.shape),
                          'bias_shape': list(b.shape),
                          'activation': params.activations[name]}
                         for name, (w, b) in params.layers.items()],
              'extra': extra or {}}
    header_bytes = json.dumps(header).encode('utf-8')

    with open(path, 'wb') as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack('<Q', len(header_bytes)))
        f.write(header_bytes)
        f.write(params.as_vector().astype('<f8').tobytes())


def read_checkpoint_header(path):
    """Reads just the JSON header of a checkpoint"""
    with open(path, 'rb') as f:
        return _read_header(f, path)


def _read_header(f, path):
    if f.read(len(CHECKPOINT_MAGIC)) != CHECKPOINT_MAGIC:
        raise VersionError(f"{path} is not a blurba field checkpoint")
    (header_len, ) = struct.unpack('<Q', f.read(8))
    header = json.loads(f.read(header_len).decode('utf-8'))
    if header.get('schema_version') != CHECKPOINT_VERSION:
        raise VersionError(f"Unsupported checkpoint version {header.get('schema_version')} in {path}")
    return header


def load_checkpoint(path):
    """\
    Reads field parameters written by save_checkpoint().

    :param path: checkpoint path
    :return: FieldParams instance

    """
    with open(path, 'rb') as f:
        header = _read_header(f, path)
        values = np.frombuffer(f.read(), dtype='<f8').astype(np.float64)

    config = FieldConfig.from_json(header['config'])
    layers, activations, offset = OrderedDict(), {}, 0
    for spec in header['layers']:
        w_size = int(np.prod(spec['weight_shape']))
        b_size = int(np.prod(spec['bias_shape']))
        weight = values[offset:offset + w_size].reshape(spec['weight_shape'])
        offset += w_size
        bias = values[offset:offset + b_size].reshape(spec['bias_shape'])
        offset += b_size
        layers[spec['name']] = (weight, bias)
        activations[spec['name']] = spec['activation']

    params = FieldParams(config, layers, activations)
    assert_finite([params.as_vector()], what="checkpoint values")
    LOGGER.debug("Loaded %d parameters from %s", params.size(), path)
    return params
