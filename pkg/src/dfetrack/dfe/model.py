"""Convolutional stacked autoencoder producing 128-d crop encodings.

The encoder stacks valid-convolution blocks (conv, batch norm, rectifier)
that shrink a 31x31x3 crop to a 128-dimensional latent vector; the
decoder mirrors it with transposed convolutions and a final 3-filter
sigmoid layer.  Because every convolution is valid, running the encoder
over a whole image yields the descriptor of every 31x31 window at once,
which is what dense SSR matching consumes.

Weights files: 8-byte magic ``DFECAE01``, a little-endian uint32 length,
that many bytes of UTF-8 JSON (config, array manifest, seed, metadata),
then each array as raw little-endian float32 in manifest order.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from ..errors import InvalidInputError, ModelFormatError, ModelShapeError
from ..raster import LAB01, Crop
from .layers import BatchNorm2d, Conv2d, ConvTranspose2d, Layer, ReLU, Sigmoid, mse_loss

MAGIC = b"DFECAE01"

INPUT_CHANNELS = 3
INPUT_SIZE = 31
LATENT_DIM = 128

# Desk-scale default: three valid-conv blocks take 31 -> 21 -> 11 -> 1
# spatially, ending at 128 channels on a 1x1 extent.
DEFAULT_BLOCKS = ((8, 11), (16, 11), (128, 11))


@dataclass(frozen=True)
class CaeConfig:
    """Architecture description; the decoder always mirrors the encoder."""

    encoder_blocks: tuple[tuple[int, int], ...] = DEFAULT_BLOCKS
    latent_dim: int = LATENT_DIM
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(
            self, "encoder_blocks", tuple((int(f), int(k)) for f, k in self.encoder_blocks)
        )
        if self.latent_dim != LATENT_DIM:
            raise InvalidInputError(
                f"latent dimensionality is fixed at {LATENT_DIM}, got {self.latent_dim}"
            )
        if not self.encoder_blocks:
            raise InvalidInputError("need at least one encoder block")
        size = INPUT_SIZE
        for filters, kernel in self.encoder_blocks:
            if kernel % 2 != 1 or kernel < 1:
                raise InvalidInputError(f"kernels must be odd and positive, got {kernel}")
            if filters < 1:
                raise InvalidInputError(f"filter counts must be positive, got {filters}")
            size -= kernel - 1
            if size < 1:
                raise InvalidInputError(
                    "valid convolutions shrink the input below 1x1; reduce kernels"
                )
        bottleneck_filters = self.encoder_blocks[-1][0]
        if bottleneck_filters * size * size != self.latent_dim:
            raise InvalidInputError(
                f"bottleneck {bottleneck_filters} filters at {size}x{size} does not "
                f"flatten to the {self.latent_dim}-d latent"
            )
        # Odd kernels leave odd extents, and 128 = f * s*s with odd s
        # forces s = 1; keep the general check above for clearer errors.
        object.__setattr__(self, "_bottleneck_size", size)

    @property
    def bottleneck_size(self) -> int:
        return self._bottleneck_size

    @property
    def compression_factor(self) -> float:
        return self.latent_dim / (INPUT_SIZE * INPUT_SIZE * INPUT_CHANNELS)

    def encoder_shapes(self) -> list[tuple[int, int]]:
        """Spatial extent after each encoder block, starting at the input."""
        sizes = [INPUT_SIZE]
        for _, kernel in self.encoder_blocks:
            sizes.append(sizes[-1] - (kernel - 1))
        return [(s, s) for s in sizes]

    def to_dict(self) -> dict:
        return {
            "encoder_blocks": [list(b) for b in self.encoder_blocks],
            "latent_dim": self.latent_dim,
            "seed": self.seed,
        }

    @staticmethod
    def from_dict(d: dict) -> "CaeConfig":
        return CaeConfig(
            encoder_blocks=tuple(tuple(b) for b in d["encoder_blocks"]),
            latent_dim=int(d["latent_dim"]),
            seed=int(d["seed"]),
        )


@dataclass
class _Block:
    name: str
    layers: list[Layer]


class CaeModel:
    """Encoder/decoder pair with named parameter and state arrays."""

    def __init__(self, config: CaeConfig, dtype=np.float32):
        self.config = config
        self.dtype = np.dtype(dtype)
        rng = np.random.Generator(np.random.Philox(key=config.seed))
        self.encoder: list[_Block] = []
        self.decoder: list[_Block] = []

        def init_conv(shape, fan_in):
            bound = 1.0 / np.sqrt(fan_in)
            return rng.uniform(-bound, bound, size=shape).astype(self.dtype)

        def bn(channels):
            return BatchNorm2d(
                gamma=np.ones(channels, dtype=self.dtype),
                beta=np.zeros(channels, dtype=self.dtype),
                running_mean=np.zeros(channels, dtype=self.dtype),
                running_var=np.ones(channels, dtype=self.dtype),
            )

        c_in = INPUT_CHANNELS
        for i, (filters, kernel) in enumerate(config.encoder_blocks):
            conv = Conv2d(
                init_conv((filters, c_in, kernel, kernel), c_in * kernel * kernel),
                np.zeros(filters, dtype=self.dtype),
            )
            self.encoder.append(_Block(f"enc{i}", [conv, bn(filters), ReLU()]))
            c_in = filters

        mirrored = list(config.encoder_blocks)[::-1]
        for i, (filters, kernel) in enumerate(mirrored):
            last = i == len(mirrored) - 1
            out_ch = INPUT_CHANNELS if last else mirrored[i + 1][0]
            deconv = ConvTranspose2d(
                init_conv((filters, out_ch, kernel, kernel), filters * kernel * kernel),
                np.zeros(out_ch, dtype=self.dtype),
            )
            layers: list[Layer] = [deconv]
            if last:
                layers.append(Sigmoid())
            else:
                layers.extend([bn(out_ch), ReLU()])
            self.decoder.append(_Block(f"dec{i}", layers))

    # -- parameter bookkeeping ------------------------------------------------

    def _blocks(self) -> list[_Block]:
        return self.encoder + self.decoder

    def named_params(self) -> list[tuple[str, np.ndarray]]:
        out = []
        for block in self._blocks():
            for j, layer in enumerate(block.layers):
                for name, arr in layer.params():
                    out.append((f"{block.name}.{j}.{name}", arr))
        return out

    def named_state(self) -> list[tuple[str, np.ndarray]]:
        out = []
        for block in self._blocks():
            for j, layer in enumerate(block.layers):
                for name, arr in layer.state():
                    out.append((f"{block.name}.{j}.{name}", arr))
        return out

    def parameters(self) -> list[np.ndarray]:
        return [arr for _, arr in self.named_params()]

    def param_count(self) -> int:
        return sum(arr.size for arr in self.parameters())

    # -- forward paths --------------------------------------------------------

    def _run(self, blocks: list[_Block], x: np.ndarray, training: bool) -> np.ndarray:
        for block in blocks:
            for layer in block.layers:
                x = layer.forward(x, training)
        return x

    def encode_batch(self, crops: np.ndarray) -> np.ndarray:
        """(N, 3, 31, 31) crops -> (N, 128) descriptors, inference mode."""
        crops = self._check_input(crops)
        z = self._run(self.encoder, crops, training=False)
        return z.reshape(z.shape[0], -1)

    def encode(self, crop: Crop) -> np.ndarray:
        """One LAB01 crop -> 128-d descriptor."""
        if crop.space != LAB01:
            raise InvalidInputError(f"encoder consumes LAB01 crops, got {crop.space}")
        if crop.size != INPUT_SIZE:
            raise InvalidInputError(f"encoder consumes {INPUT_SIZE}px crops, got {crop.size}")
        batch = crop.samples[None].astype(self.dtype)
        return self.encode_batch(batch)[0]

    def encode_dense(self, planes: np.ndarray) -> np.ndarray:
        """Descriptor of every full window of a (3, H, W) image.

        Returns (H - 30, W - 30, 128); entry [i, j] is the descriptor of
        the window centered at (x=j+15, y=i+15).  Valid convolutions make
        this exactly the per-window encoder output.
        """
        if planes.ndim != 3 or planes.shape[0] != INPUT_CHANNELS:
            raise InvalidInputError(f"expected (3, H, W) planes, got {planes.shape}")
        if planes.shape[1] < INPUT_SIZE or planes.shape[2] < INPUT_SIZE:
            raise InvalidInputError("image smaller than the 31px window")
        x = planes[None].astype(self.dtype)
        z = self._run(self.encoder, x, training=False)[0]  # (128, H', W')
        return np.moveaxis(z, 0, -1)

    def decode(self, descriptor: np.ndarray) -> np.ndarray:
        """128-d descriptor -> (3, 31, 31) reconstruction in (0, 1)."""
        descriptor = np.asarray(descriptor, dtype=self.dtype)
        if descriptor.shape != (self.config.latent_dim,):
            raise InvalidInputError(
                f"descriptor must have shape ({self.config.latent_dim},), got {descriptor.shape}"
            )
        s = self.config.bottleneck_size
        f = self.config.encoder_blocks[-1][0]
        z = descriptor.reshape(1, f, s, s)
        return self._run(self.decoder, z, training=False)[0]

    def reconstruct(self, crops: np.ndarray, training: bool) -> np.ndarray:
        crops = self._check_input(crops)
        z = self._run(self.encoder, crops, training)
        return self._run(self.decoder, z, training)

    def reconstruction_loss(self, crops: np.ndarray) -> float:
        """Mean squared reconstruction error of a batch, inference mode."""
        crops = self._check_input(crops)
        out = self.reconstruct(crops, training=False)
        return mse_loss(out, crops.astype(self.dtype))[0]

    def backward(self, crops: np.ndarray) -> tuple[float, list[np.ndarray]]:
        """Training-mode loss and analytic gradients for every parameter.

        Gradients align with :meth:`parameters`.  Frozen layers get exact
        zeros.  Batch statistics are used and the running statistics are
        updated as a side effect.
        """
        crops = self._check_input(crops)
        if crops.shape[0] < 2:
            raise InvalidInputError("training batches need at least 2 crops")
        target = crops.astype(self.dtype)
        out = self.reconstruct(target, training=True)
        loss, dout = mse_loss(out, target)
        for block in reversed(self._blocks()):
            for layer in reversed(block.layers):
                dout = layer.backward(dout)
        grads = []
        for block in self._blocks():
            for layer in block.layers:
                layer_grads = layer.grads()
                if layer.frozen:
                    layer_grads = [np.zeros_like(g) for g in layer_grads]
                grads.extend(layer_grads)
        return loss, grads

    def _check_input(self, crops: np.ndarray) -> np.ndarray:
        crops = np.asarray(crops)
        if crops.ndim != 4 or crops.shape[1:] != (INPUT_CHANNELS, INPUT_SIZE, INPUT_SIZE):
            raise InvalidInputError(
                f"expected (N, {INPUT_CHANNELS}, {INPUT_SIZE}, {INPUT_SIZE}) crops, "
                f"got {crops.shape}"
            )
        if crops.shape[0] < 1:
            raise InvalidInputError("empty batch")
        return crops


# ---------------------------------------------------------------------------
# Weights persistence.

def save_model(model: CaeModel, path, metadata: dict | None = None, extra_arrays: list[tuple[str, np.ndarray]] | None = None) -> None:
    """Write magic, JSON header, then raw float32 arrays in header order."""
    arrays = model.named_params() + model.named_state()
    if extra_arrays:
        arrays = arrays + list(extra_arrays)
    header = {
        "config": model.config.to_dict(),
        "seed": model.config.seed,
        "metadata": metadata or {},
        "arrays": [{"name": n, "shape": list(a.shape)} for n, a in arrays],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for _, arr in arrays:
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_model(path) -> tuple[CaeModel, dict]:
    """Rebuild a model from a weights file; returns (model, metadata)."""
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise ModelFormatError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
        raw_len = fh.read(4)
        if len(raw_len) != 4:
            raise ModelFormatError(f"{path}: truncated header length")
        (hlen,) = struct.unpack("<I", raw_len)
        blob = fh.read(hlen)
        if len(blob) != hlen:
            raise ModelFormatError(f"{path}: truncated JSON header")
        try:
            header = json.loads(blob.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise ModelFormatError(f"{path}: unreadable header: {exc}") from exc
        config = CaeConfig.from_dict(header["config"])
        model = CaeModel(config, dtype=np.float32)
        known = dict(model.named_params() + model.named_state())
        extra = {}
        for entry in header["arrays"]:
            name, shape = entry["name"], tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            raw = fh.read(4 * count)
            if len(raw) != 4 * count:
                raise ModelFormatError(f"{path}: truncated payload at array {name!r}")
            arr = np.frombuffer(raw, dtype="<f4").reshape(shape)
            if name in known:
                target = known[name]
                if target.shape != arr.shape:
                    raise ModelShapeError(
                        f"{path}: array {name!r} has shape {arr.shape}, "
                        f"model expects {target.shape}"
                    )
                target[...] = arr
            else:
                extra[name] = arr.copy()
    metadata = header.get("metadata", {})
    metadata["_extra_arrays"] = extra
    return model, metadata
