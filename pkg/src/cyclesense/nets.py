"""Network architectures for bucket-level incident detection.

The main detector mirrors a sensor-fusion design: one convolutional subnet
per sensor (accelerometer, gyroscope, GPS velocity), a convolutional fusion
stack over the concatenated sensor features, and a stacked GRU over the
window axis feeding a sigmoid head.

Tensor layout throughout: ``[batch, d1, d2, d3, channels]`` where for the
frequency-domain inputs d1 indexes sensor axes, d2 frequency bins and d3 the
time windows of a bucket.
"""
from __future__ import annotations

import numpy as np

from .autodiff import layers as L
from .autodiff import tensor as T
from .autodiff.tensor import Parameter, Tensor

__all__ = [
    "CycleSenseNet", "FcnNet",
    "GanGenerator", "GanDiscriminator", "pack_spectra", "unpack_spectra",
]


class _SensorSubnet:
    """Valid first conv collapsing the axis dimension, then a residual pair.

    The first block uses the full (axes, frequency, windows) kernel; the two
    residual blocks keep shapes with same padding and per-axis kernels that
    match the collapsed extents.
    """

    def __init__(self, c_in: int, kernels: int, first_kernel: tuple,
                 inner_kernel: tuple, dropout: float, rng, name: str, dtype):
        self.entry = L.ConvBlock(c_in, kernels, first_kernel, rng,
                                 padding="valid", dropout=dropout,
                                 name=f"{name}/b0", dtype=dtype)
        self.residual = L.ResidualBlock([
            L.ConvBlock(kernels, kernels, inner_kernel, rng, padding="same",
                        dropout=dropout, name=f"{name}/b1", dtype=dtype),
            L.ConvBlock(kernels, kernels, inner_kernel, rng, padding="same",
                        dropout=dropout, name=f"{name}/b2", dtype=dtype),
        ])

    def __call__(self, x, training=False, rng=None):
        y = self.entry(x, training=training, rng=rng)
        return self.residual(y, training=training, rng=rng)

    def parameters(self):
        return self.entry.parameters() + self.residual.parameters()

    def buffers(self):
        return self.entry.buffers() + self.residual.buffers()

    def bn_layers(self):
        return self.entry.bn_layers() + self.residual.bn_layers()

    def freeze(self):
        self.entry.freeze()
        self.residual.freeze()


class CycleSenseNet:
    """The full fusion detector.

    ``f`` and ``windows`` describe the input tensors: accelerometer and
    gyroscope are ``[batch, 3, f, windows, 2]``, GPS is
    ``[batch, 2, 1, windows, 1]``. Needs ``f >= 3`` and ``windows >= 3`` so
    the valid first convolutions fit. Only the GRU cell is implemented;
    asking for another recurrent cell raises ``NotImplementedError``.
    """

    def __init__(self, f: int = 10, windows: int = 10, kernels: int = 64,
                 gru_units: int = 120, gru_layers: int = 2, dropout: float = 0.2,
                 cell: str = "gru", seed: int = 0, dtype=np.float32):
        if cell != "gru":
            raise NotImplementedError(f"recurrent cell {cell!r} is not implemented")
        if f < 3 or windows < 3:
            raise ValueError(
                f"inputs too small for the valid convolutions: f={f}, windows={windows}"
            )
        self.f = f
        self.windows = windows
        self.kernels = kernels
        self.dropout = dropout
        self.dtype = dtype
        rng = np.random.default_rng(seed)
        self.subnet_accel = _SensorSubnet(
            2, kernels, (3, 3, 3), (1, 3, 3), dropout, rng, "accel", dtype)
        self.subnet_gyro = _SensorSubnet(
            2, kernels, (3, 3, 3), (1, 3, 3), dropout, rng, "gyro", dtype)
        self.subnet_gps = _SensorSubnet(
            1, kernels, (2, 1, 3), (1, 1, 3), dropout, rng, "gps", dtype)
        self.fusion = [
            L.ResidualBlock([
                L.ConvBlock(kernels, kernels, (3, 3, 3), rng, padding="same",
                            dropout=dropout, name=f"fusion/b{2 * i}", dtype=dtype),
                L.ConvBlock(kernels, kernels, (3, 3, 3), rng, padding="same",
                            dropout=dropout, name=f"fusion/b{2 * i + 1}", dtype=dtype),
            ])
            for i in range(3)
        ]
        seq_features = 3 * kernels
        self.gru = L.GRU(seq_features, gru_units, gru_layers, rng,
                         name="gru", dtype=dtype)
        self.head = L.Dense(gru_units, 1, rng, name="head", dtype=dtype)
        self._frozen_subnets = False

    # -- forward -----------------------------------------------------------

    def subnet_features(self, sensor: str, x, training=False, rng=None):
        """Run one sensor subnet alone; used for subnet pretraining."""
        subnet = getattr(self, f"subnet_{sensor}")
        return subnet(T.Tensor(x, dtype=self.dtype) if not isinstance(x, Tensor) else x,
                      training=training, rng=rng)

    def forward(self, accel, gyro, gps, training: bool = False,
                rng: np.random.Generator | None = None) -> Tensor:
        """Probability of an incident per bucket, shape [batch, 1]."""
        accel = accel if isinstance(accel, Tensor) else Tensor(accel, dtype=self.dtype)
        gyro = gyro if isinstance(gyro, Tensor) else Tensor(gyro, dtype=self.dtype)
        gps = gps if isinstance(gps, Tensor) else Tensor(gps, dtype=self.dtype)

        fa = self.subnet_accel(accel, training=training, rng=rng)    # [B,1,f-2,w-2,K]
        fg = self.subnet_gyro(gyro, training=training, rng=rng)      # [B,1,f-2,w-2,K]
        fp = self.subnet_gps(gps, training=training, rng=rng)        # [B,1,1,w-2,K]
        shape = fa.shape
        fp = T.broadcast_to(fp, (shape[0], 1, shape[2], shape[3], fp.shape[4]))
        x = T.concat([fa, fg, fp], axis=1)                           # [B,3,f-2,w-2,K]
        for block in self.fusion:
            x = block(x, training=training, rng=rng)
        x = T.mean(x, axis=2)                                        # [B,3,w-2,K]
        x = T.transpose(x, (0, 2, 1, 3))                             # [B,w-2,3,K]
        b, steps = x.shape[0], x.shape[1]
        x = T.reshape(x, (b, steps, 3 * self.kernels))
        h = self.gru(x)
        return T.sigmoid(self.head(h))

    # -- parameter plumbing ------------------------------------------------

    def parameters(self) -> list:
        out = []
        for part in (self.subnet_accel, self.subnet_gyro, self.subnet_gps,
                     *self.fusion, self.gru, self.head):
            out.extend(part.parameters())
        return out

    def named_parameters(self) -> dict:
        return {p.name: p for p in self.parameters()}

    def buffers(self) -> list:
        out = []
        for part in (self.subnet_accel, self.subnet_gyro, self.subnet_gps, *self.fusion):
            out.extend(part.buffers())
        return out

    def bn_layers(self) -> list:
        """Normalization layers of the blocks still training."""
        out = []
        for part in (self.subnet_accel, self.subnet_gyro, self.subnet_gps, *self.fusion):
            out.extend(part.bn_layers())
        return out

    def param_count(self) -> int:
        """Total parameter count, trainable and frozen alike."""
        return int(sum(p.data.size for p in self.parameters()))

    def freeze_subnets(self):
        for subnet in (self.subnet_accel, self.subnet_gyro, self.subnet_gps):
            subnet.freeze()
        self._frozen_subnets = True

    def state_dict(self) -> dict:
        state = {p.name: p.data.copy() for p in self.parameters()}
        for name, buf in self.buffers():
            state[name] = buf.copy()
        return state

    def load_state_dict(self, state: dict):
        for p in self.parameters():
            if p.name not in state:
                raise KeyError(f"missing parameter {p.name!r}")
            if state[p.name].shape != p.data.shape:
                raise ValueError(f"shape mismatch for {p.name!r}")
            p.data = state[p.name].astype(p.data.dtype).copy()
        self._load_buffers(state)

    def _load_buffers(self, state: dict):
        for part in (self.subnet_accel, self.subnet_gyro, self.subnet_gps, *self.fusion):
            blocks = ([part.entry, *part.residual.blocks]
                      if isinstance(part, _SensorSubnet) else part.blocks)
            for block in blocks:
                mean_name, var_name = (name for name, _ in block.bn.buffers())
                if mean_name in state and var_name in state:
                    block.bn.set_buffers(state[mean_name], state[var_name])


class FcnNet:
    """Fully convolutional baseline over raw bucket samples.

    Three conv blocks (128, 256, 128 filters with kernel lengths 8, 5, 3)
    over the sample axis, global average pooling, sigmoid head. Runs on the
    accelerometer and velocity channels only; the time series is carried as
    a [batch, 100, 1, 1, channels] volume so the 3-d primitives apply.
    """

    def __init__(self, channels: int = 5, seed: int = 0, dtype=np.float32):
        rng = np.random.default_rng(seed)
        spec = [(channels, 128, 8), (128, 256, 5), (256, 128, 3)]
        self.blocks = []
        for i, (c_in, c_out, k) in enumerate(spec):
            conv = L.Conv3d(c_in, c_out, (k, 1, 1), rng, padding="same",
                            name=f"fcn/c{i}/conv", dtype=dtype)
            bn = L.BatchNorm(c_out, name=f"fcn/c{i}/bn", dtype=dtype)
            self.blocks.append((conv, bn))
        self.head = L.Dense(128, 1, rng, name="fcn/head", dtype=dtype)
        self.dtype = dtype

    def forward(self, x, training: bool = False) -> Tensor:
        x = x if isinstance(x, Tensor) else Tensor(x, dtype=self.dtype)
        if x.ndim == 3:                                   # [B, 100, C] -> rank 5
            x = T.reshape(x, (x.shape[0], x.shape[1], 1, 1, x.shape[2]))
        for conv, bn in self.blocks:
            x = T.relu(bn(conv(x), training=training))
        x = T.mean(x, axis=(1, 2, 3))                     # [B, 128]
        return T.sigmoid(self.head(x))

    def parameters(self):
        out = []
        for conv, bn in self.blocks:
            out.extend(conv.parameters())
            out.extend(bn.parameters())
        out.extend(self.head.parameters())
        return out

    def buffers(self):
        return [buf for _, bn in self.blocks for buf in bn.buffers()]

    def bn_layers(self):
        return [bn for _, bn in self.blocks]

    def param_count(self) -> int:
        return int(sum(p.data.size for p in self.parameters()))

    def state_dict(self) -> dict:
        state = {p.name: p.data.copy() for p in self.parameters()}
        for name, buf in self.buffers():
            state[name] = buf.copy()
        return state

    def load_state_dict(self, state: dict):
        for p in self.parameters():
            p.data = state[p.name].astype(p.data.dtype).copy()
        for _, bn in self.blocks:
            mean_name, var_name = (name for name, _ in bn.buffers())
            if mean_name in state and var_name in state:
                bn.set_buffers(state[mean_name], state[var_name])


def pack_spectra(accel: np.ndarray, gyro: np.ndarray) -> np.ndarray:
    """[B,3,f,w,2] accel + gyro -> one [B,f,w,1,12] volume for the GAN."""
    both = np.concatenate([accel, gyro], axis=1)           # [B, 6, f, w, 2]
    b, _, f, w, _ = both.shape
    return both.transpose(0, 2, 3, 1, 4).reshape(b, f, w, 1, 12)


def unpack_spectra(packed: np.ndarray) -> tuple:
    """Inverse of :func:`pack_spectra`."""
    b, f, w, _, _ = packed.shape
    both = packed.reshape(b, f, w, 6, 2).transpose(0, 3, 1, 2, 4)
    return np.ascontiguousarray(both[:, :3]), np.ascontiguousarray(both[:, 3:])


class GanGenerator:
    """Maps a latent vector to one synthetic frequency-domain tensor set.

    Emits the packed [B, f, w, 1, 12] accelerometer+gyroscope volume plus
    the [B, 2, 1, w, 1] GPS block.
    """

    def __init__(self, f: int, windows: int, latent_dim: int = 100,
                 width: int = 32, seed: int = 0, dtype=np.float32):
        rng = np.random.default_rng(seed)
        self.f = f
        self.windows = windows
        self.latent_dim = latent_dim
        self.width = width
        self.dtype = dtype
        self.fc = L.Dense(latent_dim, f * windows * width, rng, name="gen/fc", dtype=dtype)
        self.conv1 = L.Conv3d(width, width, (3, 3, 1), rng, padding="same",
                              name="gen/c1", dtype=dtype)
        self.conv2 = L.Conv3d(width, 12, (3, 3, 1), rng, padding="same",
                              name="gen/c2", dtype=dtype)
        self.gps_fc1 = L.Dense(latent_dim, 64, rng, name="gen/gps1", dtype=dtype)
        self.gps_fc2 = L.Dense(64, 2 * windows, rng, name="gen/gps2", dtype=dtype)

    def forward(self, z) -> tuple:
        z = z if isinstance(z, Tensor) else Tensor(z, dtype=self.dtype)
        b = z.shape[0]
        x = T.relu(self.fc(z))
        x = T.reshape(x, (b, self.f, self.windows, 1, self.width))
        x = T.relu(self.conv1(x))
        packed = self.conv2(x)                             # [B, f, w, 1, 12]
        gps = T.reshape(self.gps_fc2(T.relu(self.gps_fc1(z))),
                        (b, 2, 1, self.windows, 1))
        return packed, gps

    def parameters(self):
        return (self.fc.parameters() + self.conv1.parameters() + self.conv2.parameters()
                + self.gps_fc1.parameters() + self.gps_fc2.parameters())


class GanDiscriminator:
    """Scores a tensor set as real (1) or generated (0)."""

    def __init__(self, f: int, windows: int, width: int = 32, seed: int = 0,
                 dtype=np.float32):
        rng = np.random.default_rng(seed)
        self.f = f
        self.windows = windows
        self.dtype = dtype
        self.conv1 = L.Conv3d(12, width, (3, 3, 1), rng, padding="same",
                              name="disc/c1", dtype=dtype)
        self.conv2 = L.Conv3d(width, width, (3, 3, 1), rng, padding="same",
                              name="disc/c2", dtype=dtype)
        self.fc1 = L.Dense(width + 2 * windows, 64, rng, name="disc/fc1", dtype=dtype)
        self.fc2 = L.Dense(64, 1, rng, name="disc/fc2", dtype=dtype)

    def forward(self, spectra, gps) -> Tensor:
        spectra = spectra if isinstance(spectra, Tensor) else Tensor(spectra, dtype=self.dtype)
        gps = gps if isinstance(gps, Tensor) else Tensor(gps, dtype=self.dtype)
        b = spectra.shape[0]
        x = T.relu(self.conv1(spectra))
        x = T.relu(self.conv2(x))
        x = T.mean(x, axis=(1, 2, 3))                      # [B, width]
        flat_gps = T.reshape(gps, (b, 2 * self.windows))
        x = T.concat([x, flat_gps], axis=1)
        x = T.relu(self.fc1(x))
        return T.sigmoid(self.fc2(x))

    def parameters(self):
        return (self.conv1.parameters() + self.conv2.parameters()
                + self.fc1.parameters() + self.fc2.parameters())
