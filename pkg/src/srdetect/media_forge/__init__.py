"""Frame I/O, resampling, compression proxy and corpus forging."""

from .clips import FAKE, REAL, Provenance, VideoClip, compress_proxy, make_fake, select_frame_window
from .compress import CompressionParams, ExternalEncoder, compress_frame, psnr
from .forge import COMPRESSED, RAW, DatasetManifest, ForgeConfig, ManifestEntry, forge_dataset
from .frames import read_frames, write_frames
from .resample import KERNELS, keys_cubic, resample

__all__ = [
    "COMPRESSED",
    "FAKE",
    "KERNELS",
    "RAW",
    "REAL",
    "CompressionParams",
    "DatasetManifest",
    "ExternalEncoder",
    "ForgeConfig",
    "ManifestEntry",
    "Provenance",
    "VideoClip",
    "compress_frame",
    "compress_proxy",
    "forge_dataset",
    "keys_cubic",
    "make_fake",
    "psnr",
    "read_frames",
    "resample",
    "select_frame_window",
    "write_frames",
]
