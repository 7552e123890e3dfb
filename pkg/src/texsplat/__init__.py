"""Re-texture 3D Gaussian splatting scenes from a 2D texture, guided by scene depth and view geometry."""

__version__ = "0.1.0"

from ._jit import DEFAULT_BACKEND, JIT_ENABLED  # noqa: E402
from .rasterizer import backward, render  # noqa: E402
from .scene import Camera, GaussianScene, load_cameras, load_scene, save_cameras, save_scene  # noqa: E402
from .trainer import TransferConfig, train  # noqa: E402
