"""Reference backend servers for the segmentation-pipeline wire protocol."""

from .mock_server import MockBackend, serve_mock
from .scenes import SceneSet, palette_color, render_scene, rle_encode

__version__ = "0.1.0"

__all__ = ["MockBackend", "serve_mock", "SceneSet", "palette_color", "render_scene", "rle_encode", "__version__"]
