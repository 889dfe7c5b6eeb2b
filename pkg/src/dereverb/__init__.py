"""Online multichannel speech dereverberation.

Per STFT frequency bin, multichannel subband filters are blindly
identified with a recursive cross-relation method, and adaptively
estimated magnitude-domain inverse filters recover the source's STFT
magnitude frame by frame. An adaptive weighted prediction error baseline,
a synthetic-scene simulator, and evaluation metrics round out the package.
"""

from .awpe import AwpeConfig
from .awpe import process_stream as awpe_stream
from .pipeline import (EngineConfig, RunReport, StreamResult,
                       process_batch_ident, process_spectra, process_stream)
from .simulator import Scene, ScenarioSpec, build_scene, load_scene, save_scene
from .stft import StftConfig, analyze, synthesize

__all__ = [
    "AwpeConfig", "EngineConfig", "RunReport", "Scene", "ScenarioSpec",
    "StftConfig", "StreamResult", "analyze", "awpe_stream", "build_scene",
    "load_scene", "process_batch_ident", "process_spectra", "process_stream",
    "save_scene", "synthesize",
]

__version__ = "0.1.0"
