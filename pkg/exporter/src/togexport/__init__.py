"""Feature exporter: turns images and text into the binary inputs consumed
by the grasp-transfer engine (RTAE embeddings, RTAF feature maps, masks),
and provides a subprocess re-ranker plug-in speaking the engine's JSON
contract."""

__version__ = "0.1.0"
