"""YOLO object detection through the ``ultralytics`` package (optional dependency)."""

from __future__ import annotations

import threading

from ..errors import BackendError
from ..regions import Detection, DetectorBackend, SourceImage


class YoloDetector(DetectorBackend):
    backend_id = "yolo"

    def __init__(self, weights: str = "yolov9c.pt", device: str = "cpu"):
        self.weights = weights
        self.model_version = weights
        self.device = device
        self._model = None
        self._lock = threading.Lock()

    def detect(self, image: SourceImage) -> list[Detection]:
        with self._lock:
            if self._model is None:
                try:
                    from ultralytics import YOLO
                except ImportError as exc:
                    raise BackendError("YoloDetector needs the 'ultralytics' package") from exc
                self._model = YOLO(self.weights)
            result = self._model.predict(image.pixels, device=self.device, verbose=False, conf=0.0)[0]
        names = result.names
        out = []
        for xyxy, conf, cls in zip(result.boxes.xyxy.tolist(), result.boxes.conf.tolist(), result.boxes.cls.tolist()):
            out.append(Detection(*xyxy, label=str(names[int(cls)]), confidence=float(conf)))
        return out
