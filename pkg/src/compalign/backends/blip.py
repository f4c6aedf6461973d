"""BLIP visual question answering as a yes-probability backend (needs torch + transformers)."""

from __future__ import annotations

import threading

from ..errors import BackendError
from ..regions import Region
from ..scoring import VqaBackend, normalize_yes_probability


class BlipVqa(VqaBackend):
    """Reads the first decoder step of BLIP-VQA and renormalizes over "yes"/"no"."""

    backend_id = "blip-vqa"

    def __init__(self, model_name: str = "Salesforce/blip-vqa-base", device: str = "cpu"):
        self.model_name = model_name
        self.model_version = model_name
        self.device = device
        self._model = None
        self._processor = None
        self._lock = threading.Lock()

    def _load(self):
        if self._model is None:
            try:
                from transformers import BlipForQuestionAnswering, BlipProcessor
            except ImportError as exc:
                raise BackendError("BlipVqa needs the 'transformers' and 'torch' packages") from exc
            try:
                self._processor = BlipProcessor.from_pretrained(self.model_name)
                self._model = BlipForQuestionAnswering.from_pretrained(self.model_name).to(self.device).eval()
            except OSError as exc:
                raise BackendError(f"cannot load {self.model_name}: {exc}") from exc
            tok = self._processor.tokenizer
            self._yes = tok("yes", add_special_tokens=False).input_ids[0]
            self._no = tok("no", add_special_tokens=False).input_ids[0]
        return self._model, self._processor

    def yes_probability(self, region: Region, question: str) -> float:
        import torch

        with self._lock:
            model, processor = self._load()
            inputs = processor(images=region.pixels, text=question, return_tensors="pt").to(self.device)
            with torch.no_grad():
                image_embeds = model.vision_model(pixel_values=inputs.pixel_values)[0]
                image_mask = torch.ones(image_embeds.shape[:-1], dtype=torch.long, device=image_embeds.device)
                question_embeds = model.text_encoder(
                    input_ids=inputs.input_ids,
                    attention_mask=inputs.attention_mask,
                    encoder_hidden_states=image_embeds,
                    encoder_attention_mask=image_mask,
                    return_dict=False,
                )[0]
                question_mask = torch.ones(question_embeds.shape[:-1], dtype=torch.long, device=image_embeds.device)
                bos = torch.full((1, 1), model.decoder_start_token_id, device=image_embeds.device)
                logits = model.text_decoder(
                    input_ids=bos,
                    encoder_hidden_states=question_embeds,
                    encoder_attention_mask=question_mask,
                    return_dict=True,
                ).logits[0, -1]
                probs = torch.softmax(logits.float(), dim=-1)
        return normalize_yes_probability(float(probs[self._yes]), float(probs[self._no]))
