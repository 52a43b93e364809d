"""Model backends served by the adapter.

Each backend exposes `logits(pixels) -> 1-D numpy array`, `num_classes`,
`input_shape` and `name`. The wire always carries raw [0, 1] pixels; any
normalization a model expects happens inside its backend.
"""

import numpy as np

IMAGENET_MEAN = np.array([0.485, 0.456, 0.406], dtype=np.float64)
IMAGENET_STD = np.array([0.229, 0.224, 0.225], dtype=np.float64)


class LinearEchoModel:
    """Deterministic linear head used for round-trip testing.

    Reconstructs the benchmark weights from the seed alone: unit-normal
    entries, seed 42, rows scaled to unit norm, zero bias.
    """

    name = "linear-echo"

    def __init__(self, num_classes=10, input_shape=(3, 32, 32), seed=42):
        rng = np.random.default_rng(seed)
        dims = int(np.prod(input_shape))
        weights = rng.standard_normal((num_classes, dims))
        weights /= np.linalg.norm(weights, axis=1, keepdims=True)
        self.weights = weights
        self.num_classes = num_classes
        self.input_shape = tuple(input_shape)

    def logits(self, pixels):
        return self.weights @ np.asarray(pixels, dtype=np.float64).ravel()


class TorchvisionModel:
    """Pretrained torchvision classifier in eval mode on a fixed device."""

    def __init__(self, name, device="cpu"):
        import torch
        import torchvision.models as tvm

        self._torch = torch
        self.name = name
        self.device = device
        self.module = tvm.get_model(name, weights="DEFAULT").to(device).eval()
        head = [m for m in self.module.modules() if isinstance(m, torch.nn.Linear)]
        self.num_classes = head[-1].out_features if head else 1000
        self.input_shape = (3, 224, 224)

    def logits(self, pixels):
        x = np.asarray(pixels, dtype=np.float64)
        x = (x - IMAGENET_MEAN[:, None, None]) / IMAGENET_STD[:, None, None]
        with self._torch.no_grad():
            tensor = self._torch.as_tensor(x[None], dtype=self._torch.float32,
                                           device=self.device)
            out = self.module(tensor)[0].detach().cpu().numpy()
        return out.astype(np.float64)


def load_model(name, device="cpu"):
    if name == "linear-echo":
        return LinearEchoModel()
    return TorchvisionModel(name, device=device)
