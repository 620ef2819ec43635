"""Whole-image prediction and 8-fold enhanced prediction."""
import numpy as np

from .data import DEFAULT_WAVELENGTHS, HyperCube, dihedral, dihedral_inverse
from .errors import ShapeError
from .model import forward, receptive_field

#: Images whose padded area exceeds this are predicted tile by tile.
AUTO_TILE_AREA = 256 * 256
AUTO_TILE = 256

DIHEDRAL = [(k, flip) for flip in (False, True) for k in range(4)]


def _wavelengths_for(c, wavelengths):
    if wavelengths is not None:
        return wavelengths
    return DEFAULT_WAVELENGTHS if c == len(DEFAULT_WAVELENGTHS) else np.arange(c, dtype=np.float32)


def _starts(size, tile_out):
    if size <= tile_out:
        return [0]
    starts = list(range(0, size - tile_out + 1, tile_out))
    if starts[-1] + tile_out < size:
        starts.append(size - tile_out)
    return starts


def predict_image(params, rgb, tile=None, wavelengths=None):
    """Spectral cube with the same height and width as ``rgb`` ``(3, h, w)``.

    The input is reflect-padded by half the receptive field so every output
    pixel sees a full window. ``tile`` is the input-side tile size; tiles
    overlap by ``receptive_field - 1`` pixels so the result matches a
    whole-image pass. ``tile=None`` picks whole-image for small inputs.
    """
    rf = receptive_field(params.config)
    if rgb.ndim != 3 or rgb.shape[0] != 3:
        raise ShapeError(f"expected an RGB image (3, h, w), got {rgb.shape}", axis="c")
    h, w = rgb.shape[1:]
    if h < rf or w < rf:
        raise ShapeError(f"image {h}x{w} smaller than receptive field {rf}", axis="h" if h < rf else "w")
    pad = (rf - 1) // 2
    padded = np.pad(np.asarray(rgb, dtype=params.dtype), ((0, 0), (pad, pad), (pad, pad)), mode="reflect")
    if tile is None and padded.shape[1] * padded.shape[2] > AUTO_TILE_AREA:
        tile = AUTO_TILE
    if tile is None:
        out = forward(params, padded[None])[0]
    else:
        if tile < rf:
            raise ShapeError(f"tile {tile} smaller than receptive field {rf}", axis="tile")
        step = tile - (rf - 1)
        out = np.empty((params.config.out_channels, h, w), dtype=params.dtype)
        for y in _starts(h, step):
            for x in _starts(w, step):
                th, tw = min(step, h), min(step, w)
                window = padded[None, :, y:y + th + rf - 1, x:x + tw + rf - 1]
                out[:, y:y + th, x:x + tw] = forward(params, window)[0]
    return HyperCube(out, _wavelengths_for(out.shape[0], wavelengths))


def _tree_mean(members):
    # Pairwise sums: eight identical members average back to themselves exactly.
    stack = np.stack(members)
    while len(stack) > 1:
        stack = stack[0::2] + stack[1::2]
    return stack[0] / len(members)


def enhanced_members(params, rgb, predictor=None, **kwargs):
    """Predictions for the 8 rotated/flipped copies of ``rgb``, each mapped back."""
    if predictor is None:
        def predictor(img):
            return predict_image(params, img, **kwargs).data
    members = []
    for k, flip in DIHEDRAL:
        pred = predictor(dihedral(rgb, k, flip))
        members.append(dihedral_inverse(np.asarray(getattr(pred, "data", pred)), k, flip))
    return members


def enhanced_predict(params, rgb, predictor=None, wavelengths=None, **kwargs):
    """Mean of the 8 dihedral round-trips of ``predict_image`` (or of ``predictor``)."""
    mean = _tree_mean(enhanced_members(params, rgb, predictor, **kwargs))
    return HyperCube(mean, _wavelengths_for(mean.shape[0], wavelengths))
