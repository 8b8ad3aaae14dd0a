"""\
Copyright (c) 2026, blurba developers
All rights reserved.

Image buffers are float64 numpy arrays of shape (H, W, 3) holding linear RGB in [0, 1].

"""
import numpy as np
from PIL import Image

from blurba import DimensionMismatchError


def srgb_encode(linear):
    """Converts linear RGB to sRGB-encoded values, both in [0, 1]"""
    linear = np.clip(np.asarray(linear, dtype=np.float64), 0.0, 1.0)
    return np.where(linear <= 0.0031308, 12.92 * linear, 1.055 * np.power(linear, 1 / 2.4) - 0.055)


def srgb_decode(encoded):
    """Converts sRGB-encoded values to linear RGB, both in [0, 1]"""
    encoded = np.clip(np.asarray(encoded, dtype=np.float64), 0.0, 1.0)
    return np.where(encoded <= 0.04045, encoded / 12.92, np.power((encoded + 0.055) / 1.055, 2.4))


def to_uint8(image, srgb=True):
    """\
    Quantizes an image to 8 bits per channel.

    :param image: ImageBuffer
    :param srgb: if True, sRGB-encode before quantizing
    :return: uint8 array (H, W, 3)

    """
    values = srgb_encode(image) if srgb else np.clip(image, 0.0, 1.0)
    return np.round(values * 255.0).astype(np.uint8)


def from_uint8(data, srgb=True):
    """Inverse of to_uint8(), up to quantization"""
    values = np.asarray(data, dtype=np.float64) / 255.0
    return srgb_decode(values) if srgb else values


def to_pil(image, srgb=True):
    """Converts an ImageBuffer to a PIL RGB image"""
    return Image.fromarray(to_uint8(image, srgb=srgb))


def write_png(path, image, srgb=True):
    """\
    Writes an 8-bit PNG.

    :param path: output path
    :param image: ImageBuffer
    :param srgb: if True (default), store sRGB-encoded values. Otherwise linear values are quantized directly.
    :return: None

    """
    to_pil(image, srgb=srgb).save(path, format="PNG")


def read_png(path, srgb=True):
    """Reads an 8-bit PNG written by write_png() into an ImageBuffer"""
    with Image.open(path) as img:
        return from_uint8(np.asarray(img.convert("RGB")), srgb=srgb)


def write_f32(path, image):
    """Writes raw little-endian float32 values, row-major RGB"""
    np.asarray(image).astype('<f4').tofile(path)


def read_f32(path, height, width):
    """\
    Reads raw float32 values written by write_f32().

    :param path: input path
    :param height: image height in pixels
    :param width: image width in pixels
    :return: ImageBuffer (float64)

    """
    data = np.fromfile(path, dtype='<f4')
    if data.size != height * width * 3:
        raise DimensionMismatchError(f"{path} holds {data.size} values, expected {height}x{width}x3")
    return data.reshape(height, width, 3).astype(np.float64)


def luma(image):
    """Rec. 601 luma of an RGB image"""
    image = np.asarray(image, dtype=np.float64)
    return 0.299 * image[..., 0] + 0.587 * image[..., 1] + 0.114 * image[..., 2]


def comparison_strip(path, *buffers, scale=4, spacing=2, gap_color=(255, 255, 255)):
    """\
    Writes ImageBuffers side by side into a single PNG, upscaled with nearest-neighbor sampling and centered
    vertically.

    :param path: output path
    :param buffers: ImageBuffers, left to right. None entries are skipped.
    :param scale: integer upscaling factor
    :param spacing: gap between images, in output pixels
    :param gap_color: RGB color of the gaps and of the padding around shorter images
    :return: the PIL image that was written

    """
    tiles = []
    for buf in buffers:
        if buf is None:
            continue
        tile = to_pil(buf)
        tiles.append(tile.resize((tile.size[0] * scale, tile.size[1] * scale), Image.NEAREST))
    if not tiles:
        raise DimensionMismatchError("Nothing to put into a comparison strip")

    height = max(tile.size[1] for tile in tiles)
    width = sum(tile.size[0] for tile in tiles) + spacing * (len(tiles) - 1)
    strip = Image.new('RGB', (width, height), gap_color)
    x_offset = 0
    for tile in tiles:
        strip.paste(tile, (x_offset, (height - tile.size[1]) // 2))
        x_offset += tile.size[0] + spacing

    strip.save(path, format="PNG")
    return strip
