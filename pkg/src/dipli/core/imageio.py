"""Reading and writing images as ``(C, H, W)`` float64 arrays in [0, 1].

Supported formats:

* PGM ``P5`` binary graymaps, 8 or 16 bit (16 bit payloads are big-endian).
* PFM ``Pf`` (gray) / ``PF`` (RGB) float maps. The sign of the scale
  field selects the byte order (negative = little-endian) and scanlines
  are stored bottom-to-top.
* PNG, 8 or 16 bit gray/RGB, through :mod:`png` (pypng). Alpha is dropped.

PFM stores float32 samples, so a PFM round trip is bit-exact for any image
whose samples are float32-representable (in particular for anything that
was itself read from disk).
"""

import os

import numpy as np
import png

from ..errors import BadDims, CorruptHeader, IoFailure, TruncatedData, UnknownFormat

__all__ = ["read_image", "write_image", "as_image", "FORMATS"]

FORMATS = ("pgm", "pfm", "png")
_PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"
_WHITESPACE = b" \t\r\n\v\f"


def as_image(data):
    """Coerce ``data`` to a ``(C, H, W)`` float64 array.

    2-D input is treated as a single channel. Raises :class:`BadDims` for any
    other layout and ``ValueError`` for non-finite samples.
    """
    img = np.asarray(data, dtype=np.float64)
    if img.ndim == 2:
        img = img[None]
    if img.ndim != 3 or img.shape[0] not in (1, 3):
        raise BadDims(f"expected an image of shape (C, H, W) with C in (1, 3), got {img.shape}")
    if not np.all(np.isfinite(img)):
        raise ValueError("image contains non-finite samples")
    return img


class _HeaderTokens:
    """Whitespace/comment aware tokenizer for netpbm-style headers."""

    def __init__(self, buf, pos, allow_comments=True):
        self.buf = buf
        self.pos = pos
        self.allow_comments = allow_comments

    def _skip(self):
        buf = self.buf
        while self.pos < len(buf):
            c = buf[self.pos:self.pos + 1]
            if c in (b" ", b"\t", b"\r", b"\n", b"\v", b"\f"):
                self.pos += 1
            elif c == b"#" and self.allow_comments:
                while self.pos < len(buf) and buf[self.pos:self.pos + 1] not in (b"\n", b"\r"):
                    self.pos += 1
            else:
                return

    def next(self, what):
        self._skip()
        start = self.pos
        buf = self.buf
        while self.pos < len(buf) and buf[self.pos] not in _WHITESPACE:
            self.pos += 1
        if start == self.pos:
            raise CorruptHeader(f"missing {what}", start)
        return buf[start:self.pos], start

    def end_of_header(self):
        # exactly one whitespace byte separates the header from the raster
        if self.pos >= len(self.buf):
            raise TruncatedData("header is not followed by data", self.pos)
        if self.buf[self.pos] not in _WHITESPACE:
            raise CorruptHeader("expected a single whitespace byte after header", self.pos)
        self.pos += 1
        return self.pos


def _parse_int(token, offset, what, minimum=1):
    try:
        value = int(token)
    except ValueError:
        raise CorruptHeader(f"{what} is not an integer: {token!r}", offset) from None
    if value < minimum:
        raise CorruptHeader(f"{what} must be >= {minimum}, got {value}", offset)
    return value


def _read_pgm(buf):
    tok = _HeaderTokens(buf, 2)
    width = _parse_int(*tok.next("width"), "width")
    height = _parse_int(*tok.next("height"), "height")
    maxval_tok, maxval_off = tok.next("maxval")
    maxval = _parse_int(maxval_tok, maxval_off, "maxval")
    if maxval > 65535:
        raise CorruptHeader(f"maxval {maxval} exceeds 65535", maxval_off)
    start = tok.end_of_header()
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    nbytes = width * height * dtype.itemsize
    if len(buf) - start < nbytes:
        raise TruncatedData(f"expected {nbytes} payload bytes, found {len(buf) - start}", len(buf))
    raw = np.frombuffer(buf, dtype=dtype, count=width * height, offset=start)
    # 8/16 bit files written at full depth scale by 255/65535; general maxval by itself
    return (raw.astype(np.float64) / maxval).reshape(1, height, width)


def _read_pfm(buf):
    channels = 3 if buf[:2] == b"PF" else 1
    tok = _HeaderTokens(buf, 2, allow_comments=False)
    width = _parse_int(*tok.next("width"), "width")
    height = _parse_int(*tok.next("height"), "height")
    scale_tok, scale_off = tok.next("scale")
    try:
        scale = float(scale_tok)
    except ValueError:
        raise CorruptHeader(f"scale is not a number: {scale_tok!r}", scale_off) from None
    if scale == 0.0 or not np.isfinite(scale):
        raise CorruptHeader("scale must be a finite non-zero number", scale_off)
    start = tok.end_of_header()
    dtype = np.dtype("<f4") if scale < 0 else np.dtype(">f4")
    count = width * height * channels
    if len(buf) - start < count * 4:
        raise TruncatedData(f"expected {count * 4} payload bytes, found {len(buf) - start}", len(buf))
    raw = np.frombuffer(buf, dtype=dtype, count=count, offset=start)
    img = raw.reshape(height, width, channels)[::-1].transpose(2, 0, 1)
    img = img.astype(np.float64)
    if not np.all(np.isfinite(img)):
        bad = int(np.flatnonzero(~np.isfinite(raw))[0])
        raise CorruptHeader("PFM payload contains non-finite samples", start + 4 * bad)
    return img


def _read_png(buf):
    try:
        width, height, rows, info = png.Reader(bytes=buf).asDirect()
        data = np.vstack([np.asarray(row, dtype=np.float64) for row in rows])
    except png.FormatError as exc:
        raise CorruptHeader(f"invalid PNG: {exc}", len(_PNG_SIGNATURE)) from None
    except (png.ChunkError, EOFError, ValueError) as exc:
        raise TruncatedData(f"damaged PNG stream: {exc}", len(buf)) from None
    planes = info["planes"]
    data = data.reshape(height, width, planes)
    if info.get("alpha"):
        data = data[..., :-1]
    maxval = float(2 ** info["bitdepth"] - 1)
    return (data / maxval).transpose(2, 0, 1).copy()


def read_image(path):
    """Read a PGM, PFM or PNG file into a ``(C, H, W)`` float64 array.

    Integer samples are divided by ``maxval`` (255 or 65535 for standard
    8/16-bit files).

    Raises
    ------
    UnknownFormat
        The file does not start with a recognized signature.
    CorruptHeader
        The header is malformed.
    TruncatedData
        The raster payload is shorter than the header announces.
    """
    try:
        with open(path, "rb") as fh:
            buf = fh.read()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    if buf[:2] == b"P5":
        return _read_pgm(buf)
    if buf[:2] in (b"Pf", b"PF"):
        return _read_pfm(buf)
    if buf[:8] == _PNG_SIGNATURE:
        return _read_png(buf)
    raise UnknownFormat(f"unrecognized image signature {buf[:8]!r}", 0)


def _quantize(img, maxval):
    # round half up after clamping to the representable range
    return np.floor(np.clip(img, 0.0, 1.0) * maxval + 0.5)


def _encode_pgm(img, bitdepth):
    if img.shape[0] != 1:
        raise ValueError("PGM holds a single channel; convert to gray or use PFM/PNG")
    maxval = 255 if bitdepth == 8 else 65535
    dtype = "u1" if bitdepth == 8 else ">u2"
    _, h, w = img.shape
    header = f"P5\n{w} {h}\n{maxval}\n".encode("ascii")
    return header + _quantize(img[0], maxval).astype(dtype).tobytes()


def _encode_pfm(img):
    c, h, w = img.shape
    magic = "PF" if c == 3 else "Pf"
    header = f"{magic}\n{w} {h}\n-1.0\n".encode("ascii")
    payload = img.transpose(1, 2, 0)[::-1].astype("<f4")
    return header + payload.tobytes()


def _write_png(img, fh, bitdepth):
    c, h, w = img.shape
    maxval = 2 ** bitdepth - 1
    dtype = np.uint8 if bitdepth == 8 else np.uint16
    rows = _quantize(img, maxval).astype(dtype).transpose(1, 2, 0).reshape(h, w * c)
    writer = png.Writer(width=w, height=h, greyscale=(c == 1), bitdepth=bitdepth)
    writer.write(fh, rows)


def write_image(img, path, format=None, bitdepth=8):
    """Write ``img`` to ``path``.

    ``format`` is one of ``"pgm"``, ``"pfm"``, ``"png"``; when omitted it is
    taken from the file extension. Integer formats clamp samples to [0, 1]
    and round half up; PFM keeps values (including negatives) at float32
    precision.
    """
    img = as_image(img)
    if format is None:
        format = os.path.splitext(str(path))[1].lstrip(".").lower()
    format = format.lower()
    if format not in FORMATS:
        raise ValueError(f"unsupported image format {format!r}; expected one of {FORMATS}")
    if bitdepth not in (8, 16):
        raise ValueError("bitdepth must be 8 or 16")
    try:
        with open(path, "wb") as fh:
            if format == "pgm":
                fh.write(_encode_pgm(img, bitdepth))
            elif format == "pfm":
                fh.write(_encode_pfm(img))
            else:
                _write_png(img, fh, bitdepth)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc

