/**
 * Pure RGBA compositing model for the reveal canvas.
 *
 * The browser build draws patches with canvas drawImage, which applies
 * exactly this source-over rule in hardware.  Keeping an explicit buffer
 * implementation gives the tests a headless way to pin the semantics the
 * canvas is trusted with: a patch placed at (patch_x0, patch_y0) must cover
 * precisely the pixels inside its alpha disk and leave every other pixel of
 * the blurred base untouched.
 */

export interface Rgba {
  width: number;
  height: number;
  /** Row-major RGBA, length width * height * 4. */
  data: Uint8ClampedArray;
}

export function blankImage(
  width: number,
  height: number,
  fill: [number, number, number, number] = [0, 0, 0, 255],
): Rgba {
  if (width <= 0 || height <= 0) {
    throw new Error(`image dimensions must be positive, got ${width}x${height}`);
  }
  const data = new Uint8ClampedArray(width * height * 4);
  for (let i = 0; i < width * height; i++) {
    data.set(fill, i * 4);
  }
  return { width, height, data };
}

export function cloneImage(image: Rgba): Rgba {
  return {
    width: image.width,
    height: image.height,
    data: new Uint8ClampedArray(image.data),
  };
}

export function getPixel(image: Rgba, x: number, y: number): [number, number, number, number] {
  const i = (y * image.width + x) * 4;
  return [image.data[i]!, image.data[i + 1]!, image.data[i + 2]!, image.data[i + 3]!];
}

/**
 * Source-over composite `patch` onto `base` in place, with the patch's
 * top-left corner at (x0, y0) in base coordinates.  Patch regions falling
 * outside the base are clipped.  The server's patches carry a binary alpha
 * disk, for which this reduces to copying the pixels inside the disk, but
 * the general rule keeps antialiased edges correct too.
 */
export function applyPatch(base: Rgba, patch: Rgba, x0: number, y0: number): void {
  for (let py = 0; py < patch.height; py++) {
    const by = y0 + py;
    if (by < 0 || by >= base.height) continue;
    for (let px = 0; px < patch.width; px++) {
      const bx = x0 + px;
      if (bx < 0 || bx >= base.width) continue;
      const pi = (py * patch.width + px) * 4;
      const alpha = patch.data[pi + 3]! / 255;
      if (alpha === 0) continue;
      const bi = (by * base.width + bx) * 4;
      if (alpha === 1) {
        base.data[bi] = patch.data[pi]!;
        base.data[bi + 1] = patch.data[pi + 1]!;
        base.data[bi + 2] = patch.data[pi + 2]!;
        base.data[bi + 3] = 255;
      } else {
        for (let c = 0; c < 3; c++) {
          base.data[bi + c] = Math.round(
            patch.data[pi + c]! * alpha + base.data[bi + c]! * (1 - alpha),
          );
        }
        base.data[bi + 3] = Math.max(base.data[bi + 3]!, patch.data[pi + 3]!);
      }
    }
  }
}
