/**
 * Canvas-space to image-space coordinate mapping.
 *
 * The stimulus canvas keeps its internal resolution at the image's native
 * width and height while CSS scales it up for display (the default doubles
 * it so a 64 px stimulus spans roughly 4.5 degrees at a typical 57 cm
 * viewing distance on a 96 dpi screen).  A click lands in CSS pixels
 * relative to the viewport; the server wants integer image coordinates.
 *
 * The mapping must be exact under integer scale factors: with a 2x scale,
 * CSS offsets 2k and 2k+1 both land on image column k, never k-1 or k+1.
 * Flooring the ratio of offsets gives that, provided the division happens
 * before rounding.
 */

export interface DisplayRect {
  left: number;
  top: number;
  width: number;
  height: number;
}

export interface ImagePoint {
  x: number;
  y: number;
}

/**
 * Map a client-space click to integer image coordinates, or null when the
 * click falls outside the displayed rect.  `rect` is the canvas's bounding
 * client rect; `imageWidth`/`imageHeight` are the stimulus dimensions.
 */
export function cssToImage(
  rect: DisplayRect,
  clientX: number,
  clientY: number,
  imageWidth: number,
  imageHeight: number,
): ImagePoint | null {
  if (rect.width <= 0 || rect.height <= 0) return null;
  const dx = clientX - rect.left;
  const dy = clientY - rect.top;
  if (dx < 0 || dy < 0 || dx >= rect.width || dy >= rect.height) return null;
  const x = Math.floor((dx * imageWidth) / rect.width);
  const y = Math.floor((dy * imageHeight) / rect.height);
  // Flooring keeps both in range for dx < rect.width, but clamp anyway so
  // float artifacts at the right and bottom edges cannot leak out of range.
  return {
    x: Math.min(x, imageWidth - 1),
    y: Math.min(y, imageHeight - 1),
  };
}
