// Coordinate mapping between the displayed (letterboxed) image and the
// normalized (u, v) click contract shared with the CLI and service:
// u is horizontal, v is vertical, both in [0, 1].

export interface Size {
  width: number;
  height: number;
}

export interface Point {
  x: number;
  y: number;
}

export interface DisplayGeometry {
  /** Scale from natural image pixels to displayed pixels. */
  scale: number;
  /** Displayed image size after contain-fit. */
  displayed: Size;
  /** Letterbox offset of the image's top-left corner inside the container. */
  offset: Point;
}

/** Contain-fit an image into a container, centering the leftover space. */
export function fitImage(container: Size, natural: Size): DisplayGeometry {
  if (natural.width <= 0 || natural.height <= 0) {
    throw new Error("image has no size");
  }
  const scale = Math.min(
    container.width / natural.width,
    container.height / natural.height,
  );
  const displayed = {
    width: natural.width * scale,
    height: natural.height * scale,
  };
  return {
    scale,
    displayed,
    offset: {
      x: (container.width - displayed.width) / 2,
      y: (container.height - displayed.height) / 2,
    },
  };
}

/**
 * Map a container-space point to normalized (u, v), or null when the point
 * falls in the letterbox outside the displayed image.
 */
export function toNormalized(
  point: Point,
  geom: DisplayGeometry,
): { u: number; v: number } | null {
  const x = point.x - geom.offset.x;
  const y = point.y - geom.offset.y;
  if (x < 0 || y < 0 || x >= geom.displayed.width || y >= geom.displayed.height) {
    return null;
  }
  return {
    u: Math.min(x / geom.displayed.width, 1),
    v: Math.min(y / geom.displayed.height, 1),
  };
}

/** Map a normalized click back to container space, e.g. to draw its marker. */
export function toContainer(
  click: { u: number; v: number },
  geom: DisplayGeometry,
): Point {
  return {
    x: geom.offset.x + click.u * geom.displayed.width,
    y: geom.offset.y + click.v * geom.displayed.height,
  };
}
