import { describe, expect, it } from "vitest";

import { fitImage, toContainer, toNormalized } from "../src/normalize";

describe("fitImage", () => {
  it("letterboxes a wide image vertically", () => {
    const geom = fitImage({ width: 640, height: 480 }, { width: 1280, height: 720 });
    expect(geom.displayed).toEqual({ width: 640, height: 360 });
    expect(geom.offset).toEqual({ x: 0, y: 60 });
  });

  it("letterboxes a tall image horizontally", () => {
    const geom = fitImage({ width: 640, height: 480 }, { width: 480, height: 960 });
    expect(geom.displayed).toEqual({ width: 240, height: 480 });
    expect(geom.offset).toEqual({ x: 200, y: 0 });
  });

  it("rejects degenerate images", () => {
    expect(() => fitImage({ width: 640, height: 480 }, { width: 0, height: 10 }))
      .toThrow();
  });
});

describe("toNormalized", () => {
  it("maps the image center to (0.5, 0.5) within one normalized pixel", () => {
    const geom = fitImage({ width: 640, height: 480 }, { width: 1000, height: 500 });
    const center = {
      x: geom.offset.x + geom.displayed.width / 2,
      y: geom.offset.y + geom.displayed.height / 2,
    };
    const uv = toNormalized(center, geom);
    expect(uv).not.toBeNull();
    expect(Math.abs(uv!.u - 0.5)).toBeLessThan(1 / geom.displayed.width);
    expect(Math.abs(uv!.v - 0.5)).toBeLessThan(1 / geom.displayed.height);
  });

  it("ignores clicks in the letterbox", () => {
    const geom = fitImage({ width: 640, height: 480 }, { width: 1280, height: 720 });
    expect(toNormalized({ x: 320, y: 10 }, geom)).toBeNull();
    expect(toNormalized({ x: 320, y: 470 }, geom)).toBeNull();
    expect(toNormalized({ x: 320, y: 240 }, geom)).not.toBeNull();
  });

  it("stays within [0, 1] at the image edges", () => {
    const geom = fitImage({ width: 100, height: 100 }, { width: 50, height: 50 });
    const uv = toNormalized(
      { x: geom.offset.x + geom.displayed.width - 1e-9, y: geom.offset.y },
      geom,
    );
    expect(uv!.u).toBeLessThanOrEqual(1);
    expect(uv!.v).toBe(0);
  });

  it("round-trips with toContainer", () => {
    const geom = fitImage({ width: 640, height: 480 }, { width: 321, height: 200 });
    for (const click of [{ u: 0.1, v: 0.9 }, { u: 0.5, v: 0.5 }, { u: 0.99, v: 0.01 }]) {
      const back = toNormalized(toContainer(click, geom), geom);
      expect(back!.u).toBeCloseTo(click.u, 9);
      expect(back!.v).toBeCloseTo(click.v, 9);
    }
  });
});
