import { describe, expect, it } from "vitest";

import { DEFAULT_CONTROLS, GalleryState, RequestSequencer } from "../src/state.js";

function withCards(origins: Array<[string, string, "sample" | "colorized" | "upload"]>): GalleryState {
  const s = new GalleryState();
  s.cards = origins.map(([id, model, origin]) => ({
    id,
    url: `/images/${id}.png`,
    model,
    origin,
    selected: false,
  }));
  return s;
}

describe("sampling controls", () => {
  it("defaults the truncation slider to 0.75", () => {
    expect(DEFAULT_CONTROLS.truncation).toBe(0.75);
  });

  it("defaults to 16 images per generation", () => {
    expect(DEFAULT_CONTROLS.count).toBe(16);
  });
});

describe("selection rules", () => {
  it("colorize needs exactly one selection", () => {
    const s = withCards([["a", "m", "sample"], ["b", "m", "sample"]]);
    s.translator = "tr";
    expect(s.canColorize()).toBe(false);
    s.toggleSelect("a");
    expect(s.canColorize()).toBe(true);
    s.toggleSelect("b");
    expect(s.canColorize()).toBe(false);
  });

  it("interpolate needs exactly two same-model sampled images", () => {
    const s = withCards([
      ["a", "m", "sample"],
      ["b", "m", "sample"],
      ["c", "other", "sample"],
    ]);
    s.toggleSelect("a");
    expect(s.canInterpolate()).toBe(false);
    s.toggleSelect("b");
    expect(s.canInterpolate()).toBe(true);
    s.toggleSelect("c");
    expect(s.canInterpolate()).toBe(false);
  });

  it("uploads cannot be interpolation endpoints", () => {
    const s = withCards([["a", "m", "sample"], ["u", "m", "upload"]]);
    s.toggleSelect("a");
    s.toggleSelect("u");
    expect(s.canInterpolate()).toBe(false);
  });

  it("mixed-model pairs are rejected", () => {
    const s = withCards([["a", "m1", "sample"], ["b", "m2", "sample"]]);
    s.toggleSelect("a");
    s.toggleSelect("b");
    expect(s.canInterpolate()).toBe(false);
  });
});

describe("grid and board", () => {
  it("replaceGrid preserves the board", () => {
    const s = withCards([["a", "m", "sample"]]);
    s.board = [{ id: "a", note: "" }];
    s.replaceGrid([{ id: "x", url: "/images/x.png" }], "m");
    expect(s.board).toEqual([{ id: "a", note: "" }]);
    expect(s.cards.map((c) => c.id)).toEqual(["x"]);
    expect(s.cards[0].selected).toBe(false);
  });

  it("board additions are deduplicated", () => {
    const s = withCards([["a", "m", "sample"]]);
    expect(s.addToBoard("a")).toBe(true);
    expect(s.addToBoard("a")).toBe(false);
    expect(s.board).toHaveLength(1);
  });

  it("unknown ids cannot join the board", () => {
    const s = withCards([["a", "m", "sample"]]);
    expect(s.addToBoard("ghost")).toBe(false);
  });
});

describe("request sequencing", () => {
  it("drops stale responses", () => {
    const seq = new RequestSequencer();
    const first = seq.begin("generate");
    const second = seq.begin("generate");
    expect(seq.isCurrent("generate", first.token)).toBe(false);
    expect(seq.isCurrent("generate", second.token)).toBe(true);
  });

  it("aborts the superseded in-flight request", () => {
    const seq = new RequestSequencer();
    const first = seq.begin("generate");
    expect(first.signal.aborted).toBe(false);
    seq.begin("generate");
    expect(first.signal.aborted).toBe(true);
  });

  it("channels are independent", () => {
    const seq = new RequestSequencer();
    const gen = seq.begin("generate");
    const col = seq.begin("colorize");
    expect(seq.isCurrent("generate", gen.token)).toBe(true);
    expect(seq.isCurrent("colorize", col.token)).toBe(true);
  });
});
