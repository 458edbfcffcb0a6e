// Gallery state and selection rules. Pure data + predicates so the action
// gating (colorize needs exactly one silhouette, interpolation exactly two
// same-model sampled images) is testable without a DOM.

import type { BoardItem, FrameRef, ImageRef, ModelInfo } from "./api.js";

export type CardOrigin = "sample" | "colorized" | "upload" | "frame";

export interface Card {
  id: string;
  url: string;
  model: string | null;
  origin: CardOrigin;
  selected: boolean;
}

export interface SamplingControls {
  count: number;
  classLabel: string | null;
  truncation: number; // slider position maps 1:1 onto the latent shrink factor
  seed: number | null;
}

export const DEFAULT_CONTROLS: SamplingControls = {
  count: 16,
  classLabel: null,
  truncation: 0.75,
  seed: null,
};

export class GalleryState {
  models: ModelInfo[] = [];
  currentModel: string | null = null;
  translator: string | null = null;
  cards: Card[] = [];
  variants: Card[] = [];
  variantParent: string | null = null;
  filmstrip: FrameRef[] = [];
  board: BoardItem[] = [];
  controls: SamplingControls = { ...DEFAULT_CONTROLS };

  setModels(models: ModelInfo[]): void {
    this.models = models;
    const gans = models.filter((m) => m.family === "gan");
    const translators = models.filter((m) => m.family === "translator");
    if (this.currentModel === null && gans.length > 0) this.currentModel = gans[0].id;
    if (this.translator === null && translators.length > 0) this.translator = translators[0].id;
  }

  replaceGrid(refs: ImageRef[], model: string): void {
    // a fresh generation replaces the grid but never touches the board
    this.cards = refs.map((r) => ({
      id: r.id,
      url: r.url,
      model,
      origin: "sample",
      selected: false,
    }));
  }

  setVariants(refs: ImageRef[], parent: string, model: string): void {
    this.variants = refs.map((r) => ({
      id: r.id,
      url: r.url,
      model,
      origin: "colorized",
      selected: false,
    }));
    this.variantParent = parent;
  }

  toggleSelect(id: string): void {
    for (const card of this.cards) {
      if (card.id === id) card.selected = !card.selected;
    }
  }

  clearSelection(): void {
    for (const card of this.cards) card.selected = false;
  }

  selectedCards(): Card[] {
    return this.cards.filter((c) => c.selected);
  }

  findCard(id: string): Card | undefined {
    return this.cards.find((c) => c.id === id) ?? this.variants.find((c) => c.id === id);
  }

  canColorize(): boolean {
    return this.translator !== null && this.selectedCards().length === 1;
  }

  canInterpolate(): boolean {
    const sel = this.selectedCards();
    if (sel.length !== 2) return false;
    // uploads carry no latent; both endpoints must come from the same model
    return sel.every((c) => c.origin === "sample") && sel[0].model === sel[1].model;
  }

  boardHas(id: string): boolean {
    return this.board.some((item) => item.id === id);
  }

  addToBoard(id: string, note = ""): boolean {
    if (this.findCard(id) === undefined && !this.boardHas(id)) return false;
    if (this.boardHas(id)) return false;
    this.board = [...this.board, { id, note }];
    return true;
  }

  removeFromBoard(id: string): void {
    this.board = this.board.filter((item) => item.id !== id);
  }
}

/** Drops responses that arrive after a newer request was issued. */
export class RequestSequencer {
  private latest = new Map<string, number>();
  private controllers = new Map<string, AbortController>();

  begin(channel: string): { token: number; signal: AbortSignal } {
    const token = (this.latest.get(channel) ?? 0) + 1;
    this.latest.set(channel, token);
    this.controllers.get(channel)?.abort();
    const controller = new AbortController();
    this.controllers.set(channel, controller);
    return { token, signal: controller.signal };
  }

  isCurrent(channel: string, token: number): boolean {
    return this.latest.get(channel) === token;
  }
}
