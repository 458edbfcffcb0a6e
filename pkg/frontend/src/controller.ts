// Actions tying the gallery state to the service. Each action channel keeps
// only its newest request: superseded responses are dropped, in-flight ones
// aborted.

import { ApiClient, ApiError } from "./api.js";
import type { FrameRef } from "./api.js";
import { GalleryState, RequestSequencer } from "./state.js";

export type ToastFn = (message: string) => void;

export class StudioController {
  readonly state: GalleryState;
  private seq = new RequestSequencer();

  constructor(
    readonly api: ApiClient,
    state?: GalleryState,
    private toast: ToastFn = () => {},
  ) {
    this.state = state ?? new GalleryState();
  }

  async init(): Promise<void> {
    const { models } = await this.api.listModels();
    this.state.setModels(models);
    await this.loadBoard();
  }

  async loadBoard(): Promise<void> {
    const { items } = await this.api.getBoard();
    this.state.board = items;
  }

  async generate(): Promise<boolean> {
    const model = this.state.currentModel;
    if (model === null) {
      this.toast("no model selected");
      return false;
    }
    const { token, signal } = this.seq.begin("generate");
    const c = this.state.controls;
    try {
      const res = await this.api.sample(
        {
          model_id: model,
          count: c.count,
          class_label: c.classLabel,
          truncation: c.truncation,
          seed: c.seed,
        },
        signal,
      );
      if (!this.seq.isCurrent("generate", token)) return false; // stale
      this.state.replaceGrid(res.images, model);
      return true;
    } catch (err) {
      if (this.seq.isCurrent("generate", token)) this.surface(err);
      return false;
    }
  }

  async colorize(variants: number): Promise<boolean> {
    if (!this.state.canColorize()) {
      this.toast("select exactly one silhouette first");
      return false;
    }
    const silhouette = this.state.selectedCards()[0];
    const translator = this.state.translator!;
    const { token, signal } = this.seq.begin("colorize");
    try {
      const res = await this.api.colorize(
        {
          translator_id: translator,
          silhouette_id: silhouette.id,
          variants,
          seed: this.state.controls.seed,
        },
        signal,
      );
      if (!this.seq.isCurrent("colorize", token)) return false;
      this.state.setVariants(res.images, res.parent, translator);
      if (res.warning) this.toast(res.warning);
      return true;
    } catch (err) {
      if (this.seq.isCurrent("colorize", token)) this.surface(err);
      return false;
    }
  }

  async interpolate(steps: number): Promise<FrameRef[] | null> {
    if (!this.state.canInterpolate()) {
      this.toast("select exactly two generated images from the same model");
      return null;
    }
    const [from, to] = this.state.selectedCards();
    const { token, signal } = this.seq.begin("interpolate");
    try {
      const res = await this.api.interpolate(from.model!, from.id, to.id, steps, signal);
      if (!this.seq.isCurrent("interpolate", token)) return null;
      this.state.filmstrip = res.frames;
      return res.frames;
    } catch (err) {
      if (this.seq.isCurrent("interpolate", token)) this.surface(err);
      return null;
    }
  }

  async addToBoard(id: string, note = ""): Promise<boolean> {
    if (!this.state.addToBoard(id, note)) return false;
    try {
      await this.api.putBoard(this.state.board);
      return true;
    } catch (err) {
      this.state.removeFromBoard(id); // keep local state honest on rejection
      this.surface(err);
      return false;
    }
  }

  async removeFromBoard(id: string): Promise<void> {
    const before = this.state.board;
    this.state.removeFromBoard(id);
    try {
      await this.api.putBoard(this.state.board);
    } catch (err) {
      this.state.board = before;
      this.surface(err);
    }
  }

  private surface(err: unknown): void {
    if (err instanceof DOMException && err.name === "AbortError") return;
    if (err instanceof ApiError) {
      this.toast(`${err.code}: ${err.message}`);
    } else {
      this.toast(String(err));
    }
  }
}
