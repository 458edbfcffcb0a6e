// Three-pane studio: Generate (grid + sampling controls), Variants
// (colorized alternatives beside their parent), Board (persisted picks).
// Rendering only; all pixels come from service URLs.

import { ApiClient } from "./api.js";
import { StudioController } from "./controller.js";

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className = "",
  text = "",
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text) node.textContent = text;
  return node;
}

export class StudioApp {
  private controller: StudioController;
  private root: HTMLElement;
  private toastBox: HTMLElement;

  constructor(root: HTMLElement, baseUrl = "") {
    this.root = root;
    this.toastBox = el("div", "toasts");
    const api = new ApiClient(baseUrl);
    this.controller = new StudioController(api, undefined, (msg) => this.showToast(msg));
  }

  async start(): Promise<void> {
    await this.controller.init();
    this.render();
  }

  private showToast(message: string): void {
    const node = el("div", "toast", message);
    this.toastBox.appendChild(node);
    setTimeout(() => node.remove(), 4000);
  }

  private render(): void {
    const s = this.controller.state;
    this.root.replaceChildren();
    this.root.appendChild(this.toastBox);

    // --- generate pane -----------------------------------------------------
    const generatePane = el("section", "pane pane-generate");
    generatePane.appendChild(el("h2", "", "Generate"));

    const controls = el("div", "controls");
    const modelSelect = el("select");
    for (const m of s.models.filter((m) => m.family === "gan")) {
      const opt = el("option", "", `${m.id} (${m.kind} ${m.resolution})`);
      opt.value = m.id;
      if (m.id === s.currentModel) opt.selected = true;
      modelSelect.appendChild(opt);
    }
    modelSelect.onchange = () => {
      s.currentModel = modelSelect.value;
      this.render();
    };
    controls.appendChild(this.labeled("Model", modelSelect));

    const current = s.models.find((m) => m.id === s.currentModel);
    if (current?.conditional && current.classes?.length) {
      const classSelect = el("select");
      const anyOpt = el("option", "", "any");
      anyOpt.value = "";
      classSelect.appendChild(anyOpt);
      for (const name of current.classes) {
        const opt = el("option", "", name);
        opt.value = name;
        if (name === s.controls.classLabel) opt.selected = true;
        classSelect.appendChild(opt);
      }
      classSelect.onchange = () => {
        s.controls.classLabel = classSelect.value || null;
      };
      controls.appendChild(this.labeled("Class", classSelect));
    }

    const count = el("input") as HTMLInputElement;
    count.type = "number";
    count.min = "1";
    count.max = "64";
    count.value = String(s.controls.count);
    count.onchange = () => {
      s.controls.count = Math.max(1, Math.min(64, Number(count.value) || 16));
    };
    controls.appendChild(this.labeled("Count", count));

    const trunc = el("input") as HTMLInputElement;
    trunc.type = "range";
    trunc.min = "0";
    trunc.max = "1";
    trunc.step = "0.05";
    trunc.value = String(s.controls.truncation);
    const truncLabel = el("span", "trunc-value", s.controls.truncation.toFixed(2));
    trunc.oninput = () => {
      s.controls.truncation = Number(trunc.value);
      truncLabel.textContent = s.controls.truncation.toFixed(2);
    };
    const truncWrap = this.labeled("Truncation", trunc);
    truncWrap.appendChild(truncLabel);
    controls.appendChild(truncWrap);

    const seed = el("input") as HTMLInputElement;
    seed.type = "number";
    seed.placeholder = "random";
    seed.value = s.controls.seed === null ? "" : String(s.controls.seed);
    seed.onchange = () => {
      s.controls.seed = seed.value === "" ? null : Number(seed.value);
    };
    controls.appendChild(this.labeled("Seed", seed));

    const generateBtn = el("button", "primary", "Generate");
    generateBtn.onclick = async () => {
      generateBtn.disabled = true;
      const ok = await this.controller.generate();
      generateBtn.disabled = false;
      if (ok) this.render();
    };
    controls.appendChild(generateBtn);
    generatePane.appendChild(controls);

    const grid = el("div", "grid");
    for (const card of s.cards) {
      const cell = el("figure", card.selected ? "card selected" : "card");
      const img = el("img") as HTMLImageElement;
      img.src = this.controller.api.imageUrl(card);
      img.alt = card.id;
      cell.appendChild(img);
      cell.onclick = () => {
        s.toggleSelect(card.id);
        this.render();
      };
      const pick = el("button", "pick", s.boardHas(card.id) ? "on board" : "+ board");
      pick.disabled = s.boardHas(card.id);
      pick.onclick = async (ev) => {
        ev.stopPropagation();
        if (await this.controller.addToBoard(card.id)) this.render();
      };
      cell.appendChild(pick);
      grid.appendChild(cell);
    }
    generatePane.appendChild(grid);

    const actionRow = el("div", "actions");
    const colorizeBtn = el("button", "", "Colorize selection");
    colorizeBtn.disabled = !s.canColorize();
    colorizeBtn.title = s.canColorize() ? "" : "select exactly one silhouette";
    colorizeBtn.onclick = async () => {
      if (await this.controller.colorize(4)) this.render();
    };
    actionRow.appendChild(colorizeBtn);

    const interpBtn = el("button", "", "Interpolate pair");
    interpBtn.disabled = !s.canInterpolate();
    interpBtn.title = s.canInterpolate()
      ? ""
      : "select exactly two generated images from the same model";
    interpBtn.onclick = async () => {
      if (await this.controller.interpolate(5)) this.render();
    };
    actionRow.appendChild(interpBtn);
    generatePane.appendChild(actionRow);

    if (s.filmstrip.length > 0) {
      const strip = el("div", "filmstrip");
      for (const frame of s.filmstrip) {
        const img = el("img") as HTMLImageElement;
        img.src = this.controller.api.imageUrl(frame);
        img.title = `t=${frame.t.toFixed(2)}`;
        strip.appendChild(img);
      }
      generatePane.appendChild(strip);
    }

    // --- variants pane -----------------------------------------------------
    const variantsPane = el("section", "pane pane-variants");
    variantsPane.appendChild(el("h2", "", "Variants"));
    if (s.variantParent !== null) {
      const parent = s.findCard(s.variantParent);
      if (parent) {
        const thumb = el("figure", "card parent");
        const img = el("img") as HTMLImageElement;
        img.src = this.controller.api.imageUrl(parent);
        thumb.appendChild(img);
        thumb.appendChild(el("figcaption", "", "parent"));
        variantsPane.appendChild(thumb);
      }
    }
    const variantGrid = el("div", "grid");
    for (const card of s.variants) {
      const cell = el("figure", "card");
      const img = el("img") as HTMLImageElement;
      img.src = this.controller.api.imageUrl(card);
      cell.appendChild(img);
      const pick = el("button", "pick", s.boardHas(card.id) ? "on board" : "+ board");
      pick.disabled = s.boardHas(card.id);
      pick.onclick = async () => {
        if (await this.controller.addToBoard(card.id)) this.render();
      };
      cell.appendChild(pick);
      variantGrid.appendChild(cell);
    }
    variantsPane.appendChild(variantGrid);

    // --- board pane ----------------------------------------------------------
    const boardPane = el("section", "pane pane-board");
    boardPane.appendChild(el("h2", "", `Board (${s.board.length})`));
    const boardGrid = el("div", "grid");
    for (const item of s.board) {
      const cell = el("figure", "card");
      const img = el("img") as HTMLImageElement;
      img.src = this.controller.api.imageUrl({ id: item.id, url: `/images/${item.id}.png` });
      cell.appendChild(img);
      if (item.note) cell.appendChild(el("figcaption", "", item.note));
      const drop = el("button", "pick", "remove");
      drop.onclick = async () => {
        await this.controller.removeFromBoard(item.id);
        this.render();
      };
      cell.appendChild(drop);
      boardGrid.appendChild(cell);
    }
    boardPane.appendChild(boardGrid);

    this.root.appendChild(generatePane);
    this.root.appendChild(variantsPane);
    this.root.appendChild(boardPane);
  }

  private labeled(text: string, input: HTMLElement): HTMLElement {
    const wrap = el("label", "field");
    wrap.appendChild(el("span", "", text));
    wrap.appendChild(input);
    return wrap;
  }
}
