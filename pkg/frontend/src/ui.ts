/**
 * DOM wiring for the editor: four image panes (reconstruction, segmentation
 * with a selection outline, discrete view, edited result), a material form,
 * and lighting controls. One mutating request is in flight at a time; the
 * Edit! button stays disabled until the previous response lands.
 */

import { ApiClient } from "./api.js";
import type { ApiError } from "./api.js";
import {
  UiState,
  bumpStamp,
  canSubmit,
  clearSelection,
  hexToRgb,
  initialState,
  rgbToHex,
  selectMaterial,
  switchView,
  updatePending,
} from "./state.js";

const ENV_PRESETS = ["original", "studio", "sunset", "overcast", "uniform"];

export class EditorApp {
  state: UiState = initialState();

  constructor(
    private api: ApiClient,
    private root: HTMLElement,
  ) {}

  async start(): Promise<void> {
    this.state.views = await this.api.views();
    this.state.materials = await this.api.materials();
    this.buildDom();
    this.refreshImages();
    this.renderMaterialList();
    this.syncForm();
  }

  // -- DOM construction -----------------------------------------------------

  private buildDom(): void {
    this.root.innerHTML = `
      <header>
        <h1>material editor</h1>
        <label>view
          <select id="view-select">
            ${this.state.views.map((v) => `<option value="${v.id}">view ${v.id}</option>`).join("")}
          </select>
        </label>
        <span id="notice" role="status"></span>
      </header>
      <main>
        <section class="panes">
          <figure><img id="pane-recon" alt="reconstruction"><figcaption>reconstruction</figcaption></figure>
          <figure class="seg-holder">
            <div class="overlay-stack">
              <img id="pane-seg" alt="segmentation">
              <img id="pane-region" alt="selected region" class="overlay" hidden>
            </div>
            <figcaption>segmentation (click to select)</figcaption>
          </figure>
          <figure><img id="pane-edited" alt="edited result"><figcaption>edited</figcaption></figure>
        </section>
        <aside>
          <h2>materials</h2>
          <ul id="material-list"></ul>
          <form id="edit-form">
            <h2>edit material <span id="selected-label">none</span></h2>
            <label>basecolor <input type="color" id="in-kd" disabled></label>
            <label>metallic <input type="range" id="in-km" min="0" max="1" step="0.01" disabled>
              <output id="out-km"></output></label>
            <label>roughness <input type="range" id="in-kr" min="0" max="1" step="0.01" disabled>
              <output id="out-kr"></output></label>
            <button type="submit" id="btn-edit" disabled>Edit!</button>
            <button type="button" id="btn-reset">Reset</button>
          </form>
          <h2>lighting</h2>
          <label>environment
            <select id="env-select">
              ${ENV_PRESETS.map((p) => `<option value="${p}">${p}</option>`).join("")}
            </select>
          </label>
          <label>intensity <input type="range" id="in-intensity" min="0.1" max="3" step="0.1" value="1">
            <output id="out-intensity">1.0</output></label>
        </aside>
      </main>`;

    this.el<HTMLSelectElement>("view-select").addEventListener("change", (e) => {
      this.state = switchView(this.state, Number((e.target as HTMLSelectElement).value));
      this.refreshImages();
    });
    this.el<HTMLImageElement>("pane-seg").addEventListener("click", (e) => {
      void this.handleSegClick(e as MouseEvent);
    });
    this.el<HTMLFormElement>("edit-form").addEventListener("submit", (e) => {
      e.preventDefault();
      void this.submitEdit();
    });
    this.el<HTMLButtonElement>("btn-reset").addEventListener("click", () => {
      void this.resetAll();
    });
    this.el<HTMLInputElement>("in-kd").addEventListener("input", (e) => {
      this.state = updatePending(this.state, {
        k_d: hexToRgb((e.target as HTMLInputElement).value),
      });
      this.syncForm();
    });
    for (const [id, key] of [["in-km", "k_m"], ["in-kr", "k_r"]] as const) {
      this.el<HTMLInputElement>(id).addEventListener("input", (e) => {
        this.state = updatePending(this.state, {
          [key]: Number((e.target as HTMLInputElement).value),
        } as never);
        this.syncForm();
      });
    }
    this.el<HTMLSelectElement>("env-select").addEventListener("change", (e) => {
      void this.relight((e.target as HTMLSelectElement).value);
    });
    this.el<HTMLInputElement>("in-intensity").addEventListener("change", (e) => {
      void this.setIntensity(Number((e.target as HTMLInputElement).value));
    });
  }

  private el<T extends HTMLElement>(id: string): T {
    const node = this.root.querySelector(`#${id}`);
    if (!node) throw new Error(`missing element #${id}`);
    return node as T;
  }

  // -- interactions ---------------------------------------------------------------

  /** Map a click on the segmentation pane to pixel coordinates and select. */
  async handleSegClick(event: MouseEvent): Promise<void> {
    const img = this.el<HTMLImageElement>("pane-seg");
    const rect = img.getBoundingClientRect();
    const view = this.state.views[this.state.currentView];
    if (!view || rect.width === 0 || rect.height === 0) return;
    const x = Math.floor(((event.clientX - rect.left) / rect.width) * view.width);
    const y = Math.floor(((event.clientY - rect.top) / rect.height) * view.height);
    await this.selectAt(x, y);
  }

  async selectAt(x: number, y: number): Promise<void> {
    try {
      const res = await this.api.select(this.state.currentView, x, y);
      this.state = selectMaterial(this.state, res.index);
    } catch (err) {
      const apiErr = err as ApiError;
      if (apiErr.code === "background") {
        this.state = { ...this.state, notice: "no material here" };
      } else {
        this.state = { ...this.state, notice: `select failed: ${apiErr.code}` };
      }
    }
    this.renderMaterialList();
    this.syncForm();
    this.refreshRegion();
  }

  async submitEdit(): Promise<void> {
    const { selected, pending } = this.state;
    if (!canSubmit(this.state) || selected === null || !pending) return;
    this.state = { ...this.state, busy: true };
    this.syncForm();
    try {
      await this.api.edit({
        index: selected,
        k_d: pending.k_d,
        k_m: pending.k_m,
        k_r: pending.k_r,
      });
      this.state.materials = await this.api.materials();
      this.state = bumpStamp({ ...this.state, busy: false, notice: null });
    } catch (err) {
      this.state = {
        ...this.state,
        busy: false,
        notice: `edit failed: ${(err as ApiError).code}`,
      };
    }
    this.renderMaterialList();
    this.refreshImages();
    this.syncForm();
  }

  async relight(preset: string): Promise<void> {
    if (preset !== "original") {
      await this.api.relightPreset(preset);
    } else {
      await this.api.reset();
      this.state.materials = await this.api.materials();
    }
    this.state = bumpStamp({ ...this.state, envPreset: preset });
    this.refreshImages();
  }

  async setIntensity(value: number): Promise<void> {
    await this.api.relightIntensity(value);
    this.state = bumpStamp({ ...this.state, intensity: value });
    this.el<HTMLOutputElement>("out-intensity").value = value.toFixed(1);
    this.refreshImages();
  }

  async resetAll(): Promise<void> {
    await this.api.reset();
    this.state.materials = await this.api.materials();
    this.state = bumpStamp(clearSelection(this.state));
    this.renderMaterialList();
    this.refreshImages();
    this.syncForm();
    this.refreshRegion();
  }

  // -- rendering ------------------------------------------------------------------

  private refreshImages(): void {
    const v = this.state.currentView;
    const s = this.state.stamp;
    this.el<HTMLImageElement>("pane-recon").src = this.api.renderUrl(v, "continuous", s);
    this.el<HTMLImageElement>("pane-seg").src = this.api.segmentationUrl(v, s);
    this.el<HTMLImageElement>("pane-edited").src = this.api.renderUrl(v, "edited", s);
    this.refreshRegion();
  }

  private refreshRegion(): void {
    const region = this.el<HTMLImageElement>("pane-region");
    if (this.state.selected === null) {
      region.hidden = true;
      return;
    }
    region.hidden = false;
    region.src = this.api.regionUrl(this.state.currentView, this.state.selected, this.state.stamp);
  }

  private renderMaterialList(): void {
    const list = this.el<HTMLUListElement>("material-list");
    list.innerHTML = this.state.materials
      .map(
        (m) => `
        <li data-index="${m.index}" class="${m.index === this.state.selected ? "selected" : ""}">
          <span class="swatch" style="background:${m.display_color}"></span>
          codeword ${m.index}${m.overridden ? " (edited)" : ""}
        </li>`,
      )
      .join("");
    for (const item of Array.from(list.querySelectorAll("li"))) {
      item.addEventListener("click", () => {
        this.state = selectMaterial(this.state, Number(item.dataset.index));
        this.renderMaterialList();
        this.syncForm();
        this.refreshRegion();
      });
    }
  }

  private syncForm(): void {
    const notice = this.el<HTMLSpanElement>("notice");
    notice.textContent = this.state.notice ?? "";
    const label = this.el<HTMLSpanElement>("selected-label");
    label.textContent = this.state.selected === null ? "none" : `codeword ${this.state.selected}`;
    const kd = this.el<HTMLInputElement>("in-kd");
    const km = this.el<HTMLInputElement>("in-km");
    const kr = this.el<HTMLInputElement>("in-kr");
    const enabled = this.state.pending !== null;
    kd.disabled = km.disabled = kr.disabled = !enabled;
    if (this.state.pending) {
      kd.value = rgbToHex(this.state.pending.k_d);
      km.value = String(this.state.pending.k_m);
      kr.value = String(this.state.pending.k_r);
      this.el<HTMLOutputElement>("out-km").value = this.state.pending.k_m.toFixed(2);
      this.el<HTMLOutputElement>("out-kr").value = this.state.pending.k_r.toFixed(2);
    }
    this.el<HTMLButtonElement>("btn-edit").disabled = !canSubmit(this.state);
  }
}
