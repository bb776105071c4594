/** The operator console: image browser, scribble editor, inpaint launcher,
 * candidate gallery, and the before/after report.
 *
 * The console computes nothing domain-level locally except the brush
 * preview; every probability, ratio, and change shown on screen comes out of
 * a gateway response.
 */

import { ApiClient, ApiError, newIdempotencyKey } from "./api.js";
import {
  CFG_SCALE,
  DENOISE,
  bandFractions,
  bandWarning,
  formatChange,
  formatProbability,
  type SliderLimits,
} from "./limits.js";
import { pollJob } from "./poll.js";
import {
  ScribbleBuffer,
  maskArea,
  rasterizeStrokes,
  type Stroke,
  type StrokeMode,
} from "./scribble.js";
import type {
  CandidateListing,
  ImageRecord,
  JobInfo,
  PromptInfo,
  SessionInfo,
} from "./types.js";

// ---------------------------------------------------------------------------
// small DOM helpers

type Attrs = Record<string, string | number | boolean | ((event: Event) => void)>;

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  attrs: Attrs = {},
  children: Array<Node | string> = [],
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  for (const [key, value] of Object.entries(attrs)) {
    if (typeof value === "function") {
      node.addEventListener(key.replace(/^on/, ""), value);
    } else if (typeof value === "boolean") {
      if (value) {
        node.setAttribute(key, "");
      }
    } else {
      node.setAttribute(key, String(value));
    }
  }
  for (const child of children) {
    node.append(child);
  }
  return node;
}

function b64ToImage(pngB64: string): Promise<HTMLImageElement> {
  const img = new Image();
  img.src = `data:image/png;base64,${pngB64}`;
  return img.decode().then(() => img);
}

/** White pixels of a mask PNG become `rgb` at proportional alpha. */
async function tintedLayer(
  pngB64: string,
  rgb: [number, number, number],
  alphaScale = 0.55,
): Promise<HTMLCanvasElement> {
  const img = await b64ToImage(pngB64);
  const canvas = el("canvas", { width: img.naturalWidth, height: img.naturalHeight });
  const ctx = canvas.getContext("2d")!;
  ctx.drawImage(img, 0, 0);
  const data = ctx.getImageData(0, 0, canvas.width, canvas.height);
  const px = data.data;
  for (let i = 0; i < px.length; i += 4) {
    const value = px[i]!;
    px[i] = rgb[0];
    px[i + 1] = rgb[1];
    px[i + 2] = rgb[2];
    px[i + 3] = Math.round(value * alphaScale);
  }
  ctx.putImageData(data, 0, 0);
  return canvas;
}

// ---------------------------------------------------------------------------
// console state

interface LoadedImage {
  record: ImageRecord;
  width: number;
  height: number;
  element: HTMLImageElement;
}

interface SavedMask {
  maskId: string;
  serverArea: number;
  localArea: number;
}

type OverlayName = "heatmap" | "apMask" | "saliency";

export class ConsoleApp {
  private readonly api: ApiClient;
  private readonly root: HTMLElement;

  private prompts: PromptInfo[] = [];
  private image: LoadedImage | null = null;
  private readonly buffer = new ScribbleBuffer();
  private liveStroke: Stroke | null = null;
  private brushRadius = 8;
  private brushMode: StrokeMode = "paint";
  private savedMask: SavedMask | null = null;
  private overlays: Record<OverlayName, boolean> = {
    heatmap: false,
    apMask: false,
    saliency: false,
  };
  private overlayOpacity = 0.6;
  private overlayCache = new Map<string, HTMLCanvasElement>();
  private session: SessionInfo | null = null;
  private busy = false;

  // DOM nodes the handlers need
  private imageList!: HTMLUListElement;
  private labelFilter!: HTMLSelectElement;
  private baseCanvas!: HTMLCanvasElement;
  private overlayCanvas!: HTMLCanvasElement;
  private previewCanvas!: HTMLCanvasElement;
  private editorStatus!: HTMLElement;
  private maskBadge!: HTMLElement;
  private promptSelect!: HTMLSelectElement;
  private promptText!: HTMLInputElement;
  private cfgSlider!: HTMLInputElement;
  private cfgValue!: HTMLElement;
  private denoiseSlider!: HTMLInputElement;
  private denoiseValue!: HTMLElement;
  private seedInput!: HTMLInputElement;
  private nCandidatesInput!: HTMLInputElement;
  private warningBanner!: HTMLElement;
  private errorBanner!: HTMLElement;
  private jobStatus!: HTMLElement;
  private gallery!: HTMLElement;
  private scoreStrip!: HTMLElement;
  private reportBody!: HTMLElement;
  private launchButton!: HTMLButtonElement;
  private saveButton!: HTMLButtonElement;

  constructor(root: HTMLElement, api: ApiClient) {
    this.root = root;
    this.api = api;
  }

  async start(): Promise<void> {
    this.render();
    await Promise.all([this.loadPrompts(), this.refreshImageList(), this.refreshReport()]);
  }

  // -----------------------------------------------------------------------
  // layout

  private render(): void {
    this.imageList = el("ul", { class: "image-list" });
    this.labelFilter = el("select", {
      class: "label-filter",
      onchange: () => void this.refreshImageList(),
    }, [
      el("option", { value: "" }, ["all labels"]),
      el("option", { value: "hotspot", selected: true }, ["hotspot"]),
      el("option", { value: "non_hotspot" }, ["non_hotspot"]),
    ]);

    this.baseCanvas = el("canvas", { class: "layer base" });
    this.overlayCanvas = el("canvas", { class: "layer overlay" });
    this.previewCanvas = el("canvas", { class: "layer preview" });
    this.editorStatus = el("div", { class: "muted" }, ["Pick an image to begin."]);
    this.maskBadge = el("span", { class: "badge" });

    const stack = el("div", { class: "canvas-stack" }, [
      this.baseCanvas,
      this.overlayCanvas,
      this.previewCanvas,
    ]);
    this.previewCanvas.addEventListener("pointerdown", (e) => this.onPointerDown(e));
    this.previewCanvas.addEventListener("pointermove", (e) => this.onPointerMove(e));
    this.previewCanvas.addEventListener("pointerup", (e) => this.onPointerUp(e));
    this.previewCanvas.addEventListener("pointerleave", (e) => this.onPointerUp(e));

    const radiusSlider = el("input", {
      type: "range", min: 1, max: 40, step: 1, value: this.brushRadius,
      oninput: (e) => {
        this.brushRadius = Number((e.target as HTMLInputElement).value);
        radiusValue.textContent = String(this.brushRadius);
      },
    });
    const radiusValue = el("span", {}, [String(this.brushRadius)]);

    const modePaint = el("button", {
      class: "mode active",
      onclick: () => this.setMode("paint", modePaint, modeErase),
    }, ["paint"]);
    const modeErase = el("button", {
      class: "mode",
      onclick: () => this.setMode("erase", modeErase, modePaint),
    }, ["erase"]);

    this.saveButton = el("button", {
      class: "primary",
      onclick: () => void this.saveMask(),
    }, ["Save mask"]);

    const editorControls = el("div", { class: "controls" }, [
      el("label", {}, ["brush ", radiusValue, "px "]), radiusSlider,
      modePaint, modeErase,
      el("button", { onclick: () => this.undo() }, ["undo"]),
      el("button", { onclick: () => this.redo() }, ["redo"]),
      el("button", { onclick: () => this.clearBuffer() }, ["clear"]),
      this.saveButton,
      this.maskBadge,
    ]);

    const overlayControls = el("div", { class: "controls" }, [
      this.overlayToggle("heatmap", "CAM heatmap"),
      this.overlayToggle("apMask", "AP mask"),
      this.overlayToggle("saliency", "saliency"),
      el("label", {}, [" opacity "]),
      el("input", {
        type: "range", min: 0, max: 1, step: 0.05, value: this.overlayOpacity,
        oninput: (e) => {
          this.overlayOpacity = Number((e.target as HTMLInputElement).value);
          void this.redrawOverlays();
        },
      }),
    ]);

    this.promptSelect = el("select", {
      onchange: () => {
        this.promptText.disabled = this.promptSelect.value !== "__custom__";
      },
    });
    this.promptText = el("input", {
      type: "text", placeholder: "free-text prompt", disabled: true,
    });

    const cfg = this.sliderRow("cfg_scale", CFG_SCALE);
    this.cfgSlider = cfg.slider;
    this.cfgValue = cfg.value;
    const denoise = this.sliderRow("denoise_strength", DENOISE);
    this.denoiseSlider = denoise.slider;
    this.denoiseValue = denoise.value;

    this.seedInput = el("input", { type: "number", value: 0, class: "narrow" });
    this.nCandidatesInput = el("input", {
      type: "number", value: 3, min: 1, max: 8, class: "narrow",
    });
    this.warningBanner = el("div", { class: "banner warning hidden" });
    this.errorBanner = el("div", { class: "banner error hidden" });
    this.jobStatus = el("div", { class: "muted" });
    this.launchButton = el("button", {
      class: "primary",
      onclick: () => void this.launchInpaint(),
    }, ["Inpaint"]);

    this.gallery = el("div", { class: "gallery" });
    this.scoreStrip = el("div", { class: "score-strip" });
    this.reportBody = el("div", { class: "report-body muted" }, ["No scored sessions yet."]);

    this.root.replaceChildren(
      el("header", {}, [
        el("h1", {}, ["Road redesign console"]),
        el("p", { class: "muted" }, [
          "Inspect hotspot imagery, mask accident-prone features, and preview safer designs.",
        ]),
      ]),
      el("div", { class: "columns" }, [
        el("aside", {}, [
          el("h2", {}, ["Images"]),
          this.labelFilter,
          this.imageList,
        ]),
        el("main", {}, [
          el("section", { class: "card" }, [
            el("h2", {}, ["Mask editor"]),
            stack,
            this.editorStatus,
            editorControls,
            overlayControls,
          ]),
          el("section", { class: "card" }, [
            el("h2", {}, ["Redesign"]),
            el("div", { class: "controls" }, [
              el("label", {}, ["design "]), this.promptSelect, this.promptText,
            ]),
            cfg.row,
            denoise.row,
            el("div", { class: "controls" }, [
              el("label", {}, ["seed "]), this.seedInput,
              el("label", {}, [" candidates "]), this.nCandidatesInput,
              this.launchButton,
            ]),
            this.warningBanner,
            this.errorBanner,
            this.jobStatus,
          ]),
          el("section", { class: "card" }, [
            el("h2", {}, ["Candidates"]),
            this.scoreStrip,
            this.gallery,
          ]),
          el("section", { class: "card" }, [
            el("h2", {}, ["Latest report"]),
            this.reportBody,
          ]),
        ]),
      ]),
    );

    document.addEventListener("keydown", (e) => {
      if (!(e.ctrlKey || e.metaKey)) {
        return;
      }
      if (e.key.toLowerCase() === "z" && e.shiftKey) {
        e.preventDefault();
        this.redo();
      } else if (e.key.toLowerCase() === "z") {
        e.preventDefault();
        this.undo();
      } else if (e.key.toLowerCase() === "y") {
        e.preventDefault();
        this.redo();
      }
    });
  }

  private overlayToggle(name: OverlayName, label: string): HTMLElement {
    return el("label", { class: "toggle" }, [
      el("input", {
        type: "checkbox",
        onchange: (e) => {
          this.overlays[name] = (e.target as HTMLInputElement).checked;
          void this.redrawOverlays();
        },
      }),
      ` ${label}`,
    ]);
  }

  private sliderRow(
    name: string,
    limits: SliderLimits,
  ): { row: HTMLElement; slider: HTMLInputElement; value: HTMLElement } {
    const value = el("span", { class: "slider-value" }, [String(limits.defaultValue)]);
    const slider = el("input", {
      type: "range",
      min: limits.min,
      max: limits.max,
      step: limits.step,
      value: limits.defaultValue,
      class: "band-slider",
      oninput: () => {
        value.textContent = slider.value;
        this.updateWarnings();
      },
    });
    const { start, end } = bandFractions(limits);
    // Highlight the recommended band on the track itself.
    slider.style.background =
      `linear-gradient(to right, var(--track) ${start * 100}%, ` +
      `var(--band) ${start * 100}%, var(--band) ${end * 100}%, ` +
      `var(--track) ${end * 100}%)`;
    const row = el("div", { class: "controls" }, [
      el("label", { class: "slider-label" }, [
        `${name} `,
        el("span", { class: "muted" }, [
          `(recommended ${limits.bandLow}–${limits.bandHigh})`,
        ]),
      ]),
      slider,
      value,
    ]);
    return { row, slider, value };
  }

  // -----------------------------------------------------------------------
  // data loading

  private async loadPrompts(): Promise<void> {
    try {
      const listing = await this.api.getPrompts();
      this.prompts = listing.items;
      this.promptSelect.replaceChildren(
        ...this.prompts.map((p) =>
          el("option", { value: p.design_name, title: p.full_prompt }, [p.design_name]),
        ),
        el("option", { value: "__custom__" }, ["custom prompt…"]),
      );
    } catch (error) {
      this.showError(error);
    }
  }

  private async refreshImageList(): Promise<void> {
    try {
      const label = this.labelFilter.value || undefined;
      const listing = await this.api.listImages({ label, pageSize: 100 });
      this.imageList.replaceChildren(
        ...listing.items.map((record) =>
          el("li", {
            class: this.image?.record.image_id === record.image_id ? "selected" : "",
            onclick: () => void this.loadImage(record),
          }, [
            el("span", { class: "mono" }, [record.image_id]),
            el("span", { class: "pill" }, [record.label]),
            el("span", { class: "muted" }, [
              ` p=${formatProbability(record.p_hotspot)}`,
            ]),
          ]),
        ),
      );
    } catch (error) {
      this.showError(error);
    }
  }

  private async loadImage(record: ImageRecord): Promise<void> {
    try {
      const img = new Image();
      img.src = this.api.imageFileUrl(record.image_id);
      await img.decode();
      this.image = {
        record,
        width: img.naturalWidth,
        height: img.naturalHeight,
        element: img,
      };
      this.buffer.clear();
      this.liveStroke = null;
      this.savedMask = null;
      this.session = null;
      this.overlayCache.clear();
      this.maskBadge.textContent = "";
      this.scoreStrip.replaceChildren();
      this.gallery.replaceChildren();
      for (const canvas of [this.baseCanvas, this.overlayCanvas, this.previewCanvas]) {
        canvas.width = img.naturalWidth;
        canvas.height = img.naturalHeight;
      }
      this.baseCanvas.getContext("2d")!.drawImage(img, 0, 0);
      this.editorStatus.textContent =
        `${record.image_id} — ${img.naturalWidth}×${img.naturalHeight}, ` +
        `p(hotspot) ${formatProbability(record.p_hotspot)}`;
      this.redrawPreview();
      await this.redrawOverlays();
      await this.refreshImageList();
    } catch (error) {
      this.showError(error);
    }
  }

  // -----------------------------------------------------------------------
  // scribble editing

  private canvasPoint(event: PointerEvent): { x: number; y: number } | null {
    if (!this.image) {
      return null;
    }
    const rect = this.previewCanvas.getBoundingClientRect();
    return {
      x: ((event.clientX - rect.left) / rect.width) * this.image.width,
      y: ((event.clientY - rect.top) / rect.height) * this.image.height,
    };
  }

  private onPointerDown(event: PointerEvent): void {
    const point = this.canvasPoint(event);
    if (!point) {
      return;
    }
    this.previewCanvas.setPointerCapture(event.pointerId);
    this.liveStroke = {
      points: [point],
      radius: this.brushRadius,
      mode: this.brushMode,
    };
    this.redrawPreview();
  }

  private onPointerMove(event: PointerEvent): void {
    if (!this.liveStroke) {
      return;
    }
    const point = this.canvasPoint(event);
    if (!point) {
      return;
    }
    const last = this.liveStroke.points[this.liveStroke.points.length - 1]!;
    const dx = point.x - last.x;
    const dy = point.y - last.y;
    if (dx * dx + dy * dy >= 1.0) {
      this.liveStroke.points.push(point);
      this.redrawPreview();
    }
  }

  private onPointerUp(event: PointerEvent): void {
    if (!this.liveStroke) {
      return;
    }
    const point = this.canvasPoint(event);
    if (point && event.type === "pointerup") {
      this.liveStroke.points.push(point);
    }
    this.buffer.push(this.liveStroke);
    this.liveStroke = null;
    this.invalidateSavedMask();
    this.redrawPreview();
  }

  private setMode(mode: StrokeMode, active: HTMLElement, other: HTMLElement): void {
    this.brushMode = mode;
    active.classList.add("active");
    other.classList.remove("active");
  }

  private undo(): void {
    if (this.buffer.undo()) {
      this.invalidateSavedMask();
      this.redrawPreview();
    }
  }

  private redo(): void {
    if (this.buffer.redo()) {
      this.invalidateSavedMask();
      this.redrawPreview();
    }
  }

  private clearBuffer(): void {
    this.buffer.clear();
    this.invalidateSavedMask();
    this.redrawPreview();
  }

  private invalidateSavedMask(): void {
    this.savedMask = null;
    this.maskBadge.textContent = "";
    this.maskBadge.className = "badge";
  }

  /** Exact preview: the same bits the server will store for this buffer. */
  private redrawPreview(): void {
    if (!this.image) {
      return;
    }
    const { width, height } = this.image;
    const strokes = this.buffer.snapshot();
    if (this.liveStroke) {
      strokes.push(this.liveStroke);
    }
    const bits = rasterizeStrokes(strokes, width, height);
    const ctx = this.previewCanvas.getContext("2d")!;
    const data = ctx.createImageData(width, height);
    for (let i = 0; i < bits.length; i++) {
      if (bits[i]) {
        const o = i * 4;
        data.data[o] = 255;
        data.data[o + 1] = 64;
        data.data[o + 2] = 96;
        data.data[o + 3] = 140;
      }
    }
    ctx.clearRect(0, 0, width, height);
    ctx.putImageData(data, 0, 0);
  }

  private async saveMask(): Promise<void> {
    if (!this.image) {
      this.showError(new Error("load an image first"));
      return;
    }
    try {
      const { width, height, record } = this.image;
      const localArea = maskArea(rasterizeStrokes(this.buffer.snapshot(), width, height));
      const response = await this.api.saveMask(
        record.image_id,
        this.buffer.toJson(),
        newIdempotencyKey(),
      );
      this.savedMask = {
        maskId: response.mask_id,
        serverArea: response.area,
        localArea,
      };
      const match = response.area === localArea;
      this.maskBadge.textContent = match
        ? `mask ${response.mask_id} saved — server rasterized ${response.area}px, matches preview`
        : `mask ${response.mask_id}: server ${response.area}px ≠ preview ${localArea}px`;
      this.maskBadge.className = match ? "badge ok" : "badge bad";
      // Display the server-rasterized mask itself in place of the preview.
      const bytes = await this.api.fetchMaskBytes(response.mask_id);
      await this.showServerMask(bytes);
      this.clearError();
    } catch (error) {
      this.showError(error);
    }
  }

  private async showServerMask(pngBytes: ArrayBuffer): Promise<void> {
    if (!this.image) {
      return;
    }
    const blob = new Blob([pngBytes], { type: "image/png" });
    const url = URL.createObjectURL(blob);
    try {
      const img = new Image();
      img.src = url;
      await img.decode();
      const { width, height } = this.image;
      const scratch = el("canvas", { width, height });
      const sctx = scratch.getContext("2d")!;
      sctx.drawImage(img, 0, 0);
      const data = sctx.getImageData(0, 0, width, height);
      for (let i = 0; i < data.data.length; i += 4) {
        const value = data.data[i]!;
        data.data[i] = 255;
        data.data[i + 1] = 64;
        data.data[i + 2] = 96;
        data.data[i + 3] = value > 127 ? 140 : 0;
      }
      const ctx = this.previewCanvas.getContext("2d")!;
      ctx.clearRect(0, 0, width, height);
      ctx.putImageData(data, 0, 0);
    } finally {
      URL.revokeObjectURL(url);
    }
  }

  // -----------------------------------------------------------------------
  // overlays

  private async overlayLayer(name: OverlayName): Promise<HTMLCanvasElement | null> {
    if (!this.image) {
      return null;
    }
    const key = `${this.image.record.image_id}:${name}`;
    const cached = this.overlayCache.get(key);
    if (cached) {
      return cached;
    }
    let layer: HTMLCanvasElement;
    if (name === "saliency") {
      const body = await this.api.getSaliency(this.image.record.image_id);
      layer = await tintedLayer(body.salient_png, [64, 200, 255]);
    } else {
      const cam = await this.api.getCam(this.image.record.image_id);
      layer = name === "heatmap"
        ? await tintedLayer(cam.heatmap_png, [255, 160, 0], 0.8)
        : await tintedLayer(cam.ap_mask_png, [255, 210, 0]);
    }
    this.overlayCache.set(key, layer);
    return layer;
  }

  private async redrawOverlays(): Promise<void> {
    if (!this.image) {
      return;
    }
    const ctx = this.overlayCanvas.getContext("2d")!;
    ctx.clearRect(0, 0, this.image.width, this.image.height);
    for (const name of ["heatmap", "apMask", "saliency"] as OverlayName[]) {
      if (!this.overlays[name]) {
        continue;
      }
      try {
        const layer = await this.overlayLayer(name);
        if (layer) {
          ctx.globalAlpha = this.overlayOpacity;
          ctx.drawImage(layer, 0, 0);
          ctx.globalAlpha = 1;
        }
        this.clearError();
      } catch (error) {
        this.showError(error);
      }
    }
  }

  // -----------------------------------------------------------------------
  // inpaint launch, polling, gallery

  private updateWarnings(serverNotes: string[] = []): void {
    const notes: string[] = [];
    const cfg = Number(this.cfgSlider.value);
    const denoise = Number(this.denoiseSlider.value);
    const cfgNote = bandWarning("cfg_scale", cfg, CFG_SCALE);
    if (cfgNote) {
      notes.push(cfgNote);
    }
    const denoiseNote = bandWarning("denoise_strength", denoise, DENOISE);
    if (denoiseNote) {
      notes.push(denoiseNote);
    }
    notes.push(...serverNotes);
    if (notes.length === 0) {
      this.warningBanner.classList.add("hidden");
      this.warningBanner.replaceChildren();
    } else {
      this.warningBanner.classList.remove("hidden");
      this.warningBanner.replaceChildren(...notes.map((n) => el("div", {}, [n])));
    }
  }

  private async launchInpaint(): Promise<void> {
    if (this.busy) {
      return;
    }
    if (!this.image) {
      this.showError(new Error("load an image first"));
      return;
    }
    if (!this.savedMask) {
      this.showError(new Error("save a mask before inpainting"));
      return;
    }
    const design = this.promptSelect.value;
    const submission = {
      image_id: this.image.record.image_id,
      mask_id: this.savedMask.maskId,
      ...(design === "__custom__"
        ? { prompt: this.promptText.value }
        : { design_name: design }),
      cfg_scale: Number(this.cfgSlider.value),
      denoise_strength: Number(this.denoiseSlider.value),
      seed: Number(this.seedInput.value),
      n_candidates: Number(this.nCandidatesInput.value),
    };
    this.busy = true;
    this.launchButton.disabled = true;
    this.session = null;
    this.scoreStrip.replaceChildren();
    try {
      const accepted = await this.api.submitInpaint(submission, newIdempotencyKey());
      this.updateWarnings(accepted.warnings);
      this.jobStatus.textContent = `job ${accepted.job_id} queued…`;
      const job = await pollJob(() => this.api.getJob(accepted.job_id), {
        onPoll: (info: JobInfo) => {
          this.jobStatus.textContent = `job ${info.job_id}: ${info.state}`;
        },
      });
      if (job.state === "failed") {
        const detail = job.error ? `${job.error.code}: ${job.error.message}` : "unknown error";
        this.jobStatus.textContent = `job ${job.job_id} failed — ${detail}`;
        return;
      }
      this.jobStatus.textContent = `job ${job.job_id} done`;
      const candidates = await this.api.getCandidates(job.job_id);
      await this.renderGallery(candidates, accepted.session_id);
      this.clearError();
    } catch (error) {
      this.showError(error);
      this.jobStatus.textContent = "";
    } finally {
      this.busy = false;
      this.launchButton.disabled = false;
    }
  }

  private async renderGallery(
    candidates: CandidateListing,
    sessionId: string,
  ): Promise<void> {
    if (!this.image) {
      return;
    }
    const original = el("figure", {}, [
      this.image.element.cloneNode() as HTMLImageElement,
      el("figcaption", {}, ["original"]),
    ]);
    const cells: HTMLElement[] = [original];
    for (const [index, item] of candidates.items.entries()) {
      const img = await b64ToImage(item.png);
      const button = el("button", {
        onclick: () => void this.selectCandidate(sessionId, item.candidate_id),
      }, ["Select"]);
      cells.push(
        el("figure", {}, [
          img,
          el("figcaption", {}, [
            `candidate ${index + 1} (seed ${candidates.seeds[index] ?? "?"}) `,
            button,
          ]),
        ]),
      );
    }
    this.gallery.replaceChildren(...cells);
  }

  private async selectCandidate(sessionId: string, candidateId: string): Promise<void> {
    try {
      const scored = await this.api.selectCandidate(
        sessionId,
        candidateId,
        newIdempotencyKey(),
      );
      this.session = scored;
      const change = formatChange(scored.p_before, scored.p_after);
      this.scoreStrip.replaceChildren(
        el("strong", {}, [
          `p(hotspot): ${formatProbability(scored.p_before)} → ` +
          `${formatProbability(scored.p_after)}`,
        ]),
        el("span", { class: `pill ${change.startsWith("-") ? "good" : ""}` }, [
          ` ${change}`,
        ]),
      );
      await this.refreshReport();
      this.clearError();
    } catch (error) {
      this.showError(error);
    }
  }

  // -----------------------------------------------------------------------
  // report

  private async refreshReport(): Promise<void> {
    try {
      const report = await this.api.latestReport();
      const rows = report.sessions.map((s) =>
        el("tr", {}, [
          el("td", { class: "mono" }, [s.session_id]),
          el("td", { class: "mono" }, [s.image_id]),
          el("td", {}, [formatProbability(s.p_before)]),
          el("td", {}, [formatProbability(s.p_after)]),
          el("td", {}, [formatChange(s.p_before, s.p_after)]),
        ]),
      );
      this.reportBody.replaceChildren(
        el("p", {}, [
          `model ${report.model_identity} — mean relative drop ` +
          `${report.mean_relative_drop_percent.toFixed(2)}%, drop of means ` +
          `${report.drop_of_means_percent.toFixed(2)}% over ` +
          `${report.sessions.length} session(s)`,
        ]),
        el("table", {}, [
          el("thead", {}, [
            el("tr", {}, [
              el("th", {}, ["session"]),
              el("th", {}, ["image"]),
              el("th", {}, ["p before"]),
              el("th", {}, ["p after"]),
              el("th", {}, ["change"]),
            ]),
          ]),
          el("tbody", {}, rows),
        ]),
      );
    } catch (error) {
      if (error instanceof ApiError && error.code === "NO_SCORED_SESSIONS") {
        this.reportBody.replaceChildren(
          el("span", { class: "muted" }, ["No scored sessions yet."]),
        );
        return;
      }
      this.showError(error);
    }
  }

  // -----------------------------------------------------------------------
  // error surface

  private showError(error: unknown): void {
    const text = error instanceof ApiError
      ? `${error.code}: ${error.message}`
      : error instanceof Error
        ? error.message
        : String(error);
    this.errorBanner.textContent = text;
    this.errorBanner.classList.remove("hidden");
  }

  private clearError(): void {
    this.errorBanner.classList.add("hidden");
    this.errorBanner.textContent = "";
  }
}
