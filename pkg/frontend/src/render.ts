/** DOM rendering. Every function builds from server data alone; the only
 * client-side state is the CAM toggle and the decision form in progress. */

import { ReviewDetail, ReviewItem, SPECIES_BY_GENUS, SPECIES_ORDER } from "./types.js";

export interface QueueHandlers {
  onSelect: (specimenId: string) => void;
}

export interface DetailState {
  camOn: boolean;
}

export interface DecisionFormValue {
  action: "confirm" | "override";
  label: string | null;
  reviewer: string;
}

export interface DetailHandlers {
  onToggleCam: (on: boolean) => void;
  onSubmit: (form: DecisionFormValue) => void;
}

function el<K extends keyof HTMLElementTagNameMap>(
  doc: Document,
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = doc.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

export function pngDataUri(base64: string): string {
  return `data:image/png;base64,${base64}`;
}

export function renderQueue(
  container: HTMLElement,
  items: ReviewItem[],
  handlers: QueueHandlers,
): void {
  const doc = container.ownerDocument;
  container.textContent = "";
  const list = el(doc, "ul", "queue-list");
  list.setAttribute("data-testid", "queue-list");
  if (items.length === 0) {
    container.appendChild(el(doc, "p", "queue-empty", "No specimens awaiting review."));
    return;
  }
  for (const item of items) {
    const row = el(doc, "li", "queue-item");
    row.setAttribute("data-specimen", item.specimen_id);
    const button = el(doc, "button", "queue-open");
    button.appendChild(el(doc, "span", "queue-species", item.predicted_species));
    button.appendChild(el(doc, "span", "queue-id", item.specimen_id));
    if (item.severity === "critical") {
      button.appendChild(el(doc, "span", "badge badge-critical", "critical"));
    } else if (item.severity) {
      button.appendChild(el(doc, "span", `badge badge-${item.severity}`, item.severity));
    }
    button.appendChild(el(doc, "span", "queue-reason", item.reason));
    button.appendChild(el(doc, "span", "queue-date", item.created_at));
    button.addEventListener("click", () => handlers.onSelect(item.specimen_id));
    row.appendChild(button);
    list.appendChild(row);
  }
  container.appendChild(list);
}

function renderProbabilities(doc: Document, detail: ReviewDetail): HTMLElement {
  const wrap = el(doc, "div", "prob-panel");
  wrap.setAttribute("data-testid", "probabilities");
  let sum = 0;
  const rows = detail.probabilities.map((p, i) => ({
    label: SPECIES_ORDER[i] ?? `class ${i}`,
    p,
  }));
  for (const { label, p } of rows) {
    sum += p;
    const row = el(doc, "div", "prob-row");
    row.setAttribute("data-species", label);
    row.appendChild(el(doc, "span", "prob-label", label));
    const track = el(doc, "div", "prob-track");
    const bar = el(doc, "div", "prob-bar");
    bar.style.width = `${(p * 100).toFixed(1)}%`;
    track.appendChild(bar);
    row.appendChild(track);
    row.appendChild(el(doc, "span", "prob-value", p.toFixed(3)));
    wrap.appendChild(row);
  }
  const sumRow = el(doc, "div", "prob-sum", `sum ${sum.toFixed(3)}`);
  sumRow.setAttribute("data-testid", "prob-sum");
  wrap.appendChild(sumRow);
  return wrap;
}

function renderMetadata(doc: Document, detail: ReviewDetail): HTMLElement {
  const meta = detail.metadata;
  const panel = el(doc, "dl", "meta-panel");
  const pairs: Array<[string, string]> = [
    ["specimen", detail.specimen_id],
    ["trap", meta.trap_id || "—"],
    ["captured", meta.capture_date || "—"],
    ["location", meta.location ? meta.location.join(", ") : "—"],
    ["phone", meta.phone || "—"],
    ["background", meta.background || "—"],
    ["queued because", detail.reason],
  ];
  for (const [k, v] of pairs) {
    panel.appendChild(el(doc, "dt", undefined, k));
    panel.appendChild(el(doc, "dd", undefined, v));
  }
  return panel;
}

export function renderDecisionForm(
  doc: Document,
  handlers: DetailHandlers,
  initial?: Partial<DecisionFormValue>,
): HTMLElement {
  const form = el(doc, "form", "decision-form");
  form.setAttribute("data-testid", "decision-form");

  const radio = (value: "confirm" | "override", text: string) => {
    const input = el(doc, "input") as HTMLInputElement;
    input.type = "radio";
    input.name = "action";
    input.value = value;
    const label = el(doc, "label", `action-${value}`);
    label.appendChild(input);
    label.appendChild(doc.createTextNode(` ${text}`));
    return { input, label };
  };
  const { input: confirmRadio, label: confirmLabel } =
    radio("confirm", "Confirm classification");
  const { input: overrideRadio, label: overrideLabel } =
    radio("override", "Override species");

  const picker = el(doc, "select", "species-picker") as HTMLSelectElement;
  picker.setAttribute("data-testid", "species-picker");
  const placeholder = el(doc, "option", undefined, "choose species…") as HTMLOptionElement;
  placeholder.value = "";
  picker.appendChild(placeholder);
  for (const [genus, species] of SPECIES_BY_GENUS) {
    const group = doc.createElement("optgroup");
    group.label = genus;
    for (const s of species) {
      const opt = el(doc, "option", undefined, s) as HTMLOptionElement;
      opt.value = s;
      group.appendChild(opt);
    }
    picker.appendChild(group);
  }

  const reviewer = el(doc, "input", "reviewer-input") as HTMLInputElement;
  reviewer.type = "text";
  reviewer.placeholder = "reviewer name";
  reviewer.setAttribute("data-testid", "reviewer");

  const submit = el(doc, "button", "submit-decision", "Submit decision") as HTMLButtonElement;
  submit.type = "submit";
  submit.setAttribute("data-testid", "submit-decision");

  if (initial?.action === "override") overrideRadio.checked = true;
  else confirmRadio.checked = true;
  if (initial?.label) picker.value = initial.label;
  if (initial?.reviewer) reviewer.value = initial.reviewer;

  const sync = () => {
    picker.disabled = !overrideRadio.checked;
    // an override without a chosen species is unsubmittable
    submit.disabled = overrideRadio.checked && picker.value === "";
  };
  confirmRadio.addEventListener("change", sync);
  overrideRadio.addEventListener("change", sync);
  picker.addEventListener("change", sync);
  sync();

  form.addEventListener("submit", (ev) => {
    ev.preventDefault();
    if (submit.disabled) return;
    handlers.onSubmit({
      action: overrideRadio.checked ? "override" : "confirm",
      label: overrideRadio.checked ? picker.value : null,
      reviewer: reviewer.value,
    });
  });

  for (const node of [confirmLabel, overrideLabel, picker, reviewer, submit]) {
    form.appendChild(node);
  }
  return form;
}

export function renderDetail(
  container: HTMLElement,
  detail: ReviewDetail,
  state: DetailState,
  handlers: DetailHandlers,
  formValue?: Partial<DecisionFormValue>,
): void {
  const doc = container.ownerDocument;
  container.textContent = "";
  const panel = el(doc, "section", "detail-panel");
  panel.setAttribute("data-specimen", detail.specimen_id);

  const header = el(doc, "header", "detail-header");
  header.appendChild(el(doc, "h2", undefined, detail.predicted_species));
  if (detail.severity === "critical") {
    header.appendChild(el(doc, "span", "badge badge-critical", "critical"));
  } else if (detail.severity) {
    header.appendChild(el(doc, "span", `badge badge-${detail.severity}`, detail.severity));
  }
  panel.appendChild(header);

  const original = detail.images[0];
  const img = el(doc, "img", "specimen-image") as HTMLImageElement;
  img.setAttribute("data-testid", "specimen-image");
  const camAvailable = detail.cam_png_base64 !== null;
  const showCam = state.camOn && camAvailable;
  if (original) {
    img.src = showCam && detail.cam_png_base64
      ? pngDataUri(detail.cam_png_base64)
      : pngDataUri(original.png_base64);
    img.alt = showCam
      ? `activation overlay for ${detail.specimen_id}`
      : `specimen ${detail.specimen_id}`;
  }
  panel.appendChild(img);

  const toggle = el(doc, "button", "cam-toggle") as HTMLButtonElement;
  toggle.setAttribute("data-testid", "cam-toggle");
  toggle.textContent = showCam ? "Show original" : "Show activation overlay";
  toggle.disabled = !camAvailable;
  toggle.addEventListener("click", () => handlers.onToggleCam(!state.camOn));
  panel.appendChild(toggle);
  if (!camAvailable) {
    panel.appendChild(el(doc, "p", "cam-missing",
      "No activation overlay was generated for this specimen."));
  }

  panel.appendChild(renderProbabilities(doc, detail));
  panel.appendChild(renderMetadata(doc, detail));
  panel.appendChild(renderDecisionForm(doc, handlers, formValue));
  container.appendChild(panel);
}

export function renderError(
  container: HTMLElement,
  message: string,
  onRetry: () => void,
): void {
  const doc = container.ownerDocument;
  container.textContent = "";
  const box = el(doc, "div", "error-box");
  box.setAttribute("data-testid", "error-box");
  box.appendChild(el(doc, "p", "error-message", message));
  const retry = el(doc, "button", "retry-button", "Retry") as HTMLButtonElement;
  retry.setAttribute("data-testid", "retry");
  retry.addEventListener("click", onRetry);
  box.appendChild(retry);
  container.appendChild(box);
}

export function renderNotice(container: HTMLElement, message: string): void {
  const doc = container.ownerDocument;
  const note = el(doc, "div", "toast", message);
  note.setAttribute("data-testid", "toast");
  container.appendChild(note);
}
