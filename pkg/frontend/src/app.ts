/** Controller wiring the API client, queue store and renderers together.
 *
 * Submission is optimistic: the item leaves the queue view immediately and
 * is reinstated on any non-2xx outcome. A 409 means another reviewer got
 * there first; the app says so and refreshes from the server. Network
 * failures keep the form contents and offer a retry.
 */

import { ApiClient, ApiError } from "./api.js";
import { QueueStore } from "./queue.js";
import {
  DecisionFormValue,
  renderDetail,
  renderError,
  renderNotice,
  renderQueue,
} from "./render.js";
import { ReviewDetail } from "./types.js";

export interface AppElements {
  queue: HTMLElement;
  detail: HTMLElement;
  notices: HTMLElement;
}

export class DashboardApp {
  readonly store = new QueueStore();
  private detail: ReviewDetail | null = null;
  private camOn = false;
  private pendingForm: Partial<DecisionFormValue> | undefined;

  constructor(
    private readonly els: AppElements,
    private readonly api: ApiClient,
  ) {}

  get currentDetail(): ReviewDetail | null {
    return this.detail;
  }

  async refresh(): Promise<void> {
    try {
      this.store.setItems(await this.api.listPending());
      this.renderQueue();
    } catch (err) {
      renderError(this.els.queue, `Could not load the review queue: ${String(
        err instanceof Error ? err.message : err)}`, () => void this.refresh());
    }
  }

  private renderQueue(): void {
    renderQueue(this.els.queue, this.store.visible(), {
      onSelect: (id) => void this.select(id),
    });
  }

  async select(specimenId: string): Promise<void> {
    try {
      this.detail = await this.api.getReview(specimenId);
      this.camOn = false;
      this.pendingForm = undefined;
      this.renderDetail();
    } catch (err) {
      renderError(this.els.detail, `Could not load specimen ${specimenId}: ${String(
        err instanceof Error ? err.message : err)}`,
        () => void this.select(specimenId));
    }
  }

  private renderDetail(): void {
    if (!this.detail) {
      this.els.detail.textContent = "";
      return;
    }
    renderDetail(
      this.els.detail,
      this.detail,
      { camOn: this.camOn },
      {
        onToggleCam: (on) => {
          this.camOn = on;
          this.renderDetail();
        },
        onSubmit: (form) => void this.submit(form),
      },
      this.pendingForm,
    );
  }

  async submit(form: DecisionFormValue): Promise<void> {
    const detail = this.detail;
    if (!detail) return;
    const id = detail.specimen_id;
    if (!this.store.beginSubmit(id)) return; // one request in flight at a time

    const removed = this.store.optimisticRemove(id);
    this.renderQueue();
    try {
      const result = await this.api.submitDecision(id, {
        action: form.action,
        label: form.label ?? undefined,
        reviewer: form.reviewer,
      });
      this.detail = null;
      this.pendingForm = undefined;
      this.renderDetail();
      renderNotice(this.els.notices,
        `Specimen ${id} ${result.status} by ${form.reviewer || "anonymous"}.`);
    } catch (err) {
      if (removed) this.store.rollback(removed);
      if (err instanceof ApiError && err.status === 409) {
        renderNotice(this.els.notices,
          `Specimen ${id} was already decided elsewhere; refreshing the queue.`);
        this.detail = null;
        this.renderDetail();
        await this.refresh();
      } else {
        // keep the operator's work: re-render the same detail with the form
        this.pendingForm = form;
        this.renderQueue();
        this.renderDetail();
        renderNotice(this.els.notices,
          `Could not submit the decision for ${id}; your entries were kept. ` +
          `(${err instanceof Error ? err.message : String(err)})`);
      }
    } finally {
      this.store.endSubmit();
    }
  }
}
