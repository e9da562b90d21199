/** Queue state: a pure projection of the server's pending list, plus the
 * in-flight bookkeeping needed for optimistic decision submission. */

import { ReviewItem } from "./types.js";

export interface QueueFilters {
  species?: string;
  severity?: string;
  trap?: string;
  from?: string; // ISO date lower bound (inclusive)
  to?: string;   // ISO date upper bound (inclusive)
}

export class QueueStore {
  private items: ReviewItem[] = [];
  filters: QueueFilters = {};
  private inFlight: string | null = null;

  /** Replace the queue wholesale with the server's response. */
  setItems(items: ReviewItem[]): void {
    this.items = [...items];
  }

  get size(): number {
    return this.items.length;
  }

  /** Filtered view, newest first. */
  visible(): ReviewItem[] {
    const f = this.filters;
    return this.items
      .filter((item) => {
        if (f.species && item.predicted_species !== f.species) return false;
        if (f.severity && item.severity !== f.severity) return false;
        if (f.trap && item.trap_id !== f.trap) return false;
        if (f.from && item.created_at < f.from) return false;
        if (f.to && item.created_at > f.to) return false;
        return true;
      })
      .sort((a, b) => (a.created_at < b.created_at ? 1 : a.created_at > b.created_at ? -1 : 0));
  }

  find(specimenId: string): ReviewItem | undefined {
    return this.items.find((i) => i.specimen_id === specimenId);
  }

  /** Remove an item ahead of the server's confirmation; returns it for rollback. */
  optimisticRemove(specimenId: string): ReviewItem | null {
    const idx = this.items.findIndex((i) => i.specimen_id === specimenId);
    if (idx < 0) return null;
    const [removed] = this.items.splice(idx, 1);
    return removed ?? null;
  }

  /** Reinstate an optimistically removed item after a failed submit. */
  rollback(item: ReviewItem): void {
    if (!this.find(item.specimen_id)) this.items.push(item);
  }

  /** Single-in-flight guard: true when this call wins the submission slot. */
  beginSubmit(specimenId: string): boolean {
    if (this.inFlight !== null) return false;
    this.inFlight = specimenId;
    return true;
  }

  endSubmit(): void {
    this.inFlight = null;
  }

  get submitting(): string | null {
    return this.inFlight;
  }
}
