/** Shared types mirroring the service's JSON payloads, plus runtime guards.
 *
 * The dashboard never invents data: everything rendered is a projection of
 * these server responses, so the guards reject anything malformed instead
 * of letting half-parsed items into the queue.
 */

export type ReviewStatus = "pending" | "confirmed" | "overridden";

export interface ReviewItem {
  specimen_id: string;
  image_ids: string[];
  probabilities: number[];
  predicted_species: string;
  severity: string | null;
  reason: string;
  has_cam: boolean;
  created_at: string;
  status: ReviewStatus;
  trap_id: string;
}

export interface ReviewImage {
  image_id: string;
  png_base64: string;
}

export interface ReviewMetadata {
  trap_id: string;
  capture_date: string;
  location: [number, number] | null;
  phone: string;
  background: string;
}

export interface ReviewDetail extends ReviewItem {
  images: ReviewImage[];
  cam_png_base64: string | null;
  metadata: ReviewMetadata;
}

export interface DecisionRequest {
  action: "confirm" | "override";
  label?: string;
  reviewer?: string;
  force?: boolean;
}

export interface DecisionResult {
  specimen_id: string;
  status: ReviewStatus;
  review_history_length: number;
  effective_label: { genus: string; species: string } | null;
}

export interface Summary {
  since: string | null;
  specimens: number;
  by_species: Record<string, number>;
  by_trap: Record<string, number>;
  alerts: number;
  alerts_by_severity: Record<string, number>;
}

/** The nine species grouped by genus, in the canonical report order. */
export const SPECIES_BY_GENUS: ReadonlyArray<readonly [string, readonly string[]]> = [
  ["Aedes", ["aegypti", "infirmatus", "taeniorhynchus"]],
  ["Anopheles", ["crucians", "quadrimaculatus", "stephensi"]],
  ["Culex", ["coronator", "nigripalpus", "salinarius"]],
];

export const SPECIES_ORDER: readonly string[] = SPECIES_BY_GENUS.flatMap(
  ([, species]) => [...species],
);

const STATUSES: readonly string[] = ["pending", "confirmed", "overridden"];

export function isReviewItem(x: unknown): x is ReviewItem {
  if (typeof x !== "object" || x === null) return false;
  const o = x as Record<string, unknown>;
  return (
    typeof o.specimen_id === "string" &&
    Array.isArray(o.image_ids) &&
    Array.isArray(o.probabilities) &&
    o.probabilities.every((p) => typeof p === "number") &&
    typeof o.predicted_species === "string" &&
    (o.severity === null || typeof o.severity === "string") &&
    typeof o.reason === "string" &&
    typeof o.has_cam === "boolean" &&
    typeof o.created_at === "string" &&
    typeof o.status === "string" &&
    STATUSES.includes(o.status)
  );
}

export function isReviewDetail(x: unknown): x is ReviewDetail {
  if (!isReviewItem(x)) return false;
  const o = x as unknown as Record<string, unknown>;
  return (
    Array.isArray(o.images) &&
    (o.cam_png_base64 === null || typeof o.cam_png_base64 === "string") &&
    typeof o.metadata === "object" &&
    o.metadata !== null
  );
}
