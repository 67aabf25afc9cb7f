// Wire protocol types and the canonical JSON framing shared with the
// pipeline client: sorted keys, compact separators, raw unicode. Responses
// must serialize byte-identically to the golden frames.

export type Role = "vqa" | "generate" | "tag" | "detect" | "caption";

export const ROLES: Role[] = ["vqa", "generate", "tag", "detect", "caption"];

export const ROUTES: Record<Role, string> = {
  vqa: "/v1/vqa",
  generate: "/v1/generate",
  tag: "/v1/tag",
  detect: "/v1/detect",
  caption: "/v1/caption",
};

export interface WireRequest {
  image_id: string | null;
  image_b64: string | null;
  prompt: string | null;
  tag: string | null;
}

export interface Detection {
  tag: string;
  score: number;
  box: [number, number, number, number] | null;
}

export interface WireResponse {
  text: string | null;
  tags: string[] | null;
  detections: Detection[] | null;
  latency_ms: number;
}

function sortKeys(value: unknown): unknown {
  if (Array.isArray(value)) {
    return value.map(sortKeys);
  }
  if (value !== null && typeof value === "object") {
    const out: Record<string, unknown> = {};
    for (const key of Object.keys(value as Record<string, unknown>).sort()) {
      out[key] = sortKeys((value as Record<string, unknown>)[key]);
    }
    return out;
  }
  return value;
}

export function canonicalJson(value: unknown): string {
  return JSON.stringify(sortKeys(value));
}

export function makeResponse(partial: Partial<WireResponse>): WireResponse {
  return {
    text: null,
    tags: null,
    detections: null,
    latency_ms: 0,
    ...partial,
  };
}

export function parseWireRequest(body: Buffer): WireRequest {
  const parsed: unknown = JSON.parse(body.toString("utf-8"));
  if (parsed === null || typeof parsed !== "object" || Array.isArray(parsed)) {
    throw new Error("request body must be a JSON object");
  }
  const record = parsed as Record<string, unknown>;
  const pick = (key: string): string | null => {
    const value = record[key];
    if (value === undefined || value === null) return null;
    if (typeof value !== "string") throw new Error(`field ${key} must be a string or null`);
    return value;
  };
  return {
    image_id: pick("image_id"),
    image_b64: pick("image_b64"),
    prompt: pick("prompt"),
    tag: pick("tag"),
  };
}
