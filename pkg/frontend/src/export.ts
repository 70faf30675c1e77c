/**
 * Session export: the box layout in the same JSON schema the service and
 * CLI consume, and the score history as CSV.
 */

import type { HistoryEntry } from "./session.js";
import type { BoxesJson } from "./types.js";

/** Serialize boxes exactly as `brandvis score --boxes` expects them. */
export function boxesFileContents(boxes: BoxesJson): string {
  return JSON.stringify(boxes, null, 2) + "\n";
}

function csvField(value: string): string {
  return /[",\n]/.test(value) ? `"${value.replaceAll('"', '""')}"` : value;
}

export function scoreLogCsv(history: readonly HistoryEntry[]): string {
  const lines = ["timestamp,score,source,verified"];
  for (const entry of history) {
    lines.push(
      [
        csvField(new Date(entry.at).toISOString()),
        String(entry.score),
        entry.source,
        entry.verified ? "yes" : "no",
      ].join(","),
    );
  }
  return lines.join("\n") + "\n";
}
