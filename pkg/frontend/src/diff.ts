/** Word-level diff between two history versions, plus their score delta. */

import type { Phrase } from "./api.js";
import type { Version } from "./state.js";

export interface DiffRow {
  kind: "same" | "removed" | "added";
  text: string;
}

export interface Comparison {
  delta: number;
  rows: DiffRow[];
  leftPhrases: Phrase[];
  rightPhrases: Phrase[];
}

function words(text: string): string[] {
  return text.split(/\s+/).filter((w) => w.length > 0);
}

/** Longest-common-subsequence walk over whitespace-separated words. */
export function tokenDiff(a: string, b: string): DiffRow[] {
  const at = words(a);
  const bt = words(b);
  const n = at.length;
  const m = bt.length;
  const lcs: Uint32Array[] = [];
  for (let i = 0; i <= n; i++) lcs.push(new Uint32Array(m + 1));
  for (let i = n - 1; i >= 0; i--) {
    for (let j = m - 1; j >= 0; j--) {
      lcs[i][j] =
        at[i] === bt[j]
          ? lcs[i + 1][j + 1] + 1
          : Math.max(lcs[i + 1][j], lcs[i][j + 1]);
    }
  }
  const rows: DiffRow[] = [];
  const push = (kind: DiffRow["kind"], word: string) => {
    const last = rows[rows.length - 1];
    if (last && last.kind === kind) last.text += ` ${word}`;
    else rows.push({ kind, text: word });
  };
  let i = 0;
  let j = 0;
  while (i < n && j < m) {
    if (at[i] === bt[j]) {
      push("same", at[i]);
      i++;
      j++;
    } else if (lcs[i + 1][j] >= lcs[i][j + 1]) {
      push("removed", at[i]);
      i++;
    } else {
      push("added", bt[j]);
      j++;
    }
  }
  for (; i < n; i++) push("removed", at[i]);
  for (; j < m; j++) push("added", bt[j]);
  return rows;
}

export function compareVersions(left: Version, right: Version): Comparison {
  return {
    delta: right.score - left.score,
    rows: left.text === right.text ? [] : tokenDiff(left.text, right.text),
    leftPhrases: left.phrases,
    rightPhrases: right.phrases,
  };
}
