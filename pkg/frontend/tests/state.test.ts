import { describe, expect, it } from "vitest";

import type { ExplainResponse, Phrase } from "../src/api.js";
import { Session } from "../src/state.js";

function phrase(charStart: number, charEnd: number, ei: number): Phrase {
  return {
    span_start: 0,
    span_end: 0,
    phrase: "p",
    y_in: 50,
    y_ex: 50 - ei,
    ei,
    polarity: ei >= 0 ? "enabler" : "disabler",
    char_start: charStart,
    char_end: charEnd,
  };
}

function explanation(score: number, phrases: Phrase[]): ExplainResponse {
  return { score, phrases, absolute_fallback: false };
}

describe("Session", () => {
  it("bumps the version on every text change, not on no-ops", () => {
    const s = new Session();
    expect(s.version).toBe(0);
    s.setText("alpha");
    expect(s.version).toBe(1);
    s.setText("alpha");
    expect(s.version).toBe(1);
    s.setText("alpha beta");
    expect(s.version).toBe(2);
  });

  it("commits a score made for the current version", () => {
    const s = new Session();
    s.setText("alpha");
    const stamp = s.stamp();
    const v = s.commitScore(stamp, 61.5);
    expect(v).not.toBeNull();
    expect(v!.n).toBe(1);
    expect(s.history).toHaveLength(1);
    expect(s.history[0].text).toBe("alpha");
    expect(s.displayed.score).toBe(61.5);
  });

  it("discards responses stamped before a newer edit", () => {
    const s = new Session();
    s.setText("alpha");
    const stale = s.stamp();
    s.setText("alpha beta");
    expect(s.commitScore(stale, 10)).toBeNull();
    expect(s.history).toHaveLength(0);
    expect(s.displayed.score).toBeNull();
  });

  it("clears displayed highlights the moment the text changes", () => {
    const s = new Session();
    s.setText("alpha beta");
    s.commitExplanation(s.stamp(), explanation(70, [phrase(0, 5, 12)]));
    expect(s.displayed.phrases).toHaveLength(1);
    s.setText("alpha");
    expect(s.displayed.phrases).toHaveLength(0);
    expect(s.displayed.score).toBeNull();
  });

  it("keeps history append-only across commits and edits", () => {
    const s = new Session();
    const seen: number[] = [];
    for (let i = 0; i < 4; i++) {
      s.setText(`text ${i}`);
      s.commitScore(s.stamp(), 40 + i);
      seen.push(s.history.length);
    }
    expect(seen).toEqual([1, 2, 3, 4]);
    expect(s.history.map((v) => v.n)).toEqual([1, 2, 3, 4]);
    expect(s.history.map((v) => v.score)).toEqual([40, 41, 42, 43]);
  });

  it("stores explanation phrases on the committed version", () => {
    const s = new Session();
    s.setText("alpha beta gamma");
    const resp = explanation(55, [phrase(0, 5, 8), phrase(11, 16, -9)]);
    const v = s.commitExplanation(s.stamp(), resp);
    expect(v!.phrases).toHaveLength(2);
    expect(s.displayed.phrases).toBe(resp.phrases);
    expect(s.displayed.score).toBe(55);
  });

  it("a plain rescore keeps highlights already shown for the same version", () => {
    const s = new Session();
    s.setText("alpha beta");
    s.commitExplanation(s.stamp(), explanation(70, [phrase(0, 5, 12)]));
    s.commitScore(s.stamp(), 71);
    expect(s.displayed.score).toBe(71);
    expect(s.displayed.phrases).toHaveLength(1);
  });
});
