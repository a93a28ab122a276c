/** Session state: the editor buffer, a version counter guarding staleness,
 * and an append-only history of scored versions.
 *
 * Every text change bumps the version; responses are committed with the
 * version stamped when the request left, and a mismatch means the user has
 * typed since, so the response is dropped.  Displayed highlights therefore
 * always belong to the text on screen.
 */

import type { ExplainResponse, Phrase } from "./api.js";

export interface Version {
  /** 1-based position in the history. */
  n: number;
  text: string;
  score: number;
  phrases: Phrase[];
}

export interface Displayed {
  score: number | null;
  phrases: Phrase[];
}

export class Session {
  private _text = "";
  private _version = 0;
  private readonly _history: Version[] = [];
  private _displayed: Displayed = { score: null, phrases: [] };

  get text(): string {
    return this._text;
  }

  get version(): number {
    return this._version;
  }

  get history(): readonly Version[] {
    return this._history;
  }

  /** Score and highlights for the text currently on screen. */
  get displayed(): Displayed {
    return this._displayed;
  }

  /** Mirror an editor change; stale score/highlights vanish immediately. */
  setText(text: string): void {
    if (text === this._text) return;
    this._text = text;
    this._version += 1;
    this._displayed = { score: null, phrases: [] };
  }

  /** Stamp an outgoing request with the version it was made for. */
  stamp(): number {
    return this._version;
  }

  private append(score: number, phrases: Phrase[]): Version {
    const v: Version = {
      n: this._history.length + 1,
      text: this._text,
      score,
      phrases,
    };
    this._history.push(v);
    return v;
  }

  /** Returns null (and changes nothing) when the response is stale. */
  commitScore(stamp: number, score: number): Version | null {
    if (stamp !== this._version) return null;
    this._displayed = { score, phrases: this._displayed.phrases };
    return this.append(score, []);
  }

  commitExplanation(stamp: number, resp: ExplainResponse): Version | null {
    if (stamp !== this._version) return null;
    this._displayed = { score: resp.score, phrases: resp.phrases };
    return this.append(resp.score, resp.phrases);
  }
}
