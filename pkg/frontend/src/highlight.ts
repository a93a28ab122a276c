/** Turn service phrase offsets into DOM highlights.
 *
 * The service reports character ranges into the exact text it was sent; the
 * client slices at those offsets and never re-tokenizes, so what is marked
 * on screen is byte-for-byte what the model saw.
 */

import type { Phrase } from "./api.js";

export interface Segment {
  text: string;
  cls: "" | "enabler" | "disabler";
  phrase?: Phrase;
}

export function segment(text: string, phrases: Phrase[]): Segment[] {
  const sorted = [...phrases].sort((a, b) => a.char_start - b.char_start);
  const out: Segment[] = [];
  let pos = 0;
  for (const p of sorted) {
    // Service spans are disjoint and in range; skip anything that is not,
    // rather than invent boundaries the payload never contained.
    if (p.char_start < pos || p.char_end > text.length || p.char_end <= p.char_start) {
      continue;
    }
    if (p.char_start > pos) out.push({ text: text.slice(pos, p.char_start), cls: "" });
    out.push({ text: text.slice(p.char_start, p.char_end), cls: p.polarity, phrase: p });
    pos = p.char_end;
  }
  if (pos < text.length) out.push({ text: text.slice(pos), cls: "" });
  return out;
}

export function render(container: HTMLElement, text: string, phrases: Phrase[]): void {
  container.textContent = "";
  for (const seg of segment(text, phrases)) {
    if (seg.cls === "") {
      container.append(document.createTextNode(seg.text));
    } else {
      const mark = document.createElement("mark");
      mark.className = seg.cls;
      mark.textContent = seg.text;
      mark.dataset.start = String(seg.phrase!.char_start);
      mark.dataset.end = String(seg.phrase!.char_end);
      mark.title = `${seg.phrase!.ei >= 0 ? "+" : ""}${seg.phrase!.ei.toFixed(1)}`;
      container.append(mark);
    }
  }
}
