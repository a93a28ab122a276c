/** Wires the what-if loop: editor, debounced rescoring, highlights,
 * history with sparkline, and side-by-side version comparison.
 */

import { ApiClient, ApiError, ModelInfo } from "./api.js";
import { compareVersions } from "./diff.js";
import { gaugeSvg, sparklineSvg } from "./gauge.js";
import { render as renderHighlights } from "./highlight.js";
import { Session } from "./state.js";

export const DEBOUNCE_MS = 800;

const TEMPLATE = `
<div class="banner hidden" data-el="banner">
  <span data-el="banner-text"></span>
  <button type="button" data-el="banner-retry">retry</button>
</div>
<div class="toolbar">
  <select data-el="model"></select>
  <button type="button" data-el="rescore">Rescore</button>
  <button type="button" data-el="explain">Explain</button>
</div>
<div class="validation hidden" data-el="validation"></div>
<div class="workspace">
  <textarea data-el="editor" rows="14" spellcheck="false"
    placeholder="Paste a response to score"></textarea>
  <div class="panel">
    <div data-el="gauge"></div>
    <div data-el="sparkline"></div>
    <div class="highlights" data-el="highlights"></div>
  </div>
</div>
<div class="history">
  <ol data-el="history"></ol>
  <div class="compare">
    <select data-el="compare-a"></select>
    <select data-el="compare-b"></select>
    <button type="button" data-el="compare">Compare</button>
  </div>
  <div class="compare-panel hidden" data-el="compare-panel"></div>
</div>
`;

export interface AppHandles {
  session: Session;
  rescore(): Promise<void>;
  explain(): Promise<void>;
  refresh(): void;
  elements: Record<string, HTMLElement>;
}

function grab(root: HTMLElement): Record<string, HTMLElement> {
  const out: Record<string, HTMLElement> = {};
  root.querySelectorAll<HTMLElement>("[data-el]").forEach((el) => {
    out[el.dataset.el!] = el;
  });
  return out;
}

export function mountApp(root: HTMLElement, client: ApiClient): AppHandles {
  root.innerHTML = TEMPLATE;
  const els = grab(root);
  const editor = els["editor"] as HTMLTextAreaElement;
  const modelSelect = els["model"] as HTMLSelectElement;
  const session = new Session();

  let models: ModelInfo[] = [];
  let inflight: AbortController | null = null;
  let debounce: ReturnType<typeof setTimeout> | undefined;
  let retryAction: (() => void) | null = null;

  function showBanner(message: string, retry: (() => void) | null): void {
    els["banner-text"].textContent = message;
    retryAction = retry;
    els["banner"].classList.remove("hidden");
  }

  function clearBanner(): void {
    els["banner"].classList.add("hidden");
    retryAction = null;
  }

  function showValidation(detail: unknown): void {
    els["validation"].textContent =
      typeof detail === "string" ? detail : JSON.stringify(detail);
    els["validation"].classList.remove("hidden");
  }

  function clearValidation(): void {
    els["validation"].classList.add("hidden");
    els["validation"].textContent = "";
  }

  function handleFailure(err: unknown, retry: () => void): void {
    if (err instanceof DOMException && err.name === "AbortError") return;
    if (err instanceof ApiError && err.status === 422) {
      showValidation(err.detail);
      return;
    }
    const message =
      err instanceof ApiError && err.status === 0
        ? "scoring service unreachable"
        : `service error: ${err instanceof Error ? err.message : String(err)}`;
    showBanner(message, retry);
  }

  function refresh(): void {
    els["gauge"].innerHTML = gaugeSvg(session.displayed.score);
    els["sparkline"].innerHTML = sparklineSvg(session.history.map((v) => v.score));
    renderHighlights(els["highlights"], session.text, session.displayed.phrases);

    const list = els["history"];
    list.textContent = "";
    for (const v of session.history) {
      const li = document.createElement("li");
      li.textContent = `v${v.n}  ${v.score.toFixed(1)}`;
      list.append(li);
    }
    for (const sel of [els["compare-a"], els["compare-b"]] as HTMLSelectElement[]) {
      const prev = sel.value;
      sel.textContent = "";
      for (const v of session.history) {
        const opt = document.createElement("option");
        opt.value = String(v.n);
        opt.textContent = `v${v.n}`;
        sel.append(opt);
      }
      if ([...sel.options].some((o) => o.value === prev)) sel.value = prev;
    }
  }

  function begin(): [number, AbortSignal] {
    inflight?.abort();
    inflight = new AbortController();
    return [session.stamp(), inflight.signal];
  }

  async function rescore(): Promise<void> {
    if (!session.text.trim()) return;
    const [stamp, signal] = begin();
    clearValidation();
    try {
      const resp = await client.score(
        { model_id: modelSelect.value, response_text: session.text },
        signal,
      );
      if (session.commitScore(stamp, resp.score)) {
        clearBanner();
        refresh();
      }
    } catch (err) {
      handleFailure(err, () => void rescore());
    }
  }

  async function explain(): Promise<void> {
    if (!session.text.trim()) return;
    const [stamp, signal] = begin();
    clearValidation();
    try {
      const resp = await client.explain(
        { model_id: modelSelect.value, response_text: session.text },
        signal,
      );
      if (session.commitExplanation(stamp, resp)) {
        clearBanner();
        refresh();
      }
    } catch (err) {
      handleFailure(err, () => void explain());
    }
  }

  function renderComparison(): void {
    const a = Number((els["compare-a"] as HTMLSelectElement).value);
    const b = Number((els["compare-b"] as HTMLSelectElement).value);
    const left = session.history.find((v) => v.n === a);
    const right = session.history.find((v) => v.n === b);
    if (!left || !right) return;
    const cmp = compareVersions(left, right);
    const panel = els["compare-panel"];
    panel.classList.remove("hidden");
    panel.textContent = "";

    const delta = document.createElement("div");
    delta.className = "delta";
    delta.textContent = `Δ ${cmp.delta >= 0 ? "+" : ""}${cmp.delta.toFixed(1)}`;
    panel.append(delta);

    const diffBox = document.createElement("div");
    diffBox.className = "diff";
    for (const row of cmp.rows) {
      const span = document.createElement("span");
      span.className = row.kind;
      span.textContent = row.text + " ";
      diffBox.append(span);
    }
    panel.append(diffBox);

    for (const [cls, phrases] of [
      ["left-phrases", cmp.leftPhrases],
      ["right-phrases", cmp.rightPhrases],
    ] as const) {
      const col = document.createElement("ul");
      col.className = cls;
      for (const p of phrases) {
        const li = document.createElement("li");
        li.textContent = `${p.ei >= 0 ? "+" : ""}${p.ei.toFixed(1)} ${p.phrase}`;
        col.append(li);
      }
      panel.append(col);
    }
  }

  async function loadModels(): Promise<void> {
    try {
      models = await client.models();
      modelSelect.textContent = "";
      for (const m of models) {
        const opt = document.createElement("option");
        opt.value = m.model_id;
        opt.textContent = `${m.model_id} (${m.kind})`;
        modelSelect.append(opt);
      }
      const preferred = models.find((m) => m.explainable) ?? models[0];
      if (preferred) modelSelect.value = preferred.model_id;
      clearBanner();
    } catch (err) {
      handleFailure(err, () => void loadModels());
    }
  }

  editor.addEventListener("input", () => {
    inflight?.abort();
    session.setText(editor.value);
    refresh();
    clearTimeout(debounce);
    debounce = setTimeout(() => void rescore(), DEBOUNCE_MS);
  });
  els["rescore"].addEventListener("click", () => {
    clearTimeout(debounce);
    void rescore();
  });
  els["explain"].addEventListener("click", () => {
    clearTimeout(debounce);
    void explain();
  });
  els["compare"].addEventListener("click", renderComparison);
  els["banner-retry"].addEventListener("click", () => {
    const action = retryAction;
    clearBanner();
    action?.();
  });

  void loadModels();
  refresh();
  return { session, rescore, explain, refresh, elements: els };
}
