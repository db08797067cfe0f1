import type { ServiceClient } from "./api.js";
import {
  type ChatViewState,
  retryLastFailed,
  sendMessage,
  startSession,
  submitFeedback,
} from "./state.js";
import type { Language } from "./types.js";

// Small i18n table for chrome strings; conversation content comes from the
// server already in the session language.
const STRINGS: Record<Language, Record<string, string>> = {
  en: {
    title: "Crop Advisory Chat",
    placeholder: "Ask about your grapes or onions...",
    send: "Send",
    slots: "What I know so far",
    retry: "Retry",
    restart: "Start over",
    feedback: "Was this answer helpful?",
    thanks: "Thanks for the feedback!",
  },
  hi: {
    title: "फसल सलाह चैट",
    placeholder: "अंगूर या प्याज के बारे में पूछें...",
    send: "भेजें",
    slots: "अब तक की जानकारी",
    retry: "फिर कोशिश करें",
    restart: "नई बातचीत",
    feedback: "क्या यह उत्तर उपयोगी था?",
    thanks: "प्रतिक्रिया के लिए धन्यवाद!",
  },
};

export class ChatApp {
  state: ChatViewState;

  constructor(
    private root: HTMLElement,
    private client: ServiceClient,
    language: Language = "en",
  ) {
    this.state = { ...initialViewState(language) };
  }

  async start(language?: Language): Promise<void> {
    this.state = await startSession(this.client, language ?? this.state.language);
    this.render();
  }

  async send(text: string): Promise<void> {
    this.state = await sendMessage(this.client, this.state, text);
    this.render();
  }

  async retry(): Promise<void> {
    this.state = await retryLastFailed(this.client, this.state);
    this.render();
  }

  async rate(turnIndex: number, rating: number): Promise<void> {
    this.state = await submitFeedback(
      this.client,
      this.state,
      turnIndex,
      rating,
      rating >= 4,
    );
    this.render();
  }

  private t(key: string): string {
    return STRINGS[this.state.language][key] ?? key;
  }

  render(): void {
    const s = this.state;
    this.root.innerHTML = "";
    this.root.appendChild(this.header());
    if (s.errorBanner) this.root.appendChild(this.banner(s.errorBanner));
    if (s.closedNotice) {
      this.root.appendChild(this.banner("session closed", "closed-notice"));
    }
    this.root.appendChild(this.messageList());
    this.root.appendChild(this.slotPanel());
    this.root.appendChild(this.composer());
  }

  private header(): HTMLElement {
    const header = el("header", { class: "chat-header" });
    header.appendChild(el("h1", { text: this.t("title") }));
    const toggle = el("button", {
      class: "lang-toggle",
      "data-testid": "language-toggle",
      text: this.state.language === "en" ? "हिंदी" : "English",
    });
    toggle.addEventListener("click", () => {
      void this.start(this.state.language === "en" ? "hi" : "en");
    });
    header.appendChild(toggle);
    return header;
  }

  private banner(text: string, testid = "error-banner"): HTMLElement {
    const banner = el("div", { class: "banner", "data-testid": testid, text });
    if (testid === "error-banner") {
      const retry = el("button", {
        class: "retry",
        "data-testid": "retry-button",
        text: this.t("retry"),
      });
      retry.addEventListener("click", () => {
        void (this.state.sessionId ? this.retry() : this.start());
      });
      banner.appendChild(retry);
    }
    return banner;
  }

  private messageList(): HTMLElement {
    const list = el("ul", { class: "messages", "data-testid": "message-list" });
    this.state.messages.forEach((message) => {
      const item = el("li", {
        class: `msg ${message.author} ${message.kind}` + (message.failed ? " failed" : ""),
        "data-testid": `msg-${message.author}`,
      });
      item.appendChild(el("span", { class: "bubble", text: message.text }));
      if (
        message.author === "system" &&
        message.kind === "answer" &&
        message.turnIndex !== undefined
      ) {
        item.appendChild(this.feedbackWidget(message.turnIndex, message.feedbackGiven));
      }
      list.appendChild(item);
    });
    return list;
  }

  private feedbackWidget(turnIndex: number, given?: boolean): HTMLElement {
    const box = el("div", { class: "feedback", "data-testid": "feedback-widget" });
    if (given) {
      box.appendChild(
        el("span", { class: "ack", "data-testid": "feedback-ack", text: `✓ ${this.t("thanks")}` }),
      );
      return box;
    }
    box.appendChild(el("span", { text: this.t("feedback") }));
    for (let rating = 1; rating <= 5; rating += 1) {
      const star = el("button", {
        class: "rate",
        "data-testid": `rate-${rating}`,
        text: "★".repeat(rating),
      });
      star.addEventListener("click", () => {
        void this.rate(turnIndex, rating);
      });
      box.appendChild(star);
    }
    return box;
  }

  private slotPanel(): HTMLElement {
    const panel = el("aside", { class: "slot-panel", "data-testid": "slot-panel" });
    panel.appendChild(el("h2", { text: this.t("slots") }));
    const list = el("ul", {});
    this.state.slotPanel.forEach((row) => {
      const item = el("li", {
        class: row.filled ? "slot filled" : "slot missing",
        "data-testid": "slot-row",
      });
      item.appendChild(el("span", { class: "slot-name", text: row.displayName }));
      item.appendChild(
        el("span", { class: "slot-value", text: row.filled ? row.value ?? "" : "—" }),
      );
      list.appendChild(item);
    });
    panel.appendChild(list);
    return panel;
  }

  private composer(): HTMLElement {
    const form = el("form", { class: "composer" });
    const input = el("input", {
      type: "text",
      placeholder: this.t("placeholder"),
      "data-testid": "message-input",
    }) as HTMLInputElement;
    const send = el("button", {
      type: "submit",
      text: this.t("send"),
      "data-testid": "send-button",
    }) as HTMLButtonElement;
    send.disabled = true;
    const sync = () => {
      send.disabled = this.state.pending || !input.value.trim() || this.state.closedNotice;
    };
    input.addEventListener("input", sync);
    form.addEventListener("submit", (event) => {
      event.preventDefault();
      const text = input.value;
      input.value = "";
      void this.send(text);
    });
    form.appendChild(input);
    form.appendChild(send);
    return form;
  }
}

function initialViewState(language: Language) {
  return {
    sessionId: null,
    messages: [],
    phase: null,
    slotPanel: [],
    language,
    pending: false,
    errorBanner: null,
    closedNotice: false,
    lastFailedText: null,
  } satisfies ChatViewState;
}

function el(
  tag: string,
  attrs: Record<string, string> & { text?: string } = {},
): HTMLElement {
  const node = document.createElement(tag);
  for (const [key, value] of Object.entries(attrs)) {
    if (key === "text") {
      node.textContent = value;
    } else if (key === "class") {
      node.className = value;
    } else {
      node.setAttribute(key, value);
    }
  }
  return node;
}
