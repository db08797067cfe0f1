import { HttpClient } from "./api.js";
import { ChatApp } from "./ui.js";

declare global {
  interface Window {
    AGRIASSIST_BASE_URL?: string;
  }
}

const baseUrl = window.AGRIASSIST_BASE_URL ?? "http://localhost:8080";
const root = document.getElementById("app");
if (!root) {
  throw new Error("missing #app container");
}
const app = new ChatApp(root, new HttpClient(baseUrl));
void app.start();
