/** Browser bootstrap: configuration comes from query parameters or a
 * window-level object injected by the host page.
 *
 *   index.html?api=http://127.0.0.1:8000&token=...
 */

import { ApiClient } from "./api.js";
import { DashboardApp } from "./app.js";

declare global {
  interface Window {
    VECTORWATCH_CONFIG?: { baseUrl?: string; token?: string };
  }
}

function config(): { baseUrl: string; token: string | null } {
  const params = new URLSearchParams(window.location.search);
  const injected = window.VECTORWATCH_CONFIG ?? {};
  return {
    baseUrl: params.get("api") ?? injected.baseUrl ?? "http://127.0.0.1:8000",
    token: params.get("token") ?? injected.token ?? null,
  };
}

function mount(): void {
  const queue = document.getElementById("queue");
  const detail = document.getElementById("detail");
  const notices = document.getElementById("notices");
  if (!queue || !detail || !notices) {
    throw new Error("dashboard markup is missing #queue/#detail/#notices");
  }
  const app = new DashboardApp({ queue, detail, notices }, new ApiClient(config()));
  void app.refresh();
  const refreshButton = document.getElementById("refresh");
  refreshButton?.addEventListener("click", () => void app.refresh());
}

mount();
