import { ApiClient } from "./api.js";
import { ConsoleApp } from "./app.js";

function apiBase(): string {
  const override = new URLSearchParams(window.location.search).get("api");
  return override ?? window.location.origin;
}

const root = document.getElementById("app");
if (!root) throw new Error("missing #app mount point");
new ConsoleApp(root, new ApiClient(apiBase())).mount();
