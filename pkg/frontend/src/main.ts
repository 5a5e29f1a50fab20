import { ApiClient } from "./api.js";
import { EditorApp } from "./ui.js";

window.addEventListener("DOMContentLoaded", () => {
  const root = document.getElementById("app");
  if (!root) throw new Error("missing #app container");
  const app = new EditorApp(new ApiClient(), root);
  void app.start();
});
