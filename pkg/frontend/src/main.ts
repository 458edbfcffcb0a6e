import { StudioApp } from "./app.js";

const root = document.getElementById("app");
if (root === null) throw new Error("missing #app mount point");

// same-origin by default; set window.CHARSTUDIO_API to point elsewhere
const baseUrl = (window as unknown as { CHARSTUDIO_API?: string }).CHARSTUDIO_API ?? "";
new StudioApp(root, baseUrl).start().catch((err) => {
  root.textContent = `failed to reach the studio service: ${err}`;
});
