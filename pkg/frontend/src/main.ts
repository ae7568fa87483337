import { Client } from "./api.js";
import { createApp } from "./app.js";

const root = document.getElementById("app");
if (root !== null) {
  createApp(root, new Client());
}
