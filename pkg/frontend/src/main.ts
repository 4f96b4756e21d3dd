// Browser entry point: pick the service URL from ?service=, then boot.

import { bootstrap } from "./app.js";

const params = new URLSearchParams(window.location.search);
const base = (params.get("service") ?? "http://127.0.0.1:8077").replace(/\/$/, "");
bootstrap(document, base);
