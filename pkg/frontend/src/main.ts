import { ServiceClient } from "./api";
import { fitImage, toContainer, toNormalized, type DisplayGeometry } from "./normalize";
import { pollUntilDone } from "./polling";
import { UiSession } from "./session";
import { R_SLIDER, clampFraction, snapR } from "./slider";

const SERVICE_URL =
  new URLSearchParams(location.search).get("service") ?? "http://127.0.0.1:8000";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node as T;
}

const canvas = el<HTMLCanvasElement>("canvas");
const fileInput = el<HTMLInputElement>("file");
const runButton = el<HTMLButtonElement>("run");
const statusLabel = el<HTMLSpanElement>("status");
const rSlider = el<HTMLInputElement>("r");
const rValue = el<HTMLSpanElement>("r-value");
const splitSlider = el<HTMLInputElement>("split");
const overlayToggle = el<HTMLInputElement>("overlay");

rSlider.min = String(R_SLIDER.min);
rSlider.max = String(R_SLIDER.max);
rSlider.step = String(R_SLIDER.step);

const client = new ServiceClient(SERVICE_URL);

let session: UiSession | null = null;
let original: HTMLImageElement | null = null;
let result: HTMLImageElement | null = null;
let overlay: HTMLImageElement | null = null;
let geometry: DisplayGeometry | null = null;

function setStatus(text: string) {
  statusLabel.textContent = text;
}

function render() {
  const ctx = canvas.getContext("2d");
  if (!ctx || !original || !geometry) return;
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  const { offset, displayed } = geometry;
  ctx.drawImage(original, offset.x, offset.y, displayed.width, displayed.height);
  if (result) {
    const split = clampFraction(Number(splitSlider.value));
    const cut = offset.x + displayed.width * split;
    ctx.save();
    ctx.beginPath();
    ctx.rect(cut, offset.y, offset.x + displayed.width - cut, displayed.height);
    ctx.clip();
    ctx.drawImage(result, offset.x, offset.y, displayed.width, displayed.height);
    ctx.restore();
    ctx.strokeStyle = "white";
    ctx.beginPath();
    ctx.moveTo(cut, offset.y);
    ctx.lineTo(cut, offset.y + displayed.height);
    ctx.stroke();
  }
  if (overlay && overlayToggle.checked) {
    ctx.globalAlpha = 0.4;
    ctx.drawImage(overlay, offset.x, offset.y, displayed.width, displayed.height);
    ctx.globalAlpha = 1;
  }
  for (const marker of session?.markers ?? []) {
    const p = toContainer(marker, geometry);
    ctx.fillStyle = marker.color;
    ctx.beginPath();
    ctx.arc(p.x, p.y, 5, 0, 2 * Math.PI);
    ctx.fill();
  }
}

async function loadBase64Png(b64: string): Promise<HTMLImageElement> {
  const img = new Image();
  img.src = `data:image/png;base64,${b64}`;
  await img.decode();
  return img;
}

fileInput.addEventListener("change", async () => {
  const file = fileInput.files?.[0];
  if (!file) return;
  const sessionId = await client.createSession(file);
  session = new UiSession(client, sessionId);
  original = await loadBase64Png(
    btoa(String.fromCharCode(...new Uint8Array(await file.arrayBuffer()))),
  );
  result = null;
  overlay = null;
  geometry = fitImage(
    { width: canvas.width, height: canvas.height },
    { width: original.naturalWidth, height: original.naturalHeight },
  );
  setStatus("ready: click the object to remove");
  render();
});

canvas.addEventListener("contextmenu", (e) => e.preventDefault());
canvas.addEventListener("mousedown", async (event) => {
  if (!session || !geometry) return;
  const rect = canvas.getBoundingClientRect();
  const point = { x: event.clientX - rect.left, y: event.clientY - rect.top };
  const normalized = toNormalized(point, geometry);
  if (!normalized) return; // letterbox click
  const polarity = event.button === 2 || event.shiftKey ? "-" : "+";
  await session.placeClick(normalized.u, normalized.v, polarity);
  if (session.busy) {
    setStatus(`busy: ${session.bufferedCount} click(s) queued`);
  }
  render();
});

rSlider.addEventListener("input", () => {
  const r = snapR(Number(rSlider.value));
  rValue.textContent = r.toFixed(2);
  if (session) session.params.r = r;
});

splitSlider.addEventListener("input", render);
overlayToggle.addEventListener("change", render);

runButton.addEventListener("click", async () => {
  if (!session) return;
  runButton.disabled = true;
  try {
    await session.startRemoval();
    const final = await pollUntilDone(client, session.sessionId, {
      onProgress: (res) => {
        const p = res.progress;
        if (p?.stage) setStatus(`${p.stage} ${p.step}/${p.total}`);
      },
    });
    await session.finishJob(final.status);
    if (final.status === "FAILED") {
      setStatus(`failed: ${final.detail ?? "unknown error"}`);
      return;
    }
    if (final.flags?.includes("NO_OBJECT_FOUND")) {
      setStatus("no object found: add more positive clicks and retry");
    } else {
      setStatus(`done in ${final.duration?.toFixed(2)}s`);
    }
    if (final.image) result = await loadBase64Png(final.image);
    if (final.m_ob) overlay = await loadBase64Png(final.m_ob);
    render();
  } finally {
    runButton.disabled = false;
  }
});
