import init, { capacity_curve, temperature_weights, mask_evolution } from "./pkg/prunepack_demo.js";

const $ = (id) => document.getElementById(id);
const num = (id) => Number($(id).value);

// Owner 0 is free, 1 shared, 2.. the adapted pairs in order.
const PALETTE = ["#f2f2f2", "#7a7a7a", "#e6194b", "#3cb44b", "#4363d8", "#f58231", "#911eb4",
  "#46f0f0", "#f032e6", "#bcf60c", "#008080", "#9a6324", "#800000", "#000075"];
const color = (owner) => PALETTE[owner] ?? `hsl(${(owner * 47) % 360} 60% 50%)`;

function report(fn) {
  try {
    $("error").textContent = "";
    fn();
  } catch (e) {
    $("error").textContent = String(e.message ?? e);
  }
}

function bars(canvas, values, labels, colors) {
  const ctx = canvas.getContext("2d");
  const { width, height } = canvas;
  ctx.clearRect(0, 0, width, height);
  const max = Math.max(...values, 1e-9);
  const w = width / values.length;
  ctx.font = "12px system-ui";
  values.forEach((v, i) => {
    const h = (v / max) * (height - 40);
    ctx.fillStyle = colors[i];
    ctx.fillRect(i * w + 4, height - 20 - h, w - 8, h);
    ctx.fillStyle = "#222";
    ctx.fillText(labels[i], i * w + 6, height - 6);
    ctx.fillText((100 * v).toFixed(2) + "%", i * w + 6, height - 24 - h);
  });
}

function drawCapacity() {
  const n = num("cap-n");
  const shares = capacity_curve(num("cap-base"), num("cap-pair"), n, $("cap-eq").checked, $("cap-last").checked);
  const labels = [...Array(n).keys()].map((k) => `pair ${k + 1}`).concat("free");
  const colors = labels.map((_, k) => (k < n ? color(k + 2) : color(0)));
  bars($("cap-canvas"), Array.from(shares), labels, colors.map((c, k) => (k < n ? c : "#bbb")));
  $("cap-text").textContent = `shared ${(100 * (1 - num("cap-base"))).toFixed(2)}% of prunable weights`;
}

function drawTemperature() {
  const sizes = $("tmp-sizes").value.split(",").map((s) => Number(s.trim())).filter((x) => x > 0);
  const t = num("tmp-t");
  $("tmp-t-val").textContent = t;
  const w = temperature_weights(Uint32Array.from(sizes), t);
  bars($("tmp-canvas"), Array.from(w), sizes.map((s) => String(s)), sizes.map((_, k) => color(k + 2)));
}

let frames = null;

function computeMask() {
  const rows = num("mask-rows"), cols = num("mask-cols"), pairs = num("mask-n");
  frames = { rows, cols, pairs, data: mask_evolution(rows, cols, num("mask-base"), num("mask-pair"), pairs, num("mask-seed")) };
  const slider = $("mask-frame");
  slider.max = pairs + 1;
  slider.value = Math.min(Number(slider.value), pairs + 1);
  $("mask-legend").innerHTML = ["free", "shared", ...[...Array(pairs).keys()].map((k) => `pair ${k + 1}`)]
    .map((name, o) => `<span><i style="background:${color(o)}"></i>${name}</span>`).join("");
  drawMask();
}

function drawMask() {
  const { rows, cols, pairs, data } = frames;
  const f = Number($("mask-frame").value);
  $("mask-frame-label").textContent = f === 0 ? "dense" : f === 1 ? "after base pruning" : `after pair ${f - 1} of ${pairs}`;
  const canvas = $("mask-canvas");
  const ctx = canvas.getContext("2d");
  const cw = canvas.width / cols, ch = canvas.height / rows;
  const off = f * rows * cols;
  for (let r = 0; r < rows; r++) {
    for (let c = 0; c < cols; c++) {
      ctx.fillStyle = color(data[off + r * cols + c]);
      ctx.fillRect(c * cw, r * ch, Math.ceil(cw), Math.ceil(ch));
    }
  }
}

await init();
for (const id of ["cap-base", "cap-pair", "cap-n", "cap-eq", "cap-last"]) $(id).addEventListener("input", () => report(drawCapacity));
for (const id of ["tmp-sizes", "tmp-t"]) $(id).addEventListener("input", () => report(drawTemperature));
for (const id of ["mask-rows", "mask-cols", "mask-base", "mask-pair", "mask-n", "mask-seed"]) $(id).addEventListener("input", () => report(computeMask));
$("mask-frame").addEventListener("input", () => report(drawMask));
report(drawCapacity);
report(drawTemperature);
report(computeMask);
