import init, { breath, smooth_labels, classify_session } from "./pkg/ventmode_web.js";

const MODES = ["vc", "pc", "ps", "cpap", "pav"];
const COLORS = { vc: "#1f77b4", pc: "#ff7f0e", ps: "#2ca02c", cpap: "#d62728", pav: "#9467bd" };
const $ = (id) => document.getElementById(id);
const num = (id) => Number($(id).value);

function call(f, ...args) {
  try {
    return JSON.parse(f(...args));
  } catch (e) {
    $("status").textContent = String(e);
    return null;
  }
}

function plotLine(ctx, ys, top, height, color) {
  const w = ctx.canvas.width;
  const lo = Math.min(...ys), hi = Math.max(...ys);
  const span = hi - lo || 1;
  ctx.strokeStyle = color;
  ctx.beginPath();
  ys.forEach((y, i) => {
    const px = (i / (ys.length - 1)) * w;
    const py = top + height - ((y - lo) / span) * height;
    i ? ctx.lineTo(px, py) : ctx.moveTo(px, py);
  });
  ctx.stroke();
}

function drawBreath() {
  const b = call(breath, $("b-mode").value, num("b-seed"), num("b-index"), num("b-noise"));
  if (!b) return;
  const ctx = $("b-canvas").getContext("2d");
  const { width: w, height: h } = ctx.canvas;
  ctx.clearRect(0, 0, w, h);
  plotLine(ctx, b.flow, 5, h / 2 - 10, "#1f77b4");
  plotLine(ctx, b.pressure, h / 2 + 5, h / 2 - 10, "#d62728");
  const x0 = (b.x0_index / (b.flow.length - 1)) * w;
  ctx.strokeStyle = "#999";
  ctx.setLineDash([4, 4]);
  ctx.beginPath();
  ctx.moveTo(x0, 0);
  ctx.lineTo(x0, h);
  ctx.stroke();
  ctx.setLineDash([]);
  ctx.fillStyle = "#444";
  ctx.fillText("flow (L/min)", 4, 12);
  ctx.fillText("pressure (cmH2O)", 4, h / 2 + 14);
  const m = b.meta, s = b.stats;
  $("b-meta").textContent =
    `PEEP ${m.peep.toFixed(1)}  PIP ${m.pip.toFixed(1)}  I-time ${m.itime_s.toFixed(2)} s  E-time ${m.etime_s.toFixed(2)} s\n` +
    `TVi ${m.tvi_ml.toFixed(0)} mL  TVe ${m.tve_ml.toFixed(0)} mL\n` +
    `slope variance ${s.slope_var.toFixed(3)}  pressure variance ${s.pressure_var.toFixed(3)}  ` +
    `pressure I-time ${s.pressure_itime.toFixed(2)} s  plateau ${s.plateau}`;
}

function strip(ctx, labels, row, rowHeight) {
  const w = ctx.canvas.width / labels.length;
  labels.forEach((m, i) => {
    ctx.fillStyle = COLORS[m];
    ctx.fillRect(i * w, row * rowHeight, Math.ceil(w), rowHeight - 4);
  });
}

function drawSmoothing() {
  const raw = $("s-labels").value.split(",").map((s) => s.trim()).filter(Boolean);
  const r = call(smooth_labels, raw.join(","), num("s-n"), num("s-x"), $("s-variant").value);
  if (!r) return;
  const ctx = $("s-canvas").getContext("2d");
  ctx.clearRect(0, 0, ctx.canvas.width, ctx.canvas.height);
  strip(ctx, raw, 0, 35);
  strip(ctx, r.smoothed, 1, 35);
  const changed = raw.filter((m, i) => m !== r.smoothed[i]).length;
  $("s-info").textContent = `top: raw, bottom: smoothed. ${changed} label(s) changed; latency bound ${r.latency_s.toFixed(0)} s at 18 breaths/min`;
}

function runSession() {
  $("c-info").textContent = "classifying…";
  setTimeout(() => {
    const v = call(classify_session, $("c-modes").value, num("c-len"), num("c-seed"), num("c-noise"),
      num("c-n"), num("c-x"), $("c-variant").value);
    if (!v) return;
    const ctx = $("c-canvas").getContext("2d");
    ctx.clearRect(0, 0, ctx.canvas.width, ctx.canvas.height);
    strip(ctx, v.truth, 0, 36);
    strip(ctx, v.raw, 1, 36);
    strip(ctx, v.smoothed, 2, 36);
    $("c-info").textContent = `rows: truth, raw, smoothed. accuracy raw ${(100 * v.raw_accuracy).toFixed(1)}%, smoothed ${(100 * v.smoothed_accuracy).toFixed(1)}%`;
  }, 0);
}

function noisyLabels() {
  const seq = [];
  for (let i = 0; i < 60; i++) {
    const base = i < 35 ? "vc" : "ps";
    seq.push(Math.random() < 0.15 ? MODES[Math.floor(Math.random() * 5)] : base);
  }
  return seq.join(",");
}

await init();
$("status").textContent = "";
for (const m of MODES) $("b-mode").add(new Option(m, m));
$("b-mode").value = "pav";
$("s-labels").value = noisyLabels();
$("legend").innerHTML = MODES.map((m) => `<span style="background:${COLORS[m]}"></span>${m.toUpperCase()}`).join("");
for (const id of ["b-mode", "b-seed", "b-index", "b-noise"]) $(id).addEventListener("input", drawBreath);
for (const id of ["s-labels", "s-n", "s-x", "s-variant"]) $(id).addEventListener("input", drawSmoothing);
$("c-run").addEventListener("click", runSession);
drawBreath();
drawSmoothing();
runSession();
