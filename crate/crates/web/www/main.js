import init, { Demo } from "./pkg/optosqueeze_web.js";

const $ = (id) => document.getElementById(id);
let demo = null;
let running = false;

function num(id) {
  return Number($(id).value);
}

function axes(ctx, w, h, pad, xr, yr) {
  ctx.clearRect(0, 0, w, h);
  ctx.strokeStyle = "#999";
  ctx.strokeRect(pad, pad / 2, w - 1.5 * pad, h - 1.5 * pad);
  ctx.fillStyle = "#555";
  ctx.font = "11px sans-serif";
  ctx.fillText(yr[1].toPrecision(3), 2, pad / 2 + 10);
  ctx.fillText(yr[0].toPrecision(3), 2, h - pad);
  ctx.fillText(xr[0].toPrecision(3), pad, h - 4);
  ctx.fillText(xr[1].toPrecision(3), w - pad, h - 4);
  const sx = (x) => pad + ((x - xr[0]) / (xr[1] - xr[0] || 1)) * (w - 1.5 * pad);
  const sy = (y) => h - pad - ((y - yr[0]) / (yr[1] - yr[0] || 1)) * (h - 1.5 * pad);
  return [sx, sy];
}

function range(v) {
  let lo = Infinity, hi = -Infinity;
  for (const x of v) {
    if (Number.isFinite(x)) { lo = Math.min(lo, x); hi = Math.max(hi, x); }
  }
  return lo === hi ? [lo - 1, hi + 1] : [lo, hi];
}

function line(ctx, xs, ys, sx, sy, color, step) {
  ctx.strokeStyle = color;
  ctx.beginPath();
  xs.forEach((x, i) => {
    const px = sx(x), py = sy(ys[i]);
    if (i === 0) ctx.moveTo(px, py);
    else if (step) { ctx.lineTo(px, sy(ys[i - 1])); ctx.lineTo(px, py); }
    else ctx.lineTo(px, py);
  });
  ctx.stroke();
}

function legend(ctx, items) {
  items.forEach(([text, color], i) => {
    ctx.fillStyle = color;
    ctx.fillText(text, 60 + 110 * i, 22);
  });
}

function drawPulse() {
  const c = $("pulse"), ctx = c.getContext("2d");
  const t = Array.from(demo.times()), w = Array.from(demo.omega()), f = Array.from(demo.phi());
  const [sx, sy] = axes(ctx, c.width, c.height, 40, [0, num("tfinal")], range(w));
  line(ctx, t, w, sx, sy, "#1f5fbf", true);
  const fr = range(f);
  const sy2 = (y) => c.height - 40 - ((y - fr[0]) / (fr[1] - fr[0])) * (c.height - 60);
  line(ctx, t, f, sx, sy2, "#c0392b", true);
  legend(ctx, [["Ω / ωm", "#1f5fbf"], ["φ (own scale)", "#c0392b"]]);
}

function drawLoss() {
  const c = $("loss"), ctx = c.getContext("2d");
  const h = Array.from(demo.history()).map(Math.log10);
  const it = h.map((_, i) => i);
  const [sx, sy] = axes(ctx, c.width, c.height, 40, [0, Math.max(1, h.length - 1)], range(h));
  line(ctx, it, h, sx, sy, "#1f5fbf", false);
  legend(ctx, [["log10 loss", "#1f5fbf"]]);
}

function drawCurve() {
  const c = $("curve"), ctx = c.getContext("2d");
  const raw = demo.curve(num("angle"));
  const t = [], s = [], n = [];
  for (let i = 0; i < raw.length; i += 3) { t.push(raw[i]); s.push(raw[i + 1]); n.push(raw[i + 2]); }
  const [sx, sy] = axes(ctx, c.width, c.height, 40, [0, num("tfinal")], range(s));
  line(ctx, t, s, sx, sy, "#1f5fbf", false);
  const nr = range(n.map((x) => Math.log10(x)));
  const sy2 = (y) => c.height - 40 - ((Math.log10(y) - nr[0]) / (nr[1] - nr[0])) * (c.height - 60);
  line(ctx, t, n, sx, sy2, "#27ae60", false);
  legend(ctx, [["S_b (dB)", "#1f5fbf"], ["⟨b†b⟩ (log, own scale)", "#27ae60"]]);
}

function drawWigner() {
  const c = $("wigner"), ctx = c.getContext("2d");
  const n = 101;
  const raw = demo.wigner(num("when") / 1000, n);
  const extent = raw[0];
  let max = 0;
  for (let i = 1; i < raw.length; i++) max = Math.max(max, raw[i]);
  const img = ctx.createImageData(n, n);
  // Rows run over Re(D), columns over Im(D); draw Re(D) rightwards, Im(D) upwards.
  for (let r = 0; r < n; r++) {
    for (let q = 0; q < n; q++) {
      const v = raw[1 + r * n + q] / max;
      const k = 4 * ((n - 1 - q) * n + r);
      img.data[k] = 255 * Math.min(1, 2 * v);
      img.data[k + 1] = 255 * Math.max(0, 2 * v - 1);
      img.data[k + 2] = 80 + 175 * (1 - v);
      img.data[k + 3] = 255;
    }
  }
  const tmp = new OffscreenCanvas(n, n);
  tmp.getContext("2d").putImageData(img, 0, 0);
  ctx.imageSmoothingEnabled = false;
  ctx.drawImage(tmp, 0, 0, c.width, c.height);
  ctx.fillStyle = "#fff";
  ctx.fillText(`|D| ≤ ${extent.toPrecision(3)}`, 6, 14);
}

function redraw() {
  if (!demo) return;
  drawPulse();
  drawLoss();
  drawCurve();
  drawWigner();
  const l = demo.loss();
  $("status").textContent =
    `iteration ${demo.iteration()}  loss ${l.toPrecision(5)}  S_b ${(-10 * Math.log10(l / 0.5)).toFixed(3)} dB  ${demo.status()}`;
}

function reset() {
  running = false;
  try {
    demo = new Demo(num("kappa"), num("nbar"), num("theta"), num("tfinal"), num("bins"), num("seed"), num("target"));
    $("angle").value = num("theta");
    $("angle-value").textContent = $("angle").value;
  } catch (e) {
    demo = null;
    $("status").textContent = `error: ${e.message ?? e}`;
    return;
  }
  redraw();
}

function loop() {
  if (!running || !demo) return;
  const t0 = performance.now();
  let done = false;
  try {
    while (!done && performance.now() - t0 < 30) done = demo.step(1);
  } catch (e) {
    running = false;
    $("status").textContent = `error: ${e.message ?? e}`;
    return;
  }
  redraw();
  if (done) running = false;
  else requestAnimationFrame(loop);
}

await init();
$("reset").onclick = reset;
$("run").onclick = () => { if (!demo) reset(); running = true; loop(); };
$("pause").onclick = () => { running = false; };
$("angle").oninput = () => { $("angle-value").textContent = $("angle").value; if (demo) drawCurve(); };
$("when").oninput = () => { $("when-value").textContent = (num("when") / 1000).toFixed(2); if (demo) drawWigner(); };
reset();
