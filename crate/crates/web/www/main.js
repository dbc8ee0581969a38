import init, { modeCurve, trackLikelihood, hpTradeoff } from "./pkg/ddlab_web.js";

const $ = (id) => document.getElementById(id);

function frame(canvas, pad = 40) {
  const ctx = canvas.getContext("2d");
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  return { ctx, x0: pad, y0: 10, w: canvas.width - 2 * pad, h: canvas.height - pad - 10 };
}

function scale(lo, hi, a, b) {
  return (v) => a + ((v - lo) / (hi - lo)) * (b - a);
}

function axisLabels(f, xlo, xhi, ylo, yhi, xname, yname) {
  const { ctx, x0, y0, w, h } = f;
  ctx.fillStyle = "#444";
  ctx.font = "12px system-ui";
  ctx.fillText(xlo.toFixed(1), x0, y0 + h + 14);
  ctx.fillText(xhi.toFixed(1), x0 + w - 24, y0 + h + 14);
  ctx.fillText(xname, x0 + w / 2 - 10, y0 + h + 28);
  ctx.fillText(yhi.toFixed(1), 2, y0 + 10);
  ctx.fillText(ylo.toFixed(1), 2, y0 + h);
  ctx.fillText(yname, 2, y0 + h / 2);
}

function heat(v) {
  // v in [-8, 0] → dark blue to yellow
  const u = Math.max(0, Math.min(1, 1 + v / 8));
  return `rgb(${Math.round(40 + 215 * u)},${Math.round(30 + 200 * u)},${Math.round(110 - 60 * u)})`;
}

function drawModeCurve() {
  const x = +$("mc-x").value, l = +$("mc-l").value, to = +$("mc-to").value;
  $("mc-x-out").textContent = x.toFixed(1);
  $("mc-l-out").textContent = l.toFixed(1);
  $("mc-to-out").textContent = to.toFixed(1);
  if (to <= l) return;
  const points = 96, rows = 80;
  let c;
  try {
    c = modeCurve(x, l, to, points, rows);
  } catch (e) {
    $("mc-stat").textContent = String(e);
    return;
  }
  const f = frame($("mc-canvas"));
  const { ctx, x0, y0, w, h } = f;
  const lambdas = c.lambdas, xs = c.xs, hm = c.heatmap;
  const px = scale(l, to, x0, x0 + w), py = scale(xs[0], xs[rows - 1], y0 + h, y0);
  const cw = w / points + 1, ch = h / rows + 1;
  for (let i = 0; i < points; i++) {
    for (let j = 0; j < rows; j++) {
      ctx.fillStyle = heat(hm[j * points + i]);
      ctx.fillRect(px(lambdas[i]) - cw, py(xs[j]) - ch / 2, cw, ch);
    }
  }
  ctx.fillStyle = "#fff";
  c.gridModes.forEach((m, i) => ctx.fillRect(px(lambdas[i]) - 2, py(m) - 2, 4, 4));
  ctx.strokeStyle = "#e0245e";
  ctx.lineWidth = 2;
  ctx.beginPath();
  let started = false;
  c.odeModes.forEach((m, i) => {
    if (Number.isNaN(m)) return;
    started ? ctx.lineTo(px(lambdas[i]), py(m)) : ctx.moveTo(px(lambdas[i]), py(m));
    started = true;
  });
  ctx.stroke();
  axisLabels(f, l, to, xs[0], xs[rows - 1], "λ_s", "x_s");
  let jump = "";
  for (let i = 1; i < points; i++) {
    if (Math.abs(c.gridModes[i] - c.gridModes[i - 1]) > 0.5) {
      jump = `Argmax jumps between λ = ${lambdas[i - 1].toFixed(2)} and ${lambdas[i].toFixed(2)}.`;
      break;
    }
  }
  $("mc-stat").textContent = `${jump} ${c.stopped ? "ODE stopped: " + c.stopped : ""}`;
}

function drawTracking() {
  const seed = Math.max(0, Math.floor(+$("tl-seed").value || 0));
  const steps = +$("tl-steps").value, scheme = $("tl-scheme").value;
  let tr;
  try {
    tr = trackLikelihood(seed, steps, scheme);
  } catch (e) {
    $("tl-stat").textContent = String(e);
    return;
  }
  const t = tr.t, xs = tr.x, a = tr.tracked, b = tr.analytic;
  const all = [...a, ...b];
  const ylo = Math.min(...all), yhi = Math.max(...all);
  const f = frame($("tl-canvas"));
  const { ctx, x0, y0, w, h } = f;
  const px = scale(1, 0, x0, x0 + w), py = scale(ylo, yhi, y0 + h, y0), pxr = scale(-4, 4, y0 + h, y0);
  const line = (vals, proj, style, dash = []) => {
    ctx.strokeStyle = style;
    ctx.setLineDash(dash);
    ctx.beginPath();
    vals.forEach((v, i) => (i ? ctx.lineTo(px(t[i]), proj(v)) : ctx.moveTo(px(t[i]), proj(v))));
    ctx.stroke();
  };
  ctx.lineWidth = 1;
  line(xs, pxr, "#bbb");
  ctx.lineWidth = 2;
  line(a, py, "#1f77b4");
  line(b, py, "#111", [5, 4]);
  ctx.setLineDash([]);
  axisLabels(f, 1, 0, ylo, yhi, "t", "log p");
  let worst = 0;
  for (let i = 0; i < a.length; i++) worst = Math.max(worst, Math.abs(a[i] - b[i]));
  $("tl-stat").textContent = `Max |tracked − analytic| = ${worst.toExponential(2)}; x_0 = ${xs[xs.length - 1].toFixed(3)}.`;
}

function drawTradeoff() {
  const l = +$("hp-l").value, n = +$("hp-n").value;
  $("hp-l-out").textContent = l.toFixed(1);
  let r;
  try {
    r = hpTradeoff(l, n, 256, 7);
  } catch (e) {
    $("hp-stat").textContent = String(e);
    return;
  }
  const pts = r.points, lp = r.logDensity;
  const f = frame($("hp-canvas"));
  const { ctx, x0, y0, w, h } = f;
  const px = scale(-4.5, 4.5, x0, x0 + w), py = scale(-4.5, 4.5, y0 + h, y0);
  ctx.fillStyle = "#f4f4f4";
  ctx.fillRect(x0, y0, w, h);
  ctx.fillStyle = "rgba(31,119,180,0.6)";
  for (let i = 0; i < pts.length; i += 2) {
    ctx.beginPath();
    ctx.arc(px(pts[i]), py(pts[i + 1]), 3, 0, 2 * Math.PI);
    ctx.fill();
  }
  axisLabels(f, -4.5, 4.5, -4.5, 4.5, "x", "y");
  const mean = lp.reduce((s, v) => s + v, 0) / lp.length;
  $("hp-stat").textContent =
    `Threshold t = ${r.thresholdT.toFixed(3)}. Mean log p_0 of the samples = ${mean.toFixed(3)}. ` +
    "Lower λ (larger t) hands over to the HP-ODE earlier and concentrates samples near the modes.";
}

await init();
$("status").textContent = "";
for (const id of ["mc-x", "mc-l", "mc-to"]) {
  $(id).addEventListener("input", () => ($(`${id}-out`).textContent = (+$(id).value).toFixed(1)));
  $(id).addEventListener("change", drawModeCurve);
}
for (const id of ["tl-seed", "tl-steps", "tl-scheme"]) $(id).addEventListener("change", drawTracking);
$("hp-l").addEventListener("input", () => ($("hp-l-out").textContent = (+$("hp-l").value).toFixed(1)));
$("hp-l").addEventListener("change", drawTradeoff);
$("hp-n").addEventListener("change", drawTradeoff);
drawModeCurve();
drawTracking();
drawTradeoff();
