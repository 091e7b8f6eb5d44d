import init, { Demo } from "./pkg/causal_prune_demo.js";

const $ = (id) => document.getElementById(id);
let demo = null;

function status(text) {
  $("status").textContent = text;
}

function ratio() {
  return parseFloat($("ratio").value);
}

// Runs `f` after the status line has had a chance to repaint.
function busy(label, f) {
  status(label + "...");
  setTimeout(() => {
    try {
      f();
      status("ready");
    } catch (e) {
      status("error: " + (e.message || e));
    }
  }, 10);
}

function train() {
  busy("training", () => {
    if (demo) demo.free();
    demo = new Demo(parseInt($("seed").value), parseInt($("hidden").value));
    const s = JSON.parse(demo.summary());
    $("summary").textContent =
      `${s.params} parameters (${s.prunable} prunable), ${s.trajectory_rows} recorded steps\n` +
      `validation accuracy ${(100 * s.val_accuracy).toFixed(1)}%, α_max = ${s.alpha_max.toExponential(3)}`;
  });
}

function drawCurve(points) {
  const c = $("curve");
  const g = c.getContext("2d");
  const pad = 36;
  const w = c.width - 2 * pad;
  const h = c.height - 2 * pad;
  g.clearRect(0, 0, c.width, c.height);
  g.strokeStyle = "#888";
  g.strokeRect(pad, pad, w, h);
  const lo = points[0].log_ratio;
  const hi = points[points.length - 1].log_ratio;
  const x = (r) => pad + ((r - lo) / (hi - lo)) * w;
  const y = (p) => pad + h - (p / 100) * h;
  g.strokeStyle = "#c33";
  g.beginPath();
  points.forEach((p, i) => (i ? g.lineTo : g.moveTo).call(g, x(p.log_ratio), y(p.percent_pruned)));
  g.stroke();
  g.fillStyle = "#c33";
  points.forEach((p) => g.fillRect(x(p.log_ratio) - 2, y(p.percent_pruned) - 2, 4, 4));
  g.fillStyle = "#000";
  g.font = "11px sans-serif";
  g.fillText("100%", 2, pad + 4);
  g.fillText("0%", 10, pad + h);
  g.fillText(lo.toFixed(1), pad - 8, pad + h + 14);
  g.fillText(hi.toFixed(1), pad + w - 8, pad + h + 14);
  g.fillText("% pruned vs log10(α/α_max)", pad, pad - 10);
}

function sweep() {
  busy("sweeping", () => drawCurve(JSON.parse(demo.phaseShift(-8, 0, 33))));
}

function heat(t) {
  const r = Math.round(255 * Math.min(1, 2 * t));
  const b = Math.round(255 * Math.min(1, 2 * (1 - t)));
  return `rgb(${r},${Math.round(80 + 100 * (1 - Math.abs(2 * t - 1)))},${b})`;
}

function landscape() {
  busy("evaluating grid", () => {
    const res = parseInt($("resolution").value);
    const l = JSON.parse(demo.landscape(ratio(), res, $("log1p").checked));
    const c = $("surface");
    const g = c.getContext("2d");
    const min = Math.min(...l.values);
    const max = Math.max(...l.values);
    const cell = c.width / l.resolution;
    for (let i = 0; i < l.resolution; i++) {
      for (let j = 0; j < l.resolution; j++) {
        const v = l.values[i * l.resolution + j];
        g.fillStyle = heat(max > min ? (v - min) / (max - min) : 0);
        g.fillRect(j * cell, (l.resolution - 1 - i) * cell, cell + 1, cell + 1);
      }
    }
    $("landscape-info").textContent =
      `${l.percent_pruned.toFixed(1)}% pruned; center ${l.center.toExponential(3)}, range [${min.toExponential(2)}, ${max.toExponential(2)}]`;
  });
}

function spectrum() {
  busy("power iteration", () => {
    const s = JSON.parse(demo.spectrum(ratio(), parseInt($("k").value)));
    $("eigen").textContent =
      `${s.percent_pruned.toFixed(1)}% pruned, ${s.free_params} free parameters\n` +
      s.eigenvalues.map((l, i) => `λ${i + 1} = ${l.toExponential(4)}  (${s.iterations[i]} iterations)`).join("\n");
  });
}

$("ratio").addEventListener("input", () => ($("ratio-value").textContent = $("ratio").value));
$("train").addEventListener("click", train);
$("sweep").addEventListener("click", sweep);
$("landscape").addEventListener("click", landscape);
$("spectrum").addEventListener("click", spectrum);

init().then(() => {
  train();
});
