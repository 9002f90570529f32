import init, { simulate, nms_explorer, ecc_demo } from "./pkg/tracktor_demo.js";

const $ = (id) => document.getElementById(id);

function color(id) {
  return `hsl(${(id * 67) % 360} 70% 45%)`;
}

// tracking playback

let sim = null;

function drawFrame() {
  const ctx = $("sim-canvas").getContext("2d");
  ctx.clearRect(0, 0, 640, 480);
  if (!sim) return;
  const f = sim.frames[$("sim-frame").value - 1];
  ctx.setLineDash([4, 3]);
  ctx.strokeStyle = "#aaa";
  for (const [, b] of f.gt) ctx.strokeRect(b[0], b[1], b[2], b[3]);
  ctx.setLineDash([]);
  ctx.lineWidth = 2;
  ctx.font = "12px monospace";
  for (const [id, b] of f.tracks) {
    ctx.strokeStyle = ctx.fillStyle = color(id);
    ctx.strokeRect(b[0], b[1], b[2], b[3]);
    ctx.fillText(String(id), b[0] + 2, b[1] + 12);
  }
}

function runSim() {
  const req = {
    seed: Number($("sim-seed").value),
    tracks: Number($("sim-tracks").value),
    noise: Number($("sim-noise").value),
    flip: Number($("sim-flip").value),
    occlusions: $("sim-occl").checked,
    reid: $("sim-reid").checked,
    oracle: $("sim-oracle").value,
  };
  const out = JSON.parse(simulate(JSON.stringify(req)));
  if (out.error) {
    $("sim-metrics").textContent = out.error;
    $("sim-metrics").className = "err";
    return;
  }
  sim = out;
  $("sim-metrics").className = "";
  const m = out.metrics;
  $("sim-metrics").textContent =
    `MOTA ${m.mota.toFixed(3)}  IDF1 ${m.idf1.toFixed(3)}  FP ${m.fp}  FN ${m.fn}  IDSW ${m.idsw}  MT ${m.mt}  ML ${m.ml}`;
  $("sim-frame").max = out.frames.length;
  $("sim-frame").value = 1;
  drawFrame();
}

// NMS explorer

let items = [];

function drawNms() {
  const ctx = $("nms-canvas").getContext("2d");
  ctx.clearRect(0, 0, 640, 300);
  const th = Number($("nms-th").value);
  const kept = new Set(JSON.parse(nms_explorer(JSON.stringify(items), th)).kept || []);
  ctx.font = "12px monospace";
  items.forEach((it, i) => {
    const [x, y, w, h] = it.box;
    const keep = kept.has(i);
    ctx.strokeStyle = ctx.fillStyle = keep ? "#1a7f37" : "#c33";
    ctx.setLineDash(keep ? [] : [5, 4]);
    ctx.lineWidth = keep ? 2 : 1;
    ctx.strokeRect(x, y, w, h);
    ctx.fillText(it.score.toFixed(2), x + 2, y + 12);
  });
  ctx.setLineDash([]);
}

$("nms-canvas").addEventListener("click", (e) => {
  const r = e.target.getBoundingClientRect();
  const x = e.clientX - r.left, y = e.clientY - r.top;
  items.push({ box: [x - 30, y - 45, 60, 90], score: Number($("nms-score").value) });
  drawNms();
});

// ECC

function runEcc() {
  const out = JSON.parse(ecc_demo(Number($("ecc-dx").value), Number($("ecc-dy").value), Number($("ecc-a").value)));
  if (out.error) {
    $("ecc-out").textContent = out.error;
    return;
  }
  const fmt = (m) => m.map((r) => r.map((v) => v.toFixed(4).padStart(9)).join(" ")).join("\n");
  $("ecc-out").textContent =
    `truth\n${fmt(out.truth)}\nestimate\n${fmt(out.estimate)}\n` +
    `correlation ${out.correlation.toFixed(4)}, ${out.iterations} iterations, ` +
    `${out.converged ? "converged" : "not converged"}, worst corner error ${out.max_corner_error.toFixed(3)} px`;
}

await init();
$("sim-run").onclick = runSim;
$("sim-frame").oninput = drawFrame;
$("nms-th").oninput = () => { $("nms-th-v").textContent = $("nms-th").value; drawNms(); };
$("nms-score").oninput = () => { $("nms-score-v").textContent = $("nms-score").value; };
$("nms-clear").onclick = () => { items = []; drawNms(); };
$("ecc-run").onclick = runEcc;
runSim();
runEcc();
drawNms();
