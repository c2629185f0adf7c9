import init, { Synthetic, echoShape } from "./pkg/memg_wasm.js";

const $ = (id) => document.getElementById(id);
let synthetic = null;
let denoised = null;

// Min/max per pixel column so long frames keep their peaks.
function draw(canvas, series, range) {
  const ctx = canvas.getContext("2d");
  const { width, height } = canvas;
  ctx.clearRect(0, 0, width, height);
  const [lo, hi] = range ?? [0, series[0].data.length];
  let ymax = 1e-9;
  for (const s of series) {
    for (let i = lo; i < hi; i++) ymax = Math.max(ymax, Math.abs(s.data[i]));
  }
  const y = (v) => height / 2 - (v / ymax) * (height / 2 - 4);
  for (const s of series) {
    ctx.strokeStyle = s.color;
    ctx.lineWidth = s.width ?? 1;
    ctx.beginPath();
    const n = hi - lo;
    for (let px = 0; px < width; px++) {
      const a = lo + Math.floor((px * n) / width);
      const b = Math.max(a + 1, lo + Math.floor(((px + 1) * n) / width));
      let mn = Infinity, mx = -Infinity;
      for (let i = a; i < b; i++) {
        mn = Math.min(mn, s.data[i]);
        mx = Math.max(mx, s.data[i]);
      }
      ctx.moveTo(px, y(mn));
      ctx.lineTo(px, y(mx) + 0.5);
    }
    ctx.stroke();
  }
}

function zoomRange() {
  const v = $("zoom").value;
  if (!denoised || v === "") return null;
  const [, mu, sigma] = JSON.parse(denoised.params())[Number(v)];
  const dt = synthetic.dt();
  const n = synthetic.noisy().length;
  const half = Math.max(12 * sigma, 0.3);
  return [Math.max(0, Math.floor((mu - half) / dt)), Math.min(n, Math.ceil((mu + half) / dt))];
}

function redraw() {
  if (!synthetic) return;
  const series = [
    { data: synthetic.noisy(), color: "#bbb" },
    { data: synthetic.gt(), color: "#222" },
  ];
  if (denoised) series.push({ data: denoised.reconstruction(), color: "#d33", width: 2 });
  draw($("frame"), series, zoomRange());
}

function generate() {
  try {
    synthetic = new Synthetic(
      Number($("k").value), Number($("noise").value), Number($("duration").value), BigInt($("seed").value),
    );
  } catch (e) {
    $("report").textContent = String(e);
    return;
  }
  denoised = null;
  $("zoom").replaceChildren(new Option("whole frame", ""));
  $("denoise").disabled = false;
  $("report").textContent = `raw PSNR ${synthetic.psnrRaw().toFixed(2)} dB`;
  redraw();
}

function denoise() {
  const plan = document.querySelector("input[name=plan]:checked").value;
  const t0 = performance.now();
  try {
    denoised = synthetic.denoise(plan);
  } catch (e) {
    $("report").textContent = String(e);
    return;
  }
  const ms = performance.now() - t0;
  const params = JSON.parse(denoised.params());
  const zoom = $("zoom");
  zoom.replaceChildren(new Option("whole frame", ""), ...params.map((p, i) => new Option(`#${i} at ${p[1].toFixed(2)} ms`, i)));
  const rows = params.map((p) => p.map((v) => v.toFixed(4).padStart(10)).join(" "));
  $("report").textContent = [
    `raw PSNR ${synthetic.psnrRaw().toFixed(2)} dB, fit PSNR ${denoised.psnrFit().toFixed(2)} dB, gain ${denoised.gain().toFixed(2)} dB`,
    `frame confidence ${denoised.confidence().toFixed(4)}, ${ms.toFixed(0)} ms`,
    "     alpha         mu      sigma        eta       freq      phase",
    ...rows,
  ].join("\n");
  redraw();
}

function shape() {
  const v = echoShape(Number($("sigma").value), Number($("eta").value), Number($("freq").value), Number($("phase").value));
  const env = v.slice(0, v.length / 2);
  const pulse = v.slice(v.length / 2);
  draw($("shape"), [
    { data: pulse, color: "#36c" },
    { data: env, color: "#d33", width: 2 },
  ]);
}

await init();
$("generate").onclick = generate;
$("denoise").onclick = denoise;
$("zoom").onchange = redraw;
for (const id of ["sigma", "eta", "freq", "phase"]) $(id).oninput = shape;
generate();
shape();
