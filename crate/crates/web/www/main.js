// Build with: wasm-pack build crates/web --target web --out-dir www/pkg
import init, { BreathingDemo, simulate_breathing, inversion_demo } from "./pkg/respmodel_web.js";

await init();

const $ = (id) => document.getElementById(id);
let demo = null;
let signal = [];

function makeDemo() {
  demo = new BreathingDemo(32, 4.0, Number($("hyst").value));
}

function draw() {
  const v = Number($("v").value), vp = Number($("vp").value);
  $("v-out").textContent = v;
  $("vp-out").textContent = vp;
  const w = demo.width(), h = demo.height();
  const grey = demo.frame(v, vp);
  const rgba = new Uint8ClampedArray(w * h * 4);
  for (let i = 0; i < w * h; i++) {
    rgba.set([grey[i], grey[i], grey[i], 255], 4 * i);
  }
  const off = new OffscreenCanvas(w, h);
  off.getContext("2d").putImageData(new ImageData(rgba, w, h), 0, 0);
  const ctx = $("frame").getContext("2d");
  ctx.imageSmoothingEnabled = false;
  ctx.drawImage(off, 0, 0, $("frame").width, $("frame").height);
  $("umax").textContent = demo.max_displacement(v, vp).toFixed(2);
}

function plotSignal() {
  signal = Array.from(simulate_breathing(BigInt($("seed").value), 30, 0.1, 4, Number($("jitter").value)));
  const c = $("signal"), ctx = c.getContext("2d");
  ctx.clearRect(0, 0, c.width, c.height);
  ctx.beginPath();
  signal.forEach((v, i) => {
    const x = (i / (signal.length - 1)) * c.width;
    const y = c.height - (v / 1200) * c.height;
    i ? ctx.lineTo(x, y) : ctx.moveTo(x, y);
  });
  ctx.stroke();
}

function play() {
  let i = 0;
  const step = () => {
    if (i >= signal.length - 1) return;
    // the model's v' is per phase: 10 phases over a 4 s breath, samples every 0.1 s
    const vp = (signal[i + 1] - signal[i]) / 0.1 * 0.4;
    $("v").value = signal[i];
    $("vp").value = Math.max(-400, Math.min(400, vp));
    draw();
    i += 1;
    requestAnimationFrame(step);
  };
  step();
}

$("v").addEventListener("input", draw);
$("vp").addEventListener("input", draw);
$("hyst").addEventListener("change", () => { makeDemo(); draw(); });
$("seed").addEventListener("change", plotSignal);
$("jitter").addEventListener("change", plotSignal);
$("play").addEventListener("click", play);
$("invert").addEventListener("click", () => {
  try {
    const [it, res, umax] = inversion_demo(Number($("amp").value));
    $("inv-out").textContent = `max |u| ${umax.toFixed(2)} mm\niterations ${it}\n|u ∘ u⁻¹| residual ${res.toFixed(4)} mm`;
  } catch (e) {
    $("inv-out").textContent = String(e);
  }
});

makeDemo();
draw();
plotSignal();
